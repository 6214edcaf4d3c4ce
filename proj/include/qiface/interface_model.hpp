// Copyright 2026 The qiface Authors

// Licensed under the Apache License, Version 2.0 (the License);
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at

// http://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an AS IS BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

/**
 * @file interface_model.hpp
 * State-level model of the single-ion Raman interface.
 *
 * An ion prepared in a D_5/2 superposition absorbs an 854 nm photon and
 * emits a 393 nm photon while returning to S_1/2. The transfer operator
 *
 *   |S,-1/2>|L> <D,-5/2|<R|  +  |S,+1/2>|R> <D,+5/2|<L|
 *
 * maps the product input onto an entangled atom-photon state. The four
 * interface modes differ only in which parts of input and output are
 * fixed or projected.
 */

#include "qiface/quantum_core.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>

namespace qiface {

inline constexpr double kPlanckJs = 6.62607015e-34;
inline constexpr double kBohrMagnetonJPerT = 9.2740100783e-24;
inline constexpr double kTeslaPerGauss = 1e-4;
/// FWHM of a Gaussian in units of its standard deviation.
inline constexpr double kFwhmPerSigma = 2.354820045030949;

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when the input can not be absorbed on either Raman path.
class NoTransferError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/**
 * Physical parameters of the interface and its detection chain.
 *
 * Defaults hold the committed calibration (see README, "Calibration").
 * The fiber coupling and wave-plate error belong to the analysis optics and
 * are overridden per experiment preset.
 */
struct InterfaceConfig {
    double b_field_gauss = 2.8;
    double raman_decay_tau_ns = 400.0;
    /// Std of the per-shot Gaussian phase kick on the atomic qubit.
    double dephasing_sigma_rad = 0.65;
    /// P_3/2 -> D_5/2 decay; the shot produces no 393 nm photon.
    double branching_pd = 0.0587;
    double dark_rate_per_s = 30.0;
    double pmt_qe = 0.28;
    /// Collection and fiber coupling up to the wave plates.
    double fiber_coupling_eff = 0.03951;
    /// Fraction of photons transmitted by the polarization analyzer.
    double analyzer_transmission = 0.5;
    double rep_rate_hz = 11000.0;
    /// Retardance error of both wave plates.
    double waveplate_miscal_rad = 0.375;
    double timing_jitter_fwhm_ns = 0.32;

    [[nodiscard]] double larmor_period_ns() const {
        if (!(b_field_gauss > 0.0)) {
            throw ConfigError("larmor_period: magnetic field must be positive");
        }
        return kPlanckJs / (4.0 * kBohrMagnetonJPerT * b_field_gauss * kTeslaPerGauss) * 1e9;
    }
    /// Larmor angular frequency in rad/ns.
    [[nodiscard]] double larmor_omega() const { return 2.0 * kPi / larmor_period_ns(); }

    /// Probability that an emitted photon produces a recorded click.
    [[nodiscard]] double detection_survival() const {
        return fiber_coupling_eff * pmt_qe * (1.0 - branching_pd) * analyzer_transmission;
    }

    void validate() const {
        auto prob = [](double v, const char *name) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw ConfigError(std::string(name) + " must lie in [0, 1]");
            }
        };
        auto nonneg = [](double v, const char *name) {
            if (!(v >= 0.0)) {
                throw ConfigError(std::string(name) + " must be non-negative");
            }
        };
        if (!(b_field_gauss > 0.0)) throw ConfigError("b_field_gauss must be positive");
        if (!(raman_decay_tau_ns > 0.0)) throw ConfigError("raman_decay_tau_ns must be positive");
        if (!(rep_rate_hz > 0.0)) throw ConfigError("rep_rate_hz must be positive");
        prob(branching_pd, "branching_pd");
        prob(pmt_qe, "pmt_qe");
        prob(fiber_coupling_eff, "fiber_coupling_eff");
        prob(analyzer_transmission, "analyzer_transmission");
        nonneg(dephasing_sigma_rad, "dephasing_sigma_rad");
        nonneg(dark_rate_per_s, "dark_rate_per_s");
        nonneg(timing_jitter_fwhm_ns, "timing_jitter_fwhm_ns");
        if (!std::isfinite(waveplate_miscal_rad)) throw ConfigError("waveplate_miscal_rad must be finite");
    }

    /// Same optics with every noise channel switched off. Losses stay.
    [[nodiscard]] InterfaceConfig noiseless() const {
        InterfaceConfig c = *this;
        c.dephasing_sigma_rad = 0.0;
        c.dark_rate_per_s = 0.0;
        c.waveplate_miscal_rad = 0.0;
        c.timing_jitter_fwhm_ns = 0.0;
        return c;
    }
};

inline double larmor_period(const InterfaceConfig &config) { return config.larmor_period_ns(); }

/// Preparation of the D_5/2 qubit; its phase advances as phi_729 + w_L t.
struct AtomPrep {
    double theta_d = kPi / 2.0;
    double phi_729 = 0.0;
    double prep_time_origin_ns = 0.0;

    void validate() const {
        if (!(theta_d >= 0.0 && theta_d <= kPi)) {
            throw ConfigError("theta_d must lie in [0, pi]");
        }
        if (!std::isfinite(phi_729)) throw ConfigError("phi_729 must be finite");
    }
};

/// Polarization of the 854 nm input in the (R, L) basis. Defaults to the
/// fixed linear polarization used for entangler and sender operation.
struct PhotonIn {
    double theta_854 = kPi / 2.0;
    double phi_854 = kPi;

    void validate() const {
        if (!(theta_854 >= 0.0 && theta_854 <= kPi)) {
            throw ConfigError("theta_854 must lie in [0, pi]");
        }
    }

    [[nodiscard]] PureState state() const {
        return PureState{std::cos(theta_854 / 2.0), std::sin(theta_854 / 2.0) * std::polar(1.0, phi_854)};
    }
};

inline double wrap_phase(double phi) {
    double w = std::fmod(phi, 2.0 * kPi);
    return w < 0.0 ? w + 2.0 * kPi : w;
}

inline PureState prepare_d_state(const AtomPrep &prep, double t_ns, const InterfaceConfig &config) {
    if (t_ns < 0.0) {
        throw std::domain_error("prepare_d_state: time must be non-negative");
    }
    const double phase = prep.phi_729 + config.larmor_omega() * (t_ns - prep.prep_time_origin_ns);
    return PureState{std::cos(prep.theta_d / 2.0), std::sin(prep.theta_d / 2.0) * std::polar(1.0, phase)};
}

struct RamanOutput {
    PureState joint;
    /// Squared norm of the unnormalized image.
    double success_prob;
};

/// Applies the transfer operator to |psi_D>|psi_854>.
inline RamanOutput raman_map(const PureState &psi_d, const PureState &psi_854) {
    if (psi_d.dim() != 2 || psi_854.dim() != 2) {
        throw DimensionError("raman_map: inputs must be single qubits");
    }
    CVector out = CVector::Zero(4);
    out(0) = psi_d[0] * psi_854[0]; // |S,-1/2>|L>  <-  <D,-5/2|<R|
    out(3) = psi_d[1] * psi_854[1]; // |S,+1/2>|R>  <-  <D,+5/2|<L|
    const double p = out.squaredNorm();
    if (p < 1e-24) {
        throw NoTransferError("raman_map: input has no overlap with either absorption path");
    }
    return {PureState(std::move(out)), p};
}

// Named one-qubit analysis bases.

enum class AtomBasis { None, Z, X, Y };
enum class AnalysisBasis { HV, DA, RL };
enum class Polarization { H, V, D, A, R, L };

inline const char *to_string(AtomBasis b) {
    switch (b) {
    case AtomBasis::None: return "none";
    case AtomBasis::Z: return "z";
    case AtomBasis::X: return "x";
    case AtomBasis::Y: return "y";
    }
    return "?";
}

inline const char *to_string(AnalysisBasis b) {
    switch (b) {
    case AnalysisBasis::HV: return "HV";
    case AnalysisBasis::DA: return "DA";
    case AnalysisBasis::RL: return "RL";
    }
    return "?";
}

inline const char *to_string(Polarization p) {
    static constexpr const char *names[] = {"H", "V", "D", "A", "R", "L"};
    return names[static_cast<int>(p)];
}

inline AtomBasis parse_atom_basis(const std::string &s) {
    if (s == "none") return AtomBasis::None;
    if (s == "z") return AtomBasis::Z;
    if (s == "x") return AtomBasis::X;
    if (s == "y") return AtomBasis::Y;
    throw ConfigError("unknown atom basis '" + s + "'");
}

inline AnalysisBasis parse_analysis_basis(const std::string &s) {
    if (s == "HV") return AnalysisBasis::HV;
    if (s == "DA") return AnalysisBasis::DA;
    if (s == "RL") return AnalysisBasis::RL;
    throw ConfigError("unknown photon basis '" + s + "'");
}

inline Polarization parse_polarization(const std::string &s) {
    for (int i = 0; i < 6; ++i) {
        if (s == to_string(static_cast<Polarization>(i))) return static_cast<Polarization>(i);
    }
    throw ConfigError("unknown polarization '" + s + "'");
}

/// Ports of a basis: first maps to the analyzer's H output.
inline std::pair<Polarization, Polarization> ports(AnalysisBasis b) {
    switch (b) {
    case AnalysisBasis::HV: return {Polarization::H, Polarization::V};
    case AnalysisBasis::DA: return {Polarization::D, Polarization::A};
    case AnalysisBasis::RL: return {Polarization::R, Polarization::L};
    }
    throw ConfigError("bad analysis basis");
}

/// 393 nm polarization state in the (L, R) basis.
inline PureState polarization_state(Polarization p) {
    const double r = 1.0 / std::sqrt(2.0);
    switch (p) {
    case Polarization::H: return PureState{r, r};
    case Polarization::V: return PureState{-kI * r, kI * r};
    case Polarization::D: return PureState{0.5 * (1.0 - kI), 0.5 * (1.0 + kI)};
    case Polarization::A: return PureState{0.5 * (1.0 + kI), 0.5 * (1.0 - kI)};
    case Polarization::R: return PureState{0.0, 1.0};
    case Polarization::L: return PureState{1.0, 0.0};
    }
    throw ConfigError("bad polarization");
}

/// Eigenstates of sigma_z, sigma_x, sigma_y in (|-1/2>, |+1/2>); the
/// first element carries the "+" outcome label.
inline std::pair<PureState, PureState> atom_basis_states(AtomBasis b) {
    const double r = 1.0 / std::sqrt(2.0);
    switch (b) {
    case AtomBasis::Z: return {PureState{1.0, 0.0}, PureState{0.0, 1.0}};
    case AtomBasis::X: return {PureState{r, r}, PureState{r, -r}};
    case AtomBasis::Y: return {PureState{r, kI * r}, PureState{r, -kI * r}};
    case AtomBasis::None: break;
    }
    throw ConfigError("atom basis 'none' has no states");
}

/// Pair of orthogonal photon states selected by the two analyzer ports.
struct MeasurementBasis {
    PureState first;
    PureState second;
};

namespace detail {
/// Jones matrix of a retarder in the (H, V) basis, fast axis at `angle`.
inline Eigen::Matrix2cd retarder(double retardance, double angle) {
    Eigen::Matrix2cd rot;
    const double c = std::cos(angle), s = std::sin(angle);
    rot << c, -s, s, c;
    Eigen::Matrix2cd d = Eigen::Matrix2cd::Zero();
    d(0, 0) = 1.0;
    d(1, 1) = std::polar(1.0, retardance);
    return rot * d * rot.transpose();
}

/// Columns: H and V written in the (L, R) basis.
inline Eigen::Matrix2cd jones_to_circular() {
    const double r = 1.0 / std::sqrt(2.0);
    Eigen::Matrix2cd m;
    m << r, -kI * r, r, kI * r;
    return m;
}
} // namespace detail

/**
 * Analysis basis realized by quarter-wave plate, half-wave plate and a
 * polarizing beam splitter, in that order along the beam.
 *
 * `miscal` adds to both retardances (pi/2 + miscal, pi + miscal). The first
 * returned state exits at the H port.
 */
inline MeasurementBasis waveplate_basis(double hwp_angle, double qwp_angle, double miscal) {
    const Eigen::Matrix2cd m = detail::retarder(kPi + miscal, hwp_angle) * detail::retarder(kPi / 2.0 + miscal, qwp_angle);
    const Eigen::Matrix2cd to_lr = detail::jones_to_circular();
    const Eigen::Matrix2cd back = m.adjoint();
    return {PureState(CVector(to_lr * back.col(0))), PureState(CVector(to_lr * back.col(1)))};
}

struct WaveplateAngles {
    double hwp;
    double qwp;
};

/**
 * Nominal plate settings:
 *
 *   basis   HWP      QWP
 *   H/V     0        0
 *   D/A     pi/8     pi/4
 *   R/L     pi/8     0
 */
inline WaveplateAngles waveplate_angles(AnalysisBasis b) {
    switch (b) {
    case AnalysisBasis::HV: return {0.0, 0.0};
    case AnalysisBasis::DA: return {kPi / 8.0, kPi / 4.0};
    case AnalysisBasis::RL: return {kPi / 8.0, 0.0};
    }
    throw ConfigError("bad analysis basis");
}

inline MeasurementBasis waveplate_basis(AnalysisBasis b, double miscal) {
    const auto a = waveplate_angles(b);
    return waveplate_basis(a.hwp, a.qwp, miscal);
}

// Operation modes.

/// Fixed input photon and atom: emits an entangled atom-photon pair.
struct Entangler {};
/// Atom projected onto the "+" state of `atom_basis` after emission; maps
/// the D_5/2 qubit onto the 393 nm photon.
struct Sender {
    AtomBasis atom_basis = AtomBasis::X;
};
/// 393 nm photon projected onto `port` of a linear basis; maps the 854 nm
/// polarization onto the S_1/2 qubit.
struct Receiver {
    AnalysisBasis photon_basis = AnalysisBasis::HV;
    bool first_port = true;
};
/// Atom prepared and projected; converts 854 nm into 393 nm polarization.
struct Converter {
    AtomBasis atom_basis = AtomBasis::X;
};

using ModeSelector = std::variant<Entangler, Sender, Receiver, Converter>;

inline const char *mode_name(const ModeSelector &m) {
    static constexpr const char *names[] = {"entangler", "sender", "receiver", "converter"};
    return names[m.index()];
}

inline void validate_mode(const ModeSelector &mode) {
    if (const auto *s = std::get_if<Sender>(&mode); s && s->atom_basis == AtomBasis::None) {
        throw ConfigError("sender mode requires an atomic projection basis");
    }
    if (const auto *c = std::get_if<Converter>(&mode); c && c->atom_basis == AtomBasis::None) {
        throw ConfigError("converter mode requires an atomic projection basis");
    }
    if (const auto *r = std::get_if<Receiver>(&mode); r && r->photon_basis == AnalysisBasis::RL) {
        throw ConfigError("receiver mode projects the photon onto a linear basis");
    }
}

enum class OutcomeKind { Joint, Photon, Atom };

struct ModeOutcome {
    OutcomeKind kind;
    PureState state;
    /// Probability of the mode's projection given a Raman transfer (1 for
    /// the entangler).
    double probability;
    /// Squared norm of the transfer operator image.
    double transfer_probability;
};

namespace detail {
inline std::pair<CVector, double> project_atom(const CVector &joint, const PureState &atom) {
    CVector photon(2);
    for (int p = 0; p < 2; ++p) {
        photon(p) = std::conj(atom[0]) * joint(p) + std::conj(atom[1]) * joint(2 + p);
    }
    return {photon, photon.squaredNorm()};
}

inline std::pair<CVector, double> project_photon(const CVector &joint, const PureState &photon) {
    CVector atom(2);
    for (int a = 0; a < 2; ++a) {
        atom(a) = std::conj(photon[0]) * joint(2 * a) + std::conj(photon[1]) * joint(2 * a + 1);
    }
    return {atom, atom.squaredNorm()};
}

inline ModeOutcome conditional_outcome(OutcomeKind kind, std::pair<CVector, double> proj, double transfer) {
    if (proj.second < 1e-24) {
        throw NoTransferError("run_mode: projection has zero probability");
    }
    return {kind, PureState(std::move(proj.first)), proj.second, transfer};
}
} // namespace detail

/// Output of one interface operation for emission at time `t_ns`.
inline ModeOutcome run_mode(const ModeSelector &mode, const AtomPrep &prep, const PhotonIn &photon, double t_ns,
                            const InterfaceConfig &config) {
    validate_mode(mode);
    prep.validate();
    photon.validate();
    const RamanOutput raman = raman_map(prepare_d_state(prep, t_ns, config), photon.state());
    const CVector &joint = raman.joint.amplitudes();
    return std::visit(
        [&](const auto &m) -> ModeOutcome {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, Entangler>) {
                return {OutcomeKind::Joint, raman.joint, 1.0, raman.success_prob};
            } else if constexpr (std::is_same_v<M, Receiver>) {
                const auto [a, b] = ports(m.photon_basis);
                const PureState proj = polarization_state(m.first_port ? a : b);
                return detail::conditional_outcome(OutcomeKind::Atom, detail::project_photon(joint, proj),
                                                   raman.success_prob);
            } else {
                const PureState proj = atom_basis_states(m.atom_basis).first;
                return detail::conditional_outcome(OutcomeKind::Photon, detail::project_atom(joint, proj),
                                                   raman.success_prob);
            }
        },
        mode);
}

/**
 * Photon arrival-time density for one output port of the H/V analyzer,
 * conditioned on the atom being found in |+>.
 *
 * pdf(t) = exp(-t/tau)/tau * |<pol|psi_393(t)>|^2. For the symmetric
 * preparation and the default 854 nm polarization this is
 * exp(-t/tau)/tau * (1 -+ cos(phi_729 + w_L t))/2 with H on the minus
 * branch.
 */
inline double arrival_time_pdf(double t_ns, Polarization pol, const AtomPrep &prep, const InterfaceConfig &config,
                               const PhotonIn &photon = {}) {
    if (!(config.raman_decay_tau_ns > 0.0)) {
        throw ConfigError("arrival_time_pdf: decay time must be positive");
    }
    if (t_ns < 0.0) {
        throw std::domain_error("arrival_time_pdf: time must be non-negative");
    }
    const double tau = config.raman_decay_tau_ns;
    const ModeOutcome out = run_mode(Sender{}, prep, photon, t_ns, config);
    const double overlap = std::norm(polarization_state(pol).amplitudes().dot(out.state.amplitudes()));
    return std::exp(-t_ns / tau) / tau * overlap;
}

/**
 * Ensemble average of a Gaussian phase kick on the atomic qubit: atomic
 * coherences are scaled by exp(-sigma^2/2).
 */
inline DensityOperator apply_dephasing(const DensityOperator &rho, double sigma) {
    if (sigma < 0.0) {
        throw std::domain_error("apply_dephasing: sigma must be non-negative");
    }
    const double keep = std::exp(-0.5 * sigma * sigma);
    CMatrix m = rho.matrix();
    const int block = rho.dim() / 2; // photon dimension (1 for a bare atom)
    for (int r = 0; r < rho.dim(); ++r) {
        for (int c = 0; c < rho.dim(); ++c) {
            if (r / block != c / block) {
                m(r, c) *= keep;
            }
        }
    }
    return DensityOperator(std::move(m));
}

/// Atom input used by sender-mode process tomography: the D_5/2 state at t = 0.
inline PureState sender_input_state(const AtomPrep &prep) {
    return PureState{std::cos(prep.theta_d / 2.0), std::sin(prep.theta_d / 2.0) * std::polar(1.0, prep.phi_729)};
}

/**
 * Photon-frame rotation that removes the known phase picked up by the
 * R component: the 854 nm phase and the Larmor phase at emission time.
 * After it, the ideal sender output equals sender_input_state() in the
 * (L, R) basis, and the ideal entangler output is
 * (|-1/2,L> + e^{i phi_729}|+1/2,R>)/sqrt2.
 */
inline Eigen::Matrix2cd compensation_unitary(double angle) {
    Eigen::Matrix2cd u = Eigen::Matrix2cd::Zero();
    u(0, 0) = 1.0;
    u(1, 1) = std::polar(1.0, -angle);
    return u;
}

inline double compensation_angle(const PhotonIn &photon, double larmor_phase) { return photon.phi_854 + larmor_phase; }

/// Ideal compensated entangler output for a symmetric preparation.
inline PureState entangler_target(const AtomPrep &prep) {
    const double c = std::cos(prep.theta_d / 2.0), s = std::sin(prep.theta_d / 2.0);
    return PureState{c, 0.0, 0.0, s * std::polar(1.0, prep.phi_729)};
}

} // namespace qiface
