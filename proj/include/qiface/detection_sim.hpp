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
 * @file detection_sim.hpp
 * Monte Carlo generation of time-tagged 393 nm detections and the
 * arrival-time analysis built on them.
 */

#include "qiface/interface_model.hpp"
#include "qiface/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace qiface {

enum class AtomOutcome : std::int8_t { None = 0, Plus = 1, Minus = -1 };

inline const char *to_string(AtomOutcome o) {
    switch (o) {
    case AtomOutcome::Plus: return "+";
    case AtomOutcome::Minus: return "-";
    case AtomOutcome::None: return "NA";
    }
    return "?";
}

inline AtomOutcome parse_atom_outcome(const std::string &s) {
    if (s == "+") return AtomOutcome::Plus;
    if (s == "-") return AtomOutcome::Minus;
    if (s == "NA") return AtomOutcome::None;
    throw ConfigError("unknown atom outcome '" + s + "'");
}

struct TimeTagRecord {
    std::uint64_t trial_id = 0;
    double click_time_ns = 0.0;
    Polarization detector = Polarization::H;
    AtomOutcome atom_outcome = AtomOutcome::None;
    /// Ground truth; not available to the analysis of real data.
    bool is_dark = false;

    bool operator==(const TimeTagRecord &) const = default;
};

/// One measurement setting run for a fixed number of trials.
struct RunPlan {
    std::uint64_t n_trials = 1;
    std::uint64_t seed = 1;
    /// Label selecting the random stream; distinct settings use distinct labels.
    std::string stream = "run";
    ModeSelector mode = Entangler{};
    AtomPrep prep;
    PhotonIn photon;
    /// Photon analysis basis (ignored in receiver mode).
    AnalysisBasis photon_basis = AnalysisBasis::HV;
    /// Atomic analysis basis (entangler and receiver mode).
    AtomBasis atom_basis = AtomBasis::None;
    double window_ns = 450.0;
    /// Span over which dark counts are recorded in each trial.
    double acquisition_ns = 2000.0;

    void validate() const {
        if (n_trials == 0) throw ConfigError("n_trials must be positive");
        if (!(window_ns > 0.0)) throw ConfigError("window_ns must be positive");
        if (!(acquisition_ns > 0.0)) throw ConfigError("acquisition_ns must be positive");
        validate_mode(mode);
        prep.validate();
        photon.validate();
    }

    [[nodiscard]] AnalysisBasis effective_photon_basis() const {
        if (const auto *r = std::get_if<Receiver>(&mode)) return r->photon_basis;
        return photon_basis;
    }
    [[nodiscard]] AtomBasis effective_atom_basis() const {
        if (const auto *s = std::get_if<Sender>(&mode)) return s->atom_basis;
        if (const auto *c = std::get_if<Converter>(&mode)) return c->atom_basis;
        return atom_basis;
    }
};

namespace detail {
inline double standard_normal(SplitMix64 &rng) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * kPi * u2);
}

inline unsigned poisson_small(SplitMix64 &rng, double mean) {
    const double u = rng.uniform();
    double p = std::exp(-mean);
    double cdf = p;
    unsigned k = 0;
    while (u >= cdf && k < 1000) {
        ++k;
        p *= mean / k;
        cdf += p;
    }
    return k;
}

struct TrialKernel {
    const RunPlan &plan;
    const InterfaceConfig &config;
    double survival = 0.0;
    double dark_mean = 0.0;
    double jitter_sigma = 0.0;
    Polarization port[2];
    CVector photon_bra[2];
    std::optional<std::pair<PureState, PureState>> atom_states;
    PureState photon_in;

    TrialKernel(const RunPlan &p, const InterfaceConfig &c)
        : plan(p), config(c), photon_in(p.photon.state()) {
        const auto basis = waveplate_basis(plan.effective_photon_basis(), config.waveplate_miscal_rad);
        const auto [a, b] = ports(plan.effective_photon_basis());
        port[0] = a;
        port[1] = b;
        photon_bra[0] = basis.first.amplitudes().conjugate();
        photon_bra[1] = basis.second.amplitudes().conjugate();
        if (plan.effective_atom_basis() != AtomBasis::None) {
            atom_states = atom_basis_states(plan.effective_atom_basis());
        }
        bool transfer = true;
        try {
            (void)raman_map(prepare_d_state(plan.prep, 0.0, config), photon_in);
        } catch (const NoTransferError &) {
            transfer = false;
        }
        survival = transfer ? config.detection_survival() : 0.0;
        dark_mean = config.dark_rate_per_s * plan.acquisition_ns * 1e-9;
        jitter_sigma = config.timing_jitter_fwhm_ns / kFwhmPerSigma;
    }

    void run(std::uint64_t trial, std::uint64_t key, std::vector<TimeTagRecord> &out) const {
        SplitMix64 rng(plan.seed, key, trial);
        AtomOutcome trial_atom = AtomOutcome::None;
        if (rng.uniform() < survival) {
            const double t_emit = -config.raman_decay_tau_ns * std::log1p(-rng.uniform());
            CVector joint = raman_map(prepare_d_state(plan.prep, t_emit, config), photon_in).joint.amplitudes();
            if (config.dephasing_sigma_rad > 0.0) {
                const cplx kick = std::polar(1.0, config.dephasing_sigma_rad * standard_normal(rng));
                joint(2) *= kick;
                joint(3) *= kick;
            }
            // Joint outcome probabilities, photon port j and atom outcome k.
            double prob[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
            for (int j = 0; j < 2; ++j) {
                CVector atom_amp(2);
                for (int a = 0; a < 2; ++a) {
                    atom_amp(a) = photon_bra[j](0) * joint(2 * a) + photon_bra[j](1) * joint(2 * a + 1);
                }
                if (atom_states) {
                    prob[j][0] = std::norm(atom_states->first.amplitudes().dot(atom_amp));
                    prob[j][1] = std::norm(atom_states->second.amplitudes().dot(atom_amp));
                } else {
                    prob[j][0] = atom_amp.squaredNorm();
                }
            }
            const double u = rng.uniform() * (prob[0][0] + prob[0][1] + prob[1][0] + prob[1][1]);
            int j = 1, k = 1;
            if (u < prob[0][0]) {
                j = 0, k = 0;
            } else if (u < prob[0][0] + prob[0][1]) {
                j = 0, k = 1;
            } else if (u < prob[0][0] + prob[0][1] + prob[1][0]) {
                j = 1, k = 0;
            }
            if (atom_states) {
                trial_atom = k == 0 ? AtomOutcome::Plus : AtomOutcome::Minus;
            }
            double t_click = t_emit;
            if (jitter_sigma > 0.0) {
                t_click = std::abs(t_emit + jitter_sigma * standard_normal(rng));
            }
            out.push_back({trial, t_click, port[j], trial_atom, false});
        }
        if (dark_mean > 0.0) {
            const unsigned n = poisson_small(rng, dark_mean);
            for (unsigned i = 0; i < n; ++i) {
                const double t = rng.uniform() * plan.acquisition_ns;
                const Polarization det = port[rng.uniform() < 0.5 ? 0 : 1];
                AtomOutcome atom = trial_atom;
                if (atom == AtomOutcome::None && atom_states) {
                    atom = rng.uniform() < 0.5 ? AtomOutcome::Plus : AtomOutcome::Minus;
                }
                out.push_back({trial, t, det, atom, true});
            }
        }
    }
};
} // namespace detail

/**
 * Generates the detection records of one run.
 *
 * Each trial draws from its own stream (seed, plan.stream, trial_id), so
 * the output does not depend on `jobs`. A trial yields at most one photon
 * click plus Poisson dark counts.
 */
inline std::vector<TimeTagRecord> simulate_run(const RunPlan &plan, const InterfaceConfig &config, unsigned jobs = 1) {
    plan.validate();
    config.validate();
    const detail::TrialKernel kernel(plan, config);
    const std::uint64_t key = stream_key(plan.stream);
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::min<std::uint64_t>(plan.n_trials, 256))));
    std::vector<std::vector<TimeTagRecord>> parts(jobs);
    auto work = [&](unsigned w) {
        const std::uint64_t begin = plan.n_trials * w / jobs;
        const std::uint64_t end = plan.n_trials * (w + 1) / jobs;
        for (std::uint64_t t = begin; t < end; ++t) {
            kernel.run(t, key, parts[w]);
        }
    };
    if (jobs == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < jobs; ++w) pool.emplace_back(work, w);
        for (auto &th : pool) th.join();
    }
    std::vector<TimeTagRecord> out;
    for (auto &p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

// Histograms.

enum class AtomFilter { Any, Plus, Minus };

inline bool accepts(AtomFilter f, AtomOutcome o) {
    switch (f) {
    case AtomFilter::Any: return true;
    case AtomFilter::Plus: return o == AtomOutcome::Plus;
    case AtomFilter::Minus: return o == AtomOutcome::Minus;
    }
    return false;
}

struct ArrivalHistogram {
    double bin_width_ns = 5.0;
    std::vector<Polarization> detectors;
    /// counts[bin][detector column]
    std::vector<std::vector<std::uint64_t>> counts;
    std::uint64_t total_trials = 0;

    [[nodiscard]] std::size_t n_bins() const { return counts.size(); }
    [[nodiscard]] double bin_center(std::size_t b) const { return (static_cast<double>(b) + 0.5) * bin_width_ns; }
    [[nodiscard]] std::uint64_t total() const {
        std::uint64_t s = 0;
        for (const auto &row : counts)
            for (auto c : row) s += c;
        return s;
    }
    [[nodiscard]] std::uint64_t at(std::size_t bin, Polarization det) const {
        const auto it = std::find(detectors.begin(), detectors.end(), det);
        return it == detectors.end() ? 0 : counts[bin][static_cast<std::size_t>(it - detectors.begin())];
    }
};

/**
 * Bins click times. Columns and the number of bins are taken from the full
 * tag set, not just the accepted tags, so histograms under complementary
 * filters add up to the unfiltered one bin by bin.
 */
inline ArrivalHistogram histogram(const std::vector<TimeTagRecord> &tags, double bin_width_ns, AtomFilter filter,
                                  std::uint64_t total_trials = 0, std::size_t n_bins = 0) {
    if (!(bin_width_ns > 0.0)) {
        throw std::invalid_argument("histogram: bin width must be positive");
    }
    ArrivalHistogram h;
    h.bin_width_ns = bin_width_ns;
    h.total_trials = total_trials;
    bool seen[6] = {false, false, false, false, false, false};
    double t_max = 0.0;
    for (const auto &t : tags) {
        seen[static_cast<int>(t.detector)] = true;
        t_max = std::max(t_max, t.click_time_ns);
    }
    for (int d = 0; d < 6; ++d) {
        if (seen[d]) h.detectors.push_back(static_cast<Polarization>(d));
    }
    if (n_bins == 0 && !tags.empty()) {
        n_bins = static_cast<std::size_t>(t_max / bin_width_ns) + 1;
    }
    h.counts.assign(n_bins, std::vector<std::uint64_t>(h.detectors.size(), 0));
    for (const auto &t : tags) {
        if (!accepts(filter, t.atom_outcome)) continue;
        const auto bin = static_cast<std::size_t>(t.click_time_ns / bin_width_ns);
        if (bin >= n_bins) continue;
        const auto col = std::find(h.detectors.begin(), h.detectors.end(), t.detector) - h.detectors.begin();
        ++h.counts[bin][static_cast<std::size_t>(col)];
    }
    return h;
}

// Larmor-phase analysis.

struct PhasedTag {
    TimeTagRecord tag;
    double larmor_phase = 0.0;
};

inline std::vector<PhasedTag> larmor_phase_fold(const std::vector<TimeTagRecord> &tags, double period_ns) {
    if (!(period_ns > 0.0)) {
        throw std::invalid_argument("larmor_phase_fold: period must be positive");
    }
    std::vector<PhasedTag> out;
    out.reserve(tags.size());
    for (const auto &t : tags) {
        double frac = std::fmod(t.click_time_ns / period_ns, 1.0);
        double phase = 2.0 * kPi * frac;
        if (phase >= 2.0 * kPi) phase = 0.0;
        out.push_back({t, phase});
    }
    return out;
}

/// s(phi) = offset + amplitude * cos(phi - phase)
struct SinusoidFit {
    double offset = 0.0;
    double amplitude = 0.0;
    double phase = 0.0;
    [[nodiscard]] double operator()(double phi) const { return offset + amplitude * std::cos(phi - phase); }
};

/// Least-squares fit of offset + a cos(x) + b sin(x), optionally weighted.
inline SinusoidFit fit_sinusoid(const std::vector<double> &x, const std::vector<double> &y,
                                const std::vector<double> &w = {}) {
    if (x.size() != y.size() || x.size() < 3) {
        throw std::invalid_argument("fit_sinusoid: need at least three points");
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(x.size()), 3);
    Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double sw = w.empty() ? 1.0 : std::sqrt(w[i]);
        const auto r = static_cast<Eigen::Index>(i);
        a(r, 0) = sw;
        a(r, 1) = sw * std::cos(x[i]);
        a(r, 2) = sw * std::sin(x[i]);
        b(r) = sw * y[i];
    }
    const Eigen::Vector3d c = a.colPivHouseholderQr().solve(b);
    return {c(0), std::hypot(c(1), c(2)), std::atan2(c(2), c(1))};
}

struct PoincareProfile {
    std::vector<double> bin_center;
    std::vector<StokesVector> stokes;
    /// Clicks per bin in the H/V, D/A and R/L bases.
    std::vector<std::array<std::uint64_t, 3>> counts;
    std::array<SinusoidFit, 3> fits;
};

/**
 * Stokes components per Larmor-phase bin from relative port counts, with a
 * sinusoid fitted to each component. All three analysis bases must be
 * present in the data.
 */
inline PoincareProfile poincare_vs_phase(const std::vector<PhasedTag> &tags, int n_phase_bins) {
    if (n_phase_bins < 3) {
        throw std::invalid_argument("poincare_vs_phase: need at least three phase bins");
    }
    const auto nb = static_cast<std::size_t>(n_phase_bins);
    std::vector<std::array<std::uint64_t, 6>> n(nb, std::array<std::uint64_t, 6>{});
    std::array<std::uint64_t, 3> basis_total{};
    for (const auto &t : tags) {
        auto bin = static_cast<std::size_t>(t.larmor_phase / (2.0 * kPi) * n_phase_bins);
        bin = std::min(bin, nb - 1);
        const auto d = static_cast<std::size_t>(t.tag.detector);
        ++n[bin][d];
        ++basis_total[d / 2];
    }
    static constexpr const char *names[] = {"H/V", "D/A", "R/L"};
    for (int b = 0; b < 3; ++b) {
        if (basis_total[static_cast<std::size_t>(b)] == 0) {
            throw std::invalid_argument(std::string("poincare_vs_phase: no clicks in the ") + names[b] + " basis");
        }
    }
    PoincareProfile p;
    std::array<std::vector<double>, 3> xs, ys;
    for (std::size_t b = 0; b < nb; ++b) {
        const double center = (static_cast<double>(b) + 0.5) * 2.0 * kPi / n_phase_bins;
        p.bin_center.push_back(center);
        std::array<double, 3> s{};
        std::array<std::uint64_t, 3> c{};
        for (std::size_t k = 0; k < 3; ++k) {
            c[k] = n[b][2 * k] + n[b][2 * k + 1];
            if (c[k] > 0) {
                s[k] = (static_cast<double>(n[b][2 * k]) - static_cast<double>(n[b][2 * k + 1])) / static_cast<double>(c[k]);
                xs[k].push_back(center);
                ys[k].push_back(s[k]);
            } else {
                s[k] = std::nan("");
            }
        }
        p.stokes.push_back({s[0], s[1], s[2]});
        p.counts.push_back(c);
    }
    for (std::size_t k = 0; k < 3; ++k) {
        p.fits[k] = fit_sinusoid(xs[k], ys[k]);
    }
    return p;
}

struct PhaseLine {
    double slope = 0.0;
    double intercept = 0.0;
    std::vector<double> phase; // unwrapped, per bin
};

/// Direction of the linear polarization on the Poincare equator,
/// atan2(s2, s1), unwrapped along the Larmor phase and fitted with a line.
inline PhaseLine polarization_phase_line(const PoincareProfile &profile) {
    PhaseLine line;
    std::vector<double> x;
    double prev = 0.0;
    for (std::size_t b = 0; b < profile.bin_center.size(); ++b) {
        const auto &s = profile.stokes[b];
        if (std::isnan(s.s1) || std::isnan(s.s2)) continue;
        double a = std::atan2(s.s2, s.s1);
        if (!line.phase.empty()) {
            a += 2.0 * kPi * std::round((prev - a) / (2.0 * kPi));
        }
        prev = a;
        line.phase.push_back(a);
        x.push_back(profile.bin_center[b]);
    }
    if (x.size() < 2) {
        throw std::invalid_argument("polarization_phase_line: not enough populated bins");
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(x.size()), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        a(static_cast<Eigen::Index>(i), 0) = 1.0;
        a(static_cast<Eigen::Index>(i), 1) = x[i];
        y(static_cast<Eigen::Index>(i)) = line.phase[i];
    }
    const Eigen::Vector2d c = a.colPivHouseholderQr().solve(y);
    line.intercept = c(0);
    line.slope = c(1);
    return line;
}

struct PeriodFit {
    double period_ns = 0.0;
    double visibility = 0.0;
    double weighted_rss = 0.0;
};

/**
 * Fits the oscillation period of the H/V contrast (n_H - n_V)/(n_H + n_V)
 * in arrival-time histograms. Each histogram enters with a sign so that
 * data conditioned on complementary atomic outcomes can be combined.
 * Scans the period over [0.5, 2] x `guess_ns` and refines the best point.
 */
inline PeriodFit fit_oscillation_period(const std::vector<std::pair<ArrivalHistogram, double>> &data, double guess_ns) {
    std::vector<double> t, c, w;
    for (const auto &[h, sign] : data) {
        for (std::size_t b = 0; b < h.n_bins(); ++b) {
            const double nh = static_cast<double>(h.at(b, Polarization::H));
            const double nv = static_cast<double>(h.at(b, Polarization::V));
            if (nh + nv <= 0.0) continue;
            t.push_back(h.bin_center(b));
            c.push_back(sign * (nh - nv) / (nh + nv));
            w.push_back(nh + nv);
        }
    }
    if (t.size() < 4) {
        throw std::invalid_argument("fit_oscillation_period: not enough populated bins");
    }
    auto rss = [&](double period, SinusoidFit *fit_out) {
        std::vector<double> x(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) x[i] = 2.0 * kPi * t[i] / period;
        const SinusoidFit f = fit_sinusoid(x, c, w);
        double r = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) r += w[i] * std::pow(c[i] - f(x[i]), 2);
        if (fit_out) *fit_out = f;
        return r;
    };
    const int n_scan = 3000;
    double best_p = guess_ns, best_r = std::numeric_limits<double>::infinity();
    const double lo = 0.5 * guess_ns, hi = 2.0 * guess_ns;
    for (int i = 0; i <= n_scan; ++i) {
        const double p = lo * std::pow(hi / lo, static_cast<double>(i) / n_scan);
        const double r = rss(p, nullptr);
        if (r < best_r) {
            best_r = r;
            best_p = p;
        }
    }
    // Golden-section refinement inside one scan step.
    const double step = std::pow(hi / lo, 1.0 / n_scan);
    double a = best_p / step, b = best_p * step;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = rss(x1, nullptr), f2 = rss(x2, nullptr);
    for (int it = 0; it < 80; ++it) {
        if (f1 < f2) {
            b = x2, x2 = x1, f2 = f1;
            x1 = b - g * (b - a);
            f1 = rss(x1, nullptr);
        } else {
            a = x1, x1 = x2, f1 = f2;
            x2 = a + g * (b - a);
            f2 = rss(x2, nullptr);
        }
    }
    PeriodFit out;
    out.period_ns = 0.5 * (a + b);
    SinusoidFit f;
    out.weighted_rss = rss(out.period_ns, &f);
    out.visibility = f.amplitude;
    return out;
}

// Window selection and rates.

struct WindowSelection {
    std::vector<TimeTagRecord> tags;
    /// Kept clicks per trial.
    double efficiency = 0.0;
};

inline WindowSelection window_select(const std::vector<TimeTagRecord> &tags, double t_max_ns, std::uint64_t n_trials) {
    if (!(t_max_ns > 0.0)) {
        throw std::invalid_argument("window_select: window must be positive");
    }
    if (n_trials == 0) {
        throw std::invalid_argument("window_select: trial count must be positive");
    }
    WindowSelection sel;
    std::copy_if(tags.begin(), tags.end(), std::back_inserter(sel.tags),
                 [&](const TimeTagRecord &t) { return t.click_time_ns <= t_max_ns; });
    sel.efficiency = static_cast<double>(sel.tags.size()) / static_cast<double>(n_trials);
    return sel;
}

/// Fiber-coupled photon rate: detected rate corrected for the detector
/// quantum efficiency.
inline double rate_bookkeeping(double rep_rate_hz, double detection_eff, double pmt_qe) {
    if (!(pmt_qe > 0.0)) {
        throw std::invalid_argument("rate_bookkeeping: quantum efficiency must be positive");
    }
    if (!(rep_rate_hz > 0.0) || !(detection_eff >= 0.0)) {
        throw std::invalid_argument("rate_bookkeeping: rate and efficiency must be positive");
    }
    return rep_rate_hz * detection_eff / pmt_qe;
}

// File formats. Headers are "# key=value" lines; the optional first
// "# created=..." line is the only part that differs between replays.

using Metadata = std::map<std::string, std::string>;

inline std::string fmt_double(double v) { return fmt::format("{}", v); }

inline Metadata describe(const InterfaceConfig &c) {
    return {
        {"config.b_field_gauss", fmt_double(c.b_field_gauss)},
        {"config.raman_decay_tau_ns", fmt_double(c.raman_decay_tau_ns)},
        {"config.dephasing_sigma_rad", fmt_double(c.dephasing_sigma_rad)},
        {"config.branching_pd", fmt_double(c.branching_pd)},
        {"config.dark_rate_per_s", fmt_double(c.dark_rate_per_s)},
        {"config.pmt_qe", fmt_double(c.pmt_qe)},
        {"config.fiber_coupling_eff", fmt_double(c.fiber_coupling_eff)},
        {"config.analyzer_transmission", fmt_double(c.analyzer_transmission)},
        {"config.rep_rate_hz", fmt_double(c.rep_rate_hz)},
        {"config.waveplate_miscal_rad", fmt_double(c.waveplate_miscal_rad)},
        {"config.timing_jitter_fwhm_ns", fmt_double(c.timing_jitter_fwhm_ns)},
        {"config.larmor_period_ns", fmt_double(c.larmor_period_ns())},
    };
}

inline Metadata describe(const RunPlan &p) {
    return {
        {"plan.n_trials", std::to_string(p.n_trials)},
        {"plan.seed", std::to_string(p.seed)},
        {"plan.stream", p.stream},
        {"plan.mode", mode_name(p.mode)},
        {"plan.theta_d_rad", fmt_double(p.prep.theta_d)},
        {"plan.phi_729_rad", fmt_double(p.prep.phi_729)},
        {"plan.theta_854_rad", fmt_double(p.photon.theta_854)},
        {"plan.phi_854_rad", fmt_double(p.photon.phi_854)},
        {"plan.photon_basis", to_string(p.effective_photon_basis())},
        {"plan.atom_basis", to_string(p.effective_atom_basis())},
        {"plan.window_ns", fmt_double(p.window_ns)},
        {"plan.acquisition_ns", fmt_double(p.acquisition_ns)},
    };
}

inline void write_header(std::ostream &os, const Metadata &meta, const std::string &created) {
    if (!created.empty()) os << "# created=" << created << '\n';
    for (const auto &[k, v] : meta) os << "# " << k << '=' << v << '\n';
}

/// Reads "# key=value" lines until the first non-comment line, which is
/// returned through `first_line`.
inline Metadata read_header(std::istream &is, std::string &first_line) {
    Metadata meta;
    std::string line;
    first_line.clear();
    while (std::getline(is, line)) {
        if (line.rfind("# ", 0) != 0) {
            first_line = line;
            break;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
    }
    return meta;
}

inline void write_tags(std::ostream &os, const std::vector<TimeTagRecord> &tags, const Metadata &meta,
                       const std::string &created = {}) {
    write_header(os, meta, created);
    os << "trial_id,click_time_ns,detector,atom_outcome,is_dark\n";
    fmt::memory_buffer buf;
    for (const auto &t : tags) {
        fmt::format_to(std::back_inserter(buf), "{},{:.6f},{},{},{}\n", t.trial_id, t.click_time_ns,
                       to_string(t.detector), to_string(t.atom_outcome), t.is_dark ? 1 : 0);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

struct TagFile {
    Metadata meta;
    std::vector<TimeTagRecord> tags;
};

inline TagFile read_tags(std::istream &is) {
    TagFile f;
    std::string line;
    f.meta = read_header(is, line);
    if (line != "trial_id,click_time_ns,detector,atom_outcome,is_dark") {
        throw ConfigError("read_tags: unexpected column header '" + line + "'");
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, time, det, atom, dark;
        if (!std::getline(ls, id, ',') || !std::getline(ls, time, ',') || !std::getline(ls, det, ',') ||
            !std::getline(ls, atom, ',') || !std::getline(ls, dark)) {
            throw ConfigError("read_tags: malformed line '" + line + "'");
        }
        f.tags.push_back({std::stoull(id), std::stod(time), parse_polarization(det), parse_atom_outcome(atom), dark == "1"});
    }
    return f;
}

/// One row per bin; one column per (histogram, detector) pair.
inline void write_histograms(std::ostream &os, const std::vector<std::pair<std::string, ArrivalHistogram>> &hists,
                             const Metadata &meta, const std::string &created = {}) {
    write_header(os, meta, created);
    os << "bin_start_ns";
    std::size_t n_bins = 0;
    for (const auto &[name, h] : hists) {
        for (auto d : h.detectors) os << ',' << to_string(d) << name;
        n_bins = std::max(n_bins, h.n_bins());
    }
    os << '\n';
    for (std::size_t b = 0; b < n_bins; ++b) {
        os << fmt_double(static_cast<double>(b) * hists.front().second.bin_width_ns);
        for (const auto &[name, h] : hists) {
            for (std::size_t d = 0; d < h.detectors.size(); ++d) os << ',' << (b < h.n_bins() ? h.counts[b][d] : 0);
        }
        os << '\n';
    }
}

} // namespace qiface
