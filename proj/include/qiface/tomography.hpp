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
 * @file tomography.hpp
 * State and process reconstruction from outcome counts.
 *
 * A measurement setting is named by a label that fully determines its
 * projectors, so counts files can be analyzed without side information:
 *
 *   <photon basis>[.<atom basis>][@<angle>]
 *
 * e.g. "HV", "DA.x", "RL.z@1.963495". The photon basis is HV, DA or RL
 * (ideal projectors), the atom basis z, x or y, and the optional angle is
 * the photon-frame compensation (see compensation_unitary()). Outcome
 * labels are the photon port followed by the atomic sign, e.g. "H+".
 */

#include "qiface/detection_sim.hpp"
#include "qiface/interface_model.hpp"
#include "qiface/quantum_core.hpp"
#include "qiface/rng.hpp"

#include <fmt/format.h>

#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace qiface {

/// Raised when the settings do not determine the unknown.
class RankDeficientError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct Setting {
    std::string label;
    std::vector<std::string> outcomes;
    /// One projector per outcome; they sum to the identity.
    std::vector<CMatrix> povm;
    [[nodiscard]] int dim() const { return static_cast<int>(povm.front().rows()); }
};

inline std::string setting_label(AnalysisBasis photon, AtomBasis atom = AtomBasis::None,
                                 std::optional<double> angle = std::nullopt) {
    std::string s = to_string(photon);
    if (atom != AtomBasis::None) s += std::string(".") + to_string(atom);
    if (angle) s += fmt::format("@{:.6f}", *angle);
    return s;
}

inline Setting make_setting(const std::string &label) {
    const auto at = label.find('@');
    const std::string bases = label.substr(0, at);
    double angle = 0.0;
    if (at != std::string::npos) {
        try {
            angle = std::stod(label.substr(at + 1));
        } catch (const std::exception &) {
            throw ConfigError("make_setting: bad angle in '" + label + "'");
        }
    }
    const auto dot = bases.find('.');
    const AnalysisBasis photon = parse_analysis_basis(bases.substr(0, dot));
    const AtomBasis atom = dot == std::string::npos ? AtomBasis::None : parse_atom_basis(bases.substr(dot + 1));
    if (dot != std::string::npos && atom == AtomBasis::None) {
        throw ConfigError("make_setting: atom basis 'none' must be omitted in '" + label + "'");
    }
    const Eigen::Matrix2cd u = compensation_unitary(angle);
    const auto [pa, pb] = ports(photon);
    Setting s;
    s.label = label;
    for (Polarization p : {pa, pb}) {
        const CMatrix proj = u * polarization_state(p).projector() * u.adjoint();
        if (atom == AtomBasis::None) {
            s.outcomes.emplace_back(to_string(p));
            s.povm.push_back(proj);
        } else {
            const auto [plus, minus] = atom_basis_states(atom);
            s.outcomes.push_back(std::string(to_string(p)) + "+");
            s.povm.push_back(kron(plus.projector(), proj));
            s.outcomes.push_back(std::string(to_string(p)) + "-");
            s.povm.push_back(kron(minus.projector(), proj));
        }
    }
    return s;
}

/// Outcome counts keyed by (preparation, setting), in insertion order.
class CountsTable {
  public:
    struct Entry {
        std::string prep;
        Setting setting;
        std::vector<double> counts;
        [[nodiscard]] double total() const {
            double s = 0.0;
            for (double c : counts) s += c;
            return s;
        }
    };

    Metadata meta;

    /// Adds counts to an entry, creating it if needed.
    void add(const std::string &prep, const Setting &setting, const std::vector<double> &counts) {
        if (counts.size() != setting.outcomes.size()) {
            throw std::invalid_argument("CountsTable::add: wrong number of outcomes for " + setting.label);
        }
        for (double c : counts) {
            if (!(c >= 0.0)) throw std::invalid_argument("CountsTable::add: counts must be non-negative");
        }
        const auto key = std::make_pair(prep, setting.label);
        const auto it = index_.find(key);
        if (it == index_.end()) {
            if (!entries_.empty() && entries_.front().setting.dim() != setting.dim()) {
                throw DimensionError("CountsTable::add: mixed dimensions");
            }
            index_[key] = entries_.size();
            entries_.push_back({prep, setting, counts});
        } else {
            auto &e = entries_[it->second].counts;
            for (std::size_t i = 0; i < counts.size(); ++i) e[i] += counts[i];
        }
    }

    /// Increments one outcome, creating the setting from its label if needed.
    void increment(const std::string &prep, const std::string &setting_label, const std::string &outcome, double n = 1.0) {
        auto key = std::make_pair(prep, setting_label);
        auto it = index_.find(key);
        if (it == index_.end()) {
            const Setting s = make_setting(setting_label);
            add(prep, s, std::vector<double>(s.outcomes.size(), 0.0));
            it = index_.find(key);
        }
        auto &e = entries_[it->second];
        const auto o = std::find(e.setting.outcomes.begin(), e.setting.outcomes.end(), outcome);
        if (o == e.setting.outcomes.end()) {
            throw ConfigError("CountsTable: outcome '" + outcome + "' not in setting " + setting_label);
        }
        e.counts[static_cast<std::size_t>(o - e.setting.outcomes.begin())] += n;
    }

    [[nodiscard]] const std::vector<Entry> &entries() const { return entries_; }
    [[nodiscard]] std::vector<Entry> &entries() { return entries_; }
    [[nodiscard]] bool empty() const { return entries_.empty(); }
    [[nodiscard]] int dim() const {
        if (entries_.empty()) throw std::invalid_argument("CountsTable: empty");
        return entries_.front().setting.dim();
    }
    [[nodiscard]] double total() const {
        double s = 0.0;
        for (const auto &e : entries_) s += e.total();
        return s;
    }

    [[nodiscard]] std::vector<std::string> preparations() const {
        std::vector<std::string> out;
        for (const auto &e : entries_) {
            if (std::find(out.begin(), out.end(), e.prep) == out.end()) out.push_back(e.prep);
        }
        return out;
    }

    [[nodiscard]] CountsTable select(const std::string &prep) const {
        CountsTable t;
        t.meta = meta;
        for (const auto &e : entries_) {
            if (e.prep == prep) t.add(e.prep, e.setting, e.counts);
        }
        return t;
    }

  private:
    std::vector<Entry> entries_;
    std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

inline void write_counts(std::ostream &os, const CountsTable &table, const std::string &created = {}) {
    write_header(os, table.meta, created);
    os << "preparation_label,setting,outcome,count\n";
    for (const auto &e : table.entries()) {
        for (std::size_t i = 0; i < e.counts.size(); ++i) {
            os << e.prep << ',' << e.setting.label << ',' << e.setting.outcomes[i] << ',' << fmt_double(e.counts[i])
               << '\n';
        }
    }
}

inline CountsTable read_counts(std::istream &is) {
    CountsTable t;
    std::string line;
    t.meta = read_header(is, line);
    if (line != "preparation_label,setting,outcome,count") {
        throw ConfigError("read_counts: unexpected column header '" + line + "'");
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string prep, setting, outcome, count;
        if (!std::getline(ls, prep, ',') || !std::getline(ls, setting, ',') || !std::getline(ls, outcome, ',') ||
            !std::getline(ls, count)) {
            throw ConfigError("read_counts: malformed line '" + line + "'");
        }
        double n = 0.0;
        try {
            n = std::stod(count);
        } catch (const std::exception &) {
            throw ConfigError("read_counts: bad count in '" + line + "'");
        }
        t.increment(prep, setting, outcome, n);
    }
    return t;
}

/// Exact expected counts of `rho` for each setting, `n_per_setting` trials each.
inline CountsTable expected_counts(const DensityOperator &rho, const std::vector<Setting> &settings,
                                   double n_per_setting, const std::string &prep = "state") {
    CountsTable t;
    for (const auto &s : settings) {
        std::vector<double> c;
        for (const auto &e : s.povm) c.push_back(std::max(0.0, n_per_setting * (rho.matrix() * e).trace().real()));
        t.add(prep, s, c);
    }
    return t;
}

/// The nine product settings of two-qubit tomography.
inline std::vector<Setting> pauli_product_settings() {
    std::vector<Setting> out;
    for (auto p : {AnalysisBasis::HV, AnalysisBasis::DA, AnalysisBasis::RL}) {
        for (auto a : {AtomBasis::Z, AtomBasis::X, AtomBasis::Y}) out.push_back(make_setting(setting_label(p, a)));
    }
    return out;
}

inline std::vector<Setting> photon_settings() {
    std::vector<Setting> out;
    for (auto p : {AnalysisBasis::HV, AnalysisBasis::DA, AnalysisBasis::RL}) out.push_back(make_setting(setting_label(p)));
    return out;
}

// Linear inversion.

namespace detail {
/// Orthonormal traceless Hermitian basis (generalized Gell-Mann).
inline std::vector<CMatrix> traceless_basis(int dim) {
    std::vector<CMatrix> out;
    for (const auto &m : hermitian_basis(dim)) {
        if (std::abs(m.trace()) < 1e-15) out.push_back(m);
    }
    for (int l = 1; l < dim; ++l) {
        CMatrix d = CMatrix::Zero(dim, dim);
        const double norm = 1.0 / std::sqrt(static_cast<double>(l * (l + 1)));
        for (int j = 0; j < l; ++j) d(j, j) = norm;
        d(l, l) = -l * norm;
        out.push_back(d);
    }
    return out;
}
} // namespace detail

struct LinearInversionResult {
    DensityOperator rho;
    double min_eigenvalue;
    bool is_physical;
};

/// Least-squares solution of the Born-rule equations tr(rho E_k) = n_k / N
/// with unit trace built in. Positivity is not enforced.
inline LinearInversionResult linear_inversion(const CountsTable &counts) {
    const int d = counts.dim();
    const auto basis = detail::traceless_basis(d);
    const auto nb = static_cast<Eigen::Index>(basis.size());
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rhs;
    for (const auto &e : counts.entries()) {
        const double n = e.total();
        if (n <= 0.0) continue;
        for (std::size_t k = 0; k < e.counts.size(); ++k) {
            const CMatrix &proj = e.setting.povm[k];
            Eigen::VectorXd row(nb);
            for (Eigen::Index b = 0; b < nb; ++b) {
                row(b) = (proj * basis[static_cast<std::size_t>(b)]).trace().real();
            }
            rows.push_back(row);
            rhs.push_back(e.counts[k] / n - proj.trace().real() / d);
        }
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), nb);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        a.row(static_cast<Eigen::Index>(i)) = rows[i];
        y(static_cast<Eigen::Index>(i)) = rhs[i];
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(1e-10);
    cod.compute(a);
    if (rows.empty() || cod.rank() < nb) {
        throw RankDeficientError("linear_inversion: settings are not informationally complete");
    }
    const Eigen::VectorXd x = cod.solve(y);
    CMatrix m = CMatrix::Identity(d, d) / static_cast<double>(d);
    for (Eigen::Index b = 0; b < nb; ++b) m += x(b) * basis[static_cast<std::size_t>(b)];
    DensityOperator rho(m);
    const double ev = rho.min_eigenvalue();
    return {rho, ev, ev >= -1e-9};
}

// Maximum likelihood.

/**
 * Multinomial log-likelihood over the physical set, parameterized by an
 * upper-triangular T with real diagonal: rho = T^dag T / tr(T^dag T).
 *
 * Parameter layout: T(i,i) for i = 0..d-1, then (Re, Im) of T(i,j) for
 * i < j in row-major order. value() and gradient() are normalized by the
 * total count.
 */
class LikelihoodModel {
  public:
    explicit LikelihoodModel(const CountsTable &counts) : dim_(counts.dim()) {
        std::vector<Eigen::VectorXcd> elems;
        std::vector<double> n;
        for (const auto &e : counts.entries()) {
            for (std::size_t k = 0; k < e.counts.size(); ++k) {
                if (e.counts[k] <= 0.0) continue;
                // p = tr(rho E) = sum_ij rho_ij E_ji = <vec(E^T)^*, vec(rho)>
                const CMatrix et = e.setting.povm[k].transpose();
                elems.push_back(Eigen::Map<const Eigen::VectorXcd>(et.data(), et.size()));
                n.push_back(e.counts[k]);
            }
        }
        total_ = 0.0;
        for (double v : n) total_ += v;
        if (total_ <= 0.0) throw std::invalid_argument("LikelihoodModel: no counts");
        elements_.resize(static_cast<Eigen::Index>(elems.size()), dim_ * dim_);
        weights_.resize(static_cast<Eigen::Index>(n.size()));
        for (std::size_t i = 0; i < elems.size(); ++i) {
            elements_.row(static_cast<Eigen::Index>(i)) = elems[i].transpose();
            weights_(static_cast<Eigen::Index>(i)) = n[i] / total_;
        }
    }

    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] int n_params() const { return dim_ * dim_; }
    [[nodiscard]] double total_counts() const { return total_; }

    [[nodiscard]] CMatrix t_from_params(const Eigen::VectorXd &x) const {
        CMatrix t = CMatrix::Zero(dim_, dim_);
        Eigen::Index k = 0;
        for (int i = 0; i < dim_; ++i) t(i, i) = x(k++);
        for (int i = 0; i < dim_; ++i) {
            for (int j = i + 1; j < dim_; ++j) {
                t(i, j) = cplx(x(k), x(k + 1));
                k += 2;
            }
        }
        return t;
    }

    [[nodiscard]] Eigen::VectorXd params_from_t(const CMatrix &t) const {
        Eigen::VectorXd x(n_params());
        Eigen::Index k = 0;
        for (int i = 0; i < dim_; ++i) x(k++) = t(i, i).real();
        for (int i = 0; i < dim_; ++i) {
            for (int j = i + 1; j < dim_; ++j) {
                x(k++) = t(i, j).real();
                x(k++) = t(i, j).imag();
            }
        }
        return x;
    }

    /// Parameters of a strictly positive definite rho.
    [[nodiscard]] Eigen::VectorXd params_from_rho(const CMatrix &rho) const {
        const Eigen::LLT<CMatrix> llt(rho);
        if (llt.info() != Eigen::Success) {
            throw std::domain_error("LikelihoodModel: starting point is not positive definite");
        }
        CMatrix t = llt.matrixL().adjoint();
        // Make the diagonal real by rephasing rows of T.
        for (int i = 0; i < dim_; ++i) {
            const cplx ph = t(i, i) / std::abs(t(i, i));
            t.row(i) *= std::conj(ph);
        }
        return params_from_t(t);
    }

    [[nodiscard]] CMatrix rho_from_params(const Eigen::VectorXd &x) const {
        const CMatrix t = t_from_params(x);
        const CMatrix a = t.adjoint() * t;
        return a / a.trace().real();
    }

    [[nodiscard]] Eigen::VectorXd probabilities(const CMatrix &rho) const {
        const Eigen::Map<const Eigen::VectorXcd> v(rho.data(), rho.size());
        return (elements_ * v).real();
    }

    /// Mean log-likelihood per count; -inf outside the support.
    [[nodiscard]] double value_at(const CMatrix &rho) const {
        const Eigen::VectorXd p = probabilities(rho);
        double s = 0.0;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            if (p(i) <= 0.0) return -std::numeric_limits<double>::infinity();
            s += weights_(i) * std::log(p(i));
        }
        return s;
    }

    [[nodiscard]] double value(const Eigen::VectorXd &x) const { return value_at(rho_from_params(x)); }

    [[nodiscard]] Eigen::VectorXd gradient(const Eigen::VectorXd &x) const {
        const CMatrix t = t_from_params(x);
        const CMatrix a = t.adjoint() * t;
        const double tr = a.trace().real();
        const CMatrix rho = a / tr;
        const Eigen::VectorXd p = probabilities(rho);
        const Eigen::VectorXcd w = (weights_.array() / p.array()).matrix().cast<cplx>();
        // G = sum_k w_k E_k, recovered from the stacked vec(E^T) rows.
        const Eigen::VectorXcd gt = elements_.transpose() * w;
        const CMatrix g = Eigen::Map<const CMatrix>(gt.data(), dim_, dim_).transpose();
        const CMatrix h = (g - (g * rho).trace().real() * CMatrix::Identity(dim_, dim_)) / tr;
        const CMatrix m = 2.0 * t * h;
        Eigen::VectorXd out(n_params());
        Eigen::Index k = 0;
        for (int i = 0; i < dim_; ++i) out(k++) = m(i, i).real();
        for (int i = 0; i < dim_; ++i) {
            for (int j = i + 1; j < dim_; ++j) {
                out(k++) = m(i, j).real();
                out(k++) = m(i, j).imag();
            }
        }
        return out;
    }

  private:
    int dim_;
    double total_ = 0.0;
    Eigen::MatrixXcd elements_;
    Eigen::VectorXd weights_;
};

/// Unnormalized multinomial log-likelihood, sum_k n_k log p_k.
inline double log_likelihood(const CountsTable &counts, const DensityOperator &rho) {
    const LikelihoodModel model(counts);
    return model.value_at(rho.matrix()) * model.total_counts();
}

struct MleOptions {
    int max_iterations = 5000;
    /// Stop when the mean log-likelihood per count improves by less than this.
    double improvement_tol = 1e-10;
    double gradient_tol = 1e-8;
    /// Weight of the maximally mixed state blended into the starting point.
    double start_mixing = 1e-3;
};

struct StateEstimate {
    DensityOperator rho;
    double log_likelihood = 0.0;
    int n_iterations = 0;
    bool converged = false;
};

/**
 * Maximum-likelihood state. BFGS ascent in the T parameterization, started
 * from the physicalized linear-inversion estimate. If the optimizer fails
 * to beat its own starting point, that point is returned.
 */
inline StateEstimate mle_state(const CountsTable &counts, const MleOptions &options = {}) {
    const LinearInversionResult li = linear_inversion(counts);
    const DensityOperator start = physicalize(li.rho.matrix());
    const LikelihoodModel model(counts);
    const int d = model.dim();
    const int np = model.n_params();

    const CMatrix mixed = (1.0 - options.start_mixing) * start.matrix() +
                          options.start_mixing * CMatrix::Identity(d, d) / static_cast<double>(d);
    Eigen::VectorXd x = model.params_from_rho(mixed);
    double f = model.value(x);
    Eigen::VectorXd g = model.gradient(x);
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(np, np);

    StateEstimate est{DensityOperator(model.rho_from_params(x)), 0.0, 0, false};
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        if (g.norm() < options.gradient_tol) {
            est.converged = true;
            break;
        }
        Eigen::VectorXd dir = hinv * g;
        if (dir.dot(g) <= 0.0) {
            hinv.setIdentity();
            dir = g;
        }
        // Backtracking line search (Armijo) for ascent.
        double step = 1.0;
        Eigen::VectorXd x_new;
        double f_new = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = model.value(x_new);
            if (std::isfinite(f_new) && f_new >= f + 1e-4 * step * dir.dot(g)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (hinv.isIdentity()) {
                est.converged = true; // no ascent direction left at machine precision
                break;
            }
            hinv.setIdentity();
            continue;
        }
        const Eigen::VectorXd g_new = model.gradient(x_new);
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd yv = g - g_new; // gradient of the negated objective
        const double sy = s.dot(yv);
        if (sy > 1e-300) {
            const double rho_k = 1.0 / sy;
            const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(np, np);
            hinv = (ident - rho_k * s * yv.transpose()) * hinv * (ident - rho_k * yv * s.transpose()) +
                   rho_k * s * s.transpose();
        }
        const double improvement = f_new - f;
        x = x_new;
        f = f_new;
        g = g_new;
        if (improvement < options.improvement_tol && it > 0) {
            est.converged = true;
            ++it;
            break;
        }
    }
    est.n_iterations = it;
    est.rho = DensityOperator(model.rho_from_params(x));
    est.log_likelihood = f * model.total_counts();
    const double f_start = model.value_at(start.matrix());
    if (f_start > f) {
        est.rho = start;
        est.log_likelihood = f_start * model.total_counts();
    }
    return est;
}

// Entanglement witness.

struct WitnessResult {
    bool is_entangled = false;
    double margin_sigmas = 0.0;
    double fidelity_error = 0.0;
};

/// Margins are capped at this value when the error bar vanishes.
inline constexpr double kMarginCap = 1e9;
inline constexpr double kClassicalThreshold = 2.0 / 3.0;

inline WitnessResult entanglement_witness(double fidelity, double fidelity_error) {
    WitnessResult w;
    w.is_entangled = fidelity > kClassicalThreshold;
    w.fidelity_error = fidelity_error;
    const double excess = fidelity - kClassicalThreshold;
    if (fidelity_error > 0.0) {
        w.margin_sigmas = std::clamp(excess / fidelity_error, -kMarginCap, kMarginCap);
    } else {
        w.margin_sigmas = excess == 0.0 ? 0.0 : std::copysign(kMarginCap, excess);
    }
    return w;
}

// Process tomography.

struct ProcessMatrix {
    Eigen::Matrix4cd chi = Eigen::Matrix4cd::Zero();

    /// rho_out = sum_mn chi_mn sigma_m rho sigma_n
    [[nodiscard]] Eigen::Matrix2cd apply(const Eigen::Matrix2cd &rho) const {
        Eigen::Matrix2cd out = Eigen::Matrix2cd::Zero();
        for (int m = 0; m < 4; ++m) {
            for (int n = 0; n < 4; ++n) {
                out += chi(m, n) * PauliBasis::get(m) * rho * PauliBasis::get(n);
            }
        }
        return out;
    }

    /// || sum_mn chi_mn sigma_n sigma_m - 1 ||_max
    [[nodiscard]] double tp_residual() const {
        Eigen::Matrix2cd s = Eigen::Matrix2cd::Zero();
        for (int m = 0; m < 4; ++m)
            for (int n = 0; n < 4; ++n) s += chi(m, n) * PauliBasis::get(n) * PauliBasis::get(m);
        return (s - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff();
    }

    [[nodiscard]] double min_eigenvalue() const {
        return Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd>(chi, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    }

    /// Channel conjugated by a unitary: rho -> U rho U^dag.
    static ProcessMatrix unitary(const Eigen::Matrix2cd &u) {
        // u = sum_m c_m sigma_m with c_m = tr(sigma_m u)/2
        Eigen::Vector4cd c;
        for (int m = 0; m < 4; ++m) c(m) = (PauliBasis::get(m) * u).trace() / 2.0;
        return {c * c.adjoint()};
    }
};

struct ProcessInput {
    DensityOperator input;
    DensityOperator output;
};

struct ProcessResult {
    ProcessMatrix chi;
    /// Least-squares solution before the physicality projection.
    ProcessMatrix unconstrained;
    /// Frobenius distance moved by the projection.
    double projection_distance = 0.0;
};

namespace detail {
inline Eigen::Matrix4cd chi_from_coords(const Eigen::VectorXd &x, const std::vector<CMatrix> &basis) {
    Eigen::Matrix4cd m = Eigen::Matrix4cd::Zero();
    for (std::size_t a = 0; a < basis.size(); ++a) m += x(static_cast<Eigen::Index>(a)) * basis[a];
    return m;
}

inline Eigen::VectorXd coords_from_chi(const Eigen::Matrix4cd &chi, const std::vector<CMatrix> &basis) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(basis.size()));
    for (std::size_t a = 0; a < basis.size(); ++a) {
        x(static_cast<Eigen::Index>(a)) = (basis[a].adjoint() * chi).trace().real();
    }
    return x;
}

/// Real linear constraints C x = d encoding sum chi_mn sigma_n sigma_m = 1.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> tp_constraints(const std::vector<CMatrix> &basis) {
    Eigen::MatrixXd c(4, static_cast<Eigen::Index>(basis.size()));
    for (std::size_t a = 0; a < basis.size(); ++a) {
        Eigen::Matrix2cd s = Eigen::Matrix2cd::Zero();
        for (int m = 0; m < 4; ++m)
            for (int n = 0; n < 4; ++n) s += basis[a](m, n) * PauliBasis::get(n) * PauliBasis::get(m);
        const auto col = static_cast<Eigen::Index>(a);
        c(0, col) = s(0, 0).real();
        c(1, col) = s(1, 1).real();
        c(2, col) = s(0, 1).real();
        c(3, col) = s(0, 1).imag();
    }
    Eigen::VectorXd d(4);
    d << 1.0, 1.0, 0.0, 0.0;
    return {c, d};
}

inline Eigen::Matrix4cd clip_psd(const Eigen::Matrix4cd &m) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(0.5 * (m + m.adjoint()));
    const Eigen::Vector4d ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
}
} // namespace detail

/**
 * Two-step process reconstruction: least-squares chi from (input, output)
 * pairs, then the Frobenius-nearest chi that is positive semidefinite and
 * trace preserving (Dykstra's alternating projections).
 */
inline ProcessResult process_tomography(const std::vector<ProcessInput> &pairs) {
    const auto basis = hermitian_basis(4);
    Eigen::MatrixXd a(static_cast<Eigen::Index>(8 * pairs.size()), 16);
    Eigen::VectorXd y(static_cast<Eigen::Index>(8 * pairs.size()));
    Eigen::Index row = 0;
    for (const auto &p : pairs) {
        if (p.input.dim() != 2 || p.output.dim() != 2) {
            throw DimensionError("process_tomography: inputs and outputs must be single qubits");
        }
        const Eigen::Matrix2cd rin = p.input.matrix();
        std::vector<Eigen::Matrix2cd> images;
        for (const auto &g : basis) images.push_back(ProcessMatrix{g}.apply(rin));
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) {
                for (int part = 0; part < 2; ++part) {
                    for (int k = 0; k < 16; ++k) {
                        const cplx v = images[static_cast<std::size_t>(k)](r, c);
                        a(row, k) = part == 0 ? v.real() : v.imag();
                    }
                    const cplx o = p.output(r, c);
                    y(row) = part == 0 ? o.real() : o.imag();
                    ++row;
                }
            }
        }
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(1e-10);
    cod.compute(a);
    if (pairs.empty() || cod.rank() < 16) {
        throw RankDeficientError("process_tomography: input states do not span the operator space");
    }
    const Eigen::VectorXd x0 = cod.solve(y);

    const auto [cm, dv] = detail::tp_constraints(basis);
    const Eigen::MatrixXd cct_inv = (cm * cm.transpose()).inverse();
    auto project_tp = [&](const Eigen::VectorXd &v) -> Eigen::VectorXd {
        return v - cm.transpose() * (cct_inv * (cm * v - dv));
    };
    auto project_psd = [&](const Eigen::VectorXd &v) -> Eigen::VectorXd {
        return detail::coords_from_chi(detail::clip_psd(detail::chi_from_coords(v, basis)), basis);
    };

    Eigen::VectorXd x = x0, p = Eigen::VectorXd::Zero(16), q = Eigen::VectorXd::Zero(16);
    Eigen::VectorXd yk = x0;
    for (int it = 0; it < 100000; ++it) {
        yk = project_psd(x + p);
        p = x + p - yk;
        const Eigen::VectorXd x_new = project_tp(yk + q);
        q = yk + q - x_new;
        const double change = (x_new - x).norm();
        x = x_new;
        if (change < 1e-14 && (x - yk).norm() < 1e-12) break;
    }
    ProcessResult out;
    out.unconstrained.chi = detail::chi_from_coords(x0, basis);
    out.chi.chi = detail::chi_from_coords(yk, basis);
    out.projection_distance = (yk - x0).norm();
    return out;
}

inline double process_fidelity(const ProcessMatrix &chi) { return chi.chi(0, 0).real(); }

struct FidelityPair {
    PureState target;
    DensityOperator estimate;
};

inline double mean_state_fidelity(const std::vector<FidelityPair> &pairs) {
    if (pairs.empty()) {
        throw std::invalid_argument("mean_state_fidelity: no states");
    }
    double s = 0.0;
    for (const auto &p : pairs) s += fidelity_to_pure(p.estimate, p.target);
    return s / static_cast<double>(pairs.size());
}

// Bootstrap.

struct BootstrapResult {
    double mean = 0.0;
    double std = 0.0;
    int failures = 0;
    std::vector<double> values;
};

/// Draws one multinomial resample per entry with the observed frequencies.
inline CountsTable resample_counts(const CountsTable &counts, SplitMix64 &rng) {
    CountsTable out;
    out.meta = counts.meta;
    for (const auto &e : counts.entries()) {
        const auto n = static_cast<long long>(std::llround(e.total()));
        std::vector<double> c(e.counts.size(), 0.0);
        long long left = n;
        double p_left = 1.0;
        for (std::size_t k = 0; k < c.size() && left > 0; ++k) {
            const double pk = e.total() > 0.0 ? e.counts[k] / e.total() : 0.0;
            if (k + 1 == c.size() || p_left <= 0.0) {
                c[k] = static_cast<double>(left);
                break;
            }
            const double q = std::clamp(pk / p_left, 0.0, 1.0);
            std::binomial_distribution<long long> bin(left, q);
            const long long draw = bin(rng);
            c[k] = static_cast<double>(draw);
            left -= draw;
            p_left -= pk;
        }
        out.add(e.prep, e.setting, c);
    }
    return out;
}

using Statistic = std::function<double(const CountsTable &)>;

/**
 * Parametric bootstrap of `statistic`. Resample i uses stream (seed, i);
 * failing resamples are counted and excluded.
 */
inline BootstrapResult bootstrap_errors(const CountsTable &counts, int n_resamples, std::uint64_t seed,
                                        const Statistic &statistic, unsigned jobs = 1) {
    if (n_resamples < 100) {
        throw std::invalid_argument("bootstrap_errors: need at least 100 resamples");
    }
    std::vector<double> values(static_cast<std::size_t>(n_resamples), std::nan(""));
    auto work = [&](unsigned w, unsigned nw) {
        for (int i = static_cast<int>(w); i < n_resamples; i += static_cast<int>(nw)) {
            SplitMix64 rng(seed, stream_key("bootstrap"), static_cast<std::uint64_t>(i));
            try {
                values[static_cast<std::size_t>(i)] = statistic(resample_counts(counts, rng));
            } catch (const std::exception &) {
                values[static_cast<std::size_t>(i)] = std::nan("");
            }
        }
    };
    jobs = std::max(1u, jobs);
    if (jobs == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < jobs; ++w) pool.emplace_back(work, w, jobs);
        for (auto &t : pool) t.join();
    }
    BootstrapResult r;
    for (double v : values) {
        if (std::isfinite(v)) {
            r.values.push_back(v);
        } else {
            ++r.failures;
        }
    }
    if (r.values.size() < 2) {
        throw std::runtime_error("bootstrap_errors: statistic failed on nearly every resample");
    }
    double s = 0.0;
    for (double v : r.values) s += v;
    r.mean = s / static_cast<double>(r.values.size());
    double ss = 0.0;
    for (double v : r.values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(r.values.size() - 1));
    return r;
}

} // namespace qiface
