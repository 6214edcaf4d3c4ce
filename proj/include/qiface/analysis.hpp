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
 * @file analysis.hpp
 * From detection records to counts, estimates and headline metrics.
 *
 * Each click is compensated for the Larmor phase at its detection time:
 * the click lands in a setting whose label carries the compensation
 * angle. Phases are rounded to the centres of `phase_bins` bins so that
 * every setting collects enough clicks for a multinomial model; with
 * phase_bins = 0 every click keeps its exact phase.
 */

#include "qiface/detection_sim.hpp"
#include "qiface/interface_model.hpp"
#include "qiface/tomography.hpp"

#include <string>
#include <vector>

namespace qiface {

/// Residual phase spread within a bin is 2pi/64; it costs about 4e-4 in fidelity.
inline constexpr int kDefaultPhaseBins = 64;

struct Preparation {
    std::string label;
    AtomPrep prep;
};

/// Four equatorial inputs (phi_729 = 0, pi/2, pi, 3pi/2) and the two poles.
inline std::vector<Preparation> sender_preparations() {
    return {
        {"phi0", {kPi / 2.0, 0.0, 0.0}},
        {"phi90", {kPi / 2.0, kPi / 2.0, 0.0}},
        {"phi180", {kPi / 2.0, kPi, 0.0}},
        {"phi270", {kPi / 2.0, 3.0 * kPi / 2.0, 0.0}},
        {"minus52", {0.0, 0.0, 0.0}},
        {"plus52", {kPi, 0.0, 0.0}},
    };
}

/// Larmor phase of a click in [0, 2pi), optionally rounded to a bin centre.
inline double click_phase(double t_ns, const InterfaceConfig &config, int phase_bins) {
    const double two_pi = 2.0 * kPi;
    double ph = std::fmod(config.larmor_omega() * t_ns, two_pi);
    if (ph < 0.0) ph += two_pi;
    if (phase_bins > 0) {
        const double w = two_pi / phase_bins;
        ph = (std::floor(ph / w) + 0.5) * w;
    }
    return ph;
}

/// How the clicks of one run map onto settings and outcomes.
struct CountingRule {
    AnalysisBasis photon = AnalysisBasis::HV;
    /// Atom basis carried in the setting; None for photon-only settings.
    AtomBasis atom = AtomBasis::None;
    AtomFilter filter = AtomFilter::Any;
};

inline CountingRule counting_rule(const RunPlan &plan) {
    if (std::holds_alternative<Entangler>(plan.mode)) {
        if (plan.atom_basis == AtomBasis::None) {
            throw ConfigError("counting_rule: entangler runs need an atom basis");
        }
        return {plan.photon_basis, plan.atom_basis, AtomFilter::Any};
    }
    if (std::holds_alternative<Receiver>(plan.mode)) {
        throw ConfigError("counting_rule: receiver runs are not analyzed by photon tomography");
    }
    // Sender and converter: keep heralds with the atom projected onto "+".
    return {plan.photon_basis, AtomBasis::None, AtomFilter::Plus};
}

/// Adds the clicks detected up to `window_ns` to `table` under `prep_label`.
inline void accumulate_counts(CountsTable &table, const std::string &prep_label,
                              const std::vector<TimeTagRecord> &tags, const RunPlan &plan,
                              const InterfaceConfig &config, double window_ns, int phase_bins = kDefaultPhaseBins) {
    const CountingRule rule = counting_rule(plan);
    for (const auto &t : tags) {
        if (t.click_time_ns > window_ns || !accepts(rule.filter, t.atom_outcome)) continue;
        const double angle = compensation_angle(plan.photon, click_phase(t.click_time_ns, config, phase_bins));
        std::string outcome = to_string(t.detector);
        if (rule.atom != AtomBasis::None) {
            if (t.atom_outcome == AtomOutcome::None) continue;
            outcome += to_string(t.atom_outcome);
        }
        table.increment(prep_label, setting_label(rule.photon, rule.atom, angle), outcome);
    }
}

/**
 * Adds the expected counts of a run (no shot noise, no dark counts) to
 * `table`. The window is cut into `n_nodes` intervals; each contributes
 * one setting at its midpoint phase, weighted by the emission probability
 * of the interval. Dephasing and wave-plate errors are included.
 */
inline void accumulate_expected_counts(CountsTable &table, const std::string &prep_label, const RunPlan &plan,
                                       const InterfaceConfig &config, double window_ns, int n_nodes = 64) {
    const CountingRule rule = counting_rule(plan);
    if (n_nodes < 1) throw std::invalid_argument("accumulate_expected_counts: need at least one node");
    const auto basis = waveplate_basis(rule.photon, config.waveplate_miscal_rad);
    const CMatrix p_port[2] = {basis.first.projector(), basis.second.projector()};
    const auto atom_basis = rule.atom != AtomBasis::None ? rule.atom : plan.effective_atom_basis();
    const auto [atom_plus, atom_minus] = atom_basis_states(atom_basis);
    const CMatrix p_atom[2] = {atom_plus.projector(), atom_minus.projector()};
    const PureState photon_in = plan.photon.state();
    const auto [pa, pb] = ports(rule.photon);
    const Polarization port_label[2] = {pa, pb};

    double survival = config.detection_survival();
    try {
        (void)raman_map(prepare_d_state(plan.prep, 0.0, config), photon_in);
    } catch (const NoTransferError &) {
        survival = 0.0;
    }
    const double tau = config.raman_decay_tau_ns;
    const double h = window_ns / n_nodes;
    for (int i = 0; i < n_nodes; ++i) {
        const double a = i * h, b = (i + 1) * h, t = (i + 0.5) * h;
        const double weight =
            static_cast<double>(plan.n_trials) * survival * (std::exp(-a / tau) - std::exp(-b / tau));
        const RamanOutput out = raman_map(prepare_d_state(plan.prep, t, config), photon_in);
        const DensityOperator rho = apply_dephasing(DensityOperator(out.joint), config.dephasing_sigma_rad);
        double prob[2][2];
        double total = 0.0;
        for (int j = 0; j < 2; ++j) {
            for (int k = 0; k < 2; ++k) {
                prob[j][k] = std::max(0.0, (rho.matrix() * kron(p_atom[k], p_port[j])).trace().real());
                total += prob[j][k];
            }
        }
        const double angle = compensation_angle(plan.photon, click_phase(t, config, 0));
        const Setting s = make_setting(setting_label(rule.photon, rule.atom, angle));
        std::vector<double> counts(s.outcomes.size(), 0.0);
        for (int j = 0; j < 2; ++j) {
            if (rule.atom != AtomBasis::None) {
                for (int k = 0; k < 2; ++k) {
                    const std::string label = std::string(to_string(port_label[j])) + (k == 0 ? "+" : "-");
                    const auto it = std::find(s.outcomes.begin(), s.outcomes.end(), label);
                    counts[static_cast<std::size_t>(it - s.outcomes.begin())] = weight * prob[j][k] / total;
                }
            } else {
                counts[static_cast<std::size_t>(j)] = weight * prob[j][0] / total;
            }
        }
        table.add(prep_label, s, counts);
    }
}

// Headline analyses.

struct EntanglerResult {
    StateEstimate estimate;
    double fidelity = 0.0;
};

inline EntanglerResult analyze_entangler(const CountsTable &counts, const AtomPrep &prep, const MleOptions &options = {}) {
    EntanglerResult r{mle_state(counts, options), 0.0};
    r.fidelity = fidelity_to_pure(r.estimate.rho, entangler_target(prep));
    return r;
}

struct SenderResult {
    std::vector<std::string> labels;
    std::vector<StateEstimate> estimates;
    std::vector<double> fidelities;
    ProcessResult process;
    double chi11 = 0.0;
    double mean_fidelity = 0.0;
};

/// Per-input photon tomography, then the process matrix of the transfer.
inline SenderResult analyze_sender(const CountsTable &counts, const std::vector<Preparation> &preps,
                                   const MleOptions &options = {}) {
    SenderResult r;
    std::vector<ProcessInput> pairs;
    std::vector<FidelityPair> fpairs;
    for (const auto &p : preps) {
        const CountsTable sub = counts.select(p.label);
        if (sub.empty()) throw ConfigError("analyze_sender: no counts for preparation " + p.label);
        StateEstimate est = mle_state(sub, options);
        const PureState target = sender_input_state(p.prep);
        r.labels.push_back(p.label);
        r.fidelities.push_back(fidelity_to_pure(est.rho, target));
        pairs.push_back({DensityOperator(target), est.rho});
        fpairs.push_back({target, est.rho});
        r.estimates.push_back(std::move(est));
    }
    r.process = process_tomography(pairs);
    r.chi11 = process_fidelity(r.process.chi);
    r.mean_fidelity = mean_state_fidelity(fpairs);
    return r;
}

/// Detection records of one run together with the preparation they belong to.
struct RunData {
    std::string prep_label;
    RunPlan plan;
    std::vector<TimeTagRecord> tags;
};

struct SweepRow {
    double window_ns = 0.0;
    double process_fidelity = 0.0;
    double mean_state_fidelity = 0.0;
    /// Clicks per trial within the window, averaged over runs.
    double efficiency = 0.0;
};

/// Sender metrics versus detection window.
inline std::vector<SweepRow> window_sweep(const std::vector<double> &windows, const std::vector<RunData> &runs,
                                          const std::vector<Preparation> &preps, const InterfaceConfig &config,
                                          int phase_bins = kDefaultPhaseBins, const MleOptions &options = {}) {
    if (windows.empty() || runs.empty()) throw std::invalid_argument("window_sweep: nothing to sweep");
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (!(windows[i] > 0.0) || (i > 0 && !(windows[i] > windows[i - 1]))) {
            throw std::invalid_argument("window_sweep: windows must be positive and ascending");
        }
    }
    std::vector<SweepRow> rows;
    for (double w : windows) {
        CountsTable table;
        double eff = 0.0;
        for (const auto &run : runs) {
            const WindowSelection sel = window_select(run.tags, w, run.plan.n_trials);
            eff += sel.efficiency;
            accumulate_counts(table, run.prep_label, sel.tags, run.plan, config, w, phase_bins);
        }
        const SenderResult s = analyze_sender(table, preps, options);
        rows.push_back({w, s.chi11, s.mean_fidelity, eff / static_cast<double>(runs.size())});
    }
    return rows;
}

} // namespace qiface
