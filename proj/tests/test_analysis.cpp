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

#include "qiface/analysis.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qiface;

namespace {

constexpr AnalysisBasis kBases[] = {AnalysisBasis::HV, AnalysisBasis::DA, AnalysisBasis::RL};

RunPlan sender_plan(const Preparation &p, AnalysisBasis b, std::uint64_t n) {
    RunPlan plan;
    plan.n_trials = n;
    plan.seed = 3;
    plan.stream = p.label + "/" + to_string(b);
    plan.mode = Sender{};
    plan.prep = p.prep;
    plan.photon_basis = b;
    return plan;
}

CountsTable expected_sender_counts(const InterfaceConfig &c, double window, std::uint64_t n = 1000000) {
    CountsTable t;
    for (const auto &p : sender_preparations())
        for (auto b : kBases) accumulate_expected_counts(t, p.label, sender_plan(p, b, n), c, window);
    return t;
}

std::vector<RunData> simulate_sender(const InterfaceConfig &c, std::uint64_t n) {
    std::vector<RunData> runs;
    for (const auto &p : sender_preparations()) {
        for (auto b : kBases) {
            const RunPlan plan = sender_plan(p, b, n);
            runs.push_back({p.label, plan, simulate_run(plan, c)});
        }
    }
    return runs;
}

} // namespace

TEST(ClickPhase, BinsAndRange) {
    const InterfaceConfig c;
    const double T = c.larmor_period_ns();
    EXPECT_NEAR(click_phase(0.25 * T, c, 0), kPi / 2.0, 1e-12);
    EXPECT_NEAR(click_phase(1.25 * T, c, 0), kPi / 2.0, 1e-9);
    // 4 bins: centres at pi/4, 3pi/4, ...
    EXPECT_NEAR(click_phase(0.01 * T, c, 4), kPi / 4.0, 1e-12);
    EXPECT_NEAR(click_phase(0.30 * T, c, 4), 3.0 * kPi / 4.0, 1e-12);
    for (double t = 0.0; t < 1000.0; t += 7.3) {
        const double ph = click_phase(t, c, kDefaultPhaseBins);
        EXPECT_GE(ph, 0.0);
        EXPECT_LT(ph, 2.0 * kPi);
    }
}

TEST(CountingRule, ModeRequirements) {
    RunPlan p;
    EXPECT_THROW(counting_rule(p), ConfigError);
    p.atom_basis = AtomBasis::X;
    EXPECT_EQ(counting_rule(p).filter, AtomFilter::Any);
    p.mode = Receiver{};
    EXPECT_THROW(counting_rule(p), ConfigError);
    p.mode = Sender{};
    EXPECT_EQ(counting_rule(p).filter, AtomFilter::Plus);
    EXPECT_EQ(counting_rule(p).atom, AtomBasis::None);
}

TEST(AccumulateCounts, WindowAndHeraldFiltering) {
    const InterfaceConfig c;
    RunPlan p;
    p.mode = Sender{};
    const std::vector<TimeTagRecord> tags{{0, 10.0, Polarization::H, AtomOutcome::Plus, false},
                                          {1, 20.0, Polarization::V, AtomOutcome::Minus, false},
                                          {2, 500.0, Polarization::V, AtomOutcome::Plus, false}};
    CountsTable t;
    accumulate_counts(t, "x", tags, p, c, 450.0, 0);
    EXPECT_EQ(t.total(), 1.0);
    p.mode = Entangler{};
    p.atom_basis = AtomBasis::Z;
    CountsTable e;
    accumulate_counts(e, "x", tags, p, c, 450.0, 0);
    EXPECT_EQ(e.total(), 2.0);
    EXPECT_EQ(e.dim(), 4);
}

TEST(ExpectedCounts, TotalMatchesLossBudget) {
    const InterfaceConfig c = InterfaceConfig{}.noiseless();
    const auto p = sender_preparations()[0];
    CountsTable t;
    const std::uint64_t n = 1000000;
    accumulate_expected_counts(t, p.label, sender_plan(p, AnalysisBasis::HV, n), c, 450.0);
    // The symmetric preparation finds the atom in |+> half of the time.
    const double want = static_cast<double>(n) * c.detection_survival() * 0.5 * -std::expm1(-450.0 / c.raman_decay_tau_ns);
    EXPECT_NEAR(t.total() / want, 1.0, 1e-9);
}

TEST(Sender, NoiselessAnalyticPipelineIsPerfect) {
    const InterfaceConfig c = InterfaceConfig{}.noiseless();
    for (double w : {150.0, 450.0, 900.0}) {
        const auto r = analyze_sender(expected_sender_counts(c, w), sender_preparations());
        EXPECT_NEAR(r.chi11, 1.0, 1e-6) << w;
        EXPECT_NEAR(r.mean_fidelity, 1.0, 1e-6) << w;
    }
}

TEST(Entangler, NoiselessAnalyticPipelineIsPerfect) {
    const InterfaceConfig c = InterfaceConfig{}.noiseless();
    CountsTable t;
    for (auto pb : kBases) {
        for (auto ab : {AtomBasis::Z, AtomBasis::X, AtomBasis::Y}) {
            RunPlan p;
            p.n_trials = 1000000;
            p.photon_basis = pb;
            p.atom_basis = ab;
            accumulate_expected_counts(t, "entangler", p, c, 450.0);
        }
    }
    EXPECT_NEAR(analyze_entangler(t, AtomPrep{}).fidelity, 1.0, 1e-6);
}

TEST(Sender, DephasingLowersFidelityOnlyForSuperpositions) {
    InterfaceConfig c = InterfaceConfig{}.noiseless();
    c.dephasing_sigma_rad = 0.65;
    const auto r = analyze_sender(expected_sender_counts(c, 450.0), sender_preparations());
    // Equatorial inputs lose (1 - exp(-sigma^2/2))/2; the poles are untouched.
    const double equatorial = 0.5 * (1.0 + std::exp(-0.5 * 0.65 * 0.65));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.fidelities[i], equatorial, 1e-3) << r.labels[i];
    EXPECT_NEAR(r.fidelities[4], 1.0, 1e-6);
    EXPECT_NEAR(r.fidelities[5], 1.0, 1e-6);
    EXPECT_LT(r.chi11, 1.0);
}

TEST(WindowSweep, NoiselessSimulationStaysNearUnity) {
    const auto c = fixtures::lossless_noiseless();
    const auto rows = window_sweep({150.0, 450.0, 900.0}, simulate_sender(c, 20000), sender_preparations(), c, 0);
    for (const auto &r : rows) {
        EXPECT_GT(r.process_fidelity, 0.99) << r.window_ns;
        EXPECT_GT(r.mean_state_fidelity, 0.99) << r.window_ns;
    }
}

TEST(WindowSweep, DarkCountsMakeLongWindowsWorse) {
    InterfaceConfig c = fixtures::lossless_noiseless();
    c.dephasing_sigma_rad = 0.65;
    c.timing_jitter_fwhm_ns = 0.32;
    c.dark_rate_per_s = 2e5;
    const std::vector<double> windows{150.0, 300.0, 450.0, 600.0, 900.0};
    const auto rows = window_sweep(windows, simulate_sender(c, 40000), sender_preparations(), c);
    ASSERT_EQ(rows.size(), windows.size());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_LT(rows[i].process_fidelity, rows[i - 1].process_fidelity) << rows[i].window_ns;
        EXPECT_LT(rows[i].mean_state_fidelity, rows[i - 1].mean_state_fidelity) << rows[i].window_ns;
        EXPECT_GE(rows[i].efficiency, rows[i - 1].efficiency);
    }
}

TEST(WindowSweep, RejectsBadWindows) {
    const auto c = fixtures::lossless_noiseless();
    const auto runs = simulate_sender(c, 10);
    EXPECT_THROW(window_sweep({450.0, 300.0}, runs, sender_preparations(), c), std::invalid_argument);
    EXPECT_THROW(window_sweep({}, runs, sender_preparations(), c), std::invalid_argument);
}
