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

#include "qiface/tomography.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace qiface;

namespace {

double max_abs(const CMatrix &m) { return m.cwiseAbs().maxCoeff(); }

/// The six single-qubit inputs: four equatorial states and both poles.
std::vector<PureState> six_inputs() {
    std::vector<PureState> out;
    for (int k = 0; k < 4; ++k) out.push_back(PureState{1.0, std::polar(1.0, k * kPi / 2.0)});
    out.push_back(PureState{1.0, 0.0});
    out.push_back(PureState{0.0, 1.0});
    return out;
}

/// Feeds the six inputs through `channel`, reconstructs every output by MLE
/// from analytic photon-setting probabilities, then fits chi.
template <class Channel>
ProcessResult two_step(Channel channel) {
    std::vector<ProcessInput> pairs;
    for (const auto &in : six_inputs()) {
        const DensityOperator rho_in(in);
        const DensityOperator rho_out(channel(rho_in.matrix()));
        const auto est = mle_state(expected_counts(rho_out, photon_settings(), 1e6));
        pairs.push_back({rho_in, est.rho});
    }
    return process_tomography(pairs);
}

void expect_physical(const DensityOperator &rho) {
    EXPECT_LT(max_abs(rho.matrix() - rho.matrix().adjoint()), 1e-10);
    EXPECT_NEAR(rho.trace(), 1.0, 1e-10);
    EXPECT_GE(rho.min_eigenvalue(), -1e-9);
}

} // namespace

TEST(Settings, LabelsRoundTrip) {
    const auto s = make_setting(setting_label(AnalysisBasis::DA, AtomBasis::Y));
    EXPECT_EQ(s.label, "DA.y");
    EXPECT_EQ(s.outcomes, (std::vector<std::string>{"D+", "D-", "A+", "A-"}));
    CMatrix sum = CMatrix::Zero(4, 4);
    for (const auto &e : s.povm) sum += e;
    EXPECT_LT(max_abs(sum - CMatrix::Identity(4, 4)), 1e-14);
    const auto p = make_setting(setting_label(AnalysisBasis::HV, AtomBasis::None, 1.25));
    EXPECT_EQ(p.label, "HV@1.250000");
    EXPECT_EQ(p.outcomes, (std::vector<std::string>{"H", "V"}));
    EXPECT_THROW(make_setting("XY"), ConfigError);
    EXPECT_THROW(make_setting("HV@abc"), ConfigError);
}

TEST(CountsFile, RoundTrip) {
    std::mt19937_64 rng(1);
    auto t = fixtures::sample_counts(DensityOperator(fixtures::bell()), pauli_product_settings(), 1000, rng, "bell");
    t.meta["window_ns"] = "450";
    std::stringstream ss;
    write_counts(ss, t, "2026-01-01T00:00:00Z");
    const auto back = read_counts(ss);
    EXPECT_EQ(back.meta.at("window_ns"), "450");
    ASSERT_EQ(back.entries().size(), t.entries().size());
    for (std::size_t i = 0; i < t.entries().size(); ++i) {
        EXPECT_EQ(back.entries()[i].setting.label, t.entries()[i].setting.label);
        EXPECT_EQ(back.entries()[i].counts, t.entries()[i].counts);
    }
}

TEST(CountsTable, RejectsNegativeAndMixedDims) {
    CountsTable t;
    EXPECT_THROW(t.add("a", photon_settings()[0], {1.0, -1.0}), std::invalid_argument);
    t.add("a", photon_settings()[0], {1.0, 1.0});
    EXPECT_THROW(t.add("a", pauli_product_settings()[0], {1, 1, 1, 1}), DimensionError);
}

TEST(LinearInversion, ExactProbabilities) {
    const DensityOperator bell(fixtures::bell());
    EXPECT_LT(max_abs(linear_inversion(expected_counts(bell, pauli_product_settings(), 1.0)).rho.matrix() - bell.matrix()),
              1e-10);
    const auto mixed = DensityOperator::maximally_mixed(4);
    EXPECT_LT(max_abs(linear_inversion(expected_counts(mixed, pauli_product_settings(), 1.0)).rho.matrix() -
                      mixed.matrix()),
              1e-10);
}

TEST(LinearInversion, IncompleteSettingsAreRankDeficient) {
    const auto all = pauli_product_settings();
    const std::vector<Setting> hv_only(all.begin(), all.begin() + 3);
    EXPECT_THROW(linear_inversion(expected_counts(DensityOperator(fixtures::bell()), hv_only, 100.0)), RankDeficientError);
}

TEST(LinearInversion, ErrorShrinksAsInverseSqrtN) {
    std::mt19937_64 rng(21);
    const auto truth = fixtures::random_mixed(4, rng);
    std::vector<double> err;
    for (long long n : {1000LL, 10000LL, 100000LL}) {
        double s = 0.0;
        const int reps = 20;
        for (int r = 0; r < reps; ++r) {
            s += trace_distance(linear_inversion(fixtures::sample_counts(truth, pauli_product_settings(), n, rng)).rho,
                                truth);
        }
        err.push_back(s / reps);
    }
    // A factor of ten in N is a factor sqrt(10) ~ 3.16 in the error.
    EXPECT_NEAR(err[0] / err[1], std::sqrt(10.0), 0.6);
    EXPECT_NEAR(err[1] / err[2], std::sqrt(10.0), 0.6);
}

TEST(Mle, BellAtHighStatistics) {
    const auto bell = fixtures::bell();
    const auto est = mle_state(expected_counts(DensityOperator(bell), pauli_product_settings(), 1e6));
    EXPECT_GT(fidelity_to_pure(est.rho, bell), 0.999);
    expect_physical(est.rho);
}

TEST(Mle, UniformCountsGiveMaximallyMixed) {
    CountsTable t;
    for (const auto &s : pauli_product_settings()) t.add("u", s, {250, 250, 250, 250});
    const auto est = mle_state(t);
    EXPECT_TRUE(est.converged);
    EXPECT_LT(max_abs(est.rho.matrix() - CMatrix::Identity(4, 4) / 4.0), 1e-6);
}

TEST(Mle, AlwaysPhysicalAndNoWorseThanLinearInversion) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 30; ++i) {
        CountsTable t;
        if (i % 3 == 0) {
            // Arbitrary non-negative counts, inconsistent with any state.
            std::uniform_int_distribution<int> u(0, 50);
            for (const auto &s : pauli_product_settings()) t.add("x", s, {double(u(rng)), double(u(rng)), 0.0, double(u(rng))});
        } else {
            t = fixtures::sample_counts(i % 3 == 1 ? DensityOperator(fixtures::random_pure(4, rng))
                                                   : fixtures::random_mixed(4, rng),
                                        pauli_product_settings(), 200, rng);
        }
        const auto est = mle_state(t);
        expect_physical(est.rho);
        const auto li = physicalize(linear_inversion(t).rho.matrix());
        const double diff = est.log_likelihood - log_likelihood(t, li);
        EXPECT_GE(diff / t.total(), -1e-8) << "dataset " << i;
        EXPECT_NEAR(est.log_likelihood, log_likelihood(t, est.rho), 1e-6 * t.total());
    }
}

TEST(Mle, AgreesWithLinearInversionAtHighCounts) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 5; ++i) {
        const auto truth = fixtures::random_mixed(4, rng);
        const auto t = fixtures::sample_counts(truth, pauli_product_settings(), 1000000, rng);
        EXPECT_LT(trace_distance(mle_state(t).rho, linear_inversion(t).rho), 0.01);
    }
}

TEST(Likelihood, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 10; ++i) {
        const auto t = fixtures::sample_counts(fixtures::random_mixed(4, rng), pauli_product_settings(), 500, rng);
        const LikelihoodModel model(t);
        const Eigen::VectorXd x = model.params_from_rho(fixtures::random_mixed(4, rng).matrix());
        const Eigen::VectorXd g = model.gradient(x);
        Eigen::VectorXd fd(x.size());
        const double h = 1e-5;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            Eigen::VectorXd xp = x, xm = x;
            xp(k) += h;
            xm(k) -= h;
            fd(k) = (model.value(xp) - model.value(xm)) / (2.0 * h);
        }
        EXPECT_LT((fd - g).norm() / g.norm(), 1e-6);
    }
}

TEST(Likelihood, ParameterizationRoundTrip) {
    std::mt19937_64 rng(4);
    const auto t = fixtures::sample_counts(DensityOperator(fixtures::bell()), pauli_product_settings(), 10, rng);
    const LikelihoodModel model(t);
    const auto rho = fixtures::random_mixed(4, rng);
    EXPECT_LT(max_abs(model.rho_from_params(model.params_from_rho(rho.matrix())) - rho.matrix()), 1e-12);
}

TEST(Witness, Examples) {
    const auto at = entanglement_witness(2.0 / 3.0, 0.01);
    EXPECT_FALSE(at.is_entangled);
    EXPECT_NEAR(at.margin_sigmas, 0.0, 1e-12);
    EXPECT_NEAR(entanglement_witness(0.846, 0.002).margin_sigmas, 89.67, 0.01);
    EXPECT_TRUE(entanglement_witness(1.0, 0.3).is_entangled);
    EXPECT_EQ(entanglement_witness(0.9, 0.0).margin_sigmas, kMarginCap);
    EXPECT_EQ(entanglement_witness(2.0 / 3.0, 0.0).margin_sigmas, 0.0);
}

TEST(Process, UnitaryChannelsRecoveredExactly) {
    const double r = 1.0 / std::sqrt(2.0);
    Eigen::Matrix2cd hadamard;
    hadamard << r, r, r, -r;
    const std::vector<Eigen::Matrix2cd> unitaries{PauliBasis::get(0), PauliBasis::get(1), PauliBasis::get(2),
                                                  PauliBasis::get(3), hadamard};
    for (std::size_t k = 0; k < unitaries.size(); ++k) {
        const Eigen::Matrix2cd u = unitaries[k];
        const auto res = two_step([&](const CMatrix &rho) -> CMatrix { return u * rho * u.adjoint(); });
        const auto want = ProcessMatrix::unitary(u);
        EXPECT_LT(max_abs(res.chi.chi - want.chi), 1e-6) << "channel " << k;
        EXPECT_LT(res.projection_distance, 1e-6);
        if (k < 4) {
            EXPECT_NEAR(res.chi.chi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)).real(), 1.0, 1e-6);
        }
    }
}

TEST(Process, DepolarizingChannel) {
    const auto res = two_step([](const CMatrix &) -> CMatrix { return CMatrix::Identity(2, 2) / 2.0; });
    EXPECT_NEAR(process_fidelity(res.chi), 0.25, 1e-6);
    EXPECT_LT(max_abs(res.chi.chi - Eigen::Matrix4cd::Identity() / 4.0), 1e-6);
}

TEST(Process, ProjectionEnforcesPhysicality) {
    std::mt19937_64 rng(30);
    std::vector<ProcessInput> pairs;
    for (const auto &in : six_inputs()) pairs.push_back({DensityOperator(in), fixtures::random_mixed(2, rng)});
    const auto res = process_tomography(pairs);
    EXPECT_LT(res.chi.tp_residual(), 1e-6);
    EXPECT_GE(res.chi.min_eigenvalue(), -1e-9);
    EXPECT_LT(max_abs(res.chi.chi - res.chi.chi.adjoint()), 1e-12);
    EXPECT_GT(res.projection_distance, 0.0);
    const auto f = process_fidelity(res.chi);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
}

TEST(Process, TooFewInputsAreRankDeficient) {
    const std::vector<ProcessInput> pairs{{DensityOperator(PureState{1.0, 0.0}), DensityOperator(PureState{1.0, 0.0})},
                                          {DensityOperator(PureState{0.0, 1.0}), DensityOperator(PureState{0.0, 1.0})}};
    EXPECT_THROW(process_tomography(pairs), RankDeficientError);
}

TEST(MeanStateFidelity, Examples) {
    const PureState h{1.0, 1.0};
    EXPECT_NEAR(mean_state_fidelity({{h, DensityOperator(h)}, {h, DensityOperator(h)}}), 1.0, 1e-12);
    EXPECT_NEAR(mean_state_fidelity({{h, DensityOperator::maximally_mixed(2)}}), 0.5, 1e-12);
    EXPECT_THROW(mean_state_fidelity({}), std::invalid_argument);
}

TEST(Bootstrap, ZeroVarianceCounts) {
    CountsTable t;
    for (const auto &s : photon_settings()) t.add("z", s, {1000.0, 0.0});
    const auto r = bootstrap_errors(t, 100, 3, [](const CountsTable &c) { return c.entries()[0].counts[0]; });
    EXPECT_EQ(r.std, 0.0);
    EXPECT_EQ(r.failures, 0);
}

TEST(Bootstrap, BellFidelityErrorRangeAndScaling) {
    std::mt19937_64 rng(77);
    const auto bell = fixtures::bell();
    const DensityOperator truth(0.9 * bell.projector() + 0.1 * CMatrix::Identity(4, 4) / 4.0);
    const Statistic fid = [&](const CountsTable &c) { return fidelity_to_pure(mle_state(c).rho, bell); };
    const auto t1 = fixtures::sample_counts(truth, pauli_product_settings(), 10000, rng);
    const auto t2 = fixtures::sample_counts(truth, pauli_product_settings(), 20000, rng);
    const auto r1 = bootstrap_errors(t1, 200, 11, fid);
    const auto r2 = bootstrap_errors(t2, 200, 11, fid);
    EXPECT_GE(r1.std, 0.001);
    EXPECT_LE(r1.std, 0.02);
    EXPECT_NEAR(r1.std / r2.std, std::sqrt(2.0), 0.25);
}

TEST(Bootstrap, DeterministicAndThreadInvariant) {
    std::mt19937_64 rng(2);
    const auto t = fixtures::sample_counts(DensityOperator(fixtures::bell()), pauli_product_settings(), 500, rng);
    const Statistic stat = [](const CountsTable &c) { return c.entries()[3].counts[1]; };
    const auto a = bootstrap_errors(t, 100, 5, stat, 1);
    EXPECT_EQ(a.values, bootstrap_errors(t, 100, 5, stat, 1).values);
    EXPECT_EQ(a.values, bootstrap_errors(t, 100, 5, stat, 3).values);
    EXPECT_NE(a.values, bootstrap_errors(t, 100, 6, stat, 1).values);
    EXPECT_THROW(bootstrap_errors(t, 99, 5, stat), std::invalid_argument);
}

TEST(Bootstrap, FailuresAreCountedAndExcluded) {
    std::mt19937_64 rng(2);
    const auto t = fixtures::sample_counts(DensityOperator(fixtures::bell()), pauli_product_settings(), 500, rng);
    int calls = 0;
    const Statistic flaky = [&](const CountsTable &) -> double {
        if (calls++ % 4 == 0) throw std::runtime_error("boom");
        return 1.0;
    };
    const auto r = bootstrap_errors(t, 100, 1, flaky);
    EXPECT_EQ(r.failures, 25);
    EXPECT_EQ(r.values.size(), 75u);
    EXPECT_EQ(r.mean, 1.0);
}
