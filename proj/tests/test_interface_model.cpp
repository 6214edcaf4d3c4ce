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

#include "qiface/interface_model.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace qiface;

namespace {
const double kR2 = 1.0 / std::sqrt(2.0);

/// |<a|b>|^2 for single-qubit states.
double overlap(const PureState &a, const PureState &b) { return std::norm(a.amplitudes().dot(b.amplitudes())); }

InterfaceConfig ideal() { return InterfaceConfig{}.noiseless(); }
} // namespace

TEST(LarmorPeriod, FromConstants) {
    InterfaceConfig c;
    // h / (4 muB B), B = 2.8e-4 T, computed independently here.
    const double t = 6.62607015e-34 / (4.0 * 9.2740100783e-24 * 2.8e-4) * 1e9;
    EXPECT_NEAR(larmor_period(c), t, 1e-12);
    EXPECT_NEAR(larmor_period(c), 63.8, 0.002 * 63.8);
    c.b_field_gauss = 5.6;
    EXPECT_NEAR(larmor_period(c), 31.9, 0.05);
}

TEST(LarmorPeriod, InverseScalingAndErrors) {
    for (double b : {0.1, 1.0, 2.8, 17.0}) {
        InterfaceConfig c1, c2;
        c1.b_field_gauss = b;
        c2.b_field_gauss = 2 * b;
        EXPECT_NEAR(larmor_period(c2), larmor_period(c1) / 2, 1e-12);
    }
    InterfaceConfig bad;
    bad.b_field_gauss = 0.0;
    EXPECT_THROW(larmor_period(bad), ConfigError);
}

TEST(PrepareDState, Examples) {
    const auto c = ideal();
    const auto pole = prepare_d_state({0.0, 1.3, 0.0}, 17.0, c);
    EXPECT_NEAR(std::abs(pole[0]), 1.0, 1e-15);
    const auto eq = prepare_d_state({kPi / 2, 0.0, 0.0}, 0.0, c);
    EXPECT_NEAR(std::abs(eq[0] - kR2), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(eq[1] - kR2), 0.0, 1e-15);
    const auto quarter = prepare_d_state({kPi / 2, 0.0, 0.0}, c.larmor_period_ns() / 4, c);
    EXPECT_NEAR(std::abs(quarter[1] - kI * kR2), 0.0, 1e-12);
    EXPECT_THROW(prepare_d_state({}, -1.0, c), std::domain_error);
}

TEST(RamanMap, DefaultInputs) {
    const PureState d{kR2, kR2};
    const auto out = raman_map(d, PhotonIn{}.state());
    EXPECT_NEAR(out.success_prob, 0.5, 1e-12);
    // theta = pi/2, phi = pi: (|-1/2,L> - |+1/2,R>)/sqrt2
    const PureState want{kR2, 0.0, 0.0, -kR2};
    EXPECT_NEAR(overlap(out.joint, want), 1.0, 1e-12);
}

TEST(RamanMap, SinglePathAndNoTransfer) {
    const PureState down{1.0, 0.0};
    const auto out = raman_map(down, PhotonIn{0.0, 0.0}.state());
    EXPECT_NEAR(out.success_prob, 1.0, 1e-12);
    EXPECT_NEAR(std::abs(out.joint[0]), 1.0, 1e-12);
    EXPECT_THROW(raman_map(down, PhotonIn{kPi, 0.0}.state()), NoTransferError);
}

TEST(RamanMap, SuccessProbabilitiesSumToPhotonWeights) {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 20; ++i) {
        const PureState photon = fixtures::random_pure(2, rng);
        const double p = raman_map(PureState::basis(2, 0), photon).success_prob +
                         raman_map(PureState::basis(2, 1), photon).success_prob;
        EXPECT_NEAR(p, std::norm(photon[0]) + std::norm(photon[1]), 1e-12);
    }
}

TEST(RunMode, EntanglerMatchesRamanMap) {
    const auto c = ideal();
    for (double th : {0.3, kPi / 2, 2.5}) {
        for (double ph : {0.0, 1.0, 4.0}) {
            const AtomPrep prep{th, ph, 0.0};
            for (double t : {0.0, 12.5, 100.0}) {
                const auto m = run_mode(Entangler{}, prep, {}, t, c);
                const auto r = raman_map(prepare_d_state(prep, t, c), PhotonIn{}.state());
                EXPECT_LT((m.state.amplitudes() - r.joint.amplitudes()).norm(), 1e-15);
            }
        }
    }
    const auto m = run_mode(Entangler{}, AtomPrep{}, {}, 0.0, c);
    // Target with phi = phi_729 + phi_854 = pi at t = 0.
    EXPECT_NEAR(fidelity_to_pure(DensityOperator(m.state), PureState{1.0, 0.0, 0.0, -1.0}), 1.0, 1e-12);
}

TEST(RunMode, SenderEquatorOutput) {
    const auto out = run_mode(Sender{}, AtomPrep{}, {}, 0.0, ideal());
    ASSERT_EQ(out.kind, OutcomeKind::Photon);
    EXPECT_NEAR(out.probability, 0.5, 1e-12);
    // (|R> - |L>)/sqrt2 in (L, R) amplitudes, up to a global phase.
    EXPECT_NEAR(overlap(out.state, PureState{-kR2, kR2}), 1.0, 1e-12);
    EXPECT_NEAR(overlap(out.state, polarization_state(Polarization::V)), 1.0, 1e-12);
}

TEST(RunMode, ReceiverSinglePath) {
    for (auto basis : {AnalysisBasis::HV, AnalysisBasis::DA}) {
        for (bool first : {true, false}) {
            const auto out = run_mode(Receiver{basis, first}, AtomPrep{1.1, 0.4, 0.0}, PhotonIn{0.0, 0.0}, 3.0, ideal());
            ASSERT_EQ(out.kind, OutcomeKind::Atom);
            EXPECT_NEAR(std::abs(out.state[0]), 1.0, 1e-12);
        }
    }
    EXPECT_THROW(run_mode(Receiver{AnalysisBasis::RL, true}, {}, {}, 0.0, ideal()), ConfigError);
    EXPECT_THROW(run_mode(Sender{AtomBasis::None}, {}, {}, 0.0, ideal()), ConfigError);
}

TEST(RunMode, ConverterMapsInputPolarization) {
    // With an equal D superposition and the atom projected on |+>, the photon
    // amplitudes copy the 854 nm amplitudes (R -> L path, L -> R path).
    const PhotonIn in{1.0, 0.6};
    const auto out = run_mode(Converter{}, AtomPrep{kPi / 2, 0.0, 0.0}, in, 0.0, ideal());
    const PureState want{std::cos(0.5), std::sin(0.5) * std::polar(1.0, 0.6)};
    EXPECT_NEAR(overlap(out.state, want), 1.0, 1e-12);
}

TEST(SenderPhaseLaw, LinearAngleIsAffineWithUnitSlope) {
    const auto c = ideal();
    const double w = c.larmor_omega();
    for (double phi : {0.0, kPi / 2, kPi, 3 * kPi / 2}) {
        for (double t : {0.0, 5.0, 21.0, 40.0}) {
            const auto out = run_mode(Sender{}, AtomPrep{kPi / 2, phi, 0.0}, {}, t, c);
            const auto s = poincare_components(DensityOperator(out.state));
            EXPECT_NEAR(s.s3, 0.0, 1e-12);
            const double angle = std::atan2(s.s2, s.s1);
            const double predicted = phi + w * t + PhotonIn{}.phi_854;
            EXPECT_NEAR(std::remainder(angle - predicted, 2 * kPi), 0.0, 1e-9);
        }
    }
}

TEST(ArrivalTimePdf, BranchValues) {
    const auto c = ideal();
    const AtomPrep prep{kPi / 2, 0.0, 0.0};
    EXPECT_NEAR(arrival_time_pdf(0.0, Polarization::H, prep, c), 0.0, 1e-15);
    EXPECT_NEAR(arrival_time_pdf(c.larmor_period_ns() / 2, Polarization::V, prep, c), 0.0, 1e-15);
    const double tau = c.raman_decay_tau_ns;
    for (double t : {0.0, 3.0, 50.0, 333.0}) {
        const double sum = arrival_time_pdf(t, Polarization::H, prep, c) + arrival_time_pdf(t, Polarization::V, prep, c);
        EXPECT_NEAR(sum, std::exp(-t / tau) / tau, 1e-15);
        const double ph = c.larmor_omega() * t;
        EXPECT_NEAR(arrival_time_pdf(t, Polarization::H, prep, c), std::exp(-t / tau) / tau * (1 - std::cos(ph)) / 2,
                    1e-15);
    }
}

TEST(ArrivalTimePdf, NormalizedOverHalfLine) {
    const auto c = ideal();
    const AtomPrep prep{kPi / 2, 0.7, 0.0};
    // Simpson's rule on [0, 40 tau].
    const int n = 200000;
    const double b = 40 * c.raman_decay_tau_ns, h = b / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double t = i * h;
        const double f = arrival_time_pdf(t, Polarization::H, prep, c) + arrival_time_pdf(t, Polarization::V, prep, c);
        s += f * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
    }
    EXPECT_NEAR(s * h / 3, 1.0, 1e-9);
    InterfaceConfig bad = c;
    bad.raman_decay_tau_ns = 0.0;
    EXPECT_THROW(arrival_time_pdf(1.0, Polarization::H, prep, bad), ConfigError);
}

TEST(Dephasing, Examples) {
    const DensityOperator bell(fixtures::bell());
    EXPECT_TRUE(apply_dephasing(bell, 0.0).matrix().isApprox(bell.matrix()));
    const auto gone = apply_dephasing(bell, 50.0);
    EXPECT_NEAR(std::abs(gone(0, 3)), 0.0, 1e-300);
    const double sigma = std::sqrt(-2.0 * std::log(0.8));
    EXPECT_NEAR(fidelity_to_pure(apply_dephasing(bell, sigma), fixtures::bell()), 0.9, 1e-12);
    EXPECT_THROW(apply_dephasing(bell, -0.1), std::domain_error);
}

TEST(Dephasing, ChannelProperties) {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 20; ++i) {
        for (int d : {2, 4}) {
            const auto rho = fixtures::random_mixed(d, rng);
            const double s1 = 0.1 * i, s2 = 0.05 * (20 - i);
            const auto out = apply_dephasing(rho, s1);
            EXPECT_NEAR(out.trace(), 1.0, 1e-12);
            EXPECT_GE(out.min_eigenvalue(), -1e-12);
            const auto twice = apply_dephasing(out, s2);
            const auto once = apply_dephasing(rho, std::hypot(s1, s2));
            EXPECT_LT((twice.matrix() - once.matrix()).cwiseAbs().maxCoeff(), 1e-12);
            for (int k = 0; k < d; ++k) EXPECT_EQ(out(k, k), rho(k, k));
        }
    }
}

TEST(Waveplates, NominalBases) {
    for (auto b : {AnalysisBasis::HV, AnalysisBasis::DA, AnalysisBasis::RL}) {
        const auto mb = waveplate_basis(b, 0.0);
        const auto [p, q] = ports(b);
        EXPECT_NEAR(overlap(mb.first, polarization_state(p)), 1.0, 1e-12) << to_string(b);
        EXPECT_NEAR(overlap(mb.second, polarization_state(q)), 1.0, 1e-12) << to_string(b);
    }
    const auto null = waveplate_basis(0.0, 0.0, 0.0);
    EXPECT_NEAR(overlap(null.first, polarization_state(Polarization::H)), 1.0, 1e-12);
}

TEST(Waveplates, MiscalibrationTiltsRLBasis) {
    const auto s3_at = [](double miscal) {
        return poincare_components(DensityOperator(waveplate_basis(AnalysisBasis::RL, miscal).first)).s3;
    };
    const auto mb = waveplate_basis(AnalysisBasis::RL, 0.05);
    const auto s = poincare_components(DensityOperator(mb.first));
    EXPECT_NEAR(s.norm(), 1.0, 1e-12);
    EXPECT_NEAR(overlap(mb.first, mb.second), 0.0, 1e-12);
    // The port leaves the pole; the contrast loss is second order in the
    // retardance error, so doubling the error quadruples it.
    const double loss1 = 1.0 - s3_at(0.01), loss2 = 1.0 - s3_at(0.02);
    EXPECT_GT(loss1, 0.0);
    EXPECT_NEAR(loss2 / loss1, 4.0, 0.05);
    EXPECT_GT(std::hypot(s.s1, s.s2), 0.04);
    EXPECT_LT(std::hypot(s.s1, s.s2), 0.2);
}

TEST(Config, ValidationAndNoiseless) {
    InterfaceConfig c;
    EXPECT_NO_THROW(c.validate());
    c.pmt_qe = 1.3;
    EXPECT_THROW(c.validate(), ConfigError);
    const auto n = InterfaceConfig{}.noiseless();
    EXPECT_EQ(n.dephasing_sigma_rad, 0.0);
    EXPECT_EQ(n.dark_rate_per_s, 0.0);
    EXPECT_EQ(n.waveplate_miscal_rad, 0.0);
    EXPECT_EQ(n.timing_jitter_fwhm_ns, 0.0);
    EXPECT_EQ(n.fiber_coupling_eff, InterfaceConfig{}.fiber_coupling_eff);
}

TEST(Compensation, IdealOutputsInCompensatedFrame) {
    const auto c = ideal();
    const PhotonIn in;
    for (double phi : {0.0, 1.0, 2.0}) {
        const AtomPrep prep{1.2, phi, 0.0};
        for (double t : {0.0, 7.0, 130.0}) {
            const double angle = compensation_angle(in, c.larmor_omega() * t);
            const auto u = compensation_unitary(angle);
            const auto sender = run_mode(Sender{}, prep, in, t, c).state;
            const PureState comp(CVector(u * sender.amplitudes()));
            EXPECT_NEAR(overlap(comp, sender_input_state(prep)), 1.0, 1e-12);
            const auto joint = run_mode(Entangler{}, prep, in, t, c).state;
            const PureState jc(CVector(kron(CMatrix::Identity(2, 2), u) * joint.amplitudes()));
            EXPECT_NEAR(std::norm(jc.amplitudes().dot(entangler_target(prep).amplitudes())), 1.0, 1e-12);
        }
    }
}
