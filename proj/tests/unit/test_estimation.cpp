#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "olsense/dynamics.hpp"
#include "olsense/estimation.hpp"
#include "oracles.hpp"

using namespace olsense;
using std::numbers::pi;

namespace {

ControlProtocol random_protocol(std::size_t n_seg, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 15);
    ControlProtocol p = ControlProtocol::zeros(n_seg);
    for (auto& a : p.segment_amplitudes) a = pick(rng) * pi / 12.0;
    return p;
}

struct Propagated {
    MomentumBasis basis;
    StateVector g;
    ControlProtocol p;
    AugmentedState out;
};

Propagated run(std::size_t n_seg, unsigned seed, EstimationPoint b = {0.0, 10.0}) {
    SimulationConfig cfg;
    const auto basis = build_basis(cfg.n_max);
    const auto g = ground_state(b.V_L, basis);
    const auto p = random_protocol(n_seg, seed);
    return {basis, g, p, propagate_augmented(AugmentedState::initial(basis, g), b, p, cfg)};
}

}  // namespace

TEST(Scores, ZeroDerivativesGiveZeroScores) {
    const auto basis = build_basis(4);
    const auto s = AugmentedState::initial(basis, ground_state(5.0, basis));
    for (const auto& sc : score_functions(s)) {
        EXPECT_EQ(sc.l_a, 0.0);
        EXPECT_EQ(sc.l_V, 0.0);
    }
    EXPECT_TRUE(cfim(s).isZero(0.0));
    EXPECT_TRUE(qfim(s).isZero(0.0));
}

TEST(Scores, ZeroMean) {
    const auto r = run(12, 3);
    double ma = 0, mv = 0;
    for (const auto& sc : score_functions(r.out)) {
        ma += sc.prob * sc.l_a;
        mv += sc.prob * sc.l_V;
    }
    EXPECT_NEAR(ma, 0.0, 1e-8);
    EXPECT_NEAR(mv, 0.0, 1e-8);
}

TEST(Scores, MatchFiniteDifferenceLogLikelihood) {
    const auto r = run(12, 4);
    SimulationConfig cfg;
    const double da = 1e-4;
    EstimationPoint lo{-da, 10.0}, hi{da, 10.0};
    const auto Pp = momentum_distribution(propagate_state(r.g, r.basis, hi, r.p, cfg));
    const auto Pm = momentum_distribution(propagate_state(r.g, r.basis, lo, r.p, cfg));
    for (const auto& sc : score_functions(r.out)) {
        if (sc.prob < 1e-6) continue;
        const double fd = (std::log(Pp[sc.outcome]) - std::log(Pm[sc.outcome])) / (2 * da);
        EXPECT_NEAR(sc.l_a, fd, 1e-4 * std::max(1.0, std::abs(fd))) << sc.outcome;
    }
}

TEST(Scores, FloorExcludesOutcomes) {
    OutcomeModel m{{0.5, 0.5 - 1e-13, 1e-13}, {1, -1, 0}, {0, 0, 0}};
    EXPECT_EQ(score_functions(m).size(), 2u);
    EXPECT_THROW(score_functions(m, 0.0), DomainError);
}

TEST(Cfim, BinomialFringe) {
    // P = (sin^2 th, cos^2 th); brute-force the expectation of the squared score.
    for (double th : {0.3, 0.7, 1.1}) {
        const double s = std::sin(th), c = std::cos(th);
        OutcomeModel m{{s * s, c * c}, {2 * s * c, -2 * s * c}, {0.0, 0.0}};
        EXPECT_NEAR(cfim(m)(0, 0), 4.0, 1e-12);
        const double h = 1e-5;
        double brute = 0;
        for (int k = 0; k < 2; ++k) {
            auto P = [&](double t) { return k == 0 ? std::pow(std::sin(t), 2) : std::pow(std::cos(t), 2); };
            const double l = (std::log(P(th + h)) - std::log(P(th - h))) / (2 * h);
            brute += P(th) * l * l;
        }
        EXPECT_NEAR(brute, 4.0, 1e-6);
    }
}

TEST(Cfim, ParameterIndependentIsZero) {
    OutcomeModel m{{0.2, 0.3, 0.5}, {0, 0, 0}, {0, 0, 0}};
    EXPECT_TRUE(cfim(m).isZero(0.0));
}

TEST(Cfim, MatchesFiniteDifferenceOracle) {
    for (unsigned seed : {5u, 6u}) {
        const auto r = run(12, seed);
        SimulationConfig cfg;
        const Eigen::Matrix2d ref = oracle::fd_cfim(r.g, r.basis, {0.0, 10.0}, r.p, cfg, 1e-4, 1e-3);
        const Eigen::Matrix2d I = cfim(r.out);
        EXPECT_LT(oracle::max_rel_diff(I, ref, 1e-3 * ref.cwiseAbs().maxCoeff()), 1e-4) << seed;
        EXPECT_GE(min_eigenvalue(I), -1e-8 * I.norm());
    }
}

TEST(Qfim, DominatesCfim) {
    for (unsigned seed = 10; seed < 20; ++seed) {
        const auto r = run(8, seed, {0.02 * (seed - 15.0), 8.0 + 0.3 * seed});
        const auto fm = fisher_matrices(r.out);
        EXPECT_GE(min_eigenvalue(fm.qfim - fm.cfim), -1e-8) << seed;
        EXPECT_EQ(fm.basis_label, "momentum-comb");
    }
}

TEST(Qfim, GaugeInvariant) {
    const auto r = run(12, 7);
    // psi -> e^{i chi(a, V)} psi with d_mu psi -> e^{i chi}(d_mu psi + i chi_mu psi)
    const double chi = 0.83, chi_a = 2.7, chi_V = -0.4;
    AugmentedState s = r.out;
    const Complex u = std::polar(1.0, chi);
    s.psi = u * r.out.psi;
    s.dpsi_da = u * (r.out.dpsi_da + Complex(0, chi_a) * r.out.psi);
    s.dpsi_dV = u * (r.out.dpsi_dV + Complex(0, chi_V) * r.out.psi);
    const Eigen::Matrix2d F0 = qfim(r.out), F1 = qfim(s);
    EXPECT_LT((F0 - F1).cwiseAbs().maxCoeff(), 1e-10 * F0.cwiseAbs().maxCoeff());
    EXPECT_LT((cfim(r.out) - cfim(s)).cwiseAbs().maxCoeff(), 1e-10 * F0.cwiseAbs().maxCoeff());
}

TEST(Qfim, EnsembleIsWeightedSum) {
    SimulationConfig cfg;
    cfg.n_max = 8;
    cfg.q_sampling = QSampling::gaussian(3, 0.05);
    const auto ens = propagate_ensemble({0.0, 10.0}, random_protocol(6, 2), cfg);
    Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
    for (std::size_t k = 0; k < ens.size(); ++k) F += cfg.q_sampling.weights[k] * qfim(ens[k]);
    EXPECT_LT((qfim(ens, cfg.q_sampling) - F).norm(), 1e-12 * F.norm());
    const auto fm = fisher_matrices(ens, cfg.q_sampling);
    EXPECT_GE(min_eigenvalue(fm.qfim - fm.cfim), -1e-8);
}

TEST(BlockMarginal, Examples) {
    Eigen::MatrixXd I(2, 2);
    I << 4, 1, 1, 1;
    EXPECT_DOUBLE_EQ(block_marginal(I, {0}).info(0, 0), 3.0);
    const double full = 1.0 / I.inverse()(0, 0);
    EXPECT_NEAR(block_marginal(I, {0}).info(0, 0) / full, 1.0, 1e-12);

    Eigen::MatrixXd D(2, 2);
    D << 4, 0, 0, 2;
    EXPECT_DOUBLE_EQ(block_marginal(D, {0}).info(0, 0), 4.0);
}

TEST(BlockMarginal, ZeroDiagonalNuisanceOmitted) {
    Eigen::MatrixXd I(2, 2);
    I << 5, 0, 0, 0;
    const auto m = block_marginal(I, {0});
    EXPECT_DOUBLE_EQ(m.info(0, 0), 5.0);
    ASSERT_EQ(m.omitted_nuisance.size(), 1u);
    EXPECT_EQ(m.omitted_nuisance[0], 1);
}

TEST(BlockMarginal, SingularNuisanceThrows) {
    Eigen::MatrixXd I(3, 3);
    I << 4, 1, 1, 1, 1, 1, 1, 1, 1;
    try {
        block_marginal(I, {0});
        FAIL() << "expected EstimationError";
    } catch (const EstimationError& e) {
        EXPECT_NE(std::string(e.what()).find("nuisance information deficit"), std::string::npos);
    }
}

TEST(BlockMarginal, GeneralBlocks) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd X(6, 4);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = n01(rng);
    const Eigen::MatrixXd I = X.transpose() * X;
    const Eigen::MatrixXd inv = I.inverse();
    const Eigen::MatrixXd ref = inv.block(0, 0, 2, 2).inverse();
    EXPECT_LT((block_marginal(I, {0, 1}).info - ref).norm(), 1e-10 * ref.norm());
}

TEST(BlockMarginal, NeverExceedsDiagonal) {
    for (unsigned seed = 30; seed < 36; ++seed) {
        const Eigen::Matrix2d I = cfim(run(8, seed).out);
        EXPECT_LE(marginal_information(I, param_a), I(0, 0) * (1 + 1e-12));
        EXPECT_LE(marginal_information(I, param_V), I(1, 1) * (1 + 1e-12));
    }
}

TEST(Correlation, Examples) {
    Eigen::Matrix2d I;
    I << 4, 1, 1, 1;
    EXPECT_DOUBLE_EQ(correlation(I, 0, 0), 1.0);
    EXPECT_DOUBLE_EQ(correlation(I, 0, 1), 0.5);
    Eigen::Matrix2d D;
    D << 3, 0, 0, 7;
    EXPECT_EQ(correlation(D, 0, 1), 0.0);
    Eigen::Matrix2d Z;
    Z << 3, 0, 0, 0;
    EXPECT_THROW(correlation(Z, 0, 1), EstimationError);
}

TEST(Correlation, InvariantUnderRescaling) {
    const Eigen::Matrix2d I = cfim(run(8, 41).out);
    const double c = 37.5;
    // a -> c a scales the score for a by 1/c.
    Eigen::Matrix2d J = I;
    J(0, 0) /= c * c;
    J(0, 1) /= c;
    J(1, 0) /= c;
    EXPECT_NEAR(correlation(I, 0, 1), correlation(J, 0, 1), 1e-12);
    EXPECT_LE(std::abs(correlation(I, 0, 1)), 1.0);
}

TEST(VariancePenalty, Examples) {
    Eigen::Matrix2d D;
    D << 4, 0, 0, 2;
    EXPECT_DOUBLE_EQ(variance_penalty_bound(D, 1), 0.25);
    Eigen::Matrix2d I;
    I << 4, 1, 1, 1;
    EXPECT_NEAR(variance_penalty_bound(I, 1) / 0.25, 4.0 / 3.0, 1e-12);
    EXPECT_NEAR(variance_penalty_bound(I, 50), 1.0 / (50 * marginal_information(I, 0)), 1e-15);
    Eigen::Matrix2d S;
    S << 4, 2, 2, 1;
    EXPECT_TRUE(std::isinf(variance_penalty_bound(S, 10)));
    EXPECT_THROW(variance_penalty_bound(I, 0.5), DomainError);
}

TEST(Report, Fields) {
    Eigen::Matrix2d I;
    I << 4, 1, 1, 1;
    const auto r = sensitivity_report(I, 1.5);
    EXPECT_DOUBLE_EQ(r.marginal_info_a, 3.0);
    EXPECT_DOUBLE_EQ(r.zeta_a, 2.0);
    EXPECT_DOUBLE_EQ(r.corr_aV, 0.5);
    EXPECT_DOUBLE_EQ(r.I_aV, 1.0);
}

TEST(Rewards, Accel) {
    RewardSettings rs;
    rs.i_mzi_ref = 2.0;
    auto diag = [](double ia) {
        Eigen::Matrix2d I;
        I << ia, 0, 0, 1;
        return I;
    };
    EXPECT_EQ(reward_accel(diag(0.0), rs), 0.0);
    EXPECT_DOUBLE_EQ(reward_accel(diag(2.0), rs), 1.0);   // zeta = 1
    EXPECT_EQ(reward_accel(diag(4.0), rs), rs.r_max);     // zeta = 2
    EXPECT_EQ(reward_accel(diag(9.0), rs), rs.r_max);
    EXPECT_LT(reward_accel(diag(3.9), rs), rs.r_max);
    Eigen::Matrix2d I;
    I << 4, 1, 1, 1;  // marginal 3 -> f = 0.75
    EXPECT_DOUBLE_EQ(reward_accel(I, rs), 3.0);
    EXPECT_EQ(reward_accel_spp(I, rs), rs.r_max);  // ignores V_L: f = 1
}

TEST(Rewards, Lattice) {
    RewardSettings rs;
    EXPECT_EQ(reward_lattice(Eigen::Matrix2d::Zero(), rs), 0.0);
    Eigen::Matrix2d I;
    I << 1, 0, 0, 7.31;
    EXPECT_NEAR(reward_lattice(I, rs), std::sinh(29.24), 1e-9 * std::sinh(29.24));
    EXPECT_TRUE(std::isfinite(reward_lattice(I, rs)));
    double prev = -1;
    for (double iv : {0.1, 1.0, 3.0, 7.0, 7.4, 20.0}) {
        I(1, 1) = iv;
        const double r = reward_lattice(I, rs);
        EXPECT_GE(r, prev);
        prev = r;
    }
    EXPECT_DOUBLE_EQ(prev, std::sinh(30.0));
}

TEST(Rewards, SingleParam) {
    EXPECT_EQ(single_param_reward(Eigen::Matrix2d::Zero(), param_a), 0.0);
    Eigen::Matrix2d I;
    I << 4, 1, 1, 2;
    EXPECT_EQ(single_param_reward(I, param_a), 4.0);
    I(0, 1) = I(1, 0) = -1.7;
    EXPECT_EQ(single_param_reward(I, param_a), 4.0);
    EXPECT_EQ(single_param_reward(I, param_V), 2.0);
}
