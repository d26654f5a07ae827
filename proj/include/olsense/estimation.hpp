#pragma once
//
// Fisher-information engine over the parameter pair (a, V_L).
//
// Row/column 0 is the acceleration (1/g units), row/column 1 the lattice depth
// (1/E_R units).  Measurements are projective onto the momentum comb.
//

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "olsense/dynamics.hpp"
#include "olsense/errors.hpp"

namespace olsense {

inline constexpr double default_probability_floor = 1e-12;
inline constexpr int param_a = 0;
inline constexpr int param_V = 1;

/// Outcome probabilities and their parameter derivatives.
struct OutcomeModel {
    std::vector<double> probs;
    std::vector<double> dprob_a;
    std::vector<double> dprob_V;

    std::size_t size() const { return probs.size(); }
};

inline OutcomeModel outcome_model(const AugmentedState& s) {
    const auto d = static_cast<std::size_t>(s.psi.size());
    OutcomeModel m{std::vector<double>(d), std::vector<double>(d), std::vector<double>(d)};
    for (std::size_t n = 0; n < d; ++n) {
        const auto i = static_cast<Eigen::Index>(n);
        const Complex c = std::conj(s.psi(i));
        m.probs[n] = std::norm(s.psi(i));
        m.dprob_a[n] = 2.0 * (c * s.dpsi_da(i)).real();
        m.dprob_V[n] = 2.0 * (c * s.dpsi_dV(i)).real();
    }
    return m;
}

/// Weighted q-average, binned by comb order (the detector does not resolve q).
inline OutcomeModel outcome_model(const std::vector<AugmentedState>& ensemble, const QSampling& qs) {
    OutcomeModel out;
    for (std::size_t k = 0; k < ensemble.size(); ++k) {
        const auto m = outcome_model(ensemble[k]);
        if (out.probs.empty()) out = OutcomeModel{std::vector<double>(m.size()), std::vector<double>(m.size()),
                                                  std::vector<double>(m.size())};
        const double w = qs.weights[k];
        for (std::size_t n = 0; n < m.size(); ++n) {
            out.probs[n] += w * m.probs[n];
            out.dprob_a[n] += w * m.dprob_a[n];
            out.dprob_V[n] += w * m.dprob_V[n];
        }
    }
    return out;
}

struct Score {
    std::size_t outcome;
    double prob;
    double l_a;
    double l_V;
};

/// Score functions d_mu log P(n) for outcomes with P(n) >= floor.
inline std::vector<Score> score_functions(const OutcomeModel& m, double floor = default_probability_floor) {
    if (!(floor > 0)) throw DomainError("score_functions: floor must be positive");
    std::vector<Score> out;
    for (std::size_t n = 0; n < m.size(); ++n) {
        if (m.probs[n] < floor) continue;
        out.push_back({n, m.probs[n], m.dprob_a[n] / m.probs[n], m.dprob_V[n] / m.probs[n]});
    }
    return out;
}

inline std::vector<Score> score_functions(const AugmentedState& s, double floor = default_probability_floor) {
    return score_functions(outcome_model(s), floor);
}

inline Eigen::Matrix2d cfim(const OutcomeModel& m, double floor = default_probability_floor) {
    Eigen::Matrix2d I = Eigen::Matrix2d::Zero();
    for (const auto& s : score_functions(m, floor)) {
        I(0, 0) += s.prob * s.l_a * s.l_a;
        I(0, 1) += s.prob * s.l_a * s.l_V;
        I(1, 1) += s.prob * s.l_V * s.l_V;
    }
    I(1, 0) = I(0, 1);
    return I;
}

inline Eigen::Matrix2d cfim(const AugmentedState& s, double floor = default_probability_floor) {
    return cfim(outcome_model(s), floor);
}

/// Pure-state QFIM: 4 Re[<d_mu psi|d_nu psi> - <d_mu psi|psi><psi|d_nu psi>].
inline Eigen::Matrix2d qfim(const AugmentedState& s) {
    const StateVector* d[2] = {&s.dpsi_da, &s.dpsi_dV};
    Eigen::Matrix2d F;
    for (int mu = 0; mu < 2; ++mu) {
        for (int nu = mu; nu < 2; ++nu) {
            const Complex overlap = d[mu]->dot(*d[nu]);
            const Complex berry = d[mu]->dot(s.psi) * s.psi.dot(*d[nu]);
            F(mu, nu) = 4.0 * (overlap - berry).real();
            F(nu, mu) = F(mu, nu);
        }
    }
    return F;
}

/// Block-diagonal mixture over orthogonal q sectors: QFIM adds with the weights.
inline Eigen::Matrix2d qfim(const std::vector<AugmentedState>& ensemble, const QSampling& qs) {
    Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
    for (std::size_t k = 0; k < ensemble.size(); ++k) F += qs.weights[k] * qfim(ensemble[k]);
    return F;
}

struct FisherMatrices {
    Eigen::Matrix2d cfim = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d qfim = Eigen::Matrix2d::Zero();
    std::string basis_label = "momentum-comb";
};

inline FisherMatrices fisher_matrices(const AugmentedState& s, double floor = default_probability_floor) {
    return FisherMatrices{cfim(s, floor), qfim(s), "momentum-comb"};
}

inline FisherMatrices fisher_matrices(const std::vector<AugmentedState>& ensemble, const QSampling& qs,
                                      double floor = default_probability_floor) {
    return FisherMatrices{cfim(outcome_model(ensemble, qs), floor), qfim(ensemble, qs), "momentum-comb"};
}

/// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

struct MarginalInformation {
    Eigen::MatrixXd info;                 // A - C N^-1 C^T over the targets
    std::vector<int> omitted_nuisance;    // zero-diagonal nuisance parameters dropped before inversion
};

/// Target-block information after marginalizing the remaining parameters:
/// the inverse of the target block of I^{-1}.
inline MarginalInformation block_marginal(const Eigen::MatrixXd& I, const std::vector<int>& targets) {
    const auto n = static_cast<int>(I.rows());
    if (I.cols() != n) throw DomainError("block_marginal: matrix must be square");
    std::vector<int> nuisance;
    for (int i = 0; i < n; ++i)
        if (std::find(targets.begin(), targets.end(), i) == targets.end()) nuisance.push_back(i);

    const double scale = I.diagonal().cwiseAbs().maxCoeff();
    MarginalInformation out;
    std::vector<int> kept;
    for (int j : nuisance) {
        if (I(j, j) <= 1e-14 * scale || I(j, j) == 0.0)
            out.omitted_nuisance.push_back(j);
        else
            kept.push_back(j);
    }

    const auto nt = static_cast<Eigen::Index>(targets.size());
    const auto nk = static_cast<Eigen::Index>(kept.size());
    Eigen::MatrixXd A(nt, nt), C(nt, nk), N(nk, nk);
    for (Eigen::Index r = 0; r < nt; ++r) {
        for (Eigen::Index c = 0; c < nt; ++c) A(r, c) = I(targets[r], targets[c]);
        for (Eigen::Index c = 0; c < nk; ++c) C(r, c) = I(targets[r], kept[c]);
    }
    for (Eigen::Index r = 0; r < nk; ++r)
        for (Eigen::Index c = 0; c < nk; ++c) N(r, c) = I(kept[r], kept[c]);

    if (nk == 0 || C.isZero(0.0)) {
        out.info = A;
        return out;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(N, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0) || hi / lo >= 1e12) throw EstimationError("nuisance information deficit");
    out.info = A - C * N.ldlt().solve(C.transpose());
    return out;
}

/// Scalar marginal information for one target of the 2x2 (a, V_L) problem.
inline double marginal_information(const Eigen::Matrix2d& I, int target) {
    return block_marginal(I, {target}).info(0, 0);
}

inline double correlation(const Eigen::MatrixXd& I, int mu, int nu) {
    const double imu = I(mu, mu);
    const double inu = I(nu, nu);
    if (!(imu > 0) || !(inu > 0)) throw EstimationError("correlation undefined: zero diagonal Fisher information");
    return I(mu, nu) / (std::sqrt(imu) * std::sqrt(inu));
}

/// Lower bound on var(a) from N shots with V_L unknown; +inf when |Corr| = 1.
inline double variance_penalty_bound(const Eigen::Matrix2d& I, double N) {
    if (!(N >= 1)) throw DomainError("variance_penalty_bound: N must be >= 1");
    const double corr = correlation(I, param_a, param_V);
    const double denom = N * I(0, 0) * (1.0 - corr * corr);
    if (!(denom > 0)) return std::numeric_limits<double>::infinity();
    return 1.0 / denom;
}

struct SensitivityReport {
    double marginal_info_a = 0;
    double zeta_a = 0;
    double corr_aV = 0;
    double I_a = 0;
    double I_V = 0;
    double I_aV = 0;
};

inline SensitivityReport sensitivity_report(const Eigen::Matrix2d& I, double i_mzi_ref) {
    SensitivityReport r;
    r.I_a = I(0, 0);
    r.I_V = I(1, 1);
    r.I_aV = I(0, 1);
    r.marginal_info_a = marginal_information(I, param_a);
    r.zeta_a = r.marginal_info_a / i_mzi_ref;
    r.corr_aV = (r.I_a > 0 && r.I_V > 0) ? correlation(I, 0, 1) : 0.0;
    return r;
}

struct RewardSettings {
    double i_mzi_ref = 0.0;   // 1/g^2; must be set before use
    double r_max = 1e3;       // clamp for f/(1-f) at f -> 1
    double sinh_cap = 30.0;   // cap on the sinh argument
};

namespace detail {
inline double odds_reward(double f, double r_max) {
    if (!(f < 1.0)) return r_max;
    return std::min(f / (1.0 - f), r_max);
}
}  // namespace detail

/// f/(1-f) with f = zeta_a / 2 (marginal acceleration information over 2 I_MZI).
inline double reward_accel(const Eigen::Matrix2d& I, const RewardSettings& rs) {
    if (!(rs.i_mzi_ref > 0)) throw DomainError("reward_accel: reference I_MZI not set");
    double marg;
    try {
        marg = marginal_information(I, param_a);
    } catch (const EstimationError&) {
        return 0.0;
    }
    return detail::odds_reward(std::max(0.0, marg) / (2.0 * rs.i_mzi_ref), rs.r_max);
}

/// Same shape with perfect knowledge of V_L: (I^-1)_aa -> 1/I_a.
inline double reward_accel_spp(const Eigen::Matrix2d& I, const RewardSettings& rs) {
    if (!(rs.i_mzi_ref > 0)) throw DomainError("reward_accel_spp: reference I_MZI not set");
    return detail::odds_reward(std::max(0.0, I(0, 0)) / (2.0 * rs.i_mzi_ref), rs.r_max);
}

/// sinh(4 / (I^-1)_{V,V}) with I in 1/E_R^2; argument capped.
inline double reward_lattice(const Eigen::Matrix2d& I, const RewardSettings& rs) {
    double marg;
    try {
        marg = marginal_information(I, param_V);
    } catch (const EstimationError&) {
        return 0.0;
    }
    return std::sinh(std::min(4.0 * std::max(0.0, marg), rs.sinh_cap));
}

inline double single_param_reward(const Eigen::Matrix2d& I, int target) { return I(target, target); }

}  // namespace olsense
