#pragma once
//
// Closed-form free-space results: Mach-Zehnder and Ramsey Fisher information
// and the exact augmented state of a split wavepacket with no lattice.
//

#include <cmath>

#include "olsense/dynamics.hpp"
#include "olsense/physcore.hpp"

namespace olsense {

struct FreeSpaceScenario {
    double p0 = 4.0;       // hbar k_L
    double T_total = 1.0;  // 1/omega_R
    double a = 0.0;        // g
};

// SI forms: p0 in kg m/s, T_total in s, result in 1/(m/s^2)^2.
inline double mzi_fisher_si(double p0, double T_total) {
    if (!(p0 > 0) || !(T_total > 0)) throw DomainError("mzi_fisher: inputs must be positive");
    const double half = 0.5 * T_total;
    const double x = 2.0 * p0 * (half * half) / constants::hbar;
    return x * x;
}

inline double ramsey_fisher_si(double p0, double T_total) {
    if (!(p0 > 0) || !(T_total > 0)) throw DomainError("ramsey_fisher: inputs must be positive");
    const double x = p0 * (T_total * T_total) / constants::hbar;
    return x * x;
}

// Recoil-unit forms: p0 in hbar k_L, T_total in 1/omega_R, result in 1/g^2.
inline double mzi_fisher(double p0, double T_total, const PhysicalScales& s) {
    if (!(p0 > 0) || !(T_total > 0)) throw DomainError("mzi_fisher: inputs must be positive");
    const double half = 0.5 * T_total;
    const double x = 4.0 * s.accel_coupling() * p0 * (half * half);
    return x * x;
}

inline double ramsey_fisher(double p0, double T_total, const PhysicalScales& s) {
    if (!(p0 > 0) || !(T_total > 0)) throw DomainError("ramsey_fisher: inputs must be positive");
    const double x = 2.0 * s.accel_coupling() * p0 * (T_total * T_total);
    return x * x;
}

/// Reference I_MZI for zeta_a: splitting p0 (default 4 hbar k_L), free time T_total/2.
inline double reference_mzi(double T_total, const PhysicalScales& s, double p0 = 4.0) {
    return mzi_fisher(p0, T_total, s);
}

/// Acceleration at which the free-fall lattice phase k_L a t^2 wraps by 2 pi, in g.
inline double phase_wrap_acceleration(double T_total, const PhysicalScales& s) {
    return std::numbers::pi / (s.accel_coupling() * T_total * T_total);
}

/// Exact boosted-frame state at T_total from (|p0> + |-p0>)/sqrt(2) with no lattice.
/// Built on the smallest q = 0 comb that holds +-p0 (p0 must be an even integer);
/// only the acceleration derivative has a closed form, dpsi_dV is left zero.
inline AugmentedState analytic_augmented_state(const FreeSpaceScenario& sc, const PhysicalScales& s,
                                               std::optional<MomentumBasis> basis = std::nullopt) {
    if (!(sc.p0 > 0) || !(sc.T_total > 0)) throw DomainError("analytic_augmented_state: p0, T_total must be positive");
    const int n0 = static_cast<int>(std::lround(sc.p0 / 2.0));
    if (std::abs(2.0 * n0 - sc.p0) > 1e-12) throw DomainError("analytic_augmented_state: p0 must sit on the q = 0 comb");
    const MomentumBasis b = basis ? *basis : build_basis(n0, 0.0);
    if (b.quasimomentum() != 0.0 || b.n_max() < n0) throw DomainError("analytic_augmented_state: basis too small");

    const double kappa = s.accel_coupling();
    const double T = sc.T_total;
    const double a = sc.a;
    AugmentedState out = AugmentedState::initial(b, StateVector::Zero(b.dim()));
    out.time = T;
    for (int sign : {-1, 1}) {
        const int n = sign * n0;
        const double p = b.momentum(b.index_of(n));
        // integral_0^T (p - kappa a t)^2 dt
        const double action = p * p * T - kappa * a * p * T * T + kappa * kappa * a * a * T * T * T / 3.0;
        const Complex amp = std::polar(1.0 / std::sqrt(2.0), -action);
        // -i G_a with G_a = integral_0^T d_a H dt = -(kappa p T^2 - 2 kappa^2 a T^3 / 3)
        const Complex gen(0.0, kappa * p * T * T - 2.0 * kappa * kappa * a * T * T * T / 3.0);
        out.psi(b.index_of(n)) = amp;
        out.dpsi_da(b.index_of(n)) = gen * amp;
    }
    return out;
}

/// (|p0> + |-p0>)/sqrt(2) on the given comb.
inline StateVector split_state(const MomentumBasis& basis, double p0) {
    const int n0 = static_cast<int>(std::lround(p0 / 2.0));
    StateVector v = StateVector::Zero(basis.dim());
    v(basis.index_of(n0)) = 1.0 / std::sqrt(2.0);
    v(basis.index_of(-n0)) = 1.0 / std::sqrt(2.0);
    return v;
}

}  // namespace olsense
