#include <gtest/gtest.h>

#include <cmath>

#include "olsense/estimation.hpp"
#include "olsense/freespace.hpp"

using namespace olsense;

TEST(FreeSpace, MziScaling) {
    const auto s = rubidium_1064();
    const double base = mzi_fisher(4.0, 8.0, s);
    EXPECT_NEAR(mzi_fisher(8.0, 8.0, s) / base, 4.0, 1e-13);
    EXPECT_NEAR(mzi_fisher(4.0, 16.0, s) / base, 16.0, 1e-13);
    EXPECT_NEAR(ramsey_fisher(4.0, 16.0, s) / ramsey_fisher(4.0, 8.0, s), 16.0, 1e-13);
    EXPECT_THROW(mzi_fisher(0.0, 1.0, s), DomainError);
    EXPECT_THROW(ramsey_fisher(1.0, -1.0, s), DomainError);
}

TEST(FreeSpace, RamseyIsFourMziExactly) {
    const auto s = rubidium_1064();
    for (double p0 : {0.5, 2.0, 4.0, 7.3})
        for (double T : {0.1, 1.0, 8.74, 123.0}) {
            EXPECT_EQ(ramsey_fisher(p0, T, s) / mzi_fisher(p0, T, s), 4.0);
            const double p_si = p0 * constants::hbar * s.k_L, T_si = s.seconds(T);
            EXPECT_EQ(ramsey_fisher_si(p_si, T_si) / mzi_fisher_si(p_si, T_si), 4.0);
        }
}

TEST(FreeSpace, PlugInValue) {
    // p0 = 4 hbar k_L, T = 684 us: (2 p0 (T/2)^2 / hbar)^2 in 1/(m/s^2)^2.
    const auto s = rubidium_1064();
    const double k = 2 * std::numbers::pi / 1064e-9;
    const double p0 = 4 * 1.054571817e-34 * k;
    const double T = 684e-6;
    const double ref = std::pow(2 * p0 * (T / 2) * (T / 2) / 1.054571817e-34, 2);
    EXPECT_NEAR(mzi_fisher_si(p0, T) / ref, 1.0, 1e-12);
    EXPECT_NEAR(ramsey_fisher_si(p0, T) / 4 / ref, 1.0, 1e-12);
    // Recoil-unit form carries 1/g^2: multiply back by g^2.
    EXPECT_NEAR(mzi_fisher(4.0, s.recoil_time(T), s) / (s.g * s.g) / ref, 1.0, 1e-12);
}

TEST(FreeSpace, AnalyticQfimIsRamsey) {
    const auto s = rubidium_1064();
    for (double a : {0.0, 0.05}) {
        for (double T : {1.0, 8.74}) {
            const auto st = analytic_augmented_state({4.0, T, a}, s);
            EXPECT_NEAR(qfim(st)(0, 0) / ramsey_fisher(4.0, T, s), 1.0, 1e-12) << a << " " << T;
            EXPECT_NEAR(st.psi.norm(), 1.0, 1e-15);
        }
    }
}

TEST(FreeSpace, GeneratorVariance) {
    // 4 Var(G_a) with G_a = -(kappa p T^2 - 2 kappa^2 a T^3 / 3) diagonal in momentum.
    const auto s = rubidium_1064();
    const double T = 5.0, a = 0.03, kappa = s.accel_coupling();
    const auto st = analytic_augmented_state({6.0, T, a}, s);
    double m1 = 0, m2 = 0;
    for (Eigen::Index i = 0; i < st.basis.dim(); ++i) {
        const double G = -(kappa * st.basis.momentum(i) * T * T - 2 * kappa * kappa * a * T * T * T / 3);
        m1 += std::norm(st.psi(i)) * G;
        m2 += std::norm(st.psi(i)) * G * G;
    }
    EXPECT_NEAR(4 * (m2 - m1 * m1) / ramsey_fisher(6.0, T, s), 1.0, 1e-12);
}

TEST(FreeSpace, RejectsOffCombSplitting) {
    const auto s = rubidium_1064();
    EXPECT_THROW(analytic_augmented_state({3.0, 1.0, 0.0}, s), DomainError);
    EXPECT_THROW(analytic_augmented_state({4.0, 1.0, 0.0}, s, build_basis(1)), DomainError);
    EXPECT_THROW(analytic_augmented_state({4.0, 0.0, 0.0}, s), DomainError);
}

TEST(FreeSpace, PhaseWrap) {
    const auto s = rubidium_1064();
    const double T = 32 * std::numbers::pi / 11.5;
    const double a0 = phase_wrap_acceleration(T, s);
    EXPECT_NEAR(s.accel_coupling() * a0 * T * T, std::numbers::pi, 1e-12);
    EXPECT_GT(a0, 0.1);
    EXPECT_LT(a0, 0.5);
}
