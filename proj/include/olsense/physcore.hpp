#pragma once
//
// Physical scales, the truncated momentum comb and static band structure.
//
// Everything downstream works in recoil units: energies in E_R, times in
// 1/omega_R, momenta in hbar*k_L and accelerations in units of g.  The
// PhysicalScales struct is the only place SI numbers live.
//

#include <cmath>
#include <complex>
#include <algorithm>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "olsense/errors.hpp"

namespace olsense {

using Complex = std::complex<double>;
using StateVector = Eigen::VectorXcd;

namespace constants {
inline constexpr double hbar = 1.054571817e-34;      // J s
inline constexpr double amu = 1.66053906660e-27;     // kg
inline constexpr double planck = 2.0 * std::numbers::pi * hbar;
inline constexpr double standard_gravity = 9.80665;  // m/s^2
inline constexpr double rb87_mass_amu = 86.9;
inline constexpr double default_wavelength = 1064e-9;  // m
}  // namespace constants

struct PhysicalScales {
    double mass = 0;          // kg
    double wavelength_L = 0;  // m
    double k_L = 0;           // 1/m
    double E_R = 0;           // J
    double omega_R = 0;       // rad/s
    double v_R = 0;           // m/s
    double g = constants::standard_gravity;

    /// Boosted-frame momentum shift per unit (a/g)*(omega_R t), in hbar*k_L.
    /// Equal to g k_L / (2 omega_R^2).
    double accel_coupling() const { return g / (v_R * omega_R); }

    double seconds(double t_recoil) const { return t_recoil / omega_R; }
    double recoil_time(double t_seconds) const { return t_seconds * omega_R; }
    double joules(double e_recoil) const { return e_recoil * E_R; }
    double accel_si(double a_over_g) const { return a_over_g * g; }
};

inline PhysicalScales recoil_units(double mass, double wavelength) {
    if (!(mass > 0) || !(wavelength > 0))
        throw DomainError("recoil_units: mass and wavelength must be positive");
    PhysicalScales s;
    s.mass = mass;
    s.wavelength_L = wavelength;
    s.k_L = 2.0 * std::numbers::pi / wavelength;
    s.E_R = constants::hbar * constants::hbar * s.k_L * s.k_L / (2.0 * mass);
    s.omega_R = s.E_R / constants::hbar;
    s.v_R = constants::hbar * s.k_L / mass;
    return s;
}

inline PhysicalScales rubidium_1064() {
    return recoil_units(constants::rb87_mass_amu * constants::amu, constants::default_wavelength);
}

/// Momentum comb p_n = (2n + q) hbar k_L for n = -n_max..n_max.
class MomentumBasis {
public:
    MomentumBasis() = default;
    MomentumBasis(int n_max, double q) : n_max_(n_max), q_(q) {}

    int n_max() const { return n_max_; }
    double quasimomentum() const { return q_; }
    Eigen::Index dim() const { return 2 * n_max_ + 1; }
    /// Comb order n of storage index i.
    int order(Eigen::Index i) const { return static_cast<int>(i) - n_max_; }
    Eigen::Index index_of(int n) const { return n + n_max_; }
    double momentum(Eigen::Index i) const { return 2.0 * order(i) + q_; }

    std::vector<double> momenta() const {
        std::vector<double> p(static_cast<std::size_t>(dim()));
        for (Eigen::Index i = 0; i < dim(); ++i) p[static_cast<std::size_t>(i)] = momentum(i);
        return p;
    }

    friend bool operator==(const MomentumBasis&, const MomentumBasis&) = default;

private:
    int n_max_ = 0;
    double q_ = 0.0;
};

inline MomentumBasis build_basis(int n_max, double q = 0.0) {
    if (n_max < 1) throw DomainError("build_basis: n_max must be >= 1");
    if (!(q >= -1.0 && q < 1.0)) throw DomainError("build_basis: q must lie in [-1, 1)");
    return MomentumBasis(n_max, q);
}

/// Basis state |p_n> with n the comb order.
inline StateVector comb_state(const MomentumBasis& basis, int n) {
    if (n < -basis.n_max() || n > basis.n_max())
        throw DomainError("comb_state: order outside the comb");
    StateVector v = StateVector::Zero(basis.dim());
    v(basis.index_of(n)) = 1.0;
    return v;
}

/// Static lattice Hamiltonian (E_R units): p_n^2 on the diagonal,
/// -(V_L/4) e^{+i phi} coupling n -> n+1 and its conjugate n+1 -> n.
inline Eigen::MatrixXcd lattice_hamiltonian(double V_L, const MomentumBasis& basis, double phi) {
    const Eigen::Index d = basis.dim();
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(d, d);
    const Complex up = -0.25 * V_L * std::polar(1.0, phi);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double p = basis.momentum(i);
        h(i, i) = p * p;
        if (i + 1 < d) {
            h(i + 1, i) = up;
            h(i, i + 1) = std::conj(up);
        }
    }
    return h;
}

namespace detail {
/// Rotate v so its largest-magnitude entry (lowest index on ties) is real positive.
inline void fix_gauge_by_peak(Eigen::Ref<Eigen::VectorXcd> v) {
    Eigen::Index best = 0;
    double best_mag = -1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double m = std::abs(v(i));
        if (m > best_mag * (1.0 + 1e-9)) {
            best_mag = m;
            best = i;
        }
    }
    if (best_mag > 0) v *= std::conj(v(best)) / best_mag;
}
}  // namespace detail

struct BlochDecomposition {
    std::vector<double> band_energies;   // E_R, ascending
    Eigen::MatrixXcd band_states;        // column j is band j
    std::vector<double> occupations;     // filled by decompose()

    std::size_t size() const { return band_energies.size(); }

    /// |<band_j|psi>|^2 for the first n_bands bands.
    std::vector<double> project(const StateVector& psi, std::size_t n_bands) const {
        if (n_bands > size()) throw DomainError("project: more bands requested than basis states");
        std::vector<double> occ(n_bands);
        for (std::size_t j = 0; j < n_bands; ++j)
            occ[j] = std::norm(band_states.col(static_cast<Eigen::Index>(j)).dot(psi));
        return occ;
    }

    BlochDecomposition& decompose(const StateVector& psi) {
        occupations = project(psi, size());
        return *this;
    }
};

inline BlochDecomposition bloch_diagonalize(double V_L, const MomentumBasis& basis, double phi = 0.0) {
    if (!(V_L >= 0)) throw DomainError("bloch_diagonalize: V_L must be non-negative");
    if (basis.dim() < 3) throw DomainError("bloch_diagonalize: invalid basis");
    const Eigen::MatrixXcd h = lattice_hamiltonian(V_L, basis, phi);
    const Eigen::Index d = basis.dim();

    // At q = 0 with a real coupling, H commutes with p -> -p.  High bands come in
    // nearly degenerate even/odd pairs, so diagonalize each parity sector apart
    // to keep the eigenvectors parity-pure.  With V_L = 0 the comb states are
    // already eigenstates.
    Eigen::MatrixXcd to_sector = Eigen::MatrixXcd::Identity(d, d);
    std::vector<Eigen::Index> sector_sizes{d};
    if (V_L > 0 && basis.quasimomentum() == 0.0 && std::abs(std::sin(phi)) < 1e-15) {
        const int N = basis.n_max();
        const double r = 1.0 / std::sqrt(2.0);
        to_sector.setZero();
        to_sector(basis.index_of(0), 0) = 1.0;
        for (int n = 1; n <= N; ++n) {
            to_sector(basis.index_of(n), n) = r;
            to_sector(basis.index_of(-n), n) = r;
            to_sector(basis.index_of(n), N + n) = r;
            to_sector(basis.index_of(-n), N + n) = -r;
        }
        sector_sizes = {N + 1, N};
    }
    const Eigen::MatrixXcd hs = to_sector.adjoint() * h * to_sector;

    std::vector<double> energies;
    Eigen::MatrixXcd vectors(d, d);
    Eigen::Index offset = 0;
    for (Eigen::Index size : sector_sizes) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(hs.block(offset, offset, size, size));
        if (solver.info() != Eigen::Success) throw DomainError("bloch_diagonalize: eigensolver failed");
        for (Eigen::Index j = 0; j < size; ++j) {
            vectors.col(static_cast<Eigen::Index>(energies.size())) =
                to_sector.middleCols(offset, size) * solver.eigenvectors().col(j);
            energies.push_back(solver.eigenvalues()(j));
        }
        offset += size;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
        return energies[static_cast<std::size_t>(x)] < energies[static_cast<std::size_t>(y)];
    });

    BlochDecomposition out;
    out.band_states.resize(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        out.band_energies.push_back(energies[static_cast<std::size_t>(src)]);
        out.band_states.col(j) = vectors.col(src);
        detail::fix_gauge_by_peak(out.band_states.col(j));
    }
    return out;
}

/// Lowest band at quasimomentum basis.q, with the n = 0 amplitude made real and non-negative.
inline StateVector ground_state(double V_L, const MomentumBasis& basis) {
    StateVector g = bloch_diagonalize(V_L, basis, 0.0).band_states.col(0);
    const Complex c0 = g(basis.index_of(0));
    if (std::abs(c0) > 0) g *= std::conj(c0) / std::abs(c0);
    return g;
}

}  // namespace olsense
