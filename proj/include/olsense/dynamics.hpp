#pragma once
//
// Shaken-lattice dynamics on the momentum comb.
//
// The state is propagated in the Galilean-boosted frame where the inertial
// force is replaced by a time-dependent kinetic shift,
//
//     H(t) = (p - kappa a t)^2 - (V_L/2) cos(2x + phi(t)),
//
// with kappa = PhysicalScales::accel_coupling().  Alongside |psi> we carry the
// parameter derivatives |d_a psi> and |d_V psi>, which obey the same equation
// with source terms (d_mu H)|psi>:
//
//     d_a H = -2 kappa t (p - kappa a t),   d_V H = -(1/2) cos(2x + phi(t)).
//
// The c-number part of d_a H is kept so the derivative vectors are the exact
// parameter derivatives of psi (phase included).
//

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "olsense/errors.hpp"
#include "olsense/physcore.hpp"

namespace olsense {

inline constexpr double default_omega_s = 11.5;  // omega_R units
inline constexpr int default_steps_per_segment = 1024;
inline constexpr int default_n_max = 10;

/// Piecewise carrier phi(t) = A_k sin(omega_s t), one amplitude per half period.
struct ControlProtocol {
    std::vector<double> segment_amplitudes;  // rad
    double omega_s = default_omega_s;        // omega_R units

    std::size_t segments() const { return segment_amplitudes.size(); }
    double segment_duration() const { return std::numbers::pi / omega_s; }
    double total_time() const { return static_cast<double>(segments()) * segment_duration(); }

    static ControlProtocol zeros(std::size_t n_seg, double omega_s = default_omega_s) {
        return ControlProtocol{std::vector<double>(n_seg, 0.0), omega_s};
    }
};

namespace detail {
inline std::size_t segment_index(const ControlProtocol& p, double t) {
    if (p.segments() == 0) return 0;
    const double k = std::floor(t / p.segment_duration());
    if (k <= 0) return 0;
    return std::min(static_cast<std::size_t>(k), p.segments() - 1);
}

inline double control_value_unchecked(const ControlProtocol& p, double t) {
    if (p.segments() == 0) return 0.0;
    return p.segment_amplitudes[segment_index(p, t)] * std::sin(p.omega_s * t);
}
}  // namespace detail

inline double control_value(const ControlProtocol& protocol, double t) {
    if (!(t >= 0.0) || t > protocol.total_time())
        throw DomainError("control_value: t outside [0, total_time]");
    return detail::control_value_unchecked(protocol, t);
}

/// Parameters being estimated: acceleration in units of g and depth in E_R.
struct EstimationPoint {
    double a = 0.0;
    double V_L = 10.0;
};

/// Quasimomentum samples evolved independently and averaged incoherently.
struct QSampling {
    std::vector<double> q{0.0};
    std::vector<double> weights{1.0};

    static QSampling single(double q = 0.0) { return QSampling{{q}, {1.0}}; }

    /// `count` points evenly spread over +-2.5 width with Gaussian weights.
    static QSampling gaussian(int count, double width) {
        if (count < 1) throw DomainError("QSampling: count must be >= 1");
        if (count == 1) return single();
        if (!(width > 0)) throw DomainError("QSampling: width must be positive");
        QSampling s;
        s.q.clear();
        s.weights.clear();
        double total = 0;
        for (int i = 0; i < count; ++i) {
            const double q = -2.5 * width + 5.0 * width * i / (count - 1);
            const double w = std::exp(-0.5 * q * q / (width * width));
            s.q.push_back(q);
            s.weights.push_back(w);
            total += w;
        }
        for (auto& w : s.weights) w /= total;
        return s;
    }
};

/// Numerical and physical settings shared by every propagation.
struct SimulationConfig {
    PhysicalScales scales = rubidium_1064();
    int n_max = default_n_max;
    QSampling q_sampling;
    int steps_per_segment = default_steps_per_segment;
    double norm_tolerance = 1e-6;
    double boundary_warn = 1e-6;
    double boundary_abort = 1e-3;
    // Depth the initial ground state is prepared at; unset means the estimation point's V_L.
    std::optional<double> prep_V_L;

    double kappa() const { return scales.accel_coupling(); }
    double dt(const ControlProtocol& p) const { return p.segment_duration() / steps_per_segment; }
};

struct PropagationDiagnostics {
    double max_boundary_occupation = 0.0;
    double max_norm_drift = 0.0;
    bool truncation_warning = false;
    std::optional<double> first_warning_time;
};

struct AugmentedState {
    MomentumBasis basis;
    StateVector psi;
    StateVector dpsi_da;  // 1/g units
    StateVector dpsi_dV;  // 1/E_R units
    double time = 0.0;
    PropagationDiagnostics diagnostics;

    static AugmentedState initial(const MomentumBasis& basis, StateVector psi) {
        AugmentedState s;
        s.basis = basis;
        s.dpsi_da = StateVector::Zero(psi.size());
        s.dpsi_dV = StateVector::Zero(psi.size());
        s.psi = std::move(psi);
        return s;
    }
};

/// H(t) psi with the boosted-frame kinetic term; amplitudes past the comb edge are dropped.
inline StateVector apply_hamiltonian(const StateVector& amps, const EstimationPoint& b, double phi, double t,
                                     const MomentumBasis& basis, double kappa) {
    const Eigen::Index d = basis.dim();
    if (amps.size() != d) throw DomainError("apply_hamiltonian: amplitudes do not match basis");
    const Complex up = -0.25 * b.V_L * std::polar(1.0, phi);
    const Complex down = std::conj(up);
    const double shift = kappa * b.a * t;
    StateVector out(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double pk = basis.momentum(i) - shift;
        Complex v = pk * pk * amps(i);
        if (i > 0) v += up * amps(i - 1);
        if (i + 1 < d) v += down * amps(i + 1);
        out(i) = v;
    }
    return out;
}

namespace detail {

/// Fixed-step RK4 over (psi, d_a psi, d_V psi) with preallocated stage buffers.
class AugmentedIntegrator {
public:
    AugmentedIntegrator(const MomentumBasis& basis, const EstimationPoint& b, double kappa, bool with_derivatives)
        : basis_(basis), b_(b), kappa_(kappa), derivs_(with_derivatives), d_(basis.dim()) {
        for (auto& v : {&k1_, &k2_, &k3_, &k4_, &tmp_}) v->resize(3 * d_);
        momenta_.resize(static_cast<std::size_t>(d_));
        for (Eigen::Index i = 0; i < d_; ++i) momenta_[static_cast<std::size_t>(i)] = basis.momentum(i);
    }

    /// y is the stacked (psi, d_a psi, d_V psi); phi_at(t) evaluates the control.
    template <class PhiFn>
    void step(Eigen::VectorXcd& y, double t, double dt, PhiFn&& phi_at) {
        const double t_mid = t + 0.5 * dt;
        const double phi0 = phi_at(t);
        const double phim = phi_at(t_mid);
        const double phi1 = phi_at(t + dt);
        rhs(y, t, phi0, k1_);
        tmp_ = y + (0.5 * dt) * k1_;
        rhs(tmp_, t_mid, phim, k2_);
        tmp_ = y + (0.5 * dt) * k2_;
        rhs(tmp_, t_mid, phim, k3_);
        tmp_ = y + dt * k3_;
        rhs(tmp_, t + dt, phi1, k4_);
        y += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    }

private:
    // out = -i [H y0, H y1 + dH_a y0, H y2 + dH_V y0]
    void rhs(const Eigen::VectorXcd& y, double t, double phi, Eigen::VectorXcd& out) const {
        const Complex eip = std::polar(1.0, phi);
        const Complex up = -0.25 * b_.V_L * eip;
        const Complex down = std::conj(up);
        const Complex up_v = -0.25 * eip;
        const Complex down_v = std::conj(up_v);
        const double shift = kappa_ * b_.a * t;
        const Complex minus_i(0.0, -1.0);
        const Complex* psi = y.data();
        Complex* o = out.data();
        const Eigen::Index d = d_;
        const int blocks = derivs_ ? 3 : 1;
        for (int blk = 0; blk < blocks; ++blk) {
            const Complex* x = psi + blk * d;
            Complex* ob = o + blk * d;
            for (Eigen::Index i = 0; i < d; ++i) {
                const double pk = momenta_[static_cast<std::size_t>(i)] - shift;
                Complex v = pk * pk * x[i];
                if (i > 0) v += up * x[i - 1];
                if (i + 1 < d) v += down * x[i + 1];
                if (blk == 1) {
                    v += (-2.0 * kappa_ * t * pk) * psi[i];
                } else if (blk == 2) {
                    if (i > 0) v += up_v * psi[i - 1];
                    if (i + 1 < d) v += down_v * psi[i + 1];
                }
                ob[i] = minus_i * v;
            }
        }
        if (!derivs_) out.segment(d, 2 * d).setZero();
    }

    MomentumBasis basis_;
    EstimationPoint b_;
    double kappa_;
    bool derivs_;
    Eigen::Index d_;
    std::vector<double> momenta_;
    Eigen::VectorXcd k1_, k2_, k3_, k4_, tmp_;
};

inline Eigen::VectorXcd stack(const AugmentedState& s) {
    const Eigen::Index d = s.psi.size();
    Eigen::VectorXcd y(3 * d);
    y << s.psi, s.dpsi_da, s.dpsi_dV;
    return y;
}

inline void unstack(const Eigen::VectorXcd& y, AugmentedState& s) {
    const Eigen::Index d = s.psi.size();
    s.psi = y.segment(0, d);
    s.dpsi_da = y.segment(d, d);
    s.dpsi_dV = y.segment(2 * d, d);
}

inline double boundary_occupation(const Eigen::VectorXcd& y, Eigen::Index d) {
    return std::norm(y(0)) + std::norm(y(1)) + std::norm(y(d - 2)) + std::norm(y(d - 1));
}

/// Norm and truncation bookkeeping after a step; throws on hard failures.
inline void monitor(const Eigen::VectorXcd& y, Eigen::Index d, double t, const SimulationConfig& cfg,
                    PropagationDiagnostics& diag) {
    const double norm = y.head(d).squaredNorm();
    const double drift = std::abs(norm - 1.0);
    diag.max_norm_drift = std::max(diag.max_norm_drift, drift);
    if (!(drift <= cfg.norm_tolerance))
        throw IntegrationError("norm drift " + std::to_string(drift) + " at t = " + std::to_string(t) +
                               " exceeds tolerance; reduce the time step (raise steps_per_segment)");
    const double edge = boundary_occupation(y, d);
    diag.max_boundary_occupation = std::max(diag.max_boundary_occupation, edge);
    if (edge > cfg.boundary_warn && !diag.truncation_warning) {
        diag.truncation_warning = true;
        diag.first_warning_time = t;
    }
    if (edge > cfg.boundary_abort)
        throw IntegrationError("occupation " + std::to_string(edge) + " of the outermost comb states at t = " +
                               std::to_string(t) + " exceeds the truncation limit; increase n_max");
}

}  // namespace detail

/// Observer invoked with the state at t = 0 and every `every_steps` steps thereafter.
struct PropagationObserver {
    int every_steps = 0;
    std::function<void(const AugmentedState&)> callback;
};

/// Advance `state` through one segment of amplitude `amplitude` (segment `index` of a protocol with carrier omega_s).
inline void advance_segment(AugmentedState& state, const EstimationPoint& b, double amplitude, std::size_t index,
                            double omega_s, const SimulationConfig& cfg, bool with_derivatives = true,
                            const PropagationObserver* observer = nullptr, long* step_counter = nullptr) {
    const double seg = std::numbers::pi / omega_s;
    const int steps = cfg.steps_per_segment;
    const double dt = seg / steps;
    const double t0 = static_cast<double>(index) * seg;
    const Eigen::Index d = state.basis.dim();
    detail::AugmentedIntegrator integ(state.basis, b, cfg.kappa(), with_derivatives);
    auto phi_at = [amplitude, omega_s](double t) { return amplitude * std::sin(omega_s * t); };
    Eigen::VectorXcd y = detail::stack(state);
    for (int j = 0; j < steps; ++j) {
        const double t = t0 + j * dt;
        integ.step(y, t, dt, phi_at);
        const double t_next = t0 + (j + 1) * dt;
        detail::monitor(y, d, t_next, cfg, state.diagnostics);
        if (observer && observer->every_steps > 0) {
            const long n = ++*step_counter;
            if (n % observer->every_steps == 0) {
                detail::unstack(y, state);
                state.time = t_next;
                observer->callback(state);
            }
        }
    }
    detail::unstack(y, state);
    state.time = t0 + seg;
}

/// Classic RK4 over the whole protocol starting from `initial` at t = 0.
inline AugmentedState propagate_augmented(const AugmentedState& initial, const EstimationPoint& b,
                                          const ControlProtocol& protocol, const SimulationConfig& cfg,
                                          const PropagationObserver* observer = nullptr) {
    if (initial.time != 0.0) throw DomainError("propagate_augmented: initial state must start at t = 0");
    if (initial.psi.size() != initial.basis.dim()) throw DomainError("propagate_augmented: state/basis mismatch");
    if (cfg.steps_per_segment < 1) throw DomainError("propagate_augmented: steps_per_segment must be >= 1");
    AugmentedState s = initial;
    long counter = 0;
    if (observer && observer->every_steps > 0) observer->callback(s);
    for (std::size_t k = 0; k < protocol.segments(); ++k)
        advance_segment(s, b, protocol.segment_amplitudes[k], k, protocol.omega_s, cfg, true, observer, &counter);
    return s;
}

/// State-only propagation (no derivative vectors), used to tabulate likelihoods.
inline StateVector propagate_state(const StateVector& psi0, const MomentumBasis& basis, const EstimationPoint& b,
                                   const ControlProtocol& protocol, const SimulationConfig& cfg) {
    AugmentedState s = AugmentedState::initial(basis, psi0);
    for (std::size_t k = 0; k < protocol.segments(); ++k)
        advance_segment(s, b, protocol.segment_amplitudes[k], k, protocol.omega_s, cfg, false);
    return s.psi;
}

/// Integrate from t_from to t_to in `steps` equal (possibly negative) steps.
/// Backward runs undo a forward run, which the unitarity checks rely on.
inline AugmentedState evolve_between(const AugmentedState& start, const EstimationPoint& b,
                                     const ControlProtocol& protocol, double t_to, int steps,
                                     const SimulationConfig& cfg) {
    AugmentedState s = start;
    const double dt = (t_to - start.time) / steps;
    detail::AugmentedIntegrator integ(s.basis, b, cfg.kappa(), true);
    auto phi_at = [&protocol](double t) { return detail::control_value_unchecked(protocol, t); };
    Eigen::VectorXcd y = detail::stack(s);
    for (int j = 0; j < steps; ++j) {
        const double t = start.time + j * dt;
        integ.step(y, t, dt, phi_at);
        detail::monitor(y, s.basis.dim(), t + dt, cfg, s.diagnostics);
    }
    detail::unstack(y, s);
    s.time = t_to;
    return s;
}

/// Ground state of the configured lattice at every sampled quasimomentum.
inline std::vector<AugmentedState> initial_ensemble(const EstimationPoint& b, const SimulationConfig& cfg) {
    std::vector<AugmentedState> out;
    for (double q : cfg.q_sampling.q) {
        const auto basis = build_basis(cfg.n_max, q);
        out.push_back(AugmentedState::initial(basis, ground_state(cfg.prep_V_L.value_or(b.V_L), basis)));
    }
    return out;
}

/// One propagation per sampled quasimomentum; q is conserved so they never mix.
inline std::vector<AugmentedState> propagate_ensemble(const EstimationPoint& b, const ControlProtocol& protocol,
                                                      const SimulationConfig& cfg) {
    auto states = initial_ensemble(b, cfg);
    for (auto& s : states) s = propagate_augmented(s, b, protocol, cfg);
    return states;
}

using MomentumDistribution = std::vector<double>;

inline MomentumDistribution momentum_distribution(const StateVector& psi) {
    MomentumDistribution p(static_cast<std::size_t>(psi.size()));
    for (Eigen::Index i = 0; i < psi.size(); ++i) p[static_cast<std::size_t>(i)] = std::norm(psi(i));
    return p;
}

inline MomentumDistribution momentum_distribution(const AugmentedState& state) {
    return momentum_distribution(state.psi);
}

/// Incoherent q-average binned by comb order.
inline MomentumDistribution momentum_distribution(const std::vector<AugmentedState>& ensemble,
                                                  const QSampling& qs) {
    MomentumDistribution out;
    for (std::size_t k = 0; k < ensemble.size(); ++k) {
        const auto p = momentum_distribution(ensemble[k]);
        if (out.empty()) out.assign(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) out[i] += qs.weights[k] * p[i];
    }
    return out;
}

/// q-averaged outcome distribution without the derivative vectors.
inline MomentumDistribution ensemble_distribution(const EstimationPoint& b, const ControlProtocol& protocol,
                                                  const SimulationConfig& cfg) {
    MomentumDistribution out;
    for (std::size_t k = 0; k < cfg.q_sampling.q.size(); ++k) {
        const auto basis = build_basis(cfg.n_max, cfg.q_sampling.q[k]);
        const StateVector g = ground_state(cfg.prep_V_L.value_or(b.V_L), basis);
        const StateVector psi = propagate_state(g, basis, b, protocol, cfg);
        if (out.empty()) out.assign(static_cast<std::size_t>(psi.size()), 0.0);
        for (Eigen::Index i = 0; i < psi.size(); ++i)
            out[static_cast<std::size_t>(i)] += cfg.q_sampling.weights[k] * std::norm(psi(i));
    }
    return out;
}

/// Band populations against the unshaken lattice of depth V_L.
inline std::vector<double> band_occupations(const AugmentedState& state, double V_L, std::size_t n_bands) {
    if (n_bands > static_cast<std::size_t>(state.basis.dim()))
        throw DomainError("band_occupations: n_bands exceeds basis dimension");
    return bloch_diagonalize(V_L, state.basis, 0.0).project(state.psi, n_bands);
}

struct PositionDensity {
    std::vector<double> x;        // 1/k_L units
    std::vector<double> density;  // normalized: sum(density) * dx = 1
};

/// Position density of the comb state broadened in momentum by a Gaussian of
/// width sigma_p (hbar k_L), sampled over `cells` lattice periods centred on 0.
/// The broadening becomes a common Gaussian envelope of width 1/sigma_p in x.
inline PositionDensity position_density(const AugmentedState& state, double sigma_p, int samples_per_cell = 128,
                                        int cells = 1) {
    if (!(sigma_p > 0)) throw DomainError("position_density: sigma_p must be positive");
    if (samples_per_cell < 1 || cells < 1) throw DomainError("position_density: bad sampling");
    const int n = samples_per_cell * cells;
    const double period = std::numbers::pi;
    const double width = period * cells;
    const double dx = width / n;
    PositionDensity out;
    out.x.resize(static_cast<std::size_t>(n));
    out.density.resize(static_cast<std::size_t>(n));
    double total = 0;
    for (int j = 0; j < n; ++j) {
        const double x = -0.5 * width + j * dx;
        Complex amp = 0;
        for (Eigen::Index i = 0; i < state.psi.size(); ++i)
            amp += state.psi(i) * std::polar(1.0, state.basis.momentum(i) * x);
        const double env = std::exp(-sigma_p * sigma_p * x * x);
        const double rho = std::norm(amp) * env;
        out.x[static_cast<std::size_t>(j)] = x;
        out.density[static_cast<std::size_t>(j)] = rho;
        total += rho * dx;
    }
    if (total > 0)
        for (auto& r : out.density) r /= total;
    return out;
}

/// arg <exp(2 i k_L x)> = arg sum_n conj(c_{n+1}) c_n; 0 when the magnitude underflows.
inline double mean_position_phase(const StateVector& psi) {
    Complex acc = 0;
    for (Eigen::Index i = 0; i + 1 < psi.size(); ++i) acc += std::conj(psi(i + 1)) * psi(i);
    if (std::abs(acc) < 1e-12) return 0.0;
    return std::arg(acc);
}

inline double mean_position_phase(const AugmentedState& state) { return mean_position_phase(state.psi); }

/// <p> in hbar k_L.
inline double mean_momentum(const AugmentedState& state) {
    double m = 0;
    for (Eigen::Index i = 0; i < state.psi.size(); ++i) m += state.basis.momentum(i) * std::norm(state.psi(i));
    return m;
}

}  // namespace olsense
