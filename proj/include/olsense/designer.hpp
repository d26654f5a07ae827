#pragma once
//
// Protocol designer: a double-deep-Q agent that picks one of 16 shaking
// amplitudes per segment and is rewarded, at the end of the protocol, by a
// function of the final-state Fisher information.
//
// The Q network is 12 -> 64 (ReLU) -> 16, trained with Adam on the squared
// Bellman residual of replayed transitions.
//

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "olsense/dynamics.hpp"
#include "olsense/errors.hpp"
#include "olsense/estimation.hpp"
#include "olsense/freespace.hpp"
#include "olsense/hashing.hpp"

namespace olsense {

inline constexpr int n_actions = 16;
inline constexpr int n_features = 12;

struct ActionSet {
    static std::array<double, n_actions> amplitudes() {
        std::array<double, n_actions> a{};
        for (int n = 0; n < n_actions; ++n) a[static_cast<std::size_t>(n)] = n * std::numbers::pi / 12.0;
        return a;
    }
    static double amplitude(int action) {
        if (action < 0 || action >= n_actions) throw DomainError("action index out of range");
        return action * std::numbers::pi / 12.0;
    }
};

using FeatureVector = Eigen::Matrix<double, n_features, 1>;

/// Layout: [P(0), P(2,+), P(2,-), P(4,+), P(4,-), P(6,+), P(6,-), P(8,+), P(8,-),
///          mean-position phase / pi, <p> t / T_total, t / T_total].
inline FeatureVector extract_features(const AugmentedState& s, double t, double T_total) {
    if (!(T_total > 0)) throw DomainError("extract_features: T_total must be positive");
    const auto& b = s.basis;
    FeatureVector f = FeatureVector::Zero();
    auto amp = [&](int n) -> Complex { return std::abs(n) <= b.n_max() ? s.psi(b.index_of(n)) : Complex(0.0); };
    f(0) = std::norm(amp(0));
    for (int k = 1; k <= 4; ++k) {
        f(2 * k - 1) = 0.5 * std::norm(amp(k) + amp(-k));
        f(2 * k) = 0.5 * std::norm(amp(k) - amp(-k));
    }
    f(9) = mean_position_phase(s) / std::numbers::pi;
    f(10) = mean_momentum(s) * t / T_total;
    f(11) = t / T_total;
    return f;
}

/// Single-hidden-layer Q network with Adam moments.
class QNetwork {
public:
    static constexpr int hidden_default = 64;

    explicit QNetwork(int hidden = hidden_default)
        : W1_(Eigen::MatrixXd::Zero(hidden, n_features)), b1_(Eigen::VectorXd::Zero(hidden)),
          W2_(Eigen::MatrixXd::Zero(n_actions, hidden)), b2_(Eigen::VectorXd::Zero(n_actions)) {}

    /// He-normal weights, zero biases.
    static QNetwork random(std::mt19937_64& rng, int hidden = hidden_default) {
        QNetwork net(hidden);
        std::normal_distribution<double> n1(0.0, std::sqrt(2.0 / n_features));
        std::normal_distribution<double> n2(0.0, std::sqrt(2.0 / hidden));
        for (Eigen::Index i = 0; i < net.W1_.size(); ++i) net.W1_(i) = n1(rng);
        for (Eigen::Index i = 0; i < net.W2_.size(); ++i) net.W2_(i) = n2(rng);
        return net;
    }

    int hidden() const { return static_cast<int>(W1_.rows()); }
    Eigen::Index parameter_count() const { return W1_.size() + b1_.size() + W2_.size() + b2_.size(); }

    Eigen::VectorXd forward(const FeatureVector& s) const {
        const Eigen::VectorXd h = (W1_ * s + b1_).cwiseMax(0.0);
        return W2_ * h + b2_;
    }

    /// Columns of X are feature vectors.
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X) const {
        const Eigen::MatrixXd h = ((W1_ * X).colwise() + b1_).cwiseMax(0.0);
        return (W2_ * h).colwise() + b2_;
    }

    /// Loss (1/B) sum_b (Q(x_b, a_b) - y_b)^2 and its gradient in flat parameter order.
    double loss_and_gradient(const Eigen::MatrixXd& X, const std::vector<int>& actions, const Eigen::VectorXd& y,
                             Eigen::VectorXd* grad) const {
        const auto B = X.cols();
        const Eigen::MatrixXd pre = (W1_ * X).colwise() + b1_;
        const Eigen::MatrixXd h = pre.cwiseMax(0.0);
        const Eigen::MatrixXd q = (W2_ * h).colwise() + b2_;
        Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(n_actions, B);
        double loss = 0;
        for (Eigen::Index b = 0; b < B; ++b) {
            const double r = q(actions[static_cast<std::size_t>(b)], b) - y(b);
            loss += r * r;
            dq(actions[static_cast<std::size_t>(b)], b) = 2.0 * r / static_cast<double>(B);
        }
        loss /= static_cast<double>(B);
        if (grad) {
            const Eigen::MatrixXd gW2 = dq * h.transpose();
            const Eigen::VectorXd gb2 = dq.rowwise().sum();
            const Eigen::MatrixXd dh = (W2_.transpose() * dq).array() * (pre.array() > 0.0).cast<double>();
            const Eigen::MatrixXd gW1 = dh * X.transpose();
            const Eigen::VectorXd gb1 = dh.rowwise().sum();
            grad->resize(parameter_count());
            *grad << Eigen::Map<const Eigen::VectorXd>(gW1.data(), gW1.size()), gb1,
                Eigen::Map<const Eigen::VectorXd>(gW2.data(), gW2.size()), gb2;
        }
        return loss;
    }

    Eigen::VectorXd parameters() const {
        Eigen::VectorXd p(parameter_count());
        p << Eigen::Map<const Eigen::VectorXd>(W1_.data(), W1_.size()), b1_,
            Eigen::Map<const Eigen::VectorXd>(W2_.data(), W2_.size()), b2_;
        return p;
    }

    void set_parameters(const Eigen::VectorXd& p) {
        if (p.size() != parameter_count()) throw DomainError("QNetwork: parameter vector has the wrong length");
        Eigen::Index o = 0;
        auto take = [&](auto& m) {
            Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = p.segment(o, m.size());
            o += m.size();
        };
        take(W1_);
        take(b1_);
        take(W2_);
        take(b2_);
    }

    bool finite() const { return parameters().allFinite(); }

    Eigen::MatrixXd& W1() { return W1_; }
    Eigen::VectorXd& b1() { return b1_; }
    Eigen::MatrixXd& W2() { return W2_; }
    Eigen::VectorXd& b2() { return b2_; }

private:
    Eigen::MatrixXd W1_;
    Eigen::VectorXd b1_;
    Eigen::MatrixXd W2_;
    Eigen::VectorXd b2_;
};

struct Adam {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Eigen::VectorXd m, v;
    long long t = 0;

    void step(QNetwork& net, const Eigen::VectorXd& grad) {
        if (m.size() != grad.size()) {
            m = Eigen::VectorXd::Zero(grad.size());
            v = Eigen::VectorXd::Zero(grad.size());
        }
        ++t;
        m = beta1 * m + (1 - beta1) * grad;
        v = beta2 * v + (1 - beta2) * grad.cwiseAbs2();
        const double c1 = 1 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1 - std::pow(beta2, static_cast<double>(t));
        const Eigen::VectorXd mh = m / c1;
        const Eigen::VectorXd vh = v / c2;
        net.set_parameters(net.parameters() - alpha * (mh.array() / (vh.array().sqrt() + eps)).matrix());
    }
};

/// target <- tau * q + (1 - tau) * target
inline void soft_update(QNetwork& target, const QNetwork& q, double tau) {
    target.set_parameters(tau * q.parameters() + (1.0 - tau) * target.parameters());
}

struct Transition {
    FeatureVector s;
    int action = 0;
    double reward = 0;
    FeatureVector next;
    bool terminal = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw DomainError("ReplayBuffer: capacity must be positive");
    }

    void push(const Transition& t) {
        if (data_.size() < capacity_) {
            data_.push_back(t);
        } else {
            data_[cursor_] = t;
        }
        cursor_ = (cursor_ + 1) % capacity_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Transition& operator[](std::size_t i) const { return data_[i]; }

    /// Uniform sample of `n` distinct transitions.
    std::vector<Transition> sample(std::size_t n, std::mt19937_64& rng) const {
        if (n > data_.size()) throw DomainError("ReplayBuffer: batch larger than buffer");
        std::vector<std::size_t> idx(data_.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        std::vector<Transition> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(data_[idx[i]]);
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t cursor_ = 0;
    std::vector<Transition> data_;
};

inline int argmax_lowest(const Eigen::VectorXd& q) {
    int best = 0;
    for (int i = 1; i < q.size(); ++i)
        if (q(i) > q(best)) best = i;
    return best;
}

inline int select_action(const Eigen::VectorXd& qvals, double epsilon, std::mt19937_64& rng) {
    if (!(epsilon >= 0 && epsilon <= 1)) throw DomainError("select_action: epsilon outside [0, 1]");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (epsilon > 0 && u(rng) < epsilon) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(qvals.size()) - 1);
        return pick(rng);
    }
    return argmax_lowest(qvals);
}

enum class DecayUnit { Step, Episode };

struct EpsilonSchedule {
    double decay_rate = 2.5e-5;
    double floor = 0.1;
    DecayUnit unit = DecayUnit::Step;
};

/// max(floor, exp(-rate * count)); count is environment steps or episodes per the schedule.
inline double epsilon_at(long long count, const EpsilonSchedule& s = {}) {
    if (count < 0) throw DomainError("epsilon_at: negative count");
    return std::max(s.floor, std::exp(-s.decay_rate * static_cast<double>(count)));
}

enum class BellmanMode { Double, Vanilla };

inline double bellman_target(double reward, const FeatureVector& next, const QNetwork& q_net,
                             const QNetwork& target_net, double gamma, bool terminal,
                             BellmanMode mode = BellmanMode::Double) {
    if (terminal) return reward;
    const Eigen::VectorXd qt = target_net.forward(next);
    if (mode == BellmanMode::Vanilla) return reward + gamma * qt.maxCoeff();
    return reward + gamma * qt(argmax_lowest(q_net.forward(next)));
}

struct Hyperparameters {
    double gamma = 0.99;
    double tau = 0.8;
    double alpha = 1e-3;
    int episodes = 5000;
    EpsilonSchedule epsilon;
    int hidden = QNetwork::hidden_default;
    int batch = 100;
    std::size_t replay_capacity = 20000;
    int train_steps_per_episode = 1;
    BellmanMode bellman = BellmanMode::Double;
    std::uint64_t seed = 1;
};

struct Agent {
    QNetwork q;
    QNetwork target;
    Adam adam;
    ReplayBuffer replay;
    std::mt19937_64 rng;
    long long steps = 0;

    explicit Agent(const Hyperparameters& h)
        : q(h.hidden), target(h.hidden), replay(h.replay_capacity), rng(h.seed) {
        adam.alpha = h.alpha;
        q = QNetwork::random(rng, h.hidden);
        target = q;
    }
};

/// One Adam step on the mean squared Bellman residual, then the soft target update.
inline double train_step(QNetwork& q_net, QNetwork& target_net, Adam& adam, const std::vector<Transition>& batch,
                         const Hyperparameters& h) {
    if (static_cast<int>(batch.size()) != h.batch) throw DomainError("train_step: batch size mismatch");
    const auto B = static_cast<Eigen::Index>(batch.size());
    Eigen::MatrixXd X(n_features, B);
    Eigen::VectorXd y(B);
    std::vector<int> actions(batch.size());
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& t = batch[static_cast<std::size_t>(b)];
        X.col(b) = t.s;
        actions[static_cast<std::size_t>(b)] = t.action;
        y(b) = bellman_target(t.reward, t.next, q_net, target_net, h.gamma, t.terminal, h.bellman);
    }
    Eigen::VectorXd grad;
    const double loss = q_net.loss_and_gradient(X, actions, y, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
        throw TrainingAbort("non-finite Bellman loss (" + std::to_string(loss) + ")");
    adam.step(q_net, grad);
    if (!q_net.finite()) throw TrainingAbort("non-finite network weights after Adam step");
    soft_update(target_net, q_net, h.tau);
    return loss;
}

enum class RewardKind { AccelDsp, AccelSpp, Lattice };

inline const char* reward_name(RewardKind k) {
    switch (k) {
        case RewardKind::AccelDsp: return "accel_dsp";
        case RewardKind::AccelSpp: return "accel_spp";
        case RewardKind::Lattice: return "lattice_dsp";
    }
    return "?";
}

inline RewardKind parse_reward_kind(const std::string& s) {
    if (s == "accel_dsp") return RewardKind::AccelDsp;
    if (s == "accel_spp") return RewardKind::AccelSpp;
    if (s == "lattice_dsp") return RewardKind::Lattice;
    throw DomainError("unknown reward kind '" + s + "'");
}

struct EnvConfig {
    SimulationConfig sim;
    EstimationPoint b;
    int n_seg = 32;
    RewardKind reward = RewardKind::AccelDsp;
    RewardSettings reward_settings;  // i_mzi_ref filled from the protocol length when <= 0
    double reject_fraction = 0.02;   // population allowed beyond reject_momentum
    double reject_momentum = 4.0;    // hbar k_L
    double reject_penalty = 0.0;     // rejected episodes score -reject_penalty * (population beyond threshold)

    double total_time() const { return n_seg * std::numbers::pi / default_omega_s; }
    RewardSettings resolved_rewards() const {
        RewardSettings r = reward_settings;
        if (!(r.i_mzi_ref > 0)) r.i_mzi_ref = reference_mzi(total_time(), sim.scales);
        return r;
    }
};

/// Population with |p| beyond the threshold, q-averaged.
inline double high_momentum_fraction(const std::vector<AugmentedState>& ensemble, const QSampling& qs, double p_max) {
    double out = 0;
    for (std::size_t k = 0; k < ensemble.size(); ++k)
        for (Eigen::Index i = 0; i < ensemble[k].psi.size(); ++i)
            if (std::abs(ensemble[k].basis.momentum(i)) > p_max + 1e-9) out += qs.weights[k] * std::norm(ensemble[k].psi(i));
    return out;
}

inline double terminal_reward(const Eigen::Matrix2d& I, const EnvConfig& env) {
    const auto rs = env.resolved_rewards();
    switch (env.reward) {
        case RewardKind::AccelDsp: return reward_accel(I, rs);
        case RewardKind::AccelSpp: return reward_accel_spp(I, rs);
        case RewardKind::Lattice: return reward_lattice(I, rs);
    }
    return 0.0;
}

struct ProtocolEvaluation {
    Eigen::Matrix2d cfim = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d qfim = Eigen::Matrix2d::Zero();
    double high_momentum = 0;
    bool rejected = false;
    double reward = 0;
};

/// Reward the environment assigns to a fixed protocol (agent bypassed).
inline ProtocolEvaluation evaluate_protocol(const ControlProtocol& p, const EnvConfig& env) {
    auto ens = propagate_ensemble(env.b, p, env.sim);
    ProtocolEvaluation e;
    const auto fm = fisher_matrices(ens, env.sim.q_sampling);
    e.cfim = fm.cfim;
    e.qfim = fm.qfim;
    e.high_momentum = high_momentum_fraction(ens, env.sim.q_sampling, env.reject_momentum);
    e.rejected = e.high_momentum > env.reject_fraction;
    e.reward = e.rejected ? -env.reject_penalty * e.high_momentum : terminal_reward(e.cfim, env);
    return e;
}

struct EpisodeResult {
    ControlProtocol protocol;
    std::vector<int> actions;
    std::vector<Transition> transitions;
    double reward = 0;
    bool rejected = false;
    bool discarded = false;  // propagation aborted
    std::string abort_reason;
    Eigen::Matrix2d cfim = Eigen::Matrix2d::Zero();
};

/// Action chooser: (features, step index) -> action.  Default is the agent's epsilon-greedy policy.
using Policy = std::function<int(const FeatureVector&, int)>;

inline EpisodeResult run_episode(const EnvConfig& env, const Policy& policy) {
    EpisodeResult r;
    r.protocol = ControlProtocol::zeros(static_cast<std::size_t>(env.n_seg));
    const double T = r.protocol.total_time();
    auto ens = initial_ensemble(env.b, env.sim);
    try {
        for (int k = 0; k < env.n_seg; ++k) {
            const double t = k * r.protocol.segment_duration();
            Transition tr;
            tr.s = extract_features(ens.front(), t, T);
            tr.action = policy(tr.s, k);
            const double amp = ActionSet::amplitude(tr.action);
            r.protocol.segment_amplitudes[static_cast<std::size_t>(k)] = amp;
            r.actions.push_back(tr.action);
            for (auto& s : ens)
                advance_segment(s, env.b, amp, static_cast<std::size_t>(k), r.protocol.omega_s, env.sim, true);
            tr.next = extract_features(ens.front(), (k + 1) * r.protocol.segment_duration(), T);
            tr.terminal = (k + 1 == env.n_seg);
            r.transitions.push_back(tr);
        }
    } catch (const IntegrationError& e) {
        r.discarded = true;
        r.abort_reason = e.what();
        r.transitions.clear();
        return r;
    }
    r.cfim = cfim(outcome_model(ens, env.sim.q_sampling));
    const double high = high_momentum_fraction(ens, env.sim.q_sampling, env.reject_momentum);
    r.rejected = high > env.reject_fraction;
    r.reward = r.rejected ? -env.reject_penalty * high : terminal_reward(r.cfim, env);
    r.transitions.back().reward = r.reward;
    return r;
}

/// Epsilon-greedy episode with the agent's network; advances the agent's step counter.
inline EpisodeResult run_episode(const EnvConfig& env, Agent& agent, const EpsilonSchedule& sched, int episode) {
    return run_episode(env, [&](const FeatureVector& s, int) {
        const long long count = sched.unit == DecayUnit::Step ? agent.steps : episode;
        ++agent.steps;
        return select_action(agent.q.forward(s), epsilon_at(count, sched), agent.rng);
    });
}

struct EpisodeRecord {
    int episode = 0;
    double reward = 0;
    double epsilon = 0;
    double loss = std::numeric_limits<double>::quiet_NaN();
    bool rejected = false;
    bool discarded = false;
};

struct TrainingResult {
    ControlProtocol best_protocol;
    double best_reward = -std::numeric_limits<double>::infinity();
    int best_episode = -1;
    bool best_admissible = false;  // false only if every episode broke the momentum rule
    Eigen::Matrix2d best_cfim = Eigen::Matrix2d::Zero();
    std::vector<EpisodeRecord> history;
    QNetwork q_net;
    QNetwork target_net;
};

using EpisodeCallback = std::function<void(const EpisodeRecord&)>;

inline TrainingResult train(const EnvConfig& env, const Hyperparameters& h, const EpisodeCallback& on_episode = {}) {
    if (!(h.gamma > 0 && h.gamma <= 1) || !(h.tau > 0 && h.tau <= 1) || !(h.alpha > 0) || h.episodes < 1 ||
        h.batch < 1 || h.hidden < 1)
        throw DomainError("train: invalid hyperparameters");
    Agent agent(h);
    TrainingResult out;
    for (int e = 0; e < h.episodes; ++e) {
        EpisodeRecord rec;
        rec.episode = e;
        rec.epsilon = epsilon_at(h.epsilon.unit == DecayUnit::Step ? agent.steps : e, h.epsilon);
        EpisodeResult ep = run_episode(env, agent, h.epsilon, e);
        rec.reward = ep.reward;
        rec.rejected = ep.rejected;
        rec.discarded = ep.discarded;
        if (!ep.discarded) {
            for (const auto& t : ep.transitions) agent.replay.push(t);
            // Admissible protocols always beat rejected ones.
            const bool admissible = !ep.rejected;
            if ((admissible && !out.best_admissible) ||
                (admissible == out.best_admissible && ep.reward > out.best_reward)) {
                out.best_reward = ep.reward;
                out.best_protocol = ep.protocol;
                out.best_episode = e;
                out.best_cfim = ep.cfim;
                out.best_admissible = admissible;
            }
        }
        for (int k = 0; k < h.train_steps_per_episode; ++k) {
            if (agent.replay.size() < static_cast<std::size_t>(h.batch)) break;
            try {
                const auto batch = agent.replay.sample(static_cast<std::size_t>(h.batch), agent.rng);
                rec.loss = train_step(agent.q, agent.target, agent.adam, batch, h);
            } catch (const TrainingAbort& a) {
                throw TrainingAbort("episode " + std::to_string(e) + ": " + a.what());
            }
        }
        out.history.push_back(rec);
        if (on_episode) on_episode(rec);
    }
    if (out.best_episode < 0) throw TrainingAbort("every episode was discarded");
    out.q_net = agent.q;
    out.target_net = agent.target;
    return out;
}

/// Flat weights with a shape header; decimals round-trip exactly.
inline nlohmann::ordered_json network_to_json(const QNetwork& net) {
    nlohmann::ordered_json j;
    j["inputs"] = n_features;
    j["hidden"] = net.hidden();
    j["outputs"] = n_actions;
    j["order"] = "W1 (column-major), b1, W2 (column-major), b2";
    auto w = nlohmann::ordered_json::array();
    const auto p = net.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) w.push_back(exact_decimal(p(i)));
    j["weights"] = w;
    return j;
}

inline QNetwork network_from_json(const nlohmann::json& j) {
    if (j.value("inputs", 0) != n_features || j.value("outputs", 0) != n_actions)
        throw ParseError("checkpoint", "shape does not match 12 -> hidden -> 16");
    QNetwork net(j.at("hidden").get<int>());
    const auto& w = j.at("weights");
    Eigen::VectorXd p(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i)
        if (!parse_decimal(w[i].get<std::string>(), p(static_cast<Eigen::Index>(i))))
            throw ParseError("weights[" + std::to_string(i) + "]", "not a decimal number");
    net.set_parameters(p);
    return net;
}

}  // namespace olsense
