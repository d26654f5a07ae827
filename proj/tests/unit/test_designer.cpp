#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <numbers>

#include "olsense/designer.hpp"

using namespace olsense;

namespace {

EnvConfig small_env(RewardKind kind = RewardKind::AccelDsp, int n_seg = 8) {
    EnvConfig env;
    env.sim.n_max = 8;
    env.sim.steps_per_segment = 256;
    env.sim.norm_tolerance = 1e-3;
    env.b = {0.0, 10.0};
    env.n_seg = n_seg;
    env.reward = kind;
    return env;
}

Transition random_transition(std::mt19937_64& rng, bool terminal) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_int_distribution<int> a(0, n_actions - 1);
    Transition t;
    for (int i = 0; i < n_features; ++i) {
        t.s(i) = n(rng);
        t.next(i) = n(rng);
    }
    t.action = a(rng);
    t.reward = n(rng);
    t.terminal = terminal;
    return t;
}

}  // namespace

TEST(Actions, EvenlySpacedAmplitudes) {
    const auto a = ActionSet::amplitudes();
    EXPECT_EQ(a.front(), 0.0);
    EXPECT_NEAR(a.back(), 15 * std::numbers::pi / 12, 1e-15);
    for (int n = 0; n < n_actions; ++n) EXPECT_EQ(ActionSet::amplitude(n), a[static_cast<std::size_t>(n)]);
    EXPECT_THROW(ActionSet::amplitude(16), DomainError);
    EXPECT_THROW(ActionSet::amplitude(-1), DomainError);
}

TEST(Features, GroundStateLayout) {
    const auto basis = build_basis(8);
    const auto s = AugmentedState::initial(basis, ground_state(10.0, basis));
    const auto f = extract_features(s, 0.0, 8.0);
    double sum = 0;
    for (int i = 0; i < 9; ++i) {
        EXPECT_GE(f(i), 0.0);
        sum += f(i);
    }
    EXPECT_LE(sum, 1.0 + 1e-12);
    EXPECT_GT(sum, 0.999);
    // Ground state is even in p: no odd-parity population.
    for (int k = 1; k <= 4; ++k) EXPECT_NEAR(f(2 * k), 0.0, 1e-14);
    EXPECT_NEAR(f(10), 0.0, 1e-14);
    EXPECT_EQ(f(11), 0.0);
    EXPECT_EQ(extract_features(s, 4.0, 8.0)(11), 0.5);
    EXPECT_THROW(extract_features(s, 0.0, 0.0), DomainError);
}

TEST(QNetworkTest, ZeroNetworkOutputsZero) {
    QNetwork net;
    EXPECT_EQ(net.forward(FeatureVector::Ones()).norm(), 0.0);
    EXPECT_EQ(net.parameter_count(), 64 * 12 + 64 + 16 * 64 + 16);
}

TEST(QNetworkTest, FinalLayerIsLinear) {
    std::mt19937_64 rng(1);
    auto net = QNetwork::random(rng);
    const FeatureVector x = FeatureVector::Random();
    const auto q = net.forward(x);
    auto p = net.parameters();
    const Eigen::Index off = 64 * 12 + 64;
    p.segment(off, p.size() - off) *= 3.0;
    net.set_parameters(p);
    EXPECT_NEAR((net.forward(x) - 3.0 * q).norm(), 0.0, 1e-12);
}

TEST(QNetworkTest, BatchMatchesSingle) {
    std::mt19937_64 rng(2);
    const auto net = QNetwork::random(rng, 16);
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(n_features, 5);
    const auto Q = net.forward_batch(X);
    for (int b = 0; b < 5; ++b) EXPECT_NEAR((Q.col(b) - net.forward(X.col(b))).norm(), 0.0, 1e-13);
}

TEST(QNetworkTest, GradientMatchesFiniteDifference) {
    std::mt19937_64 rng(3);
    auto net = QNetwork::random(rng, 8);
    auto p = net.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += 0.1;  // keep ReLUs away from their kink
    net.set_parameters(p);
    const Eigen::MatrixXd X = Eigen::MatrixXd::Random(n_features, 6);
    const std::vector<int> actions{0, 3, 3, 15, 7, 9};
    const Eigen::VectorXd y = Eigen::VectorXd::Random(6);
    Eigen::VectorXd g;
    net.loss_and_gradient(X, actions, y, &g);
    const double h = 1e-6;
    double worst = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        auto pp = p, pm = p;
        pp(i) += h;
        pm(i) -= h;
        QNetwork a = net, b = net;
        a.set_parameters(pp);
        b.set_parameters(pm);
        const double fd = (a.loss_and_gradient(X, actions, y, nullptr) - b.loss_and_gradient(X, actions, y, nullptr)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g(i)) / std::max(1.0, std::abs(g(i))));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(QNetworkTest, HeInitialisationScale) {
    std::mt19937_64 rng(4);
    const auto net = QNetwork::random(rng, 256);
    const auto p = net.parameters();
    const Eigen::VectorXd w1 = p.head(256 * 12);
    const double var = w1.squaredNorm() / static_cast<double>(w1.size());
    EXPECT_NEAR(var, 2.0 / 12.0, 0.02);
    EXPECT_EQ(p.segment(256 * 12, 256).norm(), 0.0);
}

TEST(Policy, GreedyTiesGoToLowestIndex) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(16);
    q(5) = q(9) = 2.0;
    EXPECT_EQ(argmax_lowest(q), 5);
    std::mt19937_64 rng(0);
    EXPECT_EQ(select_action(q, 0.0, rng), 5);
    EXPECT_THROW(select_action(q, 1.5, rng), DomainError);
}

TEST(Policy, FullExplorationIsUniform) {
    std::mt19937_64 rng(7);
    const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(16, 0, 1);
    std::vector<double> counts(16, 0.0);
    const int N = 64000;
    for (int i = 0; i < N; ++i) counts[static_cast<std::size_t>(select_action(q, 1.0, rng))] += 1;
    double chi2 = 0;
    for (double c : counts) chi2 += std::pow(c - N / 16.0, 2) / (N / 16.0);
    EXPECT_GT(boost::math::cdf(boost::math::complement(boost::math::chi_squared(15), chi2)), 0.01);
}

TEST(Policy, EpsilonSchedule) {
    EXPECT_EQ(epsilon_at(0), 1.0);
    EXPECT_NEAR(epsilon_at(20000), std::exp(-0.5), 1e-15);
    EXPECT_EQ(epsilon_at(1000000), 0.1);
    EXPECT_THROW(epsilon_at(-1), DomainError);
    for (long long n = 0; n < 200000; n += 997) EXPECT_GE(epsilon_at(n), epsilon_at(n + 997));
}

TEST(Bellman, TargetsByMode) {
    std::mt19937_64 rng(5);
    const auto q = QNetwork::random(rng, 8);
    const auto t = QNetwork::random(rng, 8);
    const FeatureVector next = FeatureVector::Random();
    EXPECT_EQ(bellman_target(1.5, next, q, t, 0.9, true), 1.5);
    EXPECT_DOUBLE_EQ(bellman_target(1.5, next, q, t, 0.9, false, BellmanMode::Vanilla),
                     1.5 + 0.9 * t.forward(next).maxCoeff());
    EXPECT_DOUBLE_EQ(bellman_target(1.5, next, q, t, 0.9, false, BellmanMode::Double),
                     1.5 + 0.9 * t.forward(next)(argmax_lowest(q.forward(next))));
}

TEST(TrainStep, ZeroLossAtFixedPoint) {
    // Zero network, terminal transitions with zero reward: nothing to learn.
    Hyperparameters h;
    h.batch = 4;
    QNetwork q(8), t(8);
    Adam adam;
    std::mt19937_64 rng(1);
    std::vector<Transition> batch;
    for (int i = 0; i < 4; ++i) {
        auto tr = random_transition(rng, true);
        tr.reward = 0;
        batch.push_back(tr);
    }
    EXPECT_EQ(train_step(q, t, adam, batch, h), 0.0);
    EXPECT_EQ(q.parameters().norm(), 0.0);
}

TEST(TrainStep, FullTauCopiesAndLossFalls) {
    Hyperparameters h;
    h.batch = 32;
    h.tau = 1.0;
    std::mt19937_64 rng(2);
    auto q = QNetwork::random(rng, 16);
    auto t = q;
    Adam adam;
    std::vector<Transition> batch;
    for (int i = 0; i < 32; ++i) batch.push_back(random_transition(rng, true));
    const double first = train_step(q, t, adam, batch, h);
    EXPECT_EQ((t.parameters() - q.parameters()).norm(), 0.0);
    double last = first;
    for (int k = 0; k < 300; ++k) last = train_step(q, t, adam, batch, h);
    EXPECT_LT(last, 0.5 * first);
    EXPECT_THROW(train_step(q, t, adam, std::vector<Transition>(batch.begin(), batch.begin() + 5), h), DomainError);
}

TEST(TrainStep, SoftUpdateContracts) {
    std::mt19937_64 rng(3);
    const auto q = QNetwork::random(rng, 8);
    auto t = QNetwork::random(rng, 8);
    const double d0 = (q.parameters() - t.parameters()).norm();
    soft_update(t, q, 0.8);
    EXPECT_NEAR((q.parameters() - t.parameters()).norm(), 0.2 * d0, 1e-12 * d0);
}

TEST(TrainStep, NonFiniteLossAborts) {
    Hyperparameters h;
    h.batch = 2;
    std::mt19937_64 rng(4);
    auto q = QNetwork::random(rng, 8);
    auto t = q;
    Adam adam;
    std::vector<Transition> batch{random_transition(rng, true), random_transition(rng, true)};
    batch[1].reward = std::numeric_limits<double>::infinity();
    EXPECT_THROW(train_step(q, t, adam, batch, h), TrainingAbort);
}

TEST(Replay, FifoEviction) {
    ReplayBuffer buf(3);
    std::mt19937_64 rng(0);
    for (int i = 0; i < 5; ++i) {
        Transition t;
        t.action = i;
        buf.push(t);
    }
    EXPECT_EQ(buf.size(), 3u);
    std::vector<int> held{buf[0].action, buf[1].action, buf[2].action};
    std::sort(held.begin(), held.end());
    EXPECT_EQ(held, (std::vector<int>{2, 3, 4}));
    const auto s = buf.sample(3, rng);
    std::vector<int> got;
    for (const auto& t : s) got.push_back(t.action);
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, held);
    EXPECT_THROW(buf.sample(4, rng), DomainError);
    EXPECT_THROW(ReplayBuffer(0), DomainError);
}

TEST(Environment, EpisodeContract) {
    const auto env = small_env();
    const auto r = run_episode(env, [](const FeatureVector&, int k) { return k % 4; });
    ASSERT_FALSE(r.discarded);
    ASSERT_EQ(r.transitions.size(), 8u);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(r.actions[k], static_cast<int>(k % 4));
        EXPECT_EQ(r.protocol.segment_amplitudes[k], ActionSet::amplitude(r.actions[k]));
        EXPECT_EQ(r.transitions[k].terminal, k == 7);
        if (k < 7) {
            EXPECT_EQ(r.transitions[k].reward, 0.0);
            EXPECT_EQ(r.transitions[k].next, r.transitions[k + 1].s);
        }
    }
    EXPECT_EQ(r.transitions.back().reward, r.reward);
    // The episode reward equals a direct evaluation of the same protocol.
    const auto e = evaluate_protocol(r.protocol, env);
    EXPECT_EQ(e.rejected, r.rejected);
    EXPECT_NEAR(e.reward, r.reward, 1e-12 * (1 + std::abs(r.reward)));
    EXPECT_NEAR((e.cfim - r.cfim).norm(), 0.0, 1e-9 * (1 + r.cfim.norm()));
}

TEST(Environment, ZeroProtocolRewards) {
    // A static lattice barely couples to a: far below the free-space reference.
    auto env = small_env();
    const auto zero = [](const FeatureVector&, int) { return 0; };
    const auto r = run_episode(env, zero);
    EXPECT_FALSE(r.rejected);
    EXPECT_GE(r.reward, 0.0);
    EXPECT_LT(marginal_information(r.cfim, param_a) / env.resolved_rewards().i_mzi_ref, 0.05);
    env.reward = RewardKind::Lattice;
    EXPECT_GE(run_episode(env, zero).reward, 0.0);
}

TEST(Environment, RejectionRule) {
    auto env = small_env();
    env.reject_fraction = 0.0;
    env.reject_momentum = 0.5;
    env.reject_penalty = 2.0;
    const auto r = run_episode(env, [](const FeatureVector&, int) { return 15; });
    ASSERT_TRUE(r.rejected);
    const auto e = evaluate_protocol(r.protocol, env);
    EXPECT_NEAR(r.reward, -2.0 * e.high_momentum, 1e-12);
    EXPECT_LT(r.reward, 0.0);
}

TEST(Environment, RewardsDependOnKind) {
    auto env = small_env();
    const auto pol = [](const FeatureVector&, int k) { return (3 * k + 1) % 5; };
    const auto dsp = run_episode(env, pol);
    env.reward = RewardKind::AccelSpp;
    const auto spp = run_episode(env, pol);
    EXPECT_EQ(dsp.cfim, spp.cfim);
    const auto rs = env.resolved_rewards();
    EXPECT_DOUBLE_EQ(spp.reward, reward_accel_spp(spp.cfim, rs));
    EXPECT_DOUBLE_EQ(dsp.reward, reward_accel(dsp.cfim, rs));
    EXPECT_GE(spp.reward, dsp.reward);
    EXPECT_DOUBLE_EQ(rs.i_mzi_ref, reference_mzi(env.total_time(), env.sim.scales));
}

TEST(Training, SingleEpisode) {
    auto env = small_env();
    Hyperparameters h;
    h.episodes = 1;
    const auto r = train(env, h);
    EXPECT_EQ(r.history.size(), 1u);
    EXPECT_EQ(r.best_episode, 0);
    EXPECT_TRUE(std::isnan(r.history[0].loss));  // replay still smaller than a batch
    EXPECT_EQ(r.history[0].epsilon, 1.0);
}

TEST(Training, DeterministicForSeed) {
    auto env = small_env(RewardKind::AccelDsp, 4);
    Hyperparameters h;
    h.episodes = 40;
    h.batch = 16;
    h.seed = 11;
    const auto a = train(env, h), b = train(env, h);
    EXPECT_EQ(a.best_protocol.segment_amplitudes, b.best_protocol.segment_amplitudes);
    EXPECT_EQ(a.q_net.parameters(), b.q_net.parameters());
    h.seed = 12;
    EXPECT_NE(train(env, h).q_net.parameters(), a.q_net.parameters());
}

TEST(Training, ShortRunBeatsZeroProtocol) {
    auto env = small_env(RewardKind::AccelSpp, 16);
    env.reject_penalty = 1.0;
    Hyperparameters h;
    h.episodes = 300;
    h.train_steps_per_episode = 4;
    const auto r = train(env, h);
    EXPECT_TRUE(r.best_admissible);
    EXPECT_GT(r.best_reward, 0.0);
    for (const auto& rec : r.history) EXPECT_FALSE(rec.discarded);
    EXPECT_LT(r.history.back().epsilon, r.history.front().epsilon);
}

TEST(Checkpoint, RoundTrip) {
    std::mt19937_64 rng(9);
    const auto net = QNetwork::random(rng, 12);
    const auto j = network_to_json(net);
    const auto back = network_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(back.parameters(), net.parameters());
    auto bad = nlohmann::json::parse(j.dump());
    bad["outputs"] = 4;
    EXPECT_THROW(network_from_json(bad), ParseError);
}
