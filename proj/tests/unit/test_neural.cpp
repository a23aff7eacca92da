#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ropi/neural.hpp"
#include "ropi/verification.hpp"

namespace ropi {
namespace {

NetworkShape small_shape(int heads = 2) {
    NetworkShape s;
    s.hidden = {8, 8};
    s.heads = heads;
    return s;
}

DqnConfig quick_config() {
    DqnConfig c;
    c.episodes = 6;
    c.hidden = {16, 16};
    c.batch_size = 16;
    c.learning_starts = 32;
    c.target_sync = 50;
    c.replay_capacity = 2000;
    c.epsilon_decay_steps = 500;
    c.seed = 3;
    return c;
}

std::vector<DqnTask> two_tasks(bool singleton) {
    UncertaintySet cp = sample_uncertainty_set(default_uncertainty_spec(Domain::cartpole, 1));
    UncertaintySet ac = sample_uncertainty_set(default_uncertainty_spec(Domain::acrobot, 2));
    if (singleton) {
        cp = cp.nominal_only();
        ac = ac.nominal_only();
    }
    return {{Domain::cartpole, cp}, {Domain::acrobot, ac}};
}

TEST(Encoding, TrigEncodingOfBothDomains) {
    const Eigen::VectorXd cp = encode_state(Domain::cartpole, {1.0, 2.0, 0.1, -0.5}, InputEncoding::trig);
    ASSERT_EQ(cp.size(), 6);
    EXPECT_EQ(cp[2], 0.1);
    EXPECT_EQ(cp[4], 0.0);
    EXPECT_EQ(cp[5], 0.0);
    const Eigen::VectorXd ac = encode_state(Domain::acrobot, {0.0, 1.5, std::numbers::pi / 2, -2.0}, InputEncoding::trig);
    EXPECT_EQ(ac[0], 1.0);
    EXPECT_EQ(ac[1], 0.0);
    EXPECT_NEAR(ac[2], 0.0, 1e-15);
    EXPECT_EQ(ac[3], 1.0);
    EXPECT_EQ(ac[4], 1.5);
    EXPECT_EQ(ac[5], -2.0);
    EXPECT_EQ(encode_state(Domain::acrobot, {1, 2, 3, 4}, InputEncoding::raw).size(), 4);
    EXPECT_EQ(parse_input_encoding(std::string(to_string(InputEncoding::raw))), InputEncoding::raw);
}

TEST(QNetwork, ZeroParametersGiveZeroOutput) {
    QNetwork net(small_shape());
    const Eigen::MatrixXd q = net.predict(Eigen::MatrixXd::Random(6, 5), 1);
    EXPECT_EQ(q.rows(), 2);
    EXPECT_EQ(q.cols(), 5);
    EXPECT_TRUE(q.isZero(0.0));
}

TEST(QNetwork, ForwardMatchesScalarOracle) {
    Rng rng(4);
    QNetwork net(small_shape(3));
    net.initialize(rng);
    for (int t = 0; t < 50; ++t) {
        const Eigen::VectorXd x = Eigen::VectorXd::Random(6);
        const int head = t % 3;
        const Eigen::MatrixXd q = net.predict(x, head);
        const std::vector<double> ref = verify::dense_forward(net, std::vector<double>(x.begin(), x.end()), head);
        for (int a = 0; a < 2; ++a) EXPECT_NEAR(q(a, 0), ref[static_cast<std::size_t>(a)], 1e-12);
    }
}

TEST(QNetwork, HeadsShareTheTrunkOnly) {
    const QNetwork net(small_shape(2));
    // Layers: trunk hidden, head 0 (hidden, output), head 1 (hidden, output).
    ASSERT_EQ(net.layers().size(), 5u);
    EXPECT_EQ(net.path(0), (std::vector<int>{0, 1, 2}));
    EXPECT_EQ(net.path(1), (std::vector<int>{0, 3, 4}));
    EXPECT_THROW(net.predict(Eigen::MatrixXd::Zero(6, 1), 2), ContractViolation);
}

TEST(QNetwork, BackwardMatchesFiniteDifferencesAndIsolatesHeads) {
    const auto r = verify::check_mlp_gradients({}, 200);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(QNetwork, ZeroOutputGradientGivesZeroParameterGradient) {
    Rng rng(5);
    QNetwork net(small_shape());
    net.initialize(rng);
    ForwardCache cache;
    net.forward(Eigen::MatrixXd::Random(6, 4), 0, cache);
    const NetworkGradients g = net.backward(cache, Eigen::MatrixXd::Zero(2, 4));
    for (const auto& l : g.layers) EXPECT_TRUE(l.isZero(0.0));
}

TEST(QNetwork, InvalidShapesAreRejected) {
    NetworkShape s = small_shape();
    s.hidden.clear();
    EXPECT_THROW(s.validate(), ConfigError);
    s = small_shape();
    s.heads = 0;
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    const Eigen::VectorXd before = p;
    AdamState s = AdamState::zeros(5);
    for (int i = 0; i < 10; ++i) adam_step(p, Eigen::VectorXd::Zero(5), s);
    EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMovesByTheStepSize) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
    AdamState s = AdamState::zeros(3);
    adam_step(p, Eigen::VectorXd::Ones(3), s);
    // Bias correction makes m_hat = 1, v_hat = 1, so the step is alpha / (1 + eps).
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(p[i], -1e-3 / (1.0 + 1e-8), 1e-15);
    EXPECT_EQ(s.step, 1);
}

TEST(Adam, NonFiniteGradientIsRejectedWithoutSideEffects) {
    Eigen::VectorXd p = Eigen::VectorXd::Ones(2);
    AdamState s = AdamState::zeros(2);
    Eigen::VectorXd g(2);
    g << 1.0, std::nan("");
    EXPECT_THROW(adam_step(p, g, s), EvaluationError);
    EXPECT_EQ(p, Eigen::VectorXd::Ones(2));
    EXPECT_EQ(s.step, 0);
}

TEST(Adam, OptimizerOnlyTouchesAddressedLayers) {
    Rng rng(6);
    QNetwork net(small_shape());
    net.initialize(rng);
    const QNetwork before = net;
    NetworkOptimizer opt(net, {});
    ForwardCache cache;
    net.forward(Eigen::MatrixXd::Random(6, 3), 1, cache);
    opt.step(net, net.backward(cache, Eigen::MatrixXd::Ones(2, 3)));
    EXPECT_EQ(net.layers()[1], before.layers()[1]);
    EXPECT_EQ(net.layers()[2], before.layers()[2]);
    EXPECT_NE(net.layers()[0], before.layers()[0]);
    EXPECT_NE(net.layers()[4], before.layers()[4]);
}

ReplayEntry entry_with_reward(double r) {
    ReplayEntry e;
    e.reward = r;
    e.candidates = {{EnvState{}, true}};
    return e;
}

TEST(ReplayBuffer, EvictsOldestFirst) {
    ReplayBuffer buf(3);
    for (int i = 0; i < 5; ++i) buf.push(entry_with_reward(i));
    ASSERT_EQ(buf.size(), 3u);
    EXPECT_EQ(buf[0].reward, 2.0);
    EXPECT_EQ(buf[1].reward, 3.0);
    EXPECT_EQ(buf[2].reward, 4.0);
    EXPECT_THROW(buf[3], ContractViolation);
}

TEST(ReplayBuffer, SamplesAreSeededAndInRange) {
    ReplayBuffer buf(10);
    for (int i = 0; i < 10; ++i) buf.push(entry_with_reward(i));
    Rng a(1), b(1);
    const auto sa = buf.sample(50, a);
    const auto sb = buf.sample(50, b);
    ASSERT_EQ(sa.size(), 50u);
    for (std::size_t i = 0; i < sa.size(); ++i) {
        EXPECT_EQ(sa[i], sb[i]);
        EXPECT_GE(sa[i]->reward, 0.0);
        EXPECT_LE(sa[i]->reward, 9.0);
    }
    EXPECT_THROW(ReplayBuffer(0), ConfigError);
}

TEST(RobustDqnTarget, HandEnumeratedSpotValues) {
    const auto r = verify::check_spot_values({});
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(RobustDqnTarget, AllTerminalCandidatesGiveTheReward) {
    Rng rng(7);
    QNetwork net(small_shape());
    net.initialize(rng);
    ReplayEntry e;
    e.domain = Domain::cartpole;
    e.reward = 1.0;
    for (int i = 0; i < 3; ++i) e.candidates.push_back({EnvState{0.1 * i, 0.0, 0.0, 0.0}, true});
    const std::vector<const ReplayEntry*> batch{&e};
    EXPECT_EQ(robust_dqn_target(batch, net, 0, 0.99, true)[0], 1.0);
    EXPECT_EQ(robust_dqn_target(batch, net, 0, 0.99, false)[0], 1.0);
}

TEST(RobustDqnTarget, SingletonEqualsNominalAndRobustNeverExceedsIt) {
    Rng rng(8);
    QNetwork net(small_shape());
    net.initialize(rng);
    std::vector<ReplayEntry> entries(40);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        ReplayEntry& e = entries[i];
        e.domain = i % 2 ? Domain::acrobot : Domain::cartpole;
        e.reward = uniform(rng, -1, 1);
        const std::size_t n = i < 20 ? 1 : 4;
        for (std::size_t k = 0; k < n; ++k)
            e.candidates.push_back({EnvState{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1),
                                             uniform(rng, -1, 1)},
                                    uniform(rng, 0, 1) < 0.2});
        e.nominal_index = n - 1;
    }
    std::vector<const ReplayEntry*> batch;
    for (const auto& e : entries) batch.push_back(&e);
    const Eigen::VectorXd robust = robust_dqn_target(batch, net, 1, 0.95, true);
    const Eigen::VectorXd nominal = robust_dqn_target(batch, net, 1, 0.95, false);
    for (Eigen::Index i = 0; i < 20; ++i) EXPECT_EQ(robust[i], nominal[i]);
    for (Eigen::Index i = 20; i < 40; ++i) EXPECT_LE(robust[i], nominal[i]);
}

TEST(DqnConfig, EpsilonScheduleIsLinearThenFlat) {
    DqnConfig c;
    c.epsilon_start = 1.0;
    c.epsilon_end = 0.1;
    c.epsilon_decay_steps = 100;
    EXPECT_EQ(c.epsilon_at(0), 1.0);
    EXPECT_NEAR(c.epsilon_at(50), 0.55, 1e-15);
    EXPECT_DOUBLE_EQ(c.epsilon_at(100), 0.1);
    EXPECT_DOUBLE_EQ(c.epsilon_at(10000), 0.1);
}

TEST(DqnConfig, InvalidValuesAreRejected) {
    DqnConfig c;
    c.batch_size = c.replay_capacity + 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.discount = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_dqn_mode("triple_head"), ConfigError);
}

TEST(TrainMultitaskDqn, ZeroEpisodesReturnsTheInitialNetwork) {
    DqnConfig c = quick_config();
    c.episodes = 0;
    const DqnResult r = train_multitask_dqn(c, two_tasks(false), DqnMode::option_heads);
    EXPECT_TRUE(r.log.empty());
    QNetwork expected(r.network.shape());
    Rng rng(c.seed);
    expected.initialize(rng);
    EXPECT_TRUE(r.network == expected);
}

TEST(TrainMultitaskDqn, SingleHeadModeUsesOneHead) {
    DqnConfig c = quick_config();
    c.episodes = 2;
    const DqnResult r = train_multitask_dqn(c, two_tasks(false), DqnMode::single_head);
    EXPECT_EQ(r.network.num_heads(), 1);
    EXPECT_EQ(r.head_for(1), 0);
    ASSERT_EQ(r.log.size(), 2u);
    EXPECT_EQ(r.log[0].task, 0);
    EXPECT_EQ(r.log[1].task, 1);
}

TEST(TrainMultitaskDqn, SingletonRobustTrainingEqualsOptionHeads) {
    const DqnConfig c = quick_config();
    const DqnResult robust = train_multitask_dqn(c, two_tasks(true), DqnMode::robust_option_heads);
    const DqnResult plain = train_multitask_dqn(c, two_tasks(false), DqnMode::option_heads);
    EXPECT_EQ(robust.log, plain.log);
    EXPECT_TRUE(robust.network == plain.network);
}

TEST(TrainMultitaskDqn, SameSeedGivesIdenticalRuns) {
    const DqnConfig c = quick_config();
    const DqnResult a = train_multitask_dqn(c, two_tasks(false), DqnMode::robust_option_heads);
    const DqnResult b = train_multitask_dqn(c, two_tasks(false), DqnMode::robust_option_heads);
    EXPECT_EQ(a.log, b.log);
    EXPECT_TRUE(a.network == b.network);
}

TEST(TrainMultitaskDqn, PersistentLossAboveBoundIsADivergence) {
    DqnConfig c = quick_config();
    c.divergence_loss = 1e-300;
    c.divergence_patience = 1;
    EXPECT_THROW(train_multitask_dqn(c, two_tasks(false), DqnMode::option_heads), TrainingDivergence);
}

TEST(TrainMultitaskDqn, GreedyActionBreaksTiesTowardsZero) {
    const QNetwork zero(small_shape());
    EXPECT_EQ(greedy_action(zero, 0, Domain::cartpole, {0.0, 0.0, 0.0, 0.0}), 0);
}

TEST(TrainMultitaskDqn, LogCsvHeader) {
    const auto path = (std::filesystem::temp_directory_path() / "ropi_dqn_log_test.csv").string();
    write_dqn_log({{0, 1, -500.0, 1.0, 0.0}}, {Domain::cartpole, Domain::acrobot}, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "episode,task,return,epsilon,mean_loss");
    std::filesystem::remove(path);
}

}  // namespace
}  // namespace ropi
