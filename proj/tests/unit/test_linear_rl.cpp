#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ropi/asap.hpp"
#include "ropi/linear_rl.hpp"
#include "ropi/verification.hpp"

namespace ropi {
namespace {

EnvState state_of(std::size_t x) { return {static_cast<double>(x), 0.0, 0.0, 0.0}; }

/// Deterministic chain 0 -> 1 -> ... -> n-1 -> n-1 with reward 1 in the last state.
TabularRobustMDP chain(std::size_t n, double discount) {
    TabularRobustMDP mdp;
    mdp.n_states = n;
    mdp.n_actions = 1;
    mdp.discount = discount;
    mdp.reward = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 1);
    mdp.reward(static_cast<Eigen::Index>(n - 1), 0) = 1.0;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t x = 0; x < n; ++x) p(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(std::min(x + 1, n - 1))) = 1.0;
    mdp.kernels = {{p}};
    return mdp;
}

CriticSample three_model_sample() {
    CriticSample s;
    s.features = one_hot(0, 4);
    s.reward = 1.0;
    for (std::size_t k = 1; k <= 3; ++k) s.candidates.push_back({NextOutcome{1.0, one_hot(k, 4), false}});
    return s;
}

Eigen::VectorXd hand_w() {
    Eigen::VectorXd w(4);
    w << 0.5, 1.0, -2.0, 0.3;
    return w;
}

TEST(RobustTdError, HandEnumeratedExample) {
    EXPECT_NEAR(robust_td_error(three_model_sample(), CriticParams{hand_w()}, 0.9), -1.3, 1e-12);
}

TEST(RobustTdError, ZeroWeightsGiveTheReward) {
    EXPECT_EQ(robust_td_error(three_model_sample(), CriticParams{Eigen::VectorXd::Zero(4)}, 0.9), 1.0);
}

TEST(RobustTdError, SingletonEqualsStandardTdError) {
    CriticSample s = three_model_sample();
    s.candidates.resize(1);
    const CriticParams c{hand_w()};
    EXPECT_EQ(robust_td_error(s, c, 0.9), td_error(s, c, 0.9));
    EXPECT_EQ(td_error(s, c, 0.9), 1.0 + 0.9 * 1.0 - 0.5);
}

TEST(RobustTdError, IsPessimisticAndMatchesEnumeration) {
    const auto r = verify::check_td_error_oracle({}, 500);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(RobustTdError, TerminalCandidatesContributeZero) {
    CriticSample s = three_model_sample();
    s.candidates[0][0].terminal = true;
    s.candidates[1][0].terminal = true;
    s.candidates[2][0].terminal = true;
    EXPECT_NEAR(robust_td_error(s, CriticParams{hand_w()}, 0.9), 1.0 - 0.5, 1e-15);
}

TEST(RobustTdError, NonFiniteWeightsAreRejected) {
    Eigen::VectorXd w = hand_w();
    w[2] = std::nan("");
    EXPECT_THROW(robust_td_error(three_model_sample(), CriticParams{w}, 0.9), EvaluationError);
}

TEST(RobustTdError, TransitionOverloadMaterialisesTheSet) {
    const UncertaintySet set = sample_uncertainty_set(default_uncertainty_spec(Domain::cartpole, 2));
    const TilingSpec tiling = default_tiling(Domain::cartpole);
    Transition t;
    t.state = {0.1, 0.2, 0.05, -0.3};
    t.action = 1;
    const StepOutcome o = set.nominal().step(t.state, 1);
    t.reward = o.reward;
    t.next_state = o.next_state;
    const CriticParams c{Eigen::VectorXd::LinSpaced(15, -1.0, 1.0)};
    EXPECT_EQ(robust_td_error(t, c, set, tiling, 0.99), robust_td_error(materialize(t, set, tiling), c, 0.99));
}

CriticBatch chain_batch(const TabularRobustMDP& mdp) {
    const TabularProblem problem(mdp, 0, 1);
    CriticBatch batch;
    for (std::size_t x = 0; x < mdp.n_states; ++x) batch.push_back(problem.materialize(state_of(x), 0));
    return batch;
}

TEST(RpviUpdate, SingletonStepMatchesDenseProjectedEvaluation) {
    const TabularRobustMDP mdp = chain(4, 0.9);
    const CriticBatch batch = chain_batch(mdp);
    const CriticParams w0{Eigen::VectorXd::LinSpaced(4, 0.5, 2.0)};
    const CriticParams w1 = rpvi_update(batch, w0, 0.9);

    const Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd d = Eigen::MatrixXd::Identity(4, 4) / 4.0;
    const Eigen::VectorXd r = mdp.reward.col(0);
    const Eigen::VectorXd target = r + 0.9 * mdp.kernels[0][0] * phi * w0.w;
    const Eigen::VectorXd oracle = (phi.transpose() * d * phi).inverse() * phi.transpose() * d * target;
    EXPECT_LT((w1.w - oracle).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(RpviUpdate, ZeroDiscountFitsRewardsByLeastSquares) {
    CriticBatch batch;
    const double rewards[] = {1.0, 3.0, -2.0, 5.0, 0.5};
    const std::size_t states[] = {0, 0, 1, 1, 2};
    for (int i = 0; i < 5; ++i) {
        CriticSample s;
        s.features = one_hot(states[i], 3);
        s.reward = rewards[i];
        s.candidates = {{NextOutcome{1.0, one_hot(0, 3), false}}};
        batch.push_back(s);
    }
    const CriticParams w = rpvi_update(batch, CriticParams{Eigen::VectorXd::Ones(3)}, 0.0);
    EXPECT_NEAR(w.w[0], 2.0, 1e-12);
    EXPECT_NEAR(w.w[1], 1.5, 1e-12);
    EXPECT_NEAR(w.w[2], 0.5, 1e-12);
}

TEST(RpviUpdate, StepSizesShrinkTowardsTheFixedPoint) {
    Rng rng(4);
    const TabularRobustMDP mdp = random_tabular_mdp(5, 1, 3, 0.9, rng);
    const CriticBatch batch = chain_batch(mdp);
    const RpviFixedPoint fp = rpvi_fixed_point(batch, CriticParams{Eigen::VectorXd::Zero(5)}, 0.9, 1e-10, 1000);
    EXPECT_TRUE(fp.converged);
    for (std::size_t i = 5; i < fp.step_sizes.size(); ++i) EXPECT_LE(fp.step_sizes[i], fp.step_sizes[i - 1] * (1 + 1e-9));
    EXPECT_LT(fp.step_sizes.back(), 1e-10);
}

TEST(RpviUpdate, FixedPointMatchesExhaustiveRobustEvaluation) {
    const auto r = verify::check_rpvi_oracle({}, 100);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(RpviUpdate, RankDeficientFeaturesUseTheRidge) {
    const UncertaintySet set = sample_uncertainty_set(default_uncertainty_spec(Domain::cartpole, 1));
    DynamicsProblem problem(set, default_tiling(Domain::cartpole));
    Rng rng(3);
    const TrajectoryBatch traj = generate_trajectories(AsapPolicy::flat(), problem, 3, 0.99, rng);
    const CriticBatch batch = materialize(traj, set, default_tiling(Domain::cartpole));
    const RpviFixedPoint fp = rpvi_fixed_point(batch, CriticParams{Eigen::VectorXd::Zero(15)}, 0.5);
    EXPECT_TRUE(fp.ridge_applied);
    EXPECT_TRUE(fp.critic.finite());
}

TEST(RpviUpdate, MismatchedCriticIsRejected) {
    const CriticBatch batch = chain_batch(chain(3, 0.5));
    EXPECT_THROW(rpvi_update(batch, CriticParams{Eigen::VectorXd::Zero(4)}, 0.5), ContractViolation);
    EXPECT_THROW(rpvi_update({}, CriticParams{Eigen::VectorXd::Zero(3)}, 0.5), ContractViolation);
}

TEST(RobustPgStep, ZeroStepOrZeroSignalLeavesThetaUnchanged) {
    Rng rng(1);
    AsapPolicy p(1);
    p.initialize(rng, 1.0);
    std::vector<ActorSample> batch{{{0.1, 0.0, 0.0, 0.0}, 0, 1.0, 2.0, 0.0}, {{0.0, 0.3, 0.0, 0.0}, 1, 1.0, -1.0, 0.0}};
    EXPECT_EQ(robust_pg_step(p, batch, 0.0, false).theta, p.parameters());
    for (auto& s : batch) s.signal = 0.0;
    EXPECT_EQ(robust_pg_step(p, batch, 0.5, false).theta, p.parameters());
}

TEST(RobustPgStep, SingleSampleMovesAlongTheScore) {
    const AsapPolicy flat = AsapPolicy::flat();
    const std::vector<ActorSample> batch{{{0.0, 0.0, 0.0, 0.0}, 0, 1.0, 1.0, 0.0}};
    const PolicyGradientStep step = robust_pg_step(flat, batch, 0.1, false);
    // Equal logits: psi(action 0) = (0.5, -0.5).
    EXPECT_NEAR(step.theta[0], 0.05, 1e-15);
    EXPECT_NEAR(step.theta[1], -0.05, 1e-15);
}

TEST(RobustPgStep, BaselineIsSubtracted) {
    const AsapPolicy flat = AsapPolicy::flat();
    const std::vector<ActorSample> batch{{{0.0, 0.0, 0.0, 0.0}, 0, 1.0, 3.0, 3.0}};
    EXPECT_TRUE(robust_pg_step(flat, batch, 1.0, true).gradient.isZero(0.0));
    EXPECT_FALSE(robust_pg_step(flat, batch, 1.0, false).gradient.isZero(0.0));
}

TEST(RobustPgStep, DirectionMatchesFiniteDifferenceOfSurrogate) {
    Rng rng(6);
    AsapPolicy p(2);
    p.initialize(rng, 1.0);
    std::vector<ActorSample> batch;
    for (int i = 0; i < 20; ++i)
        batch.push_back({{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)},
                         i % 2, uniform(rng, 0.5, 2.0), uniform(rng, -3, 3), 0.0});
    const Eigen::VectorXd analytic = robust_pg_step(p, batch, 1.0, false).gradient;
    AsapPolicy probe = p;
    auto surrogate = [&](const Eigen::VectorXd& theta) {
        probe.set_parameters(theta);
        double total = 0.0;
        double weight = 0.0;
        for (const auto& s : batch) {
            total += s.weight * s.signal * std::log(probe.action_probability(s.state, s.action));
            weight += s.weight;
        }
        return total / weight;
    };
    const Eigen::VectorXd numeric = verify::central_difference(surrogate, p.parameters(), 1e-6);
    EXPECT_LT(verify::relative_error(analytic, numeric), 1e-5);
}

TEST(RobustPgStep, NonFiniteGradientIsRejected) {
    const AsapPolicy flat = AsapPolicy::flat();
    const std::vector<ActorSample> batch{{{0.0, 0.0, 0.0, 0.0}, 0, 1.0, std::numeric_limits<double>::infinity(), 0.0}};
    EXPECT_THROW(robust_pg_step(flat, batch, 1.0, false), EvaluationError);
}

TEST(CompatibleActorBatch, BaselineLeavesTheUpdateDirectionUnchanged) {
    const UncertaintySet set = sample_uncertainty_set(default_uncertainty_spec(Domain::cartpole, 3));
    DynamicsProblem problem(set, default_tiling(Domain::cartpole));
    Rng rng(7);
    AsapPolicy p(1);
    p.initialize(rng, 1.0);
    const TrajectoryBatch traj = generate_trajectories(p, problem, 4, 0.99, rng);
    const CriticParams c{Eigen::VectorXd::LinSpaced(15, -2.0, 3.0)};
    const auto plain = compatible_actor_batch(p, problem, traj, c, 0.99, true, false);
    const auto based = compatible_actor_batch(p, problem, traj, c, 0.99, true, true);
    const Eigen::VectorXd g0 = robust_pg_step(p, plain, 1.0, false).gradient;
    const Eigen::VectorXd g1 = robust_pg_step(p, based, 1.0, true).gradient;
    EXPECT_LT((g0 - g1).norm(), 1e-10 * std::max(1.0, g0.norm()));
}

TEST(EstimateAdvantage, ConstantRewardsWithZeroDiscountAndCritic) {
    CriticBatch batch;
    for (int i = 0; i < 5; ++i) {
        CriticSample s = three_model_sample();
        s.reward = 2.5;
        batch.push_back(s);
    }
    for (double a : estimate_advantage(batch, CriticParams{Eigen::VectorXd::Zero(4)}, 0.0)) EXPECT_EQ(a, 2.5);
}

TEST(EstimateAdvantage, PerfectCriticOnDeterministicChainGivesZero) {
    const TabularRobustMDP mdp = chain(2, 0.9);
    const CriticBatch batch = chain_batch(mdp);
    const std::vector<int> pi{0, 0};
    const CriticParams exact{verify::exact_policy_evaluation(mdp, 0, pi)};
    for (double a : estimate_advantage(batch, exact, 0.9)) EXPECT_LT(std::abs(a), 1e-8);
}

TEST(EstimateAdvantage, SingletonEqualsStandardTdError) {
    CriticSample s = three_model_sample();
    s.candidates.resize(1);
    const CriticParams c{hand_w()};
    EXPECT_EQ(estimate_advantage({s}, c, 0.9)[0], td_error(s, c, 0.9));
}

TEST(Ropi, ZeroIterationsReturnsTheInitialPolicy) {
    const TabularProblem problem = verify::bandit_problem();
    AsapPolicy p = AsapPolicy::flat();
    const Eigen::VectorXd before = p.parameters();
    RopiConfig cfg;
    cfg.max_iterations = 0;
    const RopiResult r = ropi(p, problem, cfg);
    EXPECT_EQ(p.parameters(), before);
    EXPECT_TRUE(r.history.empty());
}

TEST(Ropi, BanditConvergesToTheBetterArm) {
    const TabularProblem problem = verify::bandit_problem();
    AsapPolicy p = AsapPolicy::flat();
    RopiConfig cfg;
    cfg.discount = 0.9;
    cfg.schedule = StepSchedule::inverse_t;
    cfg.actor_step = 100.0;
    cfg.episodes_per_iteration = 4;
    cfg.max_iterations = 1000;
    const RopiResult r = ropi(p, problem, cfg);
    EXPECT_TRUE(r.converged);
    EXPECT_LT(r.history.back().grad_norm, cfg.tolerance);
    EXPECT_GT(p.action_probability({0.0, 0.0, 0.0, 0.0}, 0), 0.99);
}

TEST(Ropi, GradientNormShrinksUnderDiminishingSteps) {
    const TabularProblem problem = verify::bandit_problem();
    AsapPolicy p = AsapPolicy::flat();
    RopiConfig cfg;
    cfg.discount = 0.9;
    cfg.schedule = StepSchedule::inverse_t;
    cfg.actor_step = 2.0;
    cfg.max_iterations = 50;
    cfg.tolerance = 1e-12;
    const RopiResult r = ropi(p, problem, cfg);
    ASSERT_EQ(r.history.size(), 50u);
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LT(r.history[i].grad_norm, r.history[i - 1].grad_norm);
}

TEST(Ropi, DivergentCriticAborts) {
    const TabularProblem problem = verify::bandit_problem(0.99);
    AsapPolicy p = AsapPolicy::flat();
    RopiConfig cfg;
    cfg.discount = 0.99;
    cfg.critic_mode = CriticMode::online_td;
    cfg.critic_step = 1000.0;
    cfg.max_iterations = 10;
    EXPECT_THROW(ropi(p, problem, cfg), TrainingDivergence);
}

TEST(Ropi, InvalidConfigIsRejected) {
    RopiConfig cfg;
    cfg.discount = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.tolerance = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(OnlineRobustAc, SingletonSetReproducesVanillaActorCritic) {
    const UncertaintySet full = sample_uncertainty_set(default_uncertainty_spec(Domain::cartpole, 9));
    const TilingSpec tiling = default_tiling(Domain::cartpole);
    DynamicsProblem robust_problem(full.nominal_only(), tiling);
    DynamicsProblem plain_problem(full, tiling);
    Rng init(1);
    AsapPolicy a(1);
    a.initialize(init);
    AsapPolicy b = a;
    OnlineAcConfig cfg;
    cfg.episodes = 30;
    cfg.seed = 5;
    cfg.robust = true;
    const OnlineAcResult ra = online_robust_ac(a, robust_problem, cfg);
    cfg.robust = false;
    const OnlineAcResult rb = online_robust_ac(b, plain_problem, cfg);
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_EQ(ra.critic.w, rb.critic.w);
    ASSERT_EQ(ra.log.size(), rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) {
        EXPECT_EQ(ra.log[i].episode_return, rb.log[i].episode_return);
        EXPECT_EQ(ra.log[i].mean_td_error, rb.log[i].mean_td_error);
    }
}

TEST(OnlineRobustAc, SameSeedGivesIdenticalLogs) {
    const UncertaintySet set = sample_uncertainty_set(default_uncertainty_spec(Domain::cartpole, 9));
    DynamicsProblem problem(set, default_tiling(Domain::cartpole));
    OnlineAcConfig cfg;
    cfg.episodes = 20;
    cfg.seed = 8;
    AsapPolicy a(1);
    AsapPolicy b(1);
    const auto la = online_robust_ac(a, problem, cfg).log;
    const auto lb = online_robust_ac(b, problem, cfg).log;
    ASSERT_EQ(la.size(), 20u);
    for (std::size_t i = 0; i < la.size(); ++i) {
        EXPECT_EQ(la[i].episode_return, lb[i].episode_return);
        EXPECT_EQ(la[i].steps, lb[i].steps);
    }
}

TEST(OnlineRobustAc, DivergenceIsReported) {
    const UncertaintySet set = sample_uncertainty_set(default_uncertainty_spec(Domain::cartpole, 9));
    DynamicsProblem problem(set, default_tiling(Domain::cartpole));
    OnlineAcConfig cfg;
    cfg.episodes = 200;
    cfg.critic_step = 40.0;
    cfg.divergence_bound = 1e3;
    AsapPolicy p(1);
    EXPECT_THROW(online_robust_ac(p, problem, cfg), TrainingDivergence);
}

TEST(Diagnostics, CsvHeadersAreDocumented) {
    const auto dir = std::filesystem::temp_directory_path();
    const auto ropi_path = (dir / "ropi_diag_test.csv").string();
    write_ropi_diagnostics({{1, 0.5, 0.25, 1.0, 0.01, 3}}, ropi_path);
    std::ifstream in(ropi_path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "iteration,j_estimate,grad_norm,w_norm,wall_time");
    std::filesystem::remove(ropi_path);

    const auto ep_path = (dir / "ropi_episode_test.csv").string();
    write_episode_log({{0, 12.0, 12, -0.1}}, ep_path);
    std::ifstream in2(ep_path);
    std::getline(in2, header);
    EXPECT_EQ(header, "episode,return,steps,mean_td_error");
    std::filesystem::remove(ep_path);
}

}  // namespace
}  // namespace ropi
