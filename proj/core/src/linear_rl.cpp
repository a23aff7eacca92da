#include "ropi/linear_rl.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

namespace ropi {

namespace {

double expected_value(const std::vector<NextOutcome>& outcomes, const Eigen::VectorXd& w) {
    double e = 0.0;
    for (const NextOutcome& o : outcomes) e += o.probability * (o.terminal ? 0.0 : o.features.dot(w));
    return e;
}

void warn_ridge_once() {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
        std::cerr << "warning: Phi^T D Phi is rank deficient; solving with a ridge term "
                     "(further occurrences are not reported)\n";
}

std::vector<NextOutcome> deterministic_outcome(const Candidate& c, const TilingSpec& tiling) {
    return {NextOutcome{1.0, tile_features(c.next_state, tiling), c.terminal}};
}

void check_critic(const CriticParams& critic, const char* where) {
    if (!critic.finite()) throw EvaluationError(std::string(where) + ": critic weights are not finite");
}

/// Factorised Phi^T D Phi for a fixed batch.
struct NormalMatrix {
    Eigen::LLT<Eigen::MatrixXd> llt;
    bool ridge_applied = false;
    double total_weight = 0.0;
};

NormalMatrix build_normal_matrix(const CriticBatch& batch, std::size_t d, double ridge) {
    NormalMatrix nm;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (const CriticSample& s : batch) nm.total_weight += s.weight;
    if (!(nm.total_weight > 0.0)) throw ContractViolation("rpvi_update: batch has no positive weight");
    for (const CriticSample& s : batch) {
        const double wi = s.weight / nm.total_weight;
        for (std::size_t i : s.features.active)
            for (std::size_t j : s.features.active)
                A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += wi;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < A.rows()) {
        A.diagonal().array() += ridge;
        nm.ridge_applied = true;
        warn_ridge_once();
    }
    nm.llt.compute(A);
    if (nm.llt.info() != Eigen::Success) throw EvaluationError("rpvi_update: normal matrix is not positive definite");
    return nm;
}

CriticParams solve_step(const CriticBatch& batch, const NormalMatrix& nm, const CriticParams& previous,
                        double discount, bool robust) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(previous.w.size());
    for (const CriticSample& s : batch) {
        const double next = robust ? robust_next_value(s, previous.w) : nominal_next_value(s, previous.w);
        s.features.add_to(rhs, s.weight / nm.total_weight * (s.reward + discount * next));
    }
    return CriticParams{nm.llt.solve(rhs)};
}

std::size_t batch_dimension(const CriticBatch& batch, const CriticParams& critic) {
    if (batch.empty()) throw ContractViolation("rpvi_update: empty batch");
    const std::size_t d = batch.front().features.dimension;
    if (critic.w.size() != static_cast<Eigen::Index>(d))
        throw ContractViolation("rpvi_update: critic size does not match the features");
    return d;
}

}  // namespace

CriticSample materialize(const Transition& t, const UncertaintySet& set, const TilingSpec& tiling, double weight) {
    CriticSample s;
    s.features = tile_features(t.state, tiling);
    s.reward = t.reward;
    s.weight = weight;
    s.nominal_index = set.nominal_index();
    for (const Candidate& c : candidate_next_states(t.state, t.action, set))
        s.candidates.push_back(deterministic_outcome(c, tiling));
    return s;
}

CriticBatch materialize(const TrajectoryBatch& batch, const UncertaintySet& set, const TilingSpec& tiling) {
    CriticBatch out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        out.push_back(materialize(batch.transitions[i], set, tiling, batch.weight(i)));
    return out;
}

double robust_next_value(const CriticSample& s, const Eigen::VectorXd& w) {
    if (s.candidates.empty()) throw ContractViolation("robust_next_value: sample has no candidates");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& outcomes : s.candidates) {
        const double e = expected_value(outcomes, w);
        if (e < best) best = e;
    }
    return best;
}

double nominal_next_value(const CriticSample& s, const Eigen::VectorXd& w) {
    if (s.nominal_index >= s.candidates.size()) throw ContractViolation("nominal_next_value: bad nominal index");
    return expected_value(s.candidates[s.nominal_index], w);
}

double robust_td_error(const CriticSample& s, const CriticParams& critic, double discount) {
    check_critic(critic, "robust_td_error");
    return s.reward + discount * robust_next_value(s, critic.w) - s.features.dot(critic.w);
}

double robust_td_error(const Transition& t, const CriticParams& critic, const UncertaintySet& set,
                       const TilingSpec& tiling, double discount) {
    return robust_td_error(materialize(t, set, tiling), critic, discount);
}

double td_error(const CriticSample& s, const CriticParams& critic, double discount) {
    check_critic(critic, "td_error");
    return s.reward + discount * nominal_next_value(s, critic.w) - s.features.dot(critic.w);
}

std::vector<double> estimate_advantage(const CriticBatch& batch, const CriticParams& critic, double discount) {
    std::vector<double> out;
    out.reserve(batch.size());
    for (const CriticSample& s : batch) out.push_back(robust_td_error(s, critic, discount));
    return out;
}

CriticParams rpvi_update(const CriticBatch& batch, const CriticParams& previous, double discount,
                         const RpviOptions& options) {
    check_critic(previous, "rpvi_update");
    const std::size_t d = batch_dimension(batch, previous);
    const NormalMatrix nm = build_normal_matrix(batch, d, options.ridge);
    return solve_step(batch, nm, previous, discount, options.robust);
}

RpviFixedPoint rpvi_fixed_point(const CriticBatch& batch, const CriticParams& initial, double discount,
                                double tolerance, int max_iterations, const RpviOptions& options) {
    check_critic(initial, "rpvi_fixed_point");
    const std::size_t d = batch_dimension(batch, initial);
    const NormalMatrix nm = build_normal_matrix(batch, d, options.ridge);

    RpviFixedPoint result;
    result.critic = initial;
    result.ridge_applied = nm.ridge_applied;
    for (int k = 0; k < max_iterations; ++k) {
        CriticParams next = solve_step(batch, nm, result.critic, discount, options.robust);
        if (!next.finite()) throw EvaluationError("rpvi_fixed_point: critic became non-finite");
        const double step = (next.w - result.critic.w).lpNorm<Eigen::Infinity>();
        result.critic = std::move(next);
        result.step_sizes.push_back(step);
        result.iterations = k + 1;
        if (step < tolerance) {
            result.converged = true;
            break;
        }
    }
    return result;
}

PolicyGradientStep robust_pg_step(const DifferentiablePolicy& policy, std::span<const ActorSample> batch,
                                  double step, bool use_baseline) {
    PolicyGradientStep out;
    out.gradient = Eigen::VectorXd::Zero(policy.parameters().size());
    double total_weight = 0.0;
    for (const ActorSample& s : batch) {
        total_weight += s.weight;
        const double signal = use_baseline ? s.signal - s.baseline : s.signal;
        if (s.weight == 0.0 || signal == 0.0) continue;
        out.gradient += (s.weight * signal) * policy.log_gradient(s.state, s.action);
    }
    if (total_weight > 0.0) out.gradient /= total_weight;
    if (!out.gradient.allFinite()) throw EvaluationError("robust_pg_step: gradient is not finite; step rejected");
    out.theta = policy.parameters() + step * out.gradient;
    return out;
}

// Problems -----------------------------------------------------------------

DynamicsProblem::DynamicsProblem(UncertaintySet set, TilingSpec tiling, int max_steps)
    : set_(std::move(set)), tiling_(std::move(tiling)), max_steps_(max_steps > 0 ? max_steps : set_.nominal().max_steps()) {
    tiling_.validate();
}

RobustProblem::Experience DynamicsProblem::experience(const EnvState& x, int action, Rng&) const {
    Experience e;
    e.sample.features = tile_features(x, tiling_);
    e.sample.nominal_index = set_.nominal_index();
    const std::vector<Candidate> cands = candidate_next_states(x, action, set_);
    for (const Candidate& c : cands) e.sample.candidates.push_back(deterministic_outcome(c, tiling_));
    const Candidate& nominal = cands[set_.nominal_index()];
    e.nominal = StepOutcome{nominal.next_state, nominal.reward, nominal.terminal};
    e.sample.reward = nominal.reward;
    return e;
}

CriticSample DynamicsProblem::materialize(const EnvState& x, int action) const {
    Rng unused(0);
    return experience(x, action, unused).sample;
}

TabularProblem::TabularProblem(TabularRobustMDP mdp, std::size_t nominal_kernel, int horizon, std::size_t start_state)
    : mdp_(std::move(mdp)), nominal_(nominal_kernel), horizon_(horizon), start_(start_state) {
    mdp_.validate();
    if (nominal_ >= mdp_.kernels.size()) throw ConfigError("index out of range", "nominal_kernel");
    if (horizon_ < 1) throw ConfigError("must be at least 1", "horizon");
    if (start_ >= mdp_.n_states) throw ConfigError("index out of range", "start_state");
}

namespace {

std::size_t tabular_state(const EnvState& x, std::size_t n_states) {
    const auto s = static_cast<std::size_t>(x[0]);
    if (x[0] < 0.0 || s >= n_states || static_cast<double>(s) != x[0])
        throw ContractViolation("tabular problem: state does not encode a valid index");
    return s;
}

}  // namespace

FeatureVector TabularProblem::features(const EnvState& x) const {
    return one_hot(tabular_state(x, mdp_.n_states), mdp_.n_states);
}

CriticSample TabularProblem::materialize(const EnvState& x, int action) const {
    const std::size_t s = tabular_state(x, mdp_.n_states);
    if (action < 0 || static_cast<std::size_t>(action) >= mdp_.n_actions)
        throw ContractViolation("tabular problem: action out of range");
    CriticSample out;
    out.features = one_hot(s, mdp_.n_states);
    out.reward = mdp_.reward(static_cast<Eigen::Index>(s), action);
    out.nominal_index = nominal_;
    for (const auto& kernel : mdp_.kernels) {
        std::vector<NextOutcome> outcomes;
        for (std::size_t x2 = 0; x2 < mdp_.n_states; ++x2) {
            const double p = kernel[static_cast<std::size_t>(action)](static_cast<Eigen::Index>(s),
                                                                      static_cast<Eigen::Index>(x2));
            if (p > 0.0) outcomes.push_back({p, one_hot(x2, mdp_.n_states), false});
        }
        out.candidates.push_back(std::move(outcomes));
    }
    return out;
}

RobustProblem::Experience TabularProblem::experience(const EnvState& x, int action, Rng& rng) const {
    Experience e;
    e.sample = materialize(x, action);
    const std::size_t s = tabular_state(x, mdp_.n_states);
    const Eigen::VectorXd row =
        mdp_.kernels[nominal_][static_cast<std::size_t>(action)].row(static_cast<Eigen::Index>(s)).transpose();
    const int next = sample_categorical(row, rng);
    e.nominal = StepOutcome{{static_cast<double>(next), 0.0, 0.0, 0.0}, e.sample.reward, false};
    return e;
}

// Learners -----------------------------------------------------------------

namespace {

struct SampledBatch {
    TrajectoryBatch trajectories;
    CriticBatch critic;
};

SampledBatch sample_batch(const DifferentiablePolicy& policy, const RobustProblem& problem, int episodes,
                          double discount, Rng& rng) {
    SampledBatch out;
    for (int e = 0; e < episodes; ++e) {
        out.trajectories.episode_starts.push_back(out.trajectories.size());
        EnvState x = problem.reset(rng);
        double ret = 0.0;
        double disc_ret = 0.0;
        double discount_t = 1.0;
        for (int t = 0; t < problem.max_steps(); ++t) {
            const int a = policy.sample(x, rng);
            RobustProblem::Experience exp = problem.experience(x, a, rng);
            out.trajectories.transitions.push_back(
                {x, a, exp.nominal.reward, exp.nominal.next_state, exp.nominal.terminal});
            out.critic.push_back(std::move(exp.sample));
            ret += exp.nominal.reward;
            disc_ret += discount_t * exp.nominal.reward;
            discount_t *= discount;
            if (exp.nominal.terminal) break;
            x = exp.nominal.next_state;
        }
        out.trajectories.episode_returns.push_back(ret);
        out.trajectories.episode_discounted_returns.push_back(disc_ret);
    }
    return out;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

TrajectoryBatch generate_trajectories(const DifferentiablePolicy& policy, const RobustProblem& problem, int episodes,
                                      double discount, Rng& rng) {
    return sample_batch(policy, problem, episodes, discount, rng).trajectories;
}

void RopiConfig::validate() const {
    if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("must lie in [0, 1)", "ropi.discount");
    if (!(tolerance > 0.0)) throw ConfigError("must be positive", "ropi.tolerance");
    if (!(actor_step >= 0.0)) throw ConfigError("must be non-negative", "ropi.actor_step");
    if (episodes_per_iteration < 1) throw ConfigError("must be at least 1", "ropi.episodes_per_iteration");
    if (max_iterations < 0) throw ConfigError("must be non-negative", "ropi.max_iterations");
    if (critic_max_iterations < 1) throw ConfigError("must be at least 1", "ropi.critic_max_iterations");
}

std::vector<ActorSample> compatible_actor_batch(const DifferentiablePolicy& policy, const RobustProblem& problem,
                                                const TrajectoryBatch& batch, const CriticParams& critic,
                                                double discount, bool robust, bool baseline) {
    const auto n_params = policy.parameters().size();
    const int n_actions = policy.num_actions();

    std::vector<ActorSample> samples;
    std::vector<Eigen::VectorXd> scores;
    samples.reserve(batch.size() * static_cast<std::size_t>(n_actions));

    Eigen::MatrixXd fisher = Eigen::MatrixXd::Zero(n_params, n_params);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_params);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const EnvState& x = batch.transitions[i].state;
        const double wx = batch.weight(i);
        const Eigen::VectorXd pi = policy.action_probabilities(x);
        const double b = baseline ? problem.features(x).dot(critic.w) : 0.0;
        for (int a = 0; a < n_actions; ++a) {
            if (!(pi[a] > 0.0)) continue;
            const CriticSample s = problem.materialize(x, a);
            const double q = s.reward + discount * (robust ? robust_next_value(s, critic.w)
                                                           : nominal_next_value(s, critic.w));
            Eigen::VectorXd psi = policy.log_gradient(x, a);
            const double weight = wx * pi[a];
            fisher.noalias() += weight * psi * psi.transpose();
            rhs.noalias() += weight * q * psi;
            samples.push_back({x, a, weight, q, b});
            scores.push_back(std::move(psi));
        }
    }
    // Compatible approximation f_w(x, a) = v^T psi_{x,a}: minimum-norm least squares.
    const Eigen::VectorXd v = fisher.completeOrthogonalDecomposition().solve(rhs);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].signal = v.dot(scores[i]);
    return samples;
}

RopiResult ropi(DifferentiablePolicy& policy, const RobustProblem& problem, const RopiConfig& config,
                const std::function<void(const RopiDiagnostics&)>& on_iteration) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    Rng rng(config.seed);

    RopiResult result;
    result.critic.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.feature_dimension()));
    for (int it = 1; it <= config.max_iterations; ++it) {
        SampledBatch sampled = sample_batch(policy, problem, config.episodes_per_iteration, config.discount, rng);

        RopiDiagnostics diag;
        diag.iteration = it;
        diag.j_estimate = mean(sampled.trajectories.episode_discounted_returns);

        // Policy evaluation.
        if (config.critic_mode == CriticMode::batch_rpvi) {
            RpviOptions options;
            options.robust = config.robust;
            const RpviFixedPoint fp = rpvi_fixed_point(sampled.critic, result.critic, config.discount,
                                                       config.critic_tolerance, config.critic_max_iterations, options);
            result.critic = fp.critic;
            diag.critic_iterations = fp.iterations;
        } else {
            for (int sweep = 0; sweep < config.critic_sweeps; ++sweep) {
                for (const CriticSample& s : sampled.critic) {
                    const double delta = config.robust ? robust_td_error(s, result.critic, config.discount)
                                                       : td_error(s, result.critic, config.discount);
                    s.features.add_to(result.critic.w, config.critic_step * delta);
                }
            }
            diag.critic_iterations = config.critic_sweeps;
        }
        diag.w_norm = result.critic.w.norm();
        if (!result.critic.finite() || result.critic.w.lpNorm<Eigen::Infinity>() > config.divergence_bound)
            throw TrainingDivergence("ropi: critic diverged at iteration " + std::to_string(it) +
                                     " (||w|| = " + std::to_string(diag.w_norm) + ")");

        // Policy improvement.
        const std::vector<ActorSample> actor = compatible_actor_batch(
            policy, problem, sampled.trajectories, result.critic, config.discount, config.robust, config.baseline);
        const PolicyGradientStep step = robust_pg_step(policy, actor, config.step_at(it), config.baseline);
        diag.grad_norm = step.gradient.norm();
        diag.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.history.push_back(diag);
        if (on_iteration) on_iteration(diag);

        if (diag.grad_norm < config.tolerance) {
            result.converged = true;
            break;
        }
        policy.set_parameters(step.theta);
    }
    return result;
}

void OnlineAcConfig::validate() const {
    if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("must lie in [0, 1)", "online.discount");
    if (!(actor_step >= 0.0)) throw ConfigError("must be non-negative", "online.actor_step");
    if (!(critic_step >= 0.0)) throw ConfigError("must be non-negative", "online.critic_step");
    if (episodes < 0) throw ConfigError("must be non-negative", "online.episodes");
}

OnlineAcResult online_robust_ac(DifferentiablePolicy& policy, const RobustProblem& problem,
                                const OnlineAcConfig& config,
                                const std::function<void(const EpisodeRecord&)>& on_episode) {
    config.validate();
    Rng rng(config.seed);
    OnlineAcResult result;
    result.critic.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.feature_dimension()));
    Eigen::VectorXd theta = policy.parameters();

    for (int episode = 0; episode < config.episodes; ++episode) {
        EpisodeRecord record;
        record.episode = episode;
        EnvState x = problem.reset(rng);
        double td_sum = 0.0;
        for (int t = 0; t < problem.max_steps(); ++t) {
            const int a = policy.sample(x, rng);
            const RobustProblem::Experience exp = problem.experience(x, a, rng);
            const double delta = config.robust ? robust_td_error(exp.sample, result.critic, config.discount)
                                               : td_error(exp.sample, result.critic, config.discount);
            const Eigen::VectorXd psi = policy.log_gradient(x, a);
            exp.sample.features.add_to(result.critic.w, config.critic_step * delta);
            theta.noalias() += (config.actor_step * delta) * psi;
            policy.set_parameters(theta);

            record.episode_return += exp.nominal.reward;
            record.steps = t + 1;
            td_sum += delta;
            if (exp.nominal.terminal) break;
            x = exp.nominal.next_state;
        }
        record.mean_td_error = record.steps > 0 ? td_sum / record.steps : 0.0;
        if (!result.critic.finite() || !theta.allFinite() ||
            result.critic.w.lpNorm<Eigen::Infinity>() > config.divergence_bound)
            throw TrainingDivergence("online_robust_ac: diverged in episode " + std::to_string(episode));
        result.log.push_back(record);
        if (on_episode) on_episode(record);
    }
    return result;
}

void write_ropi_diagnostics(const std::vector<RopiDiagnostics>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << "iteration,j_estimate,grad_norm,w_norm,wall_time\n";
    for (const auto& r : rows)
        out << r.iteration << ',' << r.j_estimate << ',' << r.grad_norm << ',' << r.w_norm << ',' << r.wall_time
            << '\n';
    if (!out) throw IoError("failed writing " + path);
}

void write_episode_log(const std::vector<EpisodeRecord>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << "episode,return,steps,mean_td_error\n";
    for (const auto& r : rows) out << r.episode << ',' << r.episode_return << ',' << r.steps << ',' << r.mean_td_error << '\n';
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace ropi
