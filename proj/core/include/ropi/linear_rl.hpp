#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ropi/features.hpp"
#include "ropi/policy.hpp"
#include "ropi/uncertainty.hpp"

namespace ropi {

struct CriticParams {
    Eigen::VectorXd w;

    double value(const FeatureVector& phi) const { return phi.dot(w); }
    bool finite() const { return w.allFinite(); }
};

struct Transition {
    EnvState state{};
    int action = 0;
    double reward = 0.0;
    EnvState next_state{};
    bool terminal = false;
};

/// Transitions sampled under the nominal model. Visitation weights default to uniform.
struct TrajectoryBatch {
    std::vector<Transition> transitions;
    std::vector<std::size_t> episode_starts;
    std::vector<double> weights;
    std::vector<double> episode_returns;            ///< undiscounted
    std::vector<double> episode_discounted_returns;

    std::size_t size() const { return transitions.size(); }
    double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
};

/// One possible next state of a candidate model, with its probability.
struct NextOutcome {
    double probability = 1.0;
    FeatureVector features;
    bool terminal = false;
};

/// A transition materialised for robust evaluation: the features of x, the nominal
/// reward and, for every model of the uncertainty set, the distribution of x'.
struct CriticSample {
    FeatureVector features;
    double reward = 0.0;
    double weight = 1.0;
    std::vector<std::vector<NextOutcome>> candidates;
    std::size_t nominal_index = 0;
};

using CriticBatch = std::vector<CriticSample>;

CriticSample materialize(const Transition& t, const UncertaintySet& set, const TilingSpec& tiling, double weight = 1.0);
CriticBatch materialize(const TrajectoryBatch& batch, const UncertaintySet& set, const TilingSpec& tiling);

/// sigma: min over models of E_p[phi(x')^T w], terminal outcomes counting as 0.
double robust_next_value(const CriticSample& s, const Eigen::VectorXd& w);
/// E_nominal[phi(x')^T w].
double nominal_next_value(const CriticSample& s, const Eigen::VectorXd& w);

/// delta = r + gamma * sigma(Phi w)(x, a) - phi(x)^T w
double robust_td_error(const CriticSample& s, const CriticParams& critic, double discount);
double robust_td_error(const Transition& t, const CriticParams& critic, const UncertaintySet& set,
                       const TilingSpec& tiling, double discount);
/// Standard TD error under the nominal model only.
double td_error(const CriticSample& s, const CriticParams& critic, double discount);

/// Robust TD error of every sample; the actor signal of the online variant.
std::vector<double> estimate_advantage(const CriticBatch& batch, const CriticParams& critic, double discount);

struct RpviOptions {
    bool robust = true;   ///< false evaluates the nominal model only (standard projected PE)
    double ridge = 1e-8;  ///< added to Phi^T D Phi when it is rank deficient
};

/// w_{k+1} = (Phi^T D Phi)^{-1} (Phi^T D r + gamma Phi^T D sigma_pi(Phi w_k)),
/// D the normalised sample weights.
CriticParams rpvi_update(const CriticBatch& batch, const CriticParams& previous, double discount,
                         const RpviOptions& options = {});

struct RpviFixedPoint {
    CriticParams critic;
    int iterations = 0;
    bool converged = false;
    bool ridge_applied = false;
    std::vector<double> step_sizes;  ///< ||w_{k+1} - w_k||_inf per iteration
};

/// Iterates rpvi_update until ||w_{k+1} - w_k||_inf < tolerance or max_iterations.
RpviFixedPoint rpvi_fixed_point(const CriticBatch& batch, const CriticParams& initial, double discount,
                                double tolerance = 1e-6, int max_iterations = 500, const RpviOptions& options = {});

/// One entry of an actor update: the score at (state, action) is weighted by `weight`
/// and multiplied by (signal - baseline).
struct ActorSample {
    EnvState state{};
    int action = 0;
    double weight = 1.0;
    double signal = 0.0;
    double baseline = 0.0;
};

struct PolicyGradientStep {
    Eigen::VectorXd theta;
    Eigen::VectorXd gradient;
};

/// theta' = theta + step * sum_i w_i psi_i (f_i - [b_i]) / sum_i w_i.
/// Throws EvaluationError (without producing a step) when the gradient is not finite.
PolicyGradientStep robust_pg_step(const DifferentiablePolicy& policy, std::span<const ActorSample> batch, double step,
                                  bool use_baseline);

/// A robust control problem as seen by the learners: nominal sampling plus the
/// candidate next-state distributions of every model for any (x, a).
class RobustProblem {
public:
    virtual ~RobustProblem() = default;

    virtual int num_actions() const = 0;
    virtual int max_steps() const = 0;
    virtual std::size_t feature_dimension() const = 0;
    virtual EnvState reset(Rng& rng) const = 0;
    virtual FeatureVector features(const EnvState& x) const = 0;

    struct Experience {
        StepOutcome nominal;
        CriticSample sample;
    };
    /// Samples the nominal next state and materialises (x, a) against every model.
    virtual Experience experience(const EnvState& x, int action, Rng& rng) const = 0;
    /// Materialises (x, a) without sampling (used for all-action critic queries).
    virtual CriticSample materialize(const EnvState& x, int action) const = 0;
};

/// Dynamical-system problem: deterministic models of an uncertainty set, tile-coded critic.
class DynamicsProblem final : public RobustProblem {
public:
    DynamicsProblem(UncertaintySet set, TilingSpec tiling, int max_steps = 0);

    const UncertaintySet& uncertainty_set() const { return set_; }
    const TilingSpec& tiling() const { return tiling_; }

    int num_actions() const override { return kNumActions; }
    int max_steps() const override { return max_steps_; }
    std::size_t feature_dimension() const override { return tiling_.dimension(); }
    EnvState reset(Rng& rng) const override { return ropi::reset(set_.domain(), rng); }
    FeatureVector features(const EnvState& x) const override { return tile_features(x, tiling_); }
    Experience experience(const EnvState& x, int action, Rng& rng) const override;
    CriticSample materialize(const EnvState& x, int action) const override;

private:
    UncertaintySet set_;
    TilingSpec tiling_;
    int max_steps_;
};

/// Tabular robust MDP with one-hot features. The state index is stored in EnvState[0];
/// the nominal kernel generates trajectories.
class TabularProblem final : public RobustProblem {
public:
    TabularProblem(TabularRobustMDP mdp, std::size_t nominal_kernel, int horizon, std::size_t start_state = 0);

    const TabularRobustMDP& mdp() const { return mdp_; }

    int num_actions() const override { return static_cast<int>(mdp_.n_actions); }
    int max_steps() const override { return horizon_; }
    std::size_t feature_dimension() const override { return mdp_.n_states; }
    EnvState reset(Rng&) const override { return {static_cast<double>(start_), 0.0, 0.0, 0.0}; }
    FeatureVector features(const EnvState& x) const override;
    Experience experience(const EnvState& x, int action, Rng& rng) const override;
    CriticSample materialize(const EnvState& x, int action) const override;

private:
    TabularRobustMDP mdp_;
    std::size_t nominal_;
    int horizon_;
    std::size_t start_;
};

/// Rolls `episodes` episodes of the policy under the nominal model.
TrajectoryBatch generate_trajectories(const DifferentiablePolicy& policy, const RobustProblem& problem, int episodes,
                                      double discount, Rng& rng);

enum class CriticMode { batch_rpvi, online_td };
enum class StepSchedule { constant, inverse_t };

struct RopiConfig {
    double discount = 0.99;
    double actor_step = 1e-2;
    StepSchedule schedule = StepSchedule::constant;
    CriticMode critic_mode = CriticMode::batch_rpvi;
    double critic_step = 0.1;  ///< online_td only
    int critic_sweeps = 20;    ///< online_td only: passes over the batch
    int episodes_per_iteration = 10;
    double tolerance = 1e-3;   ///< stop once ||grad J|| falls below
    int max_iterations = 100;
    double critic_tolerance = 1e-6;
    int critic_max_iterations = 500;
    bool baseline = false;
    bool robust = true;
    double divergence_bound = 1e6;
    std::uint64_t seed = 0;

    double step_at(int iteration) const {
        return schedule == StepSchedule::constant ? actor_step : actor_step / static_cast<double>(iteration);
    }
    void validate() const;
};

struct RopiDiagnostics {
    int iteration = 0;
    double j_estimate = 0.0;  ///< mean discounted return of the sampled episodes
    double grad_norm = 0.0;
    double w_norm = 0.0;
    double wall_time = 0.0;   ///< seconds since the start of the run
    int critic_iterations = 0;
};

struct RopiResult {
    CriticParams critic;
    std::vector<RopiDiagnostics> history;
    bool converged = false;
};

/// Robust Options Policy Iteration: sample under (pi_theta, nominal), evaluate the policy
/// robustly to a fixed point, then take one compatible robust policy-gradient step.
/// The policy is updated in place. Optional `on_iteration` observes each diagnostics row.
RopiResult ropi(DifferentiablePolicy& policy, const RobustProblem& problem, const RopiConfig& config,
                const std::function<void(const RopiDiagnostics&)>& on_iteration = {});

/// Gradient estimate of one ROPI improvement step: Q(x, a) = r + gamma sigma(Phi w) for every
/// action at every visited state, a compatible fit f_w = v^T psi under pi-weighting, and
/// grad = mean_x sum_a pi(a|x) psi_{x,a} (f_w(x, a) - [b(x)]).
std::vector<ActorSample> compatible_actor_batch(const DifferentiablePolicy& policy, const RobustProblem& problem,
                                                const TrajectoryBatch& batch, const CriticParams& critic,
                                                double discount, bool robust, bool baseline);

struct OnlineAcConfig {
    double discount = 0.99;
    double actor_step = 1e-2;
    double critic_step = 0.1;
    int episodes = 500;
    bool robust = true;
    double divergence_bound = 1e6;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpisodeRecord {
    int episode = 0;
    double episode_return = 0.0;
    int steps = 0;
    double mean_td_error = 0.0;
};

struct OnlineAcResult {
    CriticParams critic;
    std::vector<EpisodeRecord> log;
};

/// Online actor-critic with the (robust) TD error as actor signal:
///   w <- w + critic_step * delta * phi(x),  theta <- theta + actor_step * delta * psi_{x,a}.
OnlineAcResult online_robust_ac(DifferentiablePolicy& policy, const RobustProblem& problem,
                                const OnlineAcConfig& config,
                                const std::function<void(const EpisodeRecord&)>& on_episode = {});

/// Diagnostics CSV header: iteration,j_estimate,grad_norm,w_norm,wall_time
void write_ropi_diagnostics(const std::vector<RopiDiagnostics>& rows, const std::string& path);
void write_episode_log(const std::vector<EpisodeRecord>& rows, const std::string& path);

}  // namespace ropi
