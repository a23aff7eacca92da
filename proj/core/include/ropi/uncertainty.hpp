#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ropi/envs.hpp"

namespace ropi {

/// One concrete parameterisation of a dynamical system.
struct TransitionModel {
    std::variant<CartPoleParams, AcrobotParams> params;
    std::size_t model_id = 0;

    Domain domain() const {
        return std::holds_alternative<CartPoleParams>(params) ? Domain::cartpole : Domain::acrobot;
    }
    const CartPoleParams& cartpole() const { return std::get<CartPoleParams>(params); }
    const AcrobotParams& acrobot() const { return std::get<AcrobotParams>(params); }

    StepOutcome step(const EnvState& s, int action) const;
    bool is_terminal(const EnvState& s) const;
    int max_steps() const;
    /// Pole length for CartPole, link-1 mass for Acrobot.
    double varied_parameter() const;
    void validate() const;
};

/// Name of the parameter varied across an uncertainty set ("pole_length" / "link1_mass").
std::string_view varied_parameter_name(Domain domain);

/// Copy of `base` with the domain's varied parameter replaced by `value`.
TransitionModel make_model(Domain domain, double value, std::size_t model_id = 0,
                           const CartPoleParams& cartpole_base = {}, const AcrobotParams& acrobot_base = {});

/// Finite, immutable set of transition models with a designated nominal member.
class UncertaintySet {
public:
    UncertaintySet(std::vector<TransitionModel> models, std::size_t nominal_index);

    static UncertaintySet singleton(TransitionModel model);

    std::size_t size() const { return models_.size(); }
    Domain domain() const { return models_.front().domain(); }
    const std::vector<TransitionModel>& models() const { return models_; }
    const TransitionModel& operator[](std::size_t i) const { return models_[i]; }
    std::size_t nominal_index() const { return nominal_index_; }
    const TransitionModel& nominal() const { return models_[nominal_index_]; }
    /// The set {nominal}.
    UncertaintySet nominal_only() const;
    std::vector<double> parameter_values() const;

private:
    std::vector<TransitionModel> models_;
    std::size_t nominal_index_;
};

struct UncertaintySpec {
    Domain domain = Domain::cartpole;
    double nominal_value = 0.5;
    std::size_t n = 5;
    double lo = 0.5;
    double hi = 5.0;
    std::optional<double> mean;    ///< defaults to the range midpoint
    std::optional<double> stddev;  ///< defaults to (hi - lo) / 4
    std::uint64_t seed = 0;
    CartPoleParams cartpole_base{};
    AcrobotParams acrobot_base{};

    double resolved_mean() const { return mean.value_or(0.5 * (lo + hi)); }
    double resolved_stddev() const { return stddev.value_or((hi - lo) / 4.0); }
    void validate() const;
};

/// Defaults: five pole lengths in [0.5, 5] m around a 0.5 m nominal pole,
/// or five link masses in [1, 5] kg around a 1 kg nominal arm.
UncertaintySpec default_uncertainty_spec(Domain domain, std::uint64_t seed);

/// Draws `n` values from a normal distribution truncated (by rejection) to [lo, hi] and
/// builds one model per value. The nominal model is appended and marked nominal, unless
/// one of the draws equals `nominal_value` exactly, in which case that draw is marked.
UncertaintySet sample_uncertainty_set(const UncertaintySpec& spec);

struct RobustBackupResult {
    double value = 0.0;
    std::size_t argmin_model = 0;
};

/// Worst-case next value: min over models of v(next state), terminal next states
/// counting as 0. Ties resolve to the lowest model id.
template <class ValueFn>
RobustBackupResult robust_backup(const EnvState& x, int action, ValueFn&& value_fn, const UncertaintySet& set) {
    RobustBackupResult best{std::numeric_limits<double>::infinity(), 0};
    for (const TransitionModel& model : set.models()) {
        const StepOutcome out = model.step(x, action);
        const double v = out.terminal ? 0.0 : static_cast<double>(value_fn(out.next_state));
        if (!std::isfinite(v)) throw EvaluationError("robust_backup: value function returned a non-finite value");
        if (v < best.value) best = {v, model.model_id};
    }
    return best;
}

struct Candidate {
    EnvState next_state{};
    bool terminal = false;
    double reward = 0.0;
};

/// Next state under every model in set order; entry `set.nominal_index()` is the nominal step.
std::vector<Candidate> candidate_next_states(const EnvState& x, int action, const UncertaintySet& set);

/// Finite robust MDP with a finite list of candidate kernels. Used as oracle substrate.
struct TabularRobustMDP {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    Eigen::MatrixXd reward;  ///< n_states x n_actions
    /// kernels[k][a](x, x') = p_k(x' | x, a)
    std::vector<std::vector<Eigen::MatrixXd>> kernels;
    double discount = 0.9;

    void validate() const;
};

/// min over kernels of sum_x' p(x'|x,a) v(x').
double tabular_sigma(const TabularRobustMDP& mdp, std::size_t state, std::size_t action, const Eigen::VectorXd& v);

/// Robust Bellman operator. With `policy` the action at each state is fixed (T^pi),
/// otherwise the maximum over actions is taken.
Eigen::VectorXd tabular_robust_bellman(const Eigen::VectorXd& v, const TabularRobustMDP& mdp,
                                       std::optional<std::span<const int>> policy = std::nullopt);

/// Random MDP with Dirichlet(1) kernel rows and rewards uniform in [-1, 1].
TabularRobustMDP random_tabular_mdp(std::size_t n_states, std::size_t n_actions, std::size_t n_kernels,
                                    double discount, Rng& rng);

}  // namespace ropi
