#include "ropi/uncertainty.hpp"

#include <cmath>
#include <random>
#include <string>

namespace ropi {

StepOutcome TransitionModel::step(const EnvState& s, int action) const {
    if (const auto* cp = std::get_if<CartPoleParams>(&params)) return cartpole_step(s, action, *cp);
    return acrobot_step(s, action, std::get<AcrobotParams>(params));
}

bool TransitionModel::is_terminal(const EnvState& s) const {
    if (const auto* cp = std::get_if<CartPoleParams>(&params)) return cartpole_out_of_bounds(s, *cp);
    return acrobot_goal_reached(s, std::get<AcrobotParams>(params));
}

int TransitionModel::max_steps() const {
    return std::visit([](const auto& p) { return p.max_steps; }, params);
}

double TransitionModel::varied_parameter() const {
    if (const auto* cp = std::get_if<CartPoleParams>(&params)) return cp->pole_length;
    return std::get<AcrobotParams>(params).link1_mass;
}

void TransitionModel::validate() const {
    std::visit([](const auto& p) { p.validate(); }, params);
}

std::string_view varied_parameter_name(Domain domain) {
    return domain == Domain::cartpole ? "pole_length" : "link1_mass";
}

TransitionModel make_model(Domain domain, double value, std::size_t model_id, const CartPoleParams& cartpole_base,
                           const AcrobotParams& acrobot_base) {
    TransitionModel model;
    model.model_id = model_id;
    if (domain == Domain::cartpole) {
        CartPoleParams p = cartpole_base;
        p.pole_length = value;
        model.params = p;
    } else {
        AcrobotParams p = acrobot_base;
        p.link1_mass = value;
        model.params = p;
    }
    model.validate();
    return model;
}

UncertaintySet::UncertaintySet(std::vector<TransitionModel> models, std::size_t nominal_index)
    : models_(std::move(models)), nominal_index_(nominal_index) {
    if (models_.empty()) throw ConfigError("uncertainty set must contain at least one model", "models");
    if (nominal_index_ >= models_.size()) throw ConfigError("index out of range", "nominal_index");
    const Domain d = models_.front().domain();
    for (std::size_t i = 0; i < models_.size(); ++i) {
        models_[i].validate();
        if (models_[i].domain() != d) throw ConfigError("models mix domains", "models");
        for (std::size_t j = 0; j < i; ++j)
            if (models_[j].model_id == models_[i].model_id)
                throw ConfigError("duplicate model_id " + std::to_string(models_[i].model_id), "models");
    }
}

UncertaintySet UncertaintySet::singleton(TransitionModel model) {
    std::vector<TransitionModel> models{std::move(model)};
    return UncertaintySet(std::move(models), 0);
}

UncertaintySet UncertaintySet::nominal_only() const { return singleton(nominal()); }

std::vector<double> UncertaintySet::parameter_values() const {
    std::vector<double> values;
    values.reserve(models_.size());
    for (const auto& m : models_) values.push_back(m.varied_parameter());
    return values;
}

void UncertaintySpec::validate() const {
    if (n < 1) throw ConfigError("must be at least 1", "uncertainty.n");
    if (!(lo < hi)) throw ConfigError("empty range: lo must be below hi", "uncertainty.range");
    if (!(nominal_value >= lo && nominal_value <= hi))
        throw ConfigError("nominal value lies outside the sampling range", "uncertainty.nominal_value");
    if (!(resolved_stddev() > 0.0)) throw ConfigError("must be positive", "uncertainty.stddev");
}

UncertaintySpec default_uncertainty_spec(Domain domain, std::uint64_t seed) {
    UncertaintySpec spec;
    spec.domain = domain;
    spec.seed = seed;
    spec.n = 5;
    if (domain == Domain::cartpole) {
        spec.nominal_value = 0.5;
        spec.lo = 0.5;
        spec.hi = 5.0;
    } else {
        spec.nominal_value = 1.0;
        spec.lo = 1.0;
        spec.hi = 5.0;
    }
    return spec;
}

UncertaintySet sample_uncertainty_set(const UncertaintySpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::normal_distribution<double> normal(spec.resolved_mean(), spec.resolved_stddev());

    std::vector<TransitionModel> models;
    models.reserve(spec.n + 1);
    std::optional<std::size_t> nominal;
    for (std::size_t i = 0; i < spec.n; ++i) {
        double value = normal(rng);
        for (int attempt = 0; !(value >= spec.lo && value <= spec.hi); ++attempt) {
            if (attempt > 100000) throw ConfigError("rejection sampling does not reach the range", "uncertainty");
            value = normal(rng);
        }
        if (!nominal && value == spec.nominal_value) nominal = i;
        models.push_back(make_model(spec.domain, value, i, spec.cartpole_base, spec.acrobot_base));
    }
    if (!nominal) {
        nominal = models.size();
        models.push_back(make_model(spec.domain, spec.nominal_value, models.size(), spec.cartpole_base,
                                    spec.acrobot_base));
    }
    return UncertaintySet(std::move(models), *nominal);
}

std::vector<Candidate> candidate_next_states(const EnvState& x, int action, const UncertaintySet& set) {
    std::vector<Candidate> out;
    out.reserve(set.size());
    for (const TransitionModel& model : set.models()) {
        const StepOutcome step = model.step(x, action);
        out.push_back({step.next_state, step.terminal, step.reward});
    }
    return out;
}

void TabularRobustMDP::validate() const {
    if (n_states == 0 || n_actions == 0) throw ConfigError("empty state or action space", "mdp");
    if (reward.rows() != static_cast<Eigen::Index>(n_states) || reward.cols() != static_cast<Eigen::Index>(n_actions))
        throw ConfigError("reward table has the wrong shape", "mdp.reward");
    if (kernels.empty()) throw ConfigError("at least one kernel is required", "mdp.kernels");
    if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("discount must lie in [0, 1)", "mdp.discount");
    for (const auto& kernel : kernels) {
        if (kernel.size() != n_actions) throw ConfigError("kernel has the wrong action count", "mdp.kernels");
        for (const auto& m : kernel) {
            if (m.rows() != static_cast<Eigen::Index>(n_states) || m.cols() != static_cast<Eigen::Index>(n_states))
                throw ConfigError("kernel matrix has the wrong shape", "mdp.kernels");
            if ((m.array() < 0.0).any()) throw ConfigError("negative transition probability", "mdp.kernels");
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                if (std::abs(m.row(r).sum() - 1.0) > 1e-12)
                    throw ConfigError("kernel row does not sum to one", "mdp.kernels");
        }
    }
}

double tabular_sigma(const TabularRobustMDP& mdp, std::size_t state, std::size_t action, const Eigen::VectorXd& v) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& kernel : mdp.kernels) {
        const double e = kernel[action].row(static_cast<Eigen::Index>(state)).dot(v);
        if (e < best) best = e;
    }
    return best;
}

Eigen::VectorXd tabular_robust_bellman(const Eigen::VectorXd& v, const TabularRobustMDP& mdp,
                                       std::optional<std::span<const int>> policy) {
    if (v.size() != static_cast<Eigen::Index>(mdp.n_states))
        throw ContractViolation("tabular_robust_bellman: value vector has the wrong length");
    if (policy && policy->size() != mdp.n_states)
        throw ContractViolation("tabular_robust_bellman: policy has the wrong length");

    Eigen::VectorXd out(v.size());
    for (std::size_t x = 0; x < mdp.n_states; ++x) {
        const auto backup = [&](std::size_t a) {
            return mdp.reward(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(a)) +
                   mdp.discount * tabular_sigma(mdp, x, a, v);
        };
        if (policy) {
            const int a = (*policy)[x];
            if (a < 0 || static_cast<std::size_t>(a) >= mdp.n_actions)
                throw ContractViolation("tabular_robust_bellman: policy action out of range");
            out[static_cast<Eigen::Index>(x)] = backup(static_cast<std::size_t>(a));
        } else {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < mdp.n_actions; ++a) best = std::max(best, backup(a));
            out[static_cast<Eigen::Index>(x)] = best;
        }
    }
    return out;
}

TabularRobustMDP random_tabular_mdp(std::size_t n_states, std::size_t n_actions, std::size_t n_kernels,
                                    double discount, Rng& rng) {
    TabularRobustMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.discount = discount;
    mdp.reward.resize(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_actions));
    for (Eigen::Index i = 0; i < mdp.reward.size(); ++i) mdp.reward.data()[i] = uniform(rng, -1.0, 1.0);

    std::exponential_distribution<double> exp1(1.0);
    const auto n = static_cast<Eigen::Index>(n_states);
    mdp.kernels.resize(n_kernels);
    for (auto& kernel : mdp.kernels) {
        kernel.resize(n_actions);
        for (auto& m : kernel) {
            m.resize(n, n);
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index c = 0; c < n; ++c) m(r, c) = exp1(rng);
                m.row(r) /= m.row(r).sum();
                // Push the rounding residue onto the largest entry so the row sums to 1 within 1e-12.
                Eigen::Index arg;
                m.row(r).maxCoeff(&arg);
                m(r, arg) += 1.0 - m.row(r).sum();
            }
        }
    }
    return mdp;
}

}  // namespace ropi
