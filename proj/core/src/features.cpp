#include "ropi/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ropi {

std::size_t TilingSpec::dimension() const {
    std::size_t d = coding == TileCoding::concatenated ? 0 : 1;
    for (int b : bins) d = coding == TileCoding::concatenated ? d + static_cast<std::size_t>(b)
                                                              : d * static_cast<std::size_t>(b);
    return d;
}

void TilingSpec::validate() const {
    if (bins.size() != kStateDim) throw ConfigError("expected one bin count per state dimension", "tiling.bins");
    if (ranges.size() != bins.size()) throw ConfigError("expected one range per state dimension", "tiling.ranges");
    for (std::size_t i = 0; i < bins.size(); ++i) {
        if (bins[i] < 1) throw ConfigError("bin counts must be at least 1", "tiling.bins");
        if (!(ranges[i].first < ranges[i].second))
            throw ConfigError("range " + std::to_string(i) + " is empty", "tiling.ranges");
    }
}

TilingSpec default_tiling(Domain domain, const CartPoleParams& cartpole, const AcrobotParams& acrobot) {
    TilingSpec spec;
    spec.bins = {1, 1, 8, 5};
    if (domain == Domain::cartpole) {
        spec.ranges = {{-cartpole.position_limit, cartpole.position_limit},
                       {-2.0, 2.0},
                       {-cartpole.angle_limit, cartpole.angle_limit},
                       {-2.0, 2.0}};
    } else {
        spec.ranges = {{-std::numbers::pi, std::numbers::pi},
                       {-acrobot.max_vel1, acrobot.max_vel1},
                       {-std::numbers::pi, std::numbers::pi},
                       {-acrobot.max_vel2, acrobot.max_vel2}};
    }
    return spec;
}

Eigen::VectorXd FeatureVector::dense() const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dimension));
    for (std::size_t i : active) v[static_cast<Eigen::Index>(i)] = 1.0;
    return v;
}

FeatureVector one_hot(std::size_t index, std::size_t dimension) {
    if (index >= dimension) throw ContractViolation("one_hot: index out of range");
    return {dimension, {index}};
}

int bin_index(double value, double lo, double hi, int bins) {
    const double scaled = std::floor((value - lo) * bins / (hi - lo));
    if (scaled < 0.0) return 0;
    if (scaled >= bins) return bins - 1;
    return static_cast<int>(scaled);
}

FeatureVector tile_features(const EnvState& s, const TilingSpec& spec) {
    if (spec.bins.size() != s.size()) throw ContractViolation("tile_features: tiling does not match the state");
    if (!all_finite(s)) throw ContractViolation("tile_features: state is not finite");

    FeatureVector phi;
    phi.dimension = spec.dimension();
    if (spec.coding == TileCoding::concatenated) {
        phi.active.reserve(s.size());
        std::size_t offset = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const int b = bin_index(s[i], spec.ranges[i].first, spec.ranges[i].second, spec.bins[i]);
            phi.active.push_back(offset + static_cast<std::size_t>(b));
            offset += static_cast<std::size_t>(spec.bins[i]);
        }
    } else {
        std::size_t cell = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const int b = bin_index(s[i], spec.ranges[i].first, spec.ranges[i].second, spec.bins[i]);
            cell = cell * static_cast<std::size_t>(spec.bins[i]) + static_cast<std::size_t>(b);
        }
        phi.active.push_back(cell);
    }
    return phi;
}

Eigen::VectorXd compatibility_features(const DifferentiablePolicy& policy, const EnvState& x, int action) {
    if (action < 0 || action >= policy.num_actions())
        throw ContractViolation("compatibility_features: action out of range");
    if (!(policy.action_probabilities(x)[action] > 0.0))
        throw EvaluationError("compatibility_features: log of a zero-probability action is undefined");
    return policy.log_gradient(x, action);
}

}  // namespace ropi
