#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ropi/envs.hpp"
#include "ropi/policy.hpp"

namespace ropi {

enum class TileCoding {
    concatenated,   ///< independent one-hot per dimension, d = sum of bins
    cross_product,  ///< one cell of the full grid, d = product of bins
};

struct TilingSpec {
    std::vector<int> bins;
    std::vector<std::pair<double, double>> ranges;
    TileCoding coding = TileCoding::concatenated;

    std::size_t dimension() const;
    void validate() const;
    bool operator==(const TilingSpec&) const = default;
};

/// Coarse [1, 1, 8, 5] tiling; for CartPole theta spans the failure angle and
/// theta_dot spans [-2, 2] rad/s.
TilingSpec default_tiling(Domain domain, const CartPoleParams& cartpole = {}, const AcrobotParams& acrobot = {});

/// Sparse binary feature vector.
struct FeatureVector {
    std::size_t dimension = 0;
    std::vector<std::size_t> active;

    double dot(const Eigen::VectorXd& w) const {
        double s = 0.0;
        for (std::size_t i : active) s += w[static_cast<Eigen::Index>(i)];
        return s;
    }
    /// w += scale * phi
    void add_to(Eigen::VectorXd& w, double scale) const {
        for (std::size_t i : active) w[static_cast<Eigen::Index>(i)] += scale;
    }
    Eigen::VectorXd dense() const;
    bool operator==(const FeatureVector&) const = default;
};

FeatureVector one_hot(std::size_t index, std::size_t dimension);

/// Bin index floor((v - lo) * bins / (hi - lo)), clamped to [0, bins - 1].
int bin_index(double value, double lo, double hi, int bins);

FeatureVector tile_features(const EnvState& s, const TilingSpec& spec);

/// psi_{x,a} = grad log pi(a | x). Throws EvaluationError when pi(a | x) == 0.
Eigen::VectorXd compatibility_features(const DifferentiablePolicy& policy, const EnvState& x, int action);

}  // namespace ropi
