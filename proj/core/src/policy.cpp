#include "ropi/policy.hpp"

#include <cmath>

namespace ropi {

int DifferentiablePolicy::sample(const EnvState& x, Rng& rng) const {
    return sample_categorical(action_probabilities(x), rng);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double top = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - top).exp();
    return e / e.sum();
}

int sample_categorical(const Eigen::VectorXd& probabilities, Rng& rng) {
    const double u = uniform01(rng);
    double cumulative = 0.0;
    const auto n = probabilities.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        cumulative += probabilities[i];
        if (u < cumulative) return static_cast<int>(i);
    }
    // Rounding left u above the final partial sum; take the last non-zero entry.
    for (Eigen::Index i = n - 1; i > 0; --i)
        if (probabilities[i] > 0.0) return static_cast<int>(i);
    return 0;
}

}  // namespace ropi
