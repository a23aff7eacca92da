#pragma once

#include <memory>

#include <Eigen/Dense>

#include "ropi/envs.hpp"
#include "ropi/random.hpp"

namespace ropi {

/// Stochastic policy pi_theta(a | x) with an analytic score function.
class DifferentiablePolicy {
public:
    virtual ~DifferentiablePolicy() = default;

    virtual std::unique_ptr<DifferentiablePolicy> clone() const = 0;
    virtual int num_actions() const = 0;
    virtual Eigen::VectorXd action_probabilities(const EnvState& x) const = 0;
    /// grad_theta log pi(a | x), in the order of parameters().
    virtual Eigen::VectorXd log_gradient(const EnvState& x, int action) const = 0;
    virtual const Eigen::VectorXd& parameters() const = 0;
    virtual void set_parameters(const Eigen::VectorXd& theta) = 0;

    virtual int sample(const EnvState& x, Rng& rng) const;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Inverse-CDF draw from a probability vector; consumes exactly one uniform.
int sample_categorical(const Eigen::VectorXd& probabilities, Rng& rng);

}  // namespace ropi
