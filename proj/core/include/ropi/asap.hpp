#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ropi/envs.hpp"
#include "ropi/policy.hpp"

namespace ropi {

/// Index of an MDP/task in a multi-task setting.
struct TaskId {
    int value = 0;
    bool operator==(const TaskId&) const = default;
};

/// Features the option hyperplanes act on: scaled state components followed by a bias of 1.
struct HyperplaneFeatureMap {
    std::vector<double> scale = std::vector<double>(kStateDim, 1.0);
    bool bias = true;

    std::size_t dimension() const { return scale.size() + (bias ? 1 : 0); }
    Eigen::VectorXd operator()(const EnvState& x) const;
    bool operator==(const HyperplaneFeatureMap&) const = default;
};

double logistic(double z);

/// p(i | x) = prod_k logistic(b_ik * z_k / temperature), where z_k is the activation of
/// hyperplane k and b_ik = +1 when bit k of i is set, -1 otherwise.
Eigen::VectorXd option_probabilities(const Eigen::VectorXd& activations, double temperature);

/// Adaptive Skills, Adaptive Partitions policy: K hyperplanes split the state space into
/// 2^K option regions; option i acts with the state-independent distribution softmax(chi_i).
///
/// Parameter layout: [beta_1 .. beta_K, chi_0 .. chi_{2^K - 1}], each beta_k of length
/// feature_map.dimension() and each chi_i of length num_actions.
class AsapPolicy final : public DifferentiablePolicy {
public:
    explicit AsapPolicy(int hyperplanes, int num_actions = kNumActions, HyperplaneFeatureMap feature_map = {},
                        double temperature = 1.0);

    /// The misspecified state-independent softmax policy (K = 0).
    static AsapPolicy flat(int num_actions = kNumActions);

    /// beta ~ N(0, beta_stddev), chi = 0.
    void initialize(Rng& rng, double beta_stddev = 0.1);

    int hyperplanes() const { return hyperplanes_; }
    std::size_t num_options() const { return std::size_t{1} << hyperplanes_; }
    double temperature() const { return temperature_; }
    const HyperplaneFeatureMap& feature_map() const { return feature_map_; }

    /// K x f matrix of hyperplane normals.
    Eigen::MatrixXd hyperplane_matrix() const;
    Eigen::VectorXd option_logits(std::size_t option) const;
    void set_hyperplane(int k, const Eigen::VectorXd& beta);
    void set_option_logits(std::size_t option, const Eigen::VectorXd& chi);

    Eigen::VectorXd hyperplane_activations(const EnvState& x) const;
    Eigen::VectorXd option_probabilities(const EnvState& x, TaskId task = {}) const;
    double action_probability(const EnvState& x, int action, TaskId task = {}) const;

    struct Choice {
        std::size_t option = 0;
        int action = 0;
    };
    /// Draws an option from p_beta(. | x) and then an action from that option.
    Choice sample_choice(const EnvState& x, Rng& rng, TaskId task = {}) const;

    std::unique_ptr<DifferentiablePolicy> clone() const override { return std::make_unique<AsapPolicy>(*this); }
    int num_actions() const override { return num_actions_; }
    Eigen::VectorXd action_probabilities(const EnvState& x) const override;
    Eigen::VectorXd log_gradient(const EnvState& x, int action) const override;
    const Eigen::VectorXd& parameters() const override { return theta_; }
    void set_parameters(const Eigen::VectorXd& theta) override;
    int sample(const EnvState& x, Rng& rng) const override { return sample_choice(x, rng).action; }

private:
    std::size_t beta_size() const { return static_cast<std::size_t>(hyperplanes_) * feature_map_.dimension(); }
    std::size_t chi_offset(std::size_t option) const {
        return beta_size() + option * static_cast<std::size_t>(num_actions_);
    }

    int hyperplanes_;
    int num_actions_;
    HyperplaneFeatureMap feature_map_;
    double temperature_;
    Eigen::VectorXd theta_;
};

/// Grid over (theta, theta_dot); remaining state components are taken from `base`.
struct PartitionGrid {
    double theta_lo = -0.21;
    double theta_hi = 0.21;
    int theta_points = 41;
    double theta_dot_lo = -2.0;
    double theta_dot_hi = 2.0;
    int theta_dot_points = 41;
    EnvState base{};

    void validate() const;
};

/// Parses "theta_lo:theta_hi:n,theta_dot_lo:theta_dot_hi:m".
PartitionGrid parse_partition_grid(const std::string& text);

struct PartitionCell {
    double theta = 0.0;
    double theta_dot = 0.0;
    std::size_t option_label = 0;
};

/// Most probable option at every grid point, theta varying slowest.
std::vector<PartitionCell> partition_map(const AsapPolicy& policy, const PartitionGrid& grid);

/// CSV with header `theta,theta_dot,option_label`.
void write_partition_csv(const std::vector<PartitionCell>& cells, const std::string& path);

}  // namespace ropi
