#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ropi/envs.hpp"
#include "ropi/linear_rl.hpp"
#include "ropi/neural.hpp"
#include "ropi/uncertainty.hpp"

/// Independent reference implementations and the self-check suite behind `ropi verify`.
/// The oracles deliberately avoid the library code paths they are compared against.
namespace ropi::verify {

// Oracles ---------------------------------------------------------------------

/// Robust value of a fixed deterministic policy by exhaustion: every assignment of one
/// kernel per state is evaluated with a direct linear solve and the elementwise minimum
/// is returned (rectangular sets admit a simultaneous minimiser).
Eigen::VectorXd exhaustive_robust_evaluation(const TabularRobustMDP& mdp, std::span<const int> policy);

/// (I - gamma P_pi)^{-1} r_pi under a single kernel.
Eigen::VectorXd exact_policy_evaluation(const TabularRobustMDP& mdp, std::size_t kernel, std::span<const int> policy);

/// One sweep of textbook value iteration under a single kernel, written with plain loops.
std::vector<double> value_iteration_sweep(const TabularRobustMDP& mdp, std::size_t kernel, const std::vector<double>& v);

/// Robust TD error by direct enumeration of the candidate next-state distributions.
double enumerated_td_error(const CriticSample& s, const Eigen::VectorXd& w, double discount);

/// Per-neuron forward pass through the addressed head, with explicit loops.
std::vector<double> dense_forward(const QNetwork& net, const std::vector<double>& x, int head);

/// Central differences of f at x with step h.
Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h);

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8);

/// Mechanical energy of the acrobot from the Cartesian positions and velocities of the
/// link centres of mass (independent of the Lagrangian form used by the library).
double cartesian_acrobot_energy(const EnvState& s, const AcrobotParams& p);

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;  ///< population
};

/// Two-pass mean and standard deviation.
Moments two_pass_moments(const std::vector<double>& values);

/// One-state, two-action bandit (rewards 1 and 0, horizon 1) as a robust problem.
TabularProblem bandit_problem(double discount = 0.9);

// Checks ----------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

using TdErrorFn = std::function<double(const CriticSample&, const CriticParams&, double)>;

struct VerifyOptions {
    /// The robust TD error under test; tests inject faulty versions here.
    TdErrorFn td_error = [](const CriticSample& s, const CriticParams& c, double g) {
        return robust_td_error(s, c, g);
    };
    std::uint64_t seed = 20200101;
};

CheckResult check_contraction(const VerifyOptions& options, int trials = 1000);
CheckResult check_single_kernel_bellman(const VerifyOptions& options, int trials = 200);
CheckResult check_rpvi_oracle(const VerifyOptions& options, int trials = 100);
CheckResult check_td_error_oracle(const VerifyOptions& options, int trials = 500);
CheckResult check_td_convergence(const VerifyOptions& options, int trials = 20);
CheckResult check_spot_values(const VerifyOptions& options);
CheckResult check_asap_gradients(const VerifyOptions& options, int trials = 200);
CheckResult check_mlp_gradients(const VerifyOptions& options, int trials = 200);
CheckResult check_score_identity(const VerifyOptions& options, int trials = 1000);
CheckResult check_energy_conservation(const VerifyOptions& options);
CheckResult check_reward_bounds(const VerifyOptions& options, int steps = 100000);
CheckResult check_nominal_reduction(const VerifyOptions& options);
CheckResult check_bandit_convergence(const VerifyOptions& options);

/// Every check above with its default size.
std::vector<CheckResult> run_all(const VerifyOptions& options = {});

/// Fixed-width table, one row per check.
std::string format_table(const std::vector<CheckResult>& results);

}  // namespace ropi::verify
