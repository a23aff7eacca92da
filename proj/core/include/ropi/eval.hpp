#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ropi/envs.hpp"
#include "ropi/neural.hpp"
#include "ropi/policy.hpp"
#include "ropi/random.hpp"
#include "ropi/uncertainty.hpp"

namespace ropi {

/// A frozen policy as seen by the evaluator. `act` must be safe to call concurrently.
struct EvalPolicy {
    std::string label;
    std::optional<Domain> domain;  ///< the domain the policy was trained for, if restricted
    std::function<int(const EnvState&, Rng&)> act;
};

/// Argmax of the given head.
EvalPolicy greedy_policy(std::shared_ptr<const QNetwork> net, int head, Domain domain, std::string label);
/// Samples actions from the policy's distribution.
EvalPolicy stochastic_policy(std::shared_ptr<const DifferentiablePolicy> policy, std::string label);

/// Undiscounted return of one episode started from reset(domain, rng). max_steps <= 0
/// uses the model's own episode length.
double run_episode(const EvalPolicy& policy, const TransitionModel& model, int max_steps, Rng& rng);

struct SweepGrid {
    Domain domain = Domain::cartpole;
    std::vector<double> values;
    int episodes = 100;
    int max_steps = 0;  ///< 0: the model's episode length
    std::uint64_t seed = 0;
    CartPoleParams cartpole_base{};
    AcrobotParams acrobot_base{};

    std::string parameter() const { return std::string(varied_parameter_name(domain)); }
    void validate() const;
};

/// Pole lengths 0.5, 1.0, ..., 5.0 m or link-1 masses 1.0, 1.5, ..., 5.5 kg.
SweepGrid default_sweep_grid(Domain domain, std::uint64_t seed = 0);

/// Seed of one episode of a sweep; independent of the grid size.
std::uint64_t episode_seed(std::uint64_t base, std::size_t param_index, std::size_t episode_index);

struct SweepRow {
    double param_value = 0.0;
    double mean_return = 0.0;
    double std_return = 0.0;  ///< population standard deviation
    double min_return = 0.0;
    double max_return = 0.0;
    int n = 0;
    bool operator==(const SweepRow&) const = default;
};

struct SweepMetadata {
    std::string policy_label;
    std::uint64_t seed = 0;
    std::string timestamp;
    std::string config_hash;
};

struct SweepReport {
    Domain domain = Domain::cartpole;
    std::string parameter;
    std::vector<SweepRow> rows;
    SweepMetadata metadata;

    /// Mean of the per-value mean returns.
    double grid_mean() const;
    /// Smallest per-value mean return.
    double worst_mean() const;
};

/// Aggregates returns with a single pass (Welford).
SweepRow aggregate(double param_value, const std::vector<double>& returns);

/// Runs grid.episodes episodes for every grid value. Cells are distributed over `threads`
/// workers; the result does not depend on the thread count.
SweepReport sweep(const EvalPolicy& policy, const SweepGrid& grid, int threads = 1);

/// Columns: param_value,mean_return,std_return,min,max,n
void write_report(const SweepReport& report, const std::string& path);
std::vector<SweepRow> read_report(const std::string& path);
/// Stacks several reports with a leading policy_label column.
void compare_reports(const std::vector<SweepReport>& reports, const std::string& path);

/// <policy_label>_<domain>_<param>.csv
std::string report_filename(const std::string& policy_label, Domain domain);

}  // namespace ropi
