#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ropi/asap.hpp"
#include "ropi/eval.hpp"
#include "ropi/features.hpp"
#include "ropi/linear_rl.hpp"
#include "ropi/neural.hpp"
#include "ropi/uncertainty.hpp"

namespace ropi {

enum class AgentMode { flat, asap, asap_robust, dqn, odqn, rodqn };

std::string_view to_string(AgentMode mode);
AgentMode parse_agent_mode(const std::string& name);
bool is_linear(AgentMode mode);
DqnMode dqn_mode(AgentMode mode);

enum class LinearAlgorithm { online, batch };

/// Either an explicit list of parameter values (with the nominal's index) or a sampling spec.
struct UncertaintyConfig {
    UncertaintySpec spec;
    std::optional<std::vector<double>> values;
    std::size_t nominal_index = 0;

    UncertaintySet build(const CartPoleParams& cartpole, const AcrobotParams& acrobot) const;
};

struct AsapConfig {
    int hyperplanes = 1;
    double temperature = 1.0;
    HyperplaneFeatureMap feature_map;
    double init_stddev = 0.1;
};

struct SweepConfig {
    int episodes = 100;
    std::uint64_t seed = 0;
    int threads = 1;
    std::array<std::vector<double>, 2> values;  ///< indexed by Domain
};

/// One experiment, fully resolved. `domains` holds the single training domain of the
/// linear modes or the task list of the DQN modes.
struct ExperimentConfig {
    AgentMode mode = AgentMode::asap_robust;
    std::vector<Domain> domains = {Domain::cartpole};
    std::uint64_t seed = 0;
    std::string output_dir;

    CartPoleParams cartpole;
    AcrobotParams acrobot;
    std::array<UncertaintyConfig, 2> uncertainty;  ///< indexed by Domain
    std::array<TilingSpec, 2> tiling;

    AsapConfig asap;
    LinearAlgorithm algorithm = LinearAlgorithm::online;
    OnlineAcConfig online;
    RopiConfig ropi;
    DqnConfig dqn;
    SweepConfig sweep;

    const UncertaintyConfig& uncertainty_for(Domain d) const { return uncertainty[static_cast<std::size_t>(d)]; }
    UncertaintySet uncertainty_set(Domain d) const;
    SweepGrid sweep_grid(Domain d) const;
    /// Propagates the global seed into the trainer configs.
    void apply_seed(std::uint64_t new_seed);
    void validate() const;
};

/// Built-in defaults for a mode; `seed` is applied to every trainer.
ExperimentConfig default_config(AgentMode mode, std::uint64_t seed);

/// Parses a config document. Unknown keys and ill-typed values raise ConfigError naming
/// the field; missing keys take their defaults. "mode" and "seed" are mandatory.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
/// Every field, with sampled uncertainty sets materialised as explicit value lists.
nlohmann::json to_json(const ExperimentConfig& config);
/// FNV-1a of the resolved config document, hex encoded.
std::string config_hash(const ExperimentConfig& config);

struct LinearCheckpoint {
    AgentMode mode = AgentMode::asap_robust;
    Domain domain = Domain::cartpole;
    AsapPolicy policy{0};
    CriticParams critic;
};

struct DqnCheckpoint {
    AgentMode mode = AgentMode::odqn;
    std::vector<Domain> tasks;
    QNetwork network;

    int head_for(Domain domain) const;
};

using Checkpoint = std::variant<LinearCheckpoint, DqnCheckpoint>;

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
AgentMode checkpoint_mode(const Checkpoint& checkpoint);

/// Frozen evaluation policy of a checkpoint on `domain` (greedy for networks, sampling
/// for option policies). Throws ContractViolation when the checkpoint was not trained on it.
EvalPolicy evaluation_policy(const Checkpoint& checkpoint, Domain domain, const std::string& label);

/// Files produced by run_training, relative to the output directory.
struct TrainingArtifacts {
    std::string checkpoint;
    std::string log;
    std::string resolved_config;
};

/// Trains per config.mode and writes checkpoint.json, the training log and
/// resolved_config.json into `output_dir` (created if needed).
TrainingArtifacts run_training(const ExperimentConfig& config, const std::string& output_dir);

/// Builds the policy trained by a linear mode (K = 0 for flat), initialised from the config seed.
AsapPolicy make_linear_policy(const ExperimentConfig& config);

}  // namespace ropi
