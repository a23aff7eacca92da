#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ropi/asap.hpp"
#include "ropi/envs.hpp"
#include "ropi/random.hpp"
#include "ropi/uncertainty.hpp"

namespace ropi {

/// How environment states are presented to a network shared by several domains.
enum class InputEncoding {
    /// Width 6. CartPole: (x, x_dot, theta, theta_dot, 0, 0);
    /// Acrobot: (cos t1, sin t1, cos t2, sin t2, t1_dot, t2_dot).
    trig,
    /// Width 4: the state tuple of either domain, unchanged.
    raw,
};

std::string_view to_string(InputEncoding encoding);
InputEncoding parse_input_encoding(const std::string& name);
int input_width(InputEncoding encoding);
Eigen::VectorXd encode_state(Domain domain, const EnvState& x, InputEncoding encoding);

/// Fully-connected affine layer. Parameters are stored flat: the out x in weight
/// matrix in column-major order, followed by the out biases.
class DenseLayer {
public:
    DenseLayer() = default;
    DenseLayer(int inputs, int outputs);

    int inputs() const { return inputs_; }
    int outputs() const { return outputs_; }

    Eigen::Map<const Eigen::MatrixXd> weights() const { return {params_.data(), outputs_, inputs_}; }
    Eigen::Map<Eigen::MatrixXd> weights() { return {params_.data(), outputs_, inputs_}; }
    Eigen::Map<const Eigen::VectorXd> bias() const { return {params_.data() + outputs_ * inputs_, outputs_}; }
    Eigen::Map<Eigen::VectorXd> bias() { return {params_.data() + outputs_ * inputs_, outputs_}; }

    const Eigen::VectorXd& parameters() const { return params_; }
    Eigen::VectorXd& parameters() { return params_; }

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
    void initialize(Rng& rng);

    bool operator==(const DenseLayer&) const = default;

private:
    int inputs_ = 0;
    int outputs_ = 0;
    Eigen::VectorXd params_;
};

struct NetworkShape {
    int inputs = input_width(InputEncoding::trig);
    std::vector<int> hidden = {128, 128, 128};  ///< at least one hidden layer
    int heads = 1;
    int actions = kNumActions;
    InputEncoding encoding = InputEncoding::trig;  ///< used by QNetwork::encode

    void validate() const;
    bool operator==(const NetworkShape&) const = default;
};

/// Activations recorded by a forward pass; required by backward.
struct ForwardCache {
    int head = -1;
    std::vector<int> path;                 ///< layer indices visited, input to output
    std::vector<Eigen::MatrixXd> inputs;   ///< input matrix of each visited layer (columns = samples)
    bool empty() const { return path.empty(); }
};

/// Per-layer parameter gradients; only layers on the addressed path are touched.
struct NetworkGradients {
    std::vector<Eigen::VectorXd> layers;
    std::vector<bool> touched;
};

/// ReLU multilayer perceptron with a shared trunk and one head per task.
///
/// The trunk holds all hidden layers but the last; each head holds a private copy of the
/// last hidden layer and the output layer. Layer order: trunk layers input to output,
/// then head 0 (hidden, output), head 1 (hidden, output), ...
class QNetwork {
public:
    QNetwork() = default;
    explicit QNetwork(const NetworkShape& shape);
    QNetwork(const NetworkShape& shape, std::vector<DenseLayer> layers);

    const NetworkShape& shape() const { return shape_; }
    int num_heads() const { return shape_.heads; }
    int num_actions() const { return shape_.actions; }
    std::size_t trunk_depth() const { return shape_.hidden.size() - 1; }

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    /// Layer indices evaluated for `head`, input to output.
    std::vector<int> path(int head) const;
    std::size_t parameter_count() const;

    void initialize(Rng& rng);

    /// encode_state with the network's encoding; requires inputs == input_width(encoding).
    Eigen::VectorXd encode(Domain domain, const EnvState& x) const;

    /// Q-values for each column of `x` (inputs x batch); result is actions x batch.
    Eigen::MatrixXd predict(const Eigen::MatrixXd& x, int head) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, int head, ForwardCache& cache) const;
    /// Gradients of sum_ij output_grad(i, j) * Q(i, j) with respect to every parameter.
    NetworkGradients backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad) const;

    bool finite() const;
    bool operator==(const QNetwork&) const = default;

private:
    void check_head(int head) const;

    NetworkShape shape_;
    std::vector<DenseLayer> layers_;
};

struct AdamHyper {
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::int64_t step = 0;
    AdamHyper hyper;

    static AdamState zeros(Eigen::Index size, const AdamHyper& hyper = {});
};

/// Bias-corrected ADAM update of `params` in place. Throws EvaluationError, leaving
/// params and state untouched, when `grads` is not finite.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state);

/// One AdamState per network layer; layers not touched by a gradient are left alone.
class NetworkOptimizer {
public:
    NetworkOptimizer() = default;
    NetworkOptimizer(const QNetwork& net, const AdamHyper& hyper);

    void step(QNetwork& net, const NetworkGradients& grads);
    const std::vector<AdamState>& states() const { return states_; }

private:
    std::vector<AdamState> states_;
};

struct NextCandidate {
    EnvState next_state{};
    bool terminal = false;
};

struct ReplayEntry {
    TaskId task;
    Domain domain = Domain::cartpole;
    EnvState state{};
    int action = 0;
    double reward = 0.0;
    std::vector<NextCandidate> candidates;  ///< one per model of the task's uncertainty set
    std::size_t nominal_index = 0;
};

/// Fixed-capacity FIFO ring. Index 0 is the oldest retained entry.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    void push(ReplayEntry entry);
    const ReplayEntry& operator[](std::size_t i) const;
    /// `count` entries drawn uniformly with replacement.
    std::vector<const ReplayEntry*> sample(std::size_t count, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t head_ = 0;  ///< position of the oldest entry once full
    std::vector<ReplayEntry> entries_;
};

/// y = r + gamma * min_p [0 if terminal else max_a' Q_target(x'_p, a')] over the candidates
/// (robust) or over the nominal candidate only. Every entry is evaluated with `head`.
Eigen::VectorXd robust_dqn_target(const std::vector<const ReplayEntry*>& entries, const QNetwork& target, int head,
                                  double discount, bool robust);

enum class DqnMode { single_head, option_heads, robust_option_heads };

std::string to_string(DqnMode mode);
DqnMode parse_dqn_mode(const std::string& name);

struct DqnConfig {
    int episodes = 3000;
    std::size_t replay_capacity = 50000;
    std::size_t batch_size = 64;
    std::size_t learning_starts = 1000;  ///< environment steps of a task before its head trains
    int target_sync = 500;               ///< steps between target-network copies
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    int epsilon_decay_steps = 30000;
    double discount = 0.99;
    AdamHyper adam;
    std::vector<int> hidden = {128, 128, 128};
    InputEncoding encoding = InputEncoding::trig;
    double divergence_loss = 1e6;
    int divergence_patience = 1000;      ///< consecutive updates above divergence_loss
    bool stop_when_solved = false;
    int solved_window = 100;
    double cartpole_solved = 195.0;      ///< moving-average return regarded as solved
    double acrobot_solved = -100.0;
    std::uint64_t seed = 0;

    double epsilon_at(std::int64_t step) const;
    double solved_threshold(Domain domain) const;
    void validate() const;
};

/// A task: its domain and uncertainty set (the nominal member generates experience).
struct DqnTask {
    Domain domain;
    UncertaintySet set;
};

struct DqnEpisodeLog {
    int episode = 0;
    int task = 0;
    double episode_return = 0.0;
    double epsilon = 0.0;
    double mean_loss = 0.0;
    bool operator==(const DqnEpisodeLog&) const = default;
};

struct DqnResult {
    QNetwork network;
    std::vector<DqnEpisodeLog> log;
    DqnMode mode = DqnMode::option_heads;
    std::vector<Domain> tasks;
    std::optional<int> solved_at;  ///< episode at which every task was solved, if stopped early

    int head_for(int task) const { return mode == DqnMode::single_head ? 0 : task; }
};

/// Alternates episodes between tasks, acting epsilon-greedily on each task's nominal
/// model and performing one minibatch update per environment step.
DqnResult train_multitask_dqn(const DqnConfig& config, const std::vector<DqnTask>& tasks, DqnMode mode,
                              const std::function<void(const DqnEpisodeLog&)>& on_episode = {});

/// Greedy action of `head` at state x (lowest index wins ties).
int greedy_action(const QNetwork& net, int head, Domain domain, const EnvState& x);

/// Header: episode,task,return,epsilon,mean_loss
void write_dqn_log(const std::vector<DqnEpisodeLog>& rows, const std::vector<Domain>& tasks, const std::string& path);

}  // namespace ropi
