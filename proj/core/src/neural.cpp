#include "ropi/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "ropi/errors.hpp"

namespace ropi {

std::string_view to_string(InputEncoding encoding) {
    return encoding == InputEncoding::trig ? "trig" : "raw";
}

InputEncoding parse_input_encoding(const std::string& name) {
    if (name == "trig") return InputEncoding::trig;
    if (name == "raw") return InputEncoding::raw;
    throw ConfigError("unknown input encoding '" + name + "' (expected trig or raw)", "dqn.input_encoding");
}

int input_width(InputEncoding encoding) { return encoding == InputEncoding::trig ? 6 : kStateDim; }

Eigen::VectorXd encode_state(Domain domain, const EnvState& x, InputEncoding encoding) {
    if (encoding == InputEncoding::raw) return Eigen::Map<const Eigen::VectorXd>(x.data(), kStateDim);
    Eigen::VectorXd out(6);
    if (domain == Domain::cartpole) {
        out << x[0], x[1], x[2], x[3], 0.0, 0.0;
    } else {
        out << std::cos(x[0]), std::sin(x[0]), std::cos(x[2]), std::sin(x[2]), x[1], x[3];
    }
    return out;
}

// DenseLayer ---------------------------------------------------------------

DenseLayer::DenseLayer(int inputs, int outputs)
    : inputs_(inputs), outputs_(outputs), params_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(inputs) * outputs + outputs)) {
    if (inputs < 1 || outputs < 1) throw ConfigError("layer sizes must be positive", "network.hidden");
}

void DenseLayer::initialize(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(inputs_));
    for (Eigen::Index i = 0; i < params_.size(); ++i) params_[i] = uniform(rng, -bound, bound);
}

// QNetwork -----------------------------------------------------------------

void NetworkShape::validate() const {
    if (inputs < 1) throw ConfigError("must be positive", "network.inputs");
    if (hidden.empty()) throw ConfigError("at least one hidden layer is required", "network.hidden");
    for (int h : hidden)
        if (h < 1) throw ConfigError("layer widths must be positive", "network.hidden");
    if (heads < 1) throw ConfigError("at least one head is required", "network.heads");
    if (actions < 1) throw ConfigError("must be positive", "network.actions");
}

QNetwork::QNetwork(const NetworkShape& shape) : shape_(shape) {
    shape_.validate();
    const std::size_t trunk = trunk_depth();
    int width = shape_.inputs;
    for (std::size_t l = 0; l < trunk; ++l) {
        layers_.emplace_back(width, shape_.hidden[l]);
        width = shape_.hidden[l];
    }
    for (int h = 0; h < shape_.heads; ++h) {
        layers_.emplace_back(width, shape_.hidden.back());
        layers_.emplace_back(shape_.hidden.back(), shape_.actions);
    }
}

QNetwork::QNetwork(const NetworkShape& shape, std::vector<DenseLayer> layers) : QNetwork(shape) {
    if (layers.size() != layers_.size()) throw ConfigError("layer count does not match the shape", "network");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].inputs() != layers_[i].inputs() || layers[i].outputs() != layers_[i].outputs())
            throw ConfigError("layer " + std::to_string(i) + " does not match the shape", "network");
        if (!layers[i].parameters().allFinite())
            throw ConfigError("layer " + std::to_string(i) + " has non-finite parameters", "network");
    }
    layers_ = std::move(layers);
}

void QNetwork::check_head(int head) const {
    if (head < 0 || head >= shape_.heads)
        throw ContractViolation("QNetwork: head " + std::to_string(head) + " does not exist");
}

std::vector<int> QNetwork::path(int head) const {
    check_head(head);
    std::vector<int> out;
    const int trunk = static_cast<int>(trunk_depth());
    for (int l = 0; l < trunk; ++l) out.push_back(l);
    out.push_back(trunk + 2 * head);
    out.push_back(trunk + 2 * head + 1);
    return out;
}

std::size_t QNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : layers_) n += static_cast<std::size_t>(l.parameters().size());
    return n;
}

void QNetwork::initialize(Rng& rng) {
    for (DenseLayer& l : layers_) l.initialize(rng);
}

Eigen::VectorXd QNetwork::encode(Domain domain, const EnvState& x) const {
    if (shape_.inputs != input_width(shape_.encoding))
        throw ContractViolation("QNetwork: input width does not match the input encoding");
    return encode_state(domain, x, shape_.encoding);
}

Eigen::MatrixXd QNetwork::predict(const Eigen::MatrixXd& x, int head) const {
    if (x.rows() != shape_.inputs) throw ContractViolation("QNetwork: input has the wrong width");
    const std::vector<int> p = path(head);
    Eigen::MatrixXd a = x;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const DenseLayer& layer = layers_[static_cast<std::size_t>(p[k])];
        Eigen::MatrixXd z = layer.weights() * a;
        z.colwise() += layer.bias();
        a = (k + 1 < p.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : std::move(z);
    }
    return a;
}

Eigen::MatrixXd QNetwork::forward(const Eigen::MatrixXd& x, int head, ForwardCache& cache) const {
    if (x.rows() != shape_.inputs) throw ContractViolation("QNetwork: input has the wrong width");
    if (!x.allFinite()) throw ContractViolation("QNetwork: input is not finite");
    cache.head = head;
    cache.path = path(head);
    cache.inputs.clear();
    Eigen::MatrixXd a = x;
    for (std::size_t k = 0; k < cache.path.size(); ++k) {
        const DenseLayer& layer = layers_[static_cast<std::size_t>(cache.path[k])];
        cache.inputs.push_back(a);
        Eigen::MatrixXd z = layer.weights() * a;
        z.colwise() += layer.bias();
        a = (k + 1 < cache.path.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : std::move(z);
    }
    return a;
}

NetworkGradients QNetwork::backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad) const {
    if (cache.empty() || cache.inputs.size() != cache.path.size())
        throw ContractViolation("QNetwork::backward: no forward cache");
    if (output_grad.rows() != shape_.actions || output_grad.cols() != cache.inputs.front().cols())
        throw ContractViolation("QNetwork::backward: output gradient has the wrong shape");

    NetworkGradients grads;
    grads.touched.assign(layers_.size(), false);
    grads.layers.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) grads.layers[i] = Eigen::VectorXd::Zero(layers_[i].parameters().size());

    Eigen::MatrixXd g = output_grad;
    for (std::size_t k = cache.path.size(); k-- > 0;) {
        const auto idx = static_cast<std::size_t>(cache.path[k]);
        const DenseLayer& layer = layers_[idx];
        const Eigen::MatrixXd& a = cache.inputs[k];
        Eigen::VectorXd& out = grads.layers[idx];
        Eigen::Map<Eigen::MatrixXd>(out.data(), layer.outputs(), layer.inputs()).noalias() = g * a.transpose();
        out.tail(layer.outputs()) = g.rowwise().sum();
        grads.touched[idx] = true;
        if (k > 0) {
            Eigen::MatrixXd back = layer.weights().transpose() * g;
            g = back.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
        }
    }
    return grads;
}

bool QNetwork::finite() const {
    return std::all_of(layers_.begin(), layers_.end(), [](const DenseLayer& l) { return l.parameters().allFinite(); });
}

// ADAM ---------------------------------------------------------------------

AdamState AdamState::zeros(Eigen::Index size, const AdamHyper& hyper) {
    return AdamState{Eigen::VectorXd::Zero(size), Eigen::VectorXd::Zero(size), 0, hyper};
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractViolation("adam_step: shape mismatch");
    if (!grads.allFinite()) throw EvaluationError("adam_step: non-finite gradient; step rejected");
    const AdamHyper& h = state.hyper;
    state.step += 1;
    state.m = h.beta1 * state.m + (1.0 - h.beta1) * grads;
    state.v = h.beta2 * state.v + (1.0 - h.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    params.array() -= h.step_size * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + h.epsilon);
}

NetworkOptimizer::NetworkOptimizer(const QNetwork& net, const AdamHyper& hyper) {
    for (const DenseLayer& l : net.layers()) states_.push_back(AdamState::zeros(l.parameters().size(), hyper));
}

void NetworkOptimizer::step(QNetwork& net, const NetworkGradients& grads) {
    if (grads.layers.size() != states_.size() || net.layers().size() != states_.size())
        throw ContractViolation("NetworkOptimizer: gradient does not match the network");
    for (std::size_t i = 0; i < states_.size(); ++i)
        if (grads.touched[i] && !grads.layers[i].allFinite())
            throw EvaluationError("NetworkOptimizer: non-finite gradient; step rejected");
    for (std::size_t i = 0; i < states_.size(); ++i)
        if (grads.touched[i]) adam_step(net.layers()[i].parameters(), grads.layers[i], states_[i]);
}

// Replay -------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("must be positive", "dqn.replay_capacity");
}

void ReplayBuffer::push(ReplayEntry entry) {
    if (entry.candidates.empty() || entry.nominal_index >= entry.candidates.size())
        throw ContractViolation("ReplayBuffer: entry needs candidates including the nominal one");
    if (entries_.size() < capacity_) {
        entries_.push_back(std::move(entry));
    } else {
        entries_[head_] = std::move(entry);
        head_ = (head_ + 1) % capacity_;
    }
}

const ReplayEntry& ReplayBuffer::operator[](std::size_t i) const {
    if (i >= entries_.size()) throw ContractViolation("ReplayBuffer: index out of range");
    return entries_[(head_ + i) % entries_.size()];
}

std::vector<const ReplayEntry*> ReplayBuffer::sample(std::size_t count, Rng& rng) const {
    if (entries_.empty()) throw ContractViolation("ReplayBuffer: sampling from an empty buffer");
    std::vector<const ReplayEntry*> out;
    out.reserve(count);
    const double n = static_cast<double>(entries_.size());
    for (std::size_t i = 0; i < count; ++i) {
        auto idx = static_cast<std::size_t>(uniform01(rng) * n);
        out.push_back(&entries_[std::min(idx, entries_.size() - 1)]);
    }
    return out;
}

// Targets ------------------------------------------------------------------

Eigen::VectorXd robust_dqn_target(const std::vector<const ReplayEntry*>& entries, const QNetwork& target, int head,
                                  double discount, bool robust) {
    Eigen::Index columns = 0;
    for (const ReplayEntry* e : entries) {
        if (e->candidates.empty()) throw ContractViolation("robust_dqn_target: entry has no candidates");
        if (e->nominal_index >= e->candidates.size()) throw ContractViolation("robust_dqn_target: bad nominal index");
        columns += robust ? static_cast<Eigen::Index>(e->candidates.size()) : 1;
    }

    Eigen::MatrixXd x(target.shape().inputs, columns);
    Eigen::Index col = 0;
    for (const ReplayEntry* e : entries) {
        if (robust) {
            for (const NextCandidate& c : e->candidates) x.col(col++) = target.encode(e->domain, c.next_state);
        } else {
            x.col(col++) = target.encode(e->domain, e->candidates[e->nominal_index].next_state);
        }
    }
    const Eigen::RowVectorXd best = columns > 0 ? Eigen::RowVectorXd(target.predict(x, head).colwise().maxCoeff())
                                                : Eigen::RowVectorXd();

    Eigen::VectorXd y(static_cast<Eigen::Index>(entries.size()));
    col = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const ReplayEntry& e = *entries[i];
        double next = std::numeric_limits<double>::infinity();
        if (robust) {
            for (const NextCandidate& c : e.candidates) {
                const double v = c.terminal ? 0.0 : best[col];
                ++col;
                if (v < next) next = v;
            }
        } else {
            next = e.candidates[e.nominal_index].terminal ? 0.0 : best[col];
            ++col;
        }
        y[static_cast<Eigen::Index>(i)] = e.reward + discount * next;
    }
    return y;
}

// Training -----------------------------------------------------------------

std::string to_string(DqnMode mode) {
    switch (mode) {
        case DqnMode::single_head: return "dqn";
        case DqnMode::option_heads: return "odqn";
        case DqnMode::robust_option_heads: return "rodqn";
    }
    return "unknown";
}

DqnMode parse_dqn_mode(const std::string& name) {
    if (name == "dqn") return DqnMode::single_head;
    if (name == "odqn") return DqnMode::option_heads;
    if (name == "rodqn") return DqnMode::robust_option_heads;
    throw ConfigError("unknown DQN mode '" + name + "' (expected dqn, odqn or rodqn)", "mode");
}

double DqnConfig::epsilon_at(std::int64_t step) const {
    if (epsilon_decay_steps <= 0) return epsilon_end;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(epsilon_decay_steps));
    return epsilon_start + (epsilon_end - epsilon_start) * frac;
}

double DqnConfig::solved_threshold(Domain domain) const {
    return domain == Domain::cartpole ? cartpole_solved : acrobot_solved;
}

void DqnConfig::validate() const {
    if (episodes < 0) throw ConfigError("must be non-negative", "dqn.episodes");
    if (replay_capacity == 0) throw ConfigError("must be positive", "dqn.replay_capacity");
    if (batch_size == 0 || batch_size > replay_capacity)
        throw ConfigError("must lie in [1, replay_capacity]", "dqn.batch_size");
    if (target_sync < 1) throw ConfigError("must be at least 1", "dqn.target_sync");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0)) throw ConfigError("must lie in [0, 1]", "dqn.epsilon_start");
    if (!(epsilon_end >= 0.0 && epsilon_end <= 1.0)) throw ConfigError("must lie in [0, 1]", "dqn.epsilon_end");
    if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("must lie in [0, 1)", "dqn.discount");
    if (!(adam.step_size > 0.0)) throw ConfigError("must be positive", "dqn.step_size");
    if (hidden.empty()) throw ConfigError("at least one hidden layer is required", "dqn.hidden");
    for (int h : hidden)
        if (h < 1) throw ConfigError("layer widths must be positive", "dqn.hidden");
    if (solved_window < 1) throw ConfigError("must be at least 1", "dqn.solved_window");
    if (divergence_patience < 1) throw ConfigError("must be at least 1", "dqn.divergence_patience");
}

int greedy_action(const QNetwork& net, int head, Domain domain, const EnvState& x) {
    const Eigen::VectorXd q = net.predict(net.encode(domain, x), head).col(0);
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < q.size(); ++a)
        if (q[a] > q[best]) best = a;
    return static_cast<int>(best);
}

namespace {

/// One minibatch step; returns the loss.
double train_step(QNetwork& online, const QNetwork& target, NetworkOptimizer& optimizer, const ReplayBuffer& buffer,
                  int head, const DqnConfig& cfg, bool robust, Rng& rng) {
    const std::vector<const ReplayEntry*> batch = buffer.sample(cfg.batch_size, rng);
    const Eigen::VectorXd y = robust_dqn_target(batch, target, head, cfg.discount, robust);

    Eigen::MatrixXd x(online.shape().inputs, static_cast<Eigen::Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i)
        x.col(static_cast<Eigen::Index>(i)) = online.encode(batch[i]->domain, batch[i]->state);

    ForwardCache cache;
    const Eigen::MatrixXd q = online.forward(x, head, cache);
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(q.rows(), q.cols());
    double loss = 0.0;
    const double n = static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto j = static_cast<Eigen::Index>(i);
        const double diff = q(batch[i]->action, j) - y[j];
        loss += diff * diff;
        grad(batch[i]->action, j) = 2.0 * diff / n;
    }
    loss /= n;
    if (!std::isfinite(loss)) throw TrainingDivergence("train_multitask_dqn: loss is not finite");
    try {
        optimizer.step(online, online.backward(cache, grad));
    } catch (const EvaluationError& e) {
        throw TrainingDivergence(std::string("train_multitask_dqn: ") + e.what());
    }
    return loss;
}

}  // namespace

DqnResult train_multitask_dqn(const DqnConfig& cfg, const std::vector<DqnTask>& tasks, DqnMode mode,
                              const std::function<void(const DqnEpisodeLog&)>& on_episode) {
    cfg.validate();
    if (tasks.empty()) throw ConfigError("at least one task is required", "tasks");
    for (const DqnTask& t : tasks)
        if (t.set.domain() != t.domain) throw ConfigError("uncertainty set does not match the task domain", "tasks");
    const bool robust = mode == DqnMode::robust_option_heads;

    DqnResult result;
    result.mode = mode;
    for (const DqnTask& t : tasks) result.tasks.push_back(t.domain);

    Rng rng(cfg.seed);
    NetworkShape shape;
    shape.hidden = cfg.hidden;
    shape.encoding = cfg.encoding;
    shape.inputs = input_width(cfg.encoding);
    shape.heads = mode == DqnMode::single_head ? 1 : static_cast<int>(tasks.size());
    QNetwork online(shape);
    online.initialize(rng);
    QNetwork target = online;
    NetworkOptimizer optimizer(online, cfg.adam);

    // The single-head agent is a regular DQN: one replay memory shared by every task.
    const bool shared_replay = mode == DqnMode::single_head;
    std::vector<ReplayBuffer> buffers(shared_replay ? 1 : tasks.size(), ReplayBuffer(cfg.replay_capacity));
    std::vector<std::vector<double>> returns(tasks.size());
    const std::size_t warmup = std::max(cfg.learning_starts, cfg.batch_size);
    std::int64_t step = 0;
    int over_limit = 0;

    for (int episode = 0; episode < cfg.episodes; ++episode) {
        const int task = episode % static_cast<int>(tasks.size());
        const DqnTask& spec = tasks[static_cast<std::size_t>(task)];
        const UncertaintySet& set = spec.set;
        const int head = result.head_for(task);
        const TransitionModel& nominal = set.nominal();

        EnvState x = reset(spec.domain, rng);
        double ret = 0.0;
        double loss_sum = 0.0;
        int updates = 0;
        for (int t = 0; t < nominal.max_steps(); ++t) {
            const double eps = cfg.epsilon_at(step);
            int action;
            if (uniform01(rng) < eps) {
                action = std::min(kNumActions - 1, static_cast<int>(uniform01(rng) * kNumActions));
            } else {
                action = greedy_action(online, head, spec.domain, x);
            }

            ReplayEntry entry;
            entry.task = TaskId{task};
            entry.domain = spec.domain;
            entry.state = x;
            entry.action = action;
            StepOutcome outcome;
            if (robust) {
                for (std::size_t m = 0; m < set.size(); ++m) {
                    const StepOutcome o = set[m].step(x, action);
                    entry.candidates.push_back({o.next_state, o.terminal});
                    if (m == set.nominal_index()) outcome = o;
                }
                entry.nominal_index = set.nominal_index();
            } else {
                outcome = nominal.step(x, action);
                entry.candidates.push_back({outcome.next_state, outcome.terminal});
                entry.nominal_index = 0;
            }
            entry.reward = outcome.reward;
            ReplayBuffer& buffer = buffers[shared_replay ? 0 : static_cast<std::size_t>(task)];
            buffer.push(std::move(entry));
            ++step;

            if (buffer.size() >= warmup) {
                const double loss = train_step(online, target, optimizer, buffer, head, cfg, robust, rng);
                loss_sum += loss;
                ++updates;
                over_limit = loss > cfg.divergence_loss ? over_limit + 1 : 0;
                if (over_limit >= cfg.divergence_patience)
                    throw TrainingDivergence("train_multitask_dqn: loss above " + std::to_string(cfg.divergence_loss) +
                                             " for " + std::to_string(over_limit) + " consecutive updates (episode " +
                                             std::to_string(episode) + ")");
            }
            if (step % cfg.target_sync == 0) target = online;

            ret += outcome.reward;
            if (outcome.terminal) break;
            x = outcome.next_state;
        }

        DqnEpisodeLog row{episode, task, ret, cfg.epsilon_at(step), updates > 0 ? loss_sum / updates : 0.0};
        result.log.push_back(row);
        returns[static_cast<std::size_t>(task)].push_back(ret);
        if (on_episode) on_episode(row);

        if (cfg.stop_when_solved) {
            bool all_solved = true;
            for (std::size_t k = 0; k < tasks.size() && all_solved; ++k) {
                const auto& r = returns[k];
                const auto window = static_cast<std::size_t>(cfg.solved_window);
                if (r.size() < window) {
                    all_solved = false;
                    break;
                }
                const double avg = std::accumulate(r.end() - static_cast<std::ptrdiff_t>(window), r.end(), 0.0) /
                                   static_cast<double>(window);
                all_solved = avg >= cfg.solved_threshold(tasks[k].domain);
            }
            if (all_solved) {
                result.solved_at = episode;
                break;
            }
        }
    }
    result.network = std::move(online);
    return result;
}

void write_dqn_log(const std::vector<DqnEpisodeLog>& rows, const std::vector<Domain>& tasks, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << "episode,task,return,epsilon,mean_loss\n";
    for (const auto& r : rows) {
        const std::string task = static_cast<std::size_t>(r.task) < tasks.size()
                                     ? std::string(to_string(tasks[static_cast<std::size_t>(r.task)]))
                                     : std::to_string(r.task);
        out << r.episode << ',' << task << ',' << r.episode_return << ',' << r.epsilon << ',' << r.mean_loss << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace ropi
