#include "ropi/asap.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ropi/errors.hpp"

namespace ropi {

Eigen::VectorXd HyperplaneFeatureMap::operator()(const EnvState& x) const {
    Eigen::VectorXd phi(static_cast<Eigen::Index>(dimension()));
    for (std::size_t i = 0; i < scale.size(); ++i) phi[static_cast<Eigen::Index>(i)] = scale[i] * x[i];
    if (bias) phi[static_cast<Eigen::Index>(scale.size())] = 1.0;
    return phi;
}

double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace {

double side(std::size_t option, int k) { return ((option >> k) & 1U) ? 1.0 : -1.0; }

}  // namespace

Eigen::VectorXd option_probabilities(const Eigen::VectorXd& activations, double temperature) {
    const auto K = static_cast<int>(activations.size());
    const std::size_t n = std::size_t{1} << K;
    Eigen::VectorXd p(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double prod = 1.0;
        for (int k = 0; k < K; ++k) prod *= logistic(side(i, k) * activations[k] / temperature);
        p[static_cast<Eigen::Index>(i)] = prod;
    }
    return p;
}

AsapPolicy::AsapPolicy(int hyperplanes, int num_actions, HyperplaneFeatureMap feature_map, double temperature)
    : hyperplanes_(hyperplanes),
      num_actions_(num_actions),
      feature_map_(std::move(feature_map)),
      temperature_(temperature) {
    if (hyperplanes_ < 0 || hyperplanes_ > 16) throw ConfigError("must lie in [0, 16]", "asap.hyperplanes");
    if (num_actions_ < 1) throw ConfigError("must be at least 1", "asap.num_actions");
    if (!(temperature_ > 0.0)) throw ConfigError("must be positive", "asap.temperature");
    if (feature_map_.scale.size() != kStateDim)
        throw ConfigError("expected one scale per state dimension", "asap.feature_scale");
    theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(beta_size() + num_options() * num_actions_));
}

AsapPolicy AsapPolicy::flat(int num_actions) { return AsapPolicy(0, num_actions); }

void AsapPolicy::initialize(Rng& rng, double beta_stddev) {
    theta_.setZero();
    std::normal_distribution<double> normal(0.0, beta_stddev);
    for (std::size_t i = 0; i < beta_size(); ++i) theta_[static_cast<Eigen::Index>(i)] = normal(rng);
}

Eigen::MatrixXd AsapPolicy::hyperplane_matrix() const {
    const auto f = static_cast<Eigen::Index>(feature_map_.dimension());
    Eigen::MatrixXd beta(hyperplanes_, f);
    for (int k = 0; k < hyperplanes_; ++k) beta.row(k) = theta_.segment(k * f, f).transpose();
    return beta;
}

Eigen::VectorXd AsapPolicy::option_logits(std::size_t option) const {
    return theta_.segment(static_cast<Eigen::Index>(chi_offset(option)), num_actions_);
}

void AsapPolicy::set_hyperplane(int k, const Eigen::VectorXd& beta) {
    const auto f = static_cast<Eigen::Index>(feature_map_.dimension());
    if (k < 0 || k >= hyperplanes_ || beta.size() != f) throw ContractViolation("set_hyperplane: bad index or size");
    theta_.segment(k * f, f) = beta;
}

void AsapPolicy::set_option_logits(std::size_t option, const Eigen::VectorXd& chi) {
    if (option >= num_options() || chi.size() != num_actions_)
        throw ContractViolation("set_option_logits: bad index or size");
    theta_.segment(static_cast<Eigen::Index>(chi_offset(option)), num_actions_) = chi;
}

void AsapPolicy::set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != theta_.size()) throw ContractViolation("AsapPolicy: parameter vector has the wrong size");
    theta_ = theta;
}

Eigen::VectorXd AsapPolicy::hyperplane_activations(const EnvState& x) const {
    if (hyperplanes_ == 0) return Eigen::VectorXd(0);
    return hyperplane_matrix() * feature_map_(x);
}

Eigen::VectorXd AsapPolicy::option_probabilities(const EnvState& x, TaskId) const {
    return ropi::option_probabilities(hyperplane_activations(x), temperature_);
}

Eigen::VectorXd AsapPolicy::action_probabilities(const EnvState& x) const {
    if (hyperplanes_ == 0) return softmax(option_logits(0));
    const Eigen::VectorXd p = option_probabilities(x);
    Eigen::VectorXd pi = Eigen::VectorXd::Zero(num_actions_);
    for (std::size_t i = 0; i < num_options(); ++i) pi += p[static_cast<Eigen::Index>(i)] * softmax(option_logits(i));
    return pi;
}

double AsapPolicy::action_probability(const EnvState& x, int action, TaskId) const {
    if (action < 0 || action >= num_actions_) throw ContractViolation("action_probability: action out of range");
    return action_probabilities(x)[action];
}

Eigen::VectorXd AsapPolicy::log_gradient(const EnvState& x, int action) const {
    if (action < 0 || action >= num_actions_) throw ContractViolation("log_gradient: action out of range");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta_.size());

    if (hyperplanes_ == 0) {
        Eigen::VectorXd score = -softmax(option_logits(0));
        score[action] += 1.0;
        grad.segment(static_cast<Eigen::Index>(chi_offset(0)), num_actions_) = score;
        return grad;
    }

    const Eigen::VectorXd phi = feature_map_(x);
    const Eigen::VectorXd z = hyperplane_matrix() * phi;
    const Eigen::VectorXd p = ropi::option_probabilities(z, temperature_);
    const std::size_t n = num_options();

    std::vector<Eigen::VectorXd> xi(n);
    double pi_a = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xi[i] = softmax(option_logits(i));
        pi_a += p[static_cast<Eigen::Index>(i)] * xi[i][action];
    }
    if (!(pi_a > 0.0)) throw EvaluationError("log_gradient: action has zero probability");

    // Intra-option parameters.
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd score = -xi[i];
        score[action] += 1.0;
        const double w = p[static_cast<Eigen::Index>(i)] * xi[i][action] / pi_a;
        grad.segment(static_cast<Eigen::Index>(chi_offset(i)), num_actions_) = w * score;
    }

    // Hyperplanes: d p_i / d beta_k = p_i * b_ik * (1 - logistic(b_ik z_k / T)) * phi / T.
    const auto f = static_cast<Eigen::Index>(feature_map_.dimension());
    for (int k = 0; k < hyperplanes_; ++k) {
        double coeff = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double b = side(i, k);
            coeff += xi[i][action] * p[static_cast<Eigen::Index>(i)] * b * (1.0 - logistic(b * z[k] / temperature_));
        }
        grad.segment(k * f, f) = (coeff / (pi_a * temperature_)) * phi;
    }
    return grad;
}

AsapPolicy::Choice AsapPolicy::sample_choice(const EnvState& x, Rng& rng, TaskId task) const {
    Choice c;
    c.option = hyperplanes_ == 0 ? 0 : static_cast<std::size_t>(sample_categorical(option_probabilities(x, task), rng));
    c.action = sample_categorical(softmax(option_logits(c.option)), rng);
    return c;
}

void PartitionGrid::validate() const {
    if (theta_points < 1 || theta_dot_points < 1) throw ConfigError("grid needs at least one point per axis", "grid");
    if (theta_lo > theta_hi || theta_dot_lo > theta_dot_hi) throw ConfigError("grid bounds are reversed", "grid");
}

PartitionGrid parse_partition_grid(const std::string& text) {
    PartitionGrid grid;
    double a, b, c, d;
    int n, m;
    char s1, s2, comma, s3, s4;
    std::istringstream in(text);
    if (!(in >> a >> s1 >> b >> s2 >> n >> comma >> c >> s3 >> d >> s4 >> m) || s1 != ':' || s2 != ':' ||
        comma != ',' || s3 != ':' || s4 != ':')
        throw ConfigError("expected 'theta_lo:theta_hi:n,theta_dot_lo:theta_dot_hi:m', got '" + text + "'", "grid");
    grid.theta_lo = a;
    grid.theta_hi = b;
    grid.theta_points = n;
    grid.theta_dot_lo = c;
    grid.theta_dot_hi = d;
    grid.theta_dot_points = m;
    grid.validate();
    return grid;
}

namespace {

double grid_point(double lo, double hi, int points, int i) {
    return points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
}

}  // namespace

std::vector<PartitionCell> partition_map(const AsapPolicy& policy, const PartitionGrid& grid) {
    if (policy.hyperplanes() < 1) throw ContractViolation("partition_map: policy has no hyperplanes");
    grid.validate();
    std::vector<PartitionCell> cells;
    cells.reserve(static_cast<std::size_t>(grid.theta_points) * static_cast<std::size_t>(grid.theta_dot_points));
    for (int i = 0; i < grid.theta_points; ++i) {
        for (int j = 0; j < grid.theta_dot_points; ++j) {
            EnvState x = grid.base;
            x[2] = grid_point(grid.theta_lo, grid.theta_hi, grid.theta_points, i);
            x[3] = grid_point(grid.theta_dot_lo, grid.theta_dot_hi, grid.theta_dot_points, j);
            Eigen::Index label;
            policy.option_probabilities(x).maxCoeff(&label);
            cells.push_back({x[2], x[3], static_cast<std::size_t>(label)});
        }
    }
    return cells;
}

void write_partition_csv(const std::vector<PartitionCell>& cells, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << "theta,theta_dot,option_label\n";
    for (const auto& c : cells) out << c.theta << ',' << c.theta_dot << ',' << c.option_label << '\n';
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace ropi
