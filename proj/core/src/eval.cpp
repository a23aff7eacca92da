#include "ropi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "ropi/errors.hpp"

namespace ropi {

EvalPolicy greedy_policy(std::shared_ptr<const QNetwork> net, int head, Domain domain, std::string label) {
    if (!net) throw ContractViolation("greedy_policy: null network");
    if (head < 0 || head >= net->num_heads()) throw ContractViolation("greedy_policy: head does not exist");
    return EvalPolicy{std::move(label), domain, [net, head, domain](const EnvState& x, Rng&) {
                          return greedy_action(*net, head, domain, x);
                      }};
}

EvalPolicy stochastic_policy(std::shared_ptr<const DifferentiablePolicy> policy, std::string label) {
    if (!policy) throw ContractViolation("stochastic_policy: null policy");
    return EvalPolicy{std::move(label), std::nullopt,
                      [policy](const EnvState& x, Rng& rng) { return policy->sample(x, rng); }};
}

double run_episode(const EvalPolicy& policy, const TransitionModel& model, int max_steps, Rng& rng) {
    const Domain domain = model.domain();
    if (policy.domain && *policy.domain != domain)
        throw ContractViolation("run_episode: policy '" + policy.label + "' was trained for " +
                                std::string(to_string(*policy.domain)) + ", not " + std::string(to_string(domain)));
    const int horizon = max_steps > 0 ? max_steps : model.max_steps();
    EnvState x = reset(domain, rng);
    double ret = 0.0;
    for (int t = 0; t < horizon; ++t) {
        const int a = policy.act(x, rng);
        if (a < 0 || a >= kNumActions) throw ContractViolation("run_episode: policy returned an invalid action");
        const StepOutcome o = model.step(x, a);
        ret += o.reward;
        if (o.terminal) break;
        x = o.next_state;
    }
    return ret;
}

void SweepGrid::validate() const {
    if (values.empty()) throw ConfigError("at least one value is required", "sweep.values");
    if (episodes < 1) throw ConfigError("must be at least 1", "sweep.episodes");
    for (double v : values) {
        if (!(std::isfinite(v) && v > 0.0))
            throw ConfigError("values must be finite and positive", "sweep.values");
        make_model(domain, v, 0, cartpole_base, acrobot_base).validate();
    }
}

SweepGrid default_sweep_grid(Domain domain, std::uint64_t seed) {
    SweepGrid grid;
    grid.domain = domain;
    grid.seed = seed;
    const double start = domain == Domain::cartpole ? 0.5 : 1.0;
    for (int i = 0; i < 10; ++i) grid.values.push_back(start + 0.5 * i);
    return grid;
}

std::uint64_t episode_seed(std::uint64_t base, std::size_t param_index, std::size_t episode_index) {
    return derive_seed(base, param_index, episode_index);
}

SweepRow aggregate(double param_value, const std::vector<double>& returns) {
    SweepRow row;
    row.param_value = param_value;
    row.n = static_cast<int>(returns.size());
    if (returns.empty()) return row;
    double mean = 0.0;
    double m2 = 0.0;
    row.min_return = std::numeric_limits<double>::infinity();
    row.max_return = -std::numeric_limits<double>::infinity();
    std::size_t k = 0;
    for (double r : returns) {
        ++k;
        const double delta = r - mean;
        mean += delta / static_cast<double>(k);
        m2 += delta * (r - mean);
        row.min_return = std::min(row.min_return, r);
        row.max_return = std::max(row.max_return, r);
    }
    row.mean_return = mean;
    row.std_return = std::sqrt(std::max(0.0, m2 / static_cast<double>(k)));
    return row;
}

double SweepReport::grid_mean() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const SweepRow& r : rows) s += r.mean_return;
    return s / static_cast<double>(rows.size());
}

double SweepReport::worst_mean() const {
    double w = std::numeric_limits<double>::infinity();
    for (const SweepRow& r : rows) w = std::min(w, r.mean_return);
    return w;
}

SweepReport sweep(const EvalPolicy& policy, const SweepGrid& grid, int threads) {
    grid.validate();
    std::vector<double> values = grid.values;
    std::vector<std::size_t> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<std::vector<double>> returns(values.size(), std::vector<double>(static_cast<std::size_t>(grid.episodes)));
    const std::size_t total = values.size() * static_cast<std::size_t>(grid.episodes);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t job = begin; job < end; ++job) {
            const std::size_t p = job / static_cast<std::size_t>(grid.episodes);
            const std::size_t e = job % static_cast<std::size_t>(grid.episodes);
            const TransitionModel model = make_model(grid.domain, values[p], 0, grid.cartpole_base, grid.acrobot_base);
            Rng rng(episode_seed(grid.seed, p, e));
            returns[p][e] = run_episode(policy, model, grid.max_steps, rng);
        }
    };
    const auto n_threads = static_cast<std::size_t>(std::max(1, threads));
    if (n_threads == 1) {
        work(0, total);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(n_threads);
        const std::size_t chunk = (total + n_threads - 1) / n_threads;
        for (std::size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    work(std::min(total, t * chunk), std::min(total, (t + 1) * chunk));
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    SweepReport report;
    report.domain = grid.domain;
    report.parameter = grid.parameter();
    report.metadata.policy_label = policy.label;
    report.metadata.seed = grid.seed;
    for (std::size_t p : order) report.rows.push_back(aggregate(values[p], returns[p]));
    return report;
}

namespace {

void write_row(std::ostream& out, const SweepRow& r) {
    out << r.param_value << ',' << r.mean_return << ',' << r.std_return << ',' << r.min_return << ',' << r.max_return
        << ',' << r.n << '\n';
}

constexpr const char* kColumns = "param_value,mean_return,std_return,min,max,n";

}  // namespace

void write_report(const SweepReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << kColumns << '\n';
    for (const SweepRow& r : report.rows) write_row(out, r);
    if (!out) throw IoError("failed writing " + path);
}

std::vector<SweepRow> read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != kColumns) throw IoError(path + ": unexpected header");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ls, field, ',')) f.push_back(field);
        if (f.size() != 6) throw IoError(path + ": malformed row '" + line + "'");
        try {
            rows.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                            std::stoi(f[5])});
        } catch (const std::exception&) {
            throw IoError(path + ": malformed row '" + line + "'");
        }
    }
    return rows;
}

void compare_reports(const std::vector<SweepReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    out << "policy_label," << kColumns << '\n';
    for (const SweepReport& rep : reports)
        for (const SweepRow& r : rep.rows) {
            out << rep.metadata.policy_label << ',';
            write_row(out, r);
        }
    if (!out) throw IoError("failed writing " + path);
}

std::string report_filename(const std::string& policy_label, Domain domain) {
    return policy_label + "_" + std::string(to_string(domain)) + "_" + std::string(varied_parameter_name(domain)) +
           ".csv";
}

}  // namespace ropi
