#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ropi/asap.hpp"
#include "ropi/errors.hpp"
#include "ropi/eval.hpp"
#include "ropi/experiment.hpp"
#include "ropi/verification.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kDivergence = 3,
    kVerificationFailed = 4,
};

/// Relative paths are placed under $ROPI_OUTPUT_ROOT when it is set.
fs::path resolve_output(const std::string& dir) {
    const fs::path p(dir);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("ROPI_OUTPUT_ROOT"); root != nullptr && *root != '\0') return fs::path(root) / p;
    return p;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<ropi::Domain> checkpoint_domains(const ropi::Checkpoint& checkpoint) {
    if (const auto* lin = std::get_if<ropi::LinearCheckpoint>(&checkpoint)) return {lin->domain};
    return std::get<ropi::DqnCheckpoint>(checkpoint).tasks;
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ropi::IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out) {
    ropi::ExperimentConfig config = ropi::load_config(config_path);
    if (seed) config.apply_seed(*seed);
    if (!out.empty()) config.output_dir = out;
    config.validate();
    const fs::path dir = resolve_output(config.output_dir);
    std::cout << "training " << ropi::to_string(config.mode) << " (seed " << config.seed << ") into " << dir.string()
              << std::endl;
    const ropi::TrainingArtifacts artifacts = ropi::run_training(config, dir.string());
    std::cout << "wrote " << (dir / artifacts.checkpoint).string() << '\n'
              << "wrote " << (dir / artifacts.log).string() << '\n'
              << "wrote " << (dir / artifacts.resolved_config).string() << '\n';
    return kOk;
}

int cmd_evaluate(const std::vector<std::string>& checkpoints, const std::vector<std::string>& labels,
                 const std::string& config_path, const std::string& out, int threads) {
    if (!labels.empty() && labels.size() != checkpoints.size())
        throw ropi::ConfigError("one label per checkpoint is required", "--label");
    const ropi::ExperimentConfig config = ropi::load_config(config_path);
    std::vector<ropi::Checkpoint> loaded;
    for (const std::string& path : checkpoints) {
        if (!fs::exists(path)) throw ropi::IoError("checkpoint not found: " + path);
        loaded.push_back(ropi::load_checkpoint(path));
    }
    const fs::path dir = resolve_output(out.empty() ? config.output_dir : out);
    ensure_directory(dir);
    const int workers = threads > 0 ? threads : config.sweep.threads;

    std::map<ropi::Domain, std::vector<ropi::SweepReport>> by_domain;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        const ropi::Checkpoint& checkpoint = loaded[i];
        const std::string label =
            labels.empty() ? std::string(ropi::to_string(ropi::checkpoint_mode(checkpoint))) : labels[i];
        for (ropi::Domain d : checkpoint_domains(checkpoint)) {
            const ropi::SweepGrid grid = config.sweep_grid(d);
            ropi::SweepReport report = ropi::sweep(ropi::evaluation_policy(checkpoint, d, label), grid, workers);
            report.metadata.timestamp = utc_timestamp();
            report.metadata.config_hash = ropi::config_hash(config);
            const fs::path path = dir / ropi::report_filename(label, d);
            ropi::write_report(report, path.string());
            std::cout << "wrote " << path.string() << "  (grid mean " << report.grid_mean() << ", worst "
                      << report.worst_mean() << ")\n";
            by_domain[d].push_back(std::move(report));
        }
    }
    for (const auto& [domain, reports] : by_domain) {
        const fs::path path = dir / ("comparison_" + std::string(ropi::to_string(domain)) + "_" +
                                     std::string(ropi::varied_parameter_name(domain)) + ".csv");
        ropi::compare_reports(reports, path.string());
        std::cout << "wrote " << path.string() << '\n';
    }
    return kOk;
}

/// Splits "<label>=<path>"; a bare path takes its label from the report file name.
std::pair<std::string, std::string> parse_report_argument(const std::string& arg) {
    if (const auto eq = arg.find('='); eq != std::string::npos) return {arg.substr(0, eq), arg.substr(eq + 1)};
    std::string stem = fs::path(arg).stem().string();
    for (ropi::Domain d : {ropi::Domain::cartpole, ropi::Domain::acrobot}) {
        const std::string suffix =
            "_" + std::string(ropi::to_string(d)) + "_" + std::string(ropi::varied_parameter_name(d));
        if (stem.size() > suffix.size() && stem.ends_with(suffix)) return {stem.substr(0, stem.size() - suffix.size()), arg};
    }
    return {stem, arg};
}

int cmd_sweep_compare(const std::vector<std::string>& inputs, const std::string& out) {
    std::vector<ropi::SweepReport> reports;
    for (const std::string& arg : inputs) {
        const auto [label, path] = parse_report_argument(arg);
        ropi::SweepReport report;
        report.rows = ropi::read_report(path);
        report.metadata.policy_label = label;
        std::cout << label << ": grid mean " << report.grid_mean() << ", worst " << report.worst_mean() << '\n';
        reports.push_back(std::move(report));
    }
    const fs::path path = resolve_output(out);
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    ropi::compare_reports(reports, path.string());
    std::cout << "wrote " << path.string() << '\n';
    return kOk;
}

int cmd_verify(std::uint64_t seed) {
    ropi::verify::VerifyOptions options;
    options.seed = seed;
    const auto results = ropi::verify::run_all(options);
    std::cout << ropi::verify::format_table(results);
    std::size_t failed = 0;
    for (const auto& r : results) failed += r.passed ? 0 : 1;
    std::cout << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << '\n';
    return failed == 0 ? kOk : kVerificationFailed;
}

int cmd_partition_map(const std::string& checkpoint_path, const std::string& grid_spec, const std::string& out) {
    if (!fs::exists(checkpoint_path)) throw ropi::IoError("checkpoint not found: " + checkpoint_path);
    const ropi::Checkpoint checkpoint = ropi::load_checkpoint(checkpoint_path);
    const auto* lin = std::get_if<ropi::LinearCheckpoint>(&checkpoint);
    if (lin == nullptr) throw ropi::ContractViolation("partition-map needs an option-policy checkpoint, not a Q-network");
    const ropi::PartitionGrid grid = ropi::parse_partition_grid(grid_spec);
    const fs::path path = resolve_output(out);
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    ropi::write_partition_csv(ropi::partition_map(lin->policy, grid), path.string());
    std::cout << "wrote " << path.string() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust options policy iteration and multi-task DQN experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    auto* train = app.add_subcommand("train", "Train the agent described by a config file");
    train->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "Override the global seed");
    train->add_option("--out", out, "Output directory (overrides output_dir)");

    std::vector<std::string> checkpoints;
    std::vector<std::string> labels;
    int threads = 0;
    auto* evaluate = app.add_subcommand("evaluate", "Sweep checkpoints over the config's parameter grid");
    evaluate->add_option("--checkpoint", checkpoints, "Checkpoint file (repeatable)")->required();
    evaluate->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--label", labels, "Policy label per checkpoint (default: its mode)");
    evaluate->add_option("--out", out, "Output directory (default: the config's output_dir)");
    evaluate->add_option("--threads", threads, "Sweep worker threads (default: sweep.threads)");

    std::vector<std::string> reports;
    std::string compare_out = "comparison.csv";
    auto* compare = app.add_subcommand("sweep-compare", "Stack sweep reports into one comparison CSV");
    compare->add_option("--report", reports, "Report CSV, optionally as <label>=<path> (repeatable)")->required();
    compare->add_option("--out", compare_out, "Output CSV");

    std::uint64_t verify_seed = ropi::verify::VerifyOptions{}.seed;
    auto* verify = app.add_subcommand("verify", "Run the oracle and property checks");
    verify->add_option("--seed", verify_seed, "Seed of the randomised checks");

    std::string checkpoint_path;
    std::string grid_spec = "-0.21:0.21:41,-2:2:41";
    std::string partition_out = "partition_map.csv";
    auto* partition = app.add_subcommand("partition-map", "Export the most probable option over a state grid");
    partition->add_option("--checkpoint", checkpoint_path, "Option-policy checkpoint")->required();
    partition->add_option("--grid", grid_spec, "theta_lo:theta_hi:n,theta_dot_lo:theta_dot_hi:m");
    partition->add_option("--out", partition_out, "Output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*train) return cmd_train(config_path, seed, out);
        if (*evaluate) return cmd_evaluate(checkpoints, labels, config_path, out, threads);
        if (*compare) return cmd_sweep_compare(reports, compare_out);
        if (*verify) return cmd_verify(verify_seed);
        if (*partition) return cmd_partition_map(checkpoint_path, grid_spec, partition_out);
    } catch (const ropi::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ropi::TrainingDivergence& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return kDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
