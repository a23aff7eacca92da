// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: ropi_acceptance [criterion ...]   (no arguments runs 1-10)
// Training runs and sweep CSVs go to $ROPI_ACCEPTANCE_DIR (default ./acceptance_artifacts).

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ropi/experiment.hpp"
#include "ropi/verification.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ropi;

struct Outcome {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string title;
    double budget_seconds;
    std::function<Outcome(const fs::path&)> run;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Outcome from_checks(const std::vector<verify::CheckResult>& checks) {
    Outcome o{true, ""};
    for (const auto& c : checks) {
        o.passed = o.passed && c.passed;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += c.name + (c.passed ? " ok" : " FAILED") + " [" + c.detail + "]";
    }
    return o;
}

/// Trains `config` into `dir` through the regular pipeline and returns the checkpoint.
Checkpoint train(const ExperimentConfig& config, const fs::path& dir) {
    const TrainingArtifacts art = run_training(config, dir.string());
    return load_checkpoint((dir / art.checkpoint).string());
}

SweepReport evaluate(const Checkpoint& ck, const SweepGrid& grid, const std::string& label, const fs::path& dir) {
    SweepReport r = sweep(evaluation_policy(ck, grid.domain, label), grid);
    r.metadata.policy_label = label;
    write_report(r, (dir / report_filename(label, grid.domain)).string());
    return r;
}

std::string row_means(const SweepReport& r) {
    std::ostringstream s;
    for (std::size_t i = 0; i < r.rows.size(); ++i) s << (i ? " " : "") << fmt("%.0f", r.rows[i].mean_return);
    return s.str();
}

// 6: flat policy cannot solve nominal CartPole's representation-limited task.
constexpr double kFlatThreshold = 120.0;

Outcome flat_policy(const fs::path& dir) {
    Outcome o{true, ""};
    double worst = -1e300;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ExperimentConfig c = default_config(AgentMode::flat, seed);
        const fs::path run = dir / ("flat_seed" + std::to_string(seed));
        const SweepReport r = evaluate(train(c, run), c.sweep_grid(Domain::cartpole), "flat", run);
        double best = -1e300;
        for (const auto& row : r.rows) best = std::max(best, row.mean_return);
        worst = std::max(worst, best);
        o.passed = o.passed && best < kFlatThreshold;
    }
    o.detail = "largest per-length mean over 5 seeds " + fmt("%.1f", worst) + " (threshold " +
               fmt("%.0f", kFlatThreshold) + ")";
    return o;
}

// 7: robust ASAP (K=1) solves every pole length on at least 3 of 5 seeds.
Outcome robust_asap(const fs::path& dir) {
    int solved = 0;
    int nonrobust_solved = 0;
    int nonrobust_over_half = 0;
    std::ostringstream worst;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (AgentMode mode : {AgentMode::asap_robust, AgentMode::asap}) {
            const ExperimentConfig c = default_config(mode, seed);
            const std::string label(to_string(mode));
            const fs::path run = dir / (label + "_seed" + std::to_string(seed));
            const SweepReport r = evaluate(train(c, run), c.sweep_grid(Domain::cartpole), label, run);
            std::cout << "  seed " << seed << ' ' << label << ": " << row_means(r) << '\n';
            if (mode == AgentMode::asap_robust) {
                solved += r.worst_mean() >= 180.0;
                worst << (seed > 1 ? "," : "") << fmt("%.0f", r.worst_mean());
            } else {
                nonrobust_solved += r.worst_mean() >= 180.0;
                bool over_half = true;
                for (const auto& row : r.rows)
                    if (row.param_value > 0.5) over_half = over_half && row.mean_return >= 180.0;
                nonrobust_over_half += over_half;
            }
        }
    }
    Outcome o;
    o.passed = solved >= 3;
    o.detail = std::to_string(solved) + "/5 seeds solve every length (worst means " + worst.str() +
               "); report: non-robust ASAP solves every length on " + std::to_string(nonrobust_solved) +
               "/5 seeds and every length above 0.5 m on " + std::to_string(nonrobust_over_half) + "/5";
    return o;
}

// 8: single-head DQN fails; RO-DQN beats O-DQN across pole lengths in most seeds.
Outcome multitask_dqn(const fs::path& dir) {
    int single_head_failed = 0;
    int robust_ahead = 0;
    std::ostringstream detail;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        std::map<AgentMode, double> cp_grid_mean;
        for (AgentMode mode : {AgentMode::dqn, AgentMode::odqn, AgentMode::rodqn}) {
            ExperimentConfig c = default_config(mode, seed);
            c.dqn.hidden = {64, 64, 64};
            c.dqn.episodes = 1000;
            const std::string label(to_string(mode));
            const fs::path run = dir / (label + "_seed" + std::to_string(seed));
            const Checkpoint ck = train(c, run);
            if (mode == AgentMode::dqn) {
                SweepGrid cp = c.sweep_grid(Domain::cartpole);
                cp.values = {c.cartpole.pole_length};
                SweepGrid ac = c.sweep_grid(Domain::acrobot);
                ac.values = {c.acrobot.link1_mass};
                const double cp_mean = evaluate(ck, cp, label + "_nominal", run).rows[0].mean_return;
                const double ac_mean = evaluate(ck, ac, label + "_nominal", run).rows[0].mean_return;
                const bool failed = cp_mean < 150.0 || ac_mean < -400.0;
                single_head_failed += failed;
                std::cout << "  seed " << seed << " dqn nominal: cartpole " << fmt("%.1f", cp_mean) << ", acrobot "
                          << fmt("%.1f", ac_mean) << (failed ? " (fails)" : " (solves both)") << '\n';
            } else {
                const SweepReport r = evaluate(ck, c.sweep_grid(Domain::cartpole), label, run);
                cp_grid_mean[mode] = r.grid_mean();
                std::cout << "  seed " << seed << ' ' << label << " cartpole: " << row_means(r) << " (mean "
                          << fmt("%.1f", r.grid_mean()) << ")\n";
            }
        }
        const double margin = cp_grid_mean[AgentMode::rodqn] - cp_grid_mean[AgentMode::odqn];
        robust_ahead += margin > 0.0;
        detail << (seed > 1 ? "," : "") << fmt("%+.1f", margin);
    }
    Outcome o;
    const bool a = single_head_failed == 3;
    const bool b = robust_ahead >= 2;
    o.passed = a && b;
    o.detail = std::string("(a) single head fails in ") + std::to_string(single_head_failed) + "/3 seeds" +
               (a ? "" : " [FAIL]") + "; (b) RO-DQN minus O-DQN cartpole mean " + detail.str() + ", ahead in " +
               std::to_string(robust_ahead) + "/3" + (b ? "" : " [FAIL]");
    return o;
}

std::vector<Criterion> criteria() {
    const verify::VerifyOptions opt;
    return {
        {1, "robust Bellman contraction", 10.0,
         [=](const fs::path&) { return from_checks({verify::check_contraction(opt, 1000)}); }},
        {2, "RPVI oracle equivalence", 10.0,
         [=](const fs::path&) { return from_checks({verify::check_rpvi_oracle(opt, 100)}); }},
        {3, "gradient suites", 30.0,
         [=](const fs::path&) {
             return from_checks({verify::check_asap_gradients(opt, 200), verify::check_mlp_gradients(opt, 200),
                                 verify::check_score_identity(opt, 1000)});
         }},
        {4, "physics", 30.0,
         [=](const fs::path&) {
             return from_checks({verify::check_energy_conservation(opt), verify::check_reward_bounds(opt, 100000)});
         }},
        {5, "nominal reduction", 300.0,
         [=](const fs::path&) { return from_checks({verify::check_nominal_reduction(opt)}); }},
        {6, "flat policy fails across pole lengths", 600.0, flat_policy},
        {7, "robust ASAP solves all pole lengths", 1800.0, robust_asap},
        {8, "multi-task DQN at reduced scale", 7200.0, multitask_dqn},
        {9, "exact-arithmetic spot checks", 1.0,
         [=](const fs::path&) { return from_checks({verify::check_spot_values(opt)}); }},
        {10, "batch ROPI gradient norm on the bandit", 60.0,
         [=](const fs::path&) { return from_checks({verify::check_bandit_convergence(opt)}); }},
    };
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) {
        const int id = std::atoi(argv[i]);
        if (id < 1 || id > 10) {
            std::cerr << "usage: ropi_acceptance [criterion 1-10 ...]\n";
            return 2;
        }
        wanted.push_back(id);
    }
    const char* env = std::getenv("ROPI_ACCEPTANCE_DIR");
    const fs::path root = env && *env ? fs::path(env) : fs::path("acceptance_artifacts");

    bool all_passed = true;
    for (const Criterion& c : criteria()) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
        const fs::path dir = root / ("c" + std::to_string(c.id));
        fs::create_directories(dir);
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(dir);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > c.budget_seconds) {
            o.passed = false;
            o.detail += "; over the " + fmt("%.0f", c.budget_seconds) + " s budget";
        }
        all_passed = all_passed && o.passed;
        const std::string line = "criterion " + std::to_string(c.id) + " " + (o.passed ? "PASS" : "FAIL") + " " +
                                 c.title + " (" + fmt("%.2f", secs) + " s): " + o.detail;
        std::cout << line << std::endl;
        std::ofstream(dir / "result.txt") << line << '\n';
    }
    return all_passed ? 0 : 1;
}
