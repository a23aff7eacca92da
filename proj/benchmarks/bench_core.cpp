#include <benchmark/benchmark.h>

#include "ropi/linear_rl.hpp"
#include "ropi/neural.hpp"
#include "ropi/uncertainty.hpp"

namespace {

using namespace ropi;

void BM_CartPoleStep(benchmark::State& state) {
    const CartPoleParams p;
    EnvState x{0.01, 0.0, 0.02, 0.0};
    for (auto _ : state) {
        const StepOutcome o = cartpole_step(x, 1, p);
        benchmark::DoNotOptimize(o);
    }
}
BENCHMARK(BM_CartPoleStep);

void BM_AcrobotStep(benchmark::State& state) {
    const AcrobotParams p;
    EnvState x{0.05, 0.0, -0.05, 0.0};
    for (auto _ : state) {
        const StepOutcome o = acrobot_step(x, 1, p);
        benchmark::DoNotOptimize(o);
    }
}
BENCHMARK(BM_AcrobotStep);

void BM_RobustBackup(benchmark::State& state) {
    UncertaintySpec spec = default_uncertainty_spec(Domain::cartpole, 1);
    spec.n = static_cast<int>(state.range(0));
    const UncertaintySet set = sample_uncertainty_set(spec);
    const TilingSpec tiling = default_tiling(Domain::cartpole);
    const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(tiling.dimension()), -1.0, 1.0);
    const EnvState x{0.0, 0.1, 0.02, -0.1};
    for (auto _ : state) {
        const RobustBackupResult r =
            robust_backup(x, 0, [&](const EnvState& y) { return tile_features(y, tiling).dot(w); }, set);
        benchmark::DoNotOptimize(r);
    }
}
BENCHMARK(BM_RobustBackup)->Arg(1)->Arg(5)->Arg(20);

void BM_TabularBellman(benchmark::State& state) {
    Rng rng(1);
    const auto n = static_cast<std::size_t>(state.range(0));
    const TabularRobustMDP mdp = random_tabular_mdp(n, 3, 4, 0.9, rng);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (auto _ : state) {
        v = tabular_robust_bellman(v, mdp);
        benchmark::DoNotOptimize(v.data());
    }
}
BENCHMARK(BM_TabularBellman)->Arg(6)->Arg(64);

void BM_MlpForwardBackward(benchmark::State& state) {
    NetworkShape shape;
    shape.hidden = {static_cast<int>(state.range(0)), static_cast<int>(state.range(0)),
                    static_cast<int>(state.range(0))};
    shape.heads = 2;
    QNetwork net(shape);
    Rng rng(2);
    net.initialize(rng);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(shape.inputs, 64);
    const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(shape.actions, 64);
    for (auto _ : state) {
        ForwardCache cache;
        benchmark::DoNotOptimize(net.forward(x, 1, cache).data());
        const NetworkGradients grads = net.backward(cache, g);
        benchmark::DoNotOptimize(grads.layers.data());
    }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
