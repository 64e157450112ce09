#include <benchmark/benchmark.h>

#include "efc/baselines.hpp"

namespace {

using namespace efc;

NetworkParams bench_net(int width) {
  return make_network({{32, width, Activation::ReLU, true},
                       {width, width, Activation::ReLU, true},
                       {width, 10, Activation::Softplus, true}},
                      7);
}

Dataset bench_data() {
  auto seq = synthetic_tasks(1, 10, 32, 20, 2, 3);
  return seq.tasks[0].train;
}

void forward_pass(benchmark::State& state) {
  auto net = bench_net(int(state.range(0)));
  auto data = bench_data();
  Vec x = data.inputs.row(0).transpose();
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, x));
}
BENCHMARK(forward_pass)->Arg(32)->Arg(100);

void settle_dynamics(benchmark::State& state) {
  auto net = bench_net(int(state.range(0)));
  auto data = bench_data();
  Vec x = data.inputs.row(0).transpose();
  auto spec = make_loss(LossKind::SquaredError, data.labels[0], 10);
  ControllerConfig cfg;
  cfg.alpha = 0.5;
  cfg.lambda = 0.3;
  for (auto _ : state)
    benchmark::DoNotOptimize(run_to_equilibrium(net, nullptr, x, spec, cfg));
}
BENCHMARK(settle_dynamics)->Arg(32)->Arg(100)->Unit(benchmark::kMicrosecond);

void steady_state_solve(benchmark::State& state) {
  auto net = bench_net(int(state.range(0)));
  auto data = bench_data();
  Vec x = data.inputs.row(0).transpose();
  auto trace = forward(net, x);
  Vec target = Vec::Zero(10);
  target[data.labels[0]] = 1.0;
  for (auto _ : state)
    benchmark::DoNotOptimize(steady_state(net, nullptr, trace, target, 0.5));
}
BENCHMARK(steady_state_solve)->Arg(32)->Arg(100)->Unit(benchmark::kMicrosecond);

void curvature_snapshot(benchmark::State& state) {
  auto net = bench_net(int(state.range(0)));
  auto data = bench_data();
  for (auto _ : state)
    benchmark::DoNotOptimize(
        fisher_diag(net, data, LossKind::SoftmaxCrossEntropy));
}
BENCHMARK(curvature_snapshot)->Arg(32)->Arg(100)->Unit(benchmark::kMillisecond);

void preservation_signal(benchmark::State& state) {
  auto net = bench_net(int(state.range(0)));
  auto data = bench_data();
  auto anchor = snapshot_anchor(net, data, LossKind::SoftmaxCrossEntropy, 100.0);
  anchor.gamma_cap = 1.0;
  // Drift the weights so the signal is non-trivial.
  NetworkParams drifted = net;
  for (auto& w : drifted.weights) w.array() += 0.05;
  GammaOperator gamma(anchor, drifted);
  Vec presyn = Vec::Ones(drifted.layers[1].in_dim);
  for (auto _ : state) benchmark::DoNotOptimize(gamma.layer(1, presyn));
}
BENCHMARK(preservation_signal)->Arg(32)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
