// Microbenchmarks for the hot paths: forward/backward, conv stacks, the
// group-l2 prox, spectral norms, and full optimizer steps.
//
//   ./pathprox_bench                      # everything
//   ./pathprox_bench --benchmark_filter=Prox

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pathprox/data.hpp"
#include "pathprox/network.hpp"
#include "pathprox/optimizers.hpp"
#include "pathprox/random.hpp"
#include "pathprox/regularization.hpp"

using namespace pathprox;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng = make_rng(seed, 0xBE);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

std::vector<int> random_labels(std::size_t n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng = make_rng(seed, 0xBF);
  std::uniform_int_distribution<int> dist(0, classes - 1);
  std::vector<int> labels(n);
  for (int& l : labels) l = dist(rng);
  return labels;
}

void BM_MlpForward(benchmark::State& state) {
  const std::size_t width = static_cast<std::size_t>(state.range(0));
  const NetworkSpec spec = build_mlp(2, width, 2, 2, true);
  WeightStore store(spec);
  init_weights(store, spec, 1);
  const Tensor x = random_tensor({128, 2}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(spec, store, x));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 128);
}
BENCHMARK(BM_MlpForward)->Arg(64)->Arg(256);

void BM_MlpBackward(benchmark::State& state) {
  const std::size_t width = static_cast<std::size_t>(state.range(0));
  const NetworkSpec spec = build_mlp(2, width, 2, 2, true);
  WeightStore store(spec);
  init_weights(store, spec, 1);
  const Tensor x = random_tensor({128, 2}, 2);
  const std::vector<int> labels = random_labels(128, 2, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(data_gradients(spec, store, x, labels));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 128);
}
BENCHMARK(BM_MlpBackward)->Arg(64)->Arg(256);

void BM_CnnBackward(benchmark::State& state) {
  ToyCnnOptions opt;
  opt.channels = {1, 4, 4};
  opt.pool_after = {1};
  opt.input_h = 14;
  opt.input_w = 14;
  opt.output_dim = 10;
  const NetworkSpec spec = build_toy_cnn(opt);
  WeightStore store(spec);
  init_weights(store, spec, 1);
  const Tensor x = random_tensor({16, 1, 14, 14}, 2);
  const std::vector<int> labels = random_labels(16, 10, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(data_gradients(spec, store, x, labels));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 16);
}
BENCHMARK(BM_CnnBackward);

void BM_ProxGroupL2(benchmark::State& state) {
  const std::size_t dim = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng = make_rng(4, 0xBE);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> z(dim);
  for (double& v : z) v = dist(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(prox_group_l2(z, 0.3));
  }
}
BENCHMARK(BM_ProxGroupL2)->Arg(64)->Arg(1024);

void BM_PathNormRegularizer(benchmark::State& state) {
  const NetworkSpec spec = build_mlp(4, 128, 32, 10, true);
  const GroupingScheme scheme = derive_grouping(spec);
  WeightStore store(spec);
  init_weights(store, spec, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(path_norm_regularizer(store, scheme));
  }
}
BENCHMARK(BM_PathNormRegularizer);

void BM_JacobianSpectralNorm(benchmark::State& state) {
  const NetworkSpec spec = build_mlp(2, 64, 2, 2, true);
  WeightStore store(spec);
  init_weights(store, spec, 1);
  const Tensor x = random_tensor({2}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(jacobian_spectral_norm(spec, store, x, 1));
  }
}
BENCHMARK(BM_JacobianSpectralNorm);

void BM_OptimizerStep(benchmark::State& state) {
  const Algorithm alg = state.range(0) == 0 ? Algorithm::kSgdWeightDecay : Algorithm::kPathProx;
  const NetworkSpec spec = build_mlp(2, 64, 2, 2, true);
  const GroupingScheme scheme = derive_grouping(spec);
  OptimizerConfig oc;
  oc.algorithm = alg;
  oc.lambda = 1e-3;
  oc.schedule.kind = ScheduleKind::kConstant;
  oc.schedule.base = 0.1;
  WeightStore store(spec);
  init_weights(store, spec, 1);
  Optimizer optimizer(spec, scheme, oc);
  optimizer.attach(store);
  const Tensor x = random_tensor({128, 2}, 2);
  const std::vector<int> labels = random_labels(128, 2, 3);
  std::size_t t = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(optimizer.step(store, x, labels, ++t));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 128);
}
BENCHMARK(BM_OptimizerStep)->Arg(0)->Arg(1)->ArgNames({"alg"});

}  // namespace

BENCHMARK_MAIN();
