#include <benchmark/benchmark.h>

#include <random>

#include "weatherseg/pseudo_label.hpp"
#include "weatherseg/synthdata.hpp"
#include "weatherseg/trainer.hpp"

using namespace weatherseg;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = u(rng);
  return Tensor({rows, cols}, std::move(v), true);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Tape tape;
    tape.backward(sum(matmul(a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.variant = static_cast<Variant>(state.range(0));
  Trainer trainer(cfg);
  TrainState s = init_state(cfg);
  const auto [labeled, unlabeled] = trainer.batches_for_step(0);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(s, labeled, unlabeled, cfg));
  state.SetLabel(std::string(variant_name(cfg.variant)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Variant::kSupervisedBaseline))
    ->Arg(static_cast<int>(Variant::kSingleTeacher))
    ->Arg(static_cast<int>(Variant::kComplete))
    ->Unit(benchmark::kMillisecond);

void BM_VarianceStudy(benchmark::State& state) {
  VarianceStudyConfig cfg;
  cfg.trials = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(variance_study(cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_VarianceStudy)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_GenerateScene(benchmark::State& state) {
  ModelDims dims;
  dims.height = dims.width = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_scene(dims, WeatherConfig::hard(), seed++));
}
BENCHMARK(BM_GenerateScene)->Arg(16)->Arg(64);

}  // namespace
BENCHMARK_MAIN();
