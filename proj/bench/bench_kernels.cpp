// Serial reference kernels against their OpenMP counterparts. Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include "smoe/synth.hpp"
#include "smoe/voronoi.hpp"

using namespace smoe;

namespace {

struct Fixture {
  MixingMeasure g;
  Dataset data;

  explicit Fixture(std::size_t n) {
    GroundTruthConfig cfg;
    Rng rng(1);
    g = sample_ground_truth(cfg, rng);
    data = generate_dataset(g, n, cfg.nu, rng);
  }
};

const Fixture& fixture(std::size_t n) {
  static Fixture small(1000), large(100000);
  return n <= 1000 ? small : large;
}

void BM_LossGrad(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(f.g, f.data.x, f.data.y).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LossGradReference(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad_reference(f.g, f.data.x, f.data.y).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Mse(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mean_squared_error(f.g, f.data.x, f.data.y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MseReference(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mean_squared_error_reference(f.g, f.data.x, f.data.y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_L2(benchmark::State& state) {
  const auto& f = fixture(1000);
  auto other = f.g;
  other.atoms.pop_back();
  for (auto _ : state) {
    Rng rng(3);
    benchmark::DoNotOptimize(l2_distance(f.g, other, static_cast<std::size_t>(state.range(0)), rng));
  }
}

void BM_L2Reference(benchmark::State& state) {
  const auto& f = fixture(1000);
  auto other = f.g;
  other.atoms.pop_back();
  for (auto _ : state) {
    Rng rng(3);
    benchmark::DoNotOptimize(l2_distance_reference(f.g, other, static_cast<std::size_t>(state.range(0)), rng));
  }
}

}  // namespace

BENCHMARK(BM_LossGrad)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LossGradReference)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Mse)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MseReference)->Arg(1000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_L2)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_L2Reference)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
