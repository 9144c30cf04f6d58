#include <benchmark/benchmark.h>

#include "slopekit/datagen.hpp"
#include "slopekit/lmm.hpp"
#include "slopekit/simkit.hpp"
#include "slopekit/two_stage.hpp"

using namespace slopekit;

namespace {

ScenarioConfig sized(benchmark::State& state) {
  ScenarioConfig cfg;
  cfg.n_subjects = static_cast<int>(state.range(0));
  return cfg;
}

}  // namespace

static void BM_GenerateDataset(benchmark::State& state) {
  const auto cfg = sized(state);
  std::uint64_t rep = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_dataset(cfg, ++rep));
}
BENCHMARK(BM_GenerateDataset)->Arg(200)->Arg(1000);

static void BM_RemlObjective(benchmark::State& state) {
  const auto ds = generate_dataset(sized(state), 1);
  const auto vp = VarianceParams::from_natural(9.87, 2.27, 0.159, 5.87);
  for (auto _ : state) benchmark::DoNotOptimize(reml_objective(vp, ds, Design::Full));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.total_observations()));
}
BENCHMARK(BM_RemlObjective)->Arg(200)->Arg(1000);

static void BM_FitLmm(benchmark::State& state) {
  const auto ds = generate_dataset(sized(state), 1);
  const auto design = state.range(1) ? Design::Full : Design::SlopeOnly;
  for (auto _ : state) benchmark::DoNotOptimize(fit_lmm(ds, design));
}
BENCHMARK(BM_FitLmm)->Args({200, 1})->Args({200, 0})->Unit(benchmark::kMillisecond);

static void BM_BiasCorrection(benchmark::State& state) {
  const auto ds = generate_dataset(sized(state), 1);
  const auto fit = fit_lmm(ds, Design::SlopeOnly);
  for (auto _ : state) benchmark::DoNotOptimize(bias_correction(fit, ds));
}
BENCHMARK(BM_BiasCorrection)->Arg(100)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_Replication(benchmark::State& state) {
  auto cfg = sized(state);
  cfg.mcar_rate = state.range(1) / 100.0;
  std::uint64_t rep = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_replication(cfg, ++rep, kAllMethods));
}
BENCHMARK(BM_Replication)->Args({200, 0})->Args({200, 50})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
