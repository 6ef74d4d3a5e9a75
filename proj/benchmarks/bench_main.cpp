#include <benchmark/benchmark.h>

#include <random>

#include "voxharm/evaluation.hpp"
#include "voxharm/resample.hpp"
#include "voxharm/stats.hpp"
#include "voxharm/transforms.hpp"

using namespace voxharm;

namespace {

Volume noise(std::size_t n, std::uint64_t seed, double mean, double sd) {
  Geometry g;
  g.dims = {n, n, n};
  g.spacing = {0.8, 0.8, 1.5};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> data(g.voxel_count());
  for (auto& x : data) x = d(rng);
  return Volume(g, std::move(data));
}

void BM_PooledStats(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Volume> v;
  for (std::uint64_t i = 0; i < 4; ++i) v.push_back(noise(n, i, 0.0, 100.0));
  const std::vector<double> pcts{0.5, 50.0, 99.5};
  for (auto _ : state) benchmark::DoNotOptimize(compute_stats(std::span<const Volume>(v), pcts));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(4 * n * n * n));
}
BENCHMARK(BM_PooledStats)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_HistogramMatch(benchmark::State& state) {
  const std::vector<Volume> src{noise(48, 1, 1150.0, 120.0)};
  const std::vector<Volume> ref{noise(48, 2, -400.0, 500.0)};
  HistogramMatchOptions opts;
  opts.bins = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    const auto maps = fit_histogram_match(pointers_to(src), pointers_to(ref), opts);
    benchmark::DoNotOptimize(apply_map(src[0], maps[0]));
  }
}
BENCHMARK(BM_HistogramMatch)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_Resample(benchmark::State& state) {
  const auto v = noise(48, 3, 0.0, 100.0);
  const int order = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(resample_volume(v, {0.7636, 0.7636, 0.7636}, order));
}
BENCHMARK(BM_Resample)->Arg(0)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_DiceRegions(benchmark::State& state) {
  Geometry g;
  g.dims = {64, 64, 64};
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> d(0, 3);
  std::vector<Label> a(g.voxel_count()), b(g.voxel_count());
  for (auto& x : a) x = static_cast<Label>(d(rng));
  for (auto& x : b) x = static_cast<Label>(d(rng));
  const LabelMap pa(g, a, kits_vocabulary()), pb(g, b, kits_vocabulary());
  const auto regions = default_regions();
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_case(pa, pb, regions));
}
BENCHMARK(BM_DiceRegions)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
