#include "l96uq/verify.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace l96uq::verify;

ScoredSet make_set(Eigen::Index m) {
  std::mt19937_64 rng{9};
  std::normal_distribution<double> n01;
  ScoredSet s;
  s.mean.resize(8, m);
  s.sigma.resize(8, m);
  s.reference.resize(8, m);
  for (Eigen::Index k = 0; k < s.mean.size(); ++k) {
    s.reference.data()[k] = n01(rng);
    s.sigma.data()[k] = 0.5 + std::abs(n01(rng));
    s.mean.data()[k] = s.reference.data()[k] + s.sigma.data()[k] * n01(rng);
  }
  for (Eigen::Index k = 0; k < m; ++k) s.valid_time_index.push_back(k);
  return s;
}

void BM_PitChi2(benchmark::State& state) {
  const ScoredSet s = make_set(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(pit_chi2(s, 10));
}
BENCHMARK(BM_PitChi2)->Arg(3000);

void BM_BootstrapRmse(benchmark::State& state) {
  const ScoredSet s = make_set(3000);
  BootstrapOptions o;
  o.steps_per_index = 4;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bootstrap_ci("rmse", "bench", [](const ScoredSet& x) { return rmse(x); }, s, o));
  }
}
BENCHMARK(BM_BootstrapRmse);

}  // namespace
