#include "l96uq/assim.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace l96uq::da;

void BM_LetkfUpdate(benchmark::State& state) {
  const auto route = static_cast<TransformRoute>(state.range(0));
  const int members = static_cast<int>(state.range(1));
  const EnsembleState bg = perturbed_ensemble(Eigen::VectorXd::Constant(8, 2.0), members, 1.0, 3);
  const ObservationRecord obs{1, Eigen::VectorXd::Constant(8, 2.5)};
  const ObsNetwork net;
  const FilterConfig cfg;
  for (auto _ : state) {
    EnsembleState a = letkf_update(bg, obs, net, cfg, route);
    benchmark::DoNotOptimize(a.members.data());
  }
}
BENCHMARK(BM_LetkfUpdate)
    ->ArgNames({"route", "members"})
    ->Args({static_cast<long>(TransformRoute::EnsembleSpace), 50})
    ->Args({static_cast<long>(TransformRoute::ObservationSpace), 50});

void BM_LetkfLocalized(benchmark::State& state) {
  const EnsembleState bg = perturbed_ensemble(Eigen::VectorXd::Constant(8, 2.0), 50, 1.0, 3);
  const ObservationRecord obs{1, Eigen::VectorXd::Constant(8, 2.5)};
  const ObsNetwork net;
  FilterConfig cfg;
  cfg.localization_radius = 4.0;
  for (auto _ : state) {
    EnsembleState a = letkf_update(bg, obs, net, cfg);
    benchmark::DoNotOptimize(a.members.data());
  }
}
BENCHMARK(BM_LetkfLocalized);

}  // namespace
