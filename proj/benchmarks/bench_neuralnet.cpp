#include "l96uq/neuralnet.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace l96uq::nn;

struct Fixture {
  MlpConfig cfg;
  MlpParams params;
  Eigen::MatrixXd x;
  Eigen::MatrixXd t;

  Fixture(int inputs, int batch) {
    cfg.layer_sizes = {inputs, 50, 50, 8};
    l96uq::Rng rng{7};
    params = init_params(cfg, rng);
    std::normal_distribution<double> n01;
    x.resize(inputs, batch);
    t.resize(8, batch);
    for (auto& v : x.reshaped()) v = n01(rng);
    for (auto& v : t.reshaped()) v = n01(rng);
  }
};

void BM_ForwardBatch(benchmark::State& state) {
  Fixture f(24, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Eigen::MatrixXd y = forward_batch(f.params, f.cfg, f.x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_ForwardBatch)->Arg(50)->Arg(3000);

void BM_Backward(benchmark::State& state) {
  Fixture f(24, 50);
  for (auto _ : state) {
    MlpParams g = backward(f.params, f.cfg, f.x, f.t, LossKind::MeanMse);
    benchmark::DoNotOptimize(g.layers[0].weight.data());
  }
}
BENCHMARK(BM_Backward);

void BM_AdamStep(benchmark::State& state) {
  Fixture f(24, 50);
  const MlpParams g = backward(f.params, f.cfg, f.x, f.t, LossKind::MeanMse);
  AdamState adam = AdamState::for_params(f.params, 1e-3, 0.0);
  for (auto _ : state) {
    adam_step(adam, f.params, g);
    benchmark::DoNotOptimize(f.params.layers[0].weight.data());
  }
}
BENCHMARK(BM_AdamStep);

}  // namespace
