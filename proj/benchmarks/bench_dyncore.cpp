#include "l96uq/dyncore.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace l96uq::dyn;

void BM_SingleScaleTendency(benchmark::State& state) {
  const SingleScaleParams p{static_cast<int>(state.range(0)), 8.0};
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(p.s, -3.0, 9.0);
  Eigen::VectorXd out(p.s);
  for (auto _ : state) {
    l96_tendency_into(x, p, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_SingleScaleTendency)->Arg(8)->Arg(40)->Arg(1000);

void BM_TwoScaleTendency(benchmark::State& state) {
  const TwoScaleParams p{8, 32, 20.0, 1.0, 10.0, 10.0};
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(p.s + p.fast_size(), -1.0, 1.0);
  Eigen::VectorXd out(x.size());
  for (auto _ : state) {
    two_scale_tendency_into(x, p, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_TwoScaleTendency);

void BM_Rk4StepSingleScale(benchmark::State& state) {
  const Model m = make_single_scale_model({8, 8.0}, 0.0125);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(8, 8.0);
  x[0] += 0.01;
  Rk4Stepper stepper;
  for (auto _ : state) {
    m.advance(x, 1, stepper);
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK(BM_Rk4StepSingleScale);

void BM_Rk4StepTwoScale(benchmark::State& state) {
  const Model m = make_two_scale_model({8, 32, 20.0, 1.0, 10.0, 10.0}, 0.0025, 5);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m.dim);
  x.head(8).setConstant(20.0);
  x[0] += 0.5;
  x.tail(256).setConstant(0.01);
  Rk4Stepper stepper;
  for (auto _ : state) {
    m.advance(x, 1, stepper);
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK(BM_Rk4StepTwoScale);

}  // namespace
