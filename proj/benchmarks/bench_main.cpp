#include <benchmark/benchmark.h>

#include <random>

#include "ecborrow/ecborrow.hpp"

using namespace ecborrow;

namespace {

CalibrationProblem calibration_problem(int n, int k) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  CalibrationProblem p;
  p.ec_basis.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) p.ec_basis(i, j) = z(rng);
  p.target_moments = Eigen::VectorXd::Constant(k, 0.2);
  return p;
}

void BM_Calibration(benchmark::State& state) {
  const auto p = calibration_problem(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(solve_calibration(p).weights.data());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Calibration)->Args({200, 5})->Args({1000, 12})->Args({5000, 12});

void BM_AdaptiveLassoTuning(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  PseudoObservations xi{Eigen::VectorXd(n), Eigen::VectorXd::Ones(n)};
  BiasEstimates b;
  b.b_hat.resize(n);
  for (int i = 0; i < n; ++i) {
    const double bias = i % 2 ? 2.0 : 0.0;
    xi.xi_hat(i) = bias + z(rng);
    b.b_hat(i) = bias + 0.2 * z(rng);
  }
  const SelectionConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(select_comparable(xi, b, cfg).lambda);
}
BENCHMARK(BM_AdaptiveLassoTuning)->Arg(150)->Arg(1000);

void BM_BoostingFit(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(n, 12);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 12; ++j) x(i, j) = z(rng);
    y(i) = x(i, 0) + x(i, 11) * x(i, 11) + z(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(boost(x, y, 500, 3, 0.1, 5).trees.size());
}
BENCHMARK(BM_BoostingFit)->Arg(200)->Arg(700)->Unit(benchmark::kMillisecond);

void BM_Pipeline(benchmark::State& state) {
  auto sc = ScenarioConfig::with_default_coefficients();
  const auto data = generate_dataset(sc, 1, 0.0).data;
  PipelineConfig pc;
  pc.estimators = {kAipw, kAcw, kAcwAlasso};
  if (state.range(0) == 1) pc.estimators.push_back(kAcwAlassoGbm);
  for (auto _ : state) benchmark::DoNotOptimize(run_pipeline(data, pc).estimates.size());
}
BENCHMARK(BM_Pipeline)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Replication(benchmark::State& state) {
  const auto sc = ScenarioConfig::with_default_coefficients();
  PipelineConfig pc;
  pc.estimators = {kAipw, kAcw, kAcwAlasso};
  std::size_t r = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_replication(sc, pc, r++).size());
}
BENCHMARK(BM_Replication)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
