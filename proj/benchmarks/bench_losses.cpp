#include "urdg/autodiff.hpp"
#include "urdg/losses.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace urdg;

Eigen::MatrixXd gaussian(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

void BM_SupconForwardBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Eigen::MatrixXd e = gaussian(n, 16, 1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % 6;
  for (auto _ : state) {
    ad::Tape t;
    const ad::Var x = t.leaf(e);
    const ad::Var l = loss::supcon(x, labels, 0.1);
    t.backward(l);
    benchmark::DoNotOptimize(l.scalar());
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_SupconForwardBackward)->RangeMultiplier(2)->Range(16, 256)->Complexity();

void BM_ClubEstimate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Eigen::MatrixXd mu = gaussian(n, 16, 2), logvar = 0.1 * gaussian(n, 16, 3), zbar = gaussian(n, 16, 4);
  for (auto _ : state) {
    ad::Tape t;
    const ad::Var l = loss::club_estimate(t.leaf(mu), t.leaf(logvar), t.constant(zbar));
    t.backward(l);
    benchmark::DoNotOptimize(l.scalar());
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_ClubEstimate)->RangeMultiplier(2)->Range(16, 256)->Complexity();

}  // namespace
