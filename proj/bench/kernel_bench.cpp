// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "sitsfuse/kernels.hpp"
#include "sitsfuse/reference_kernels.hpp"
#include "sitsfuse/rng.hpp"

namespace {

using namespace sitsfuse;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng = make_stream(seed, "bench");
  std::vector<double> v(n);
  for (auto& x : v) x = uniform01(rng) - 0.5;
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::matmul(a.data(), b.data(), c.data(), n, n, n, false);
    else
      reference::matmul(a.data(), b.data(), c.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_Conv(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const kernels::ConvGeometry g{8, 32, hw, hw, 32, 3, 1, 1};
  const auto x = random_vector(g.batch * g.in_channels * hw * hw, 3);
  const auto w = random_vector(g.out_channels * g.in_channels * 9, 4);
  const auto bias = random_vector(g.out_channels, 5);
  std::vector<double> y(g.batch * g.out_channels * g.out_height() * g.out_width());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y.data());
    else
      reference::conv2d_forward(g, x.data(), w.data(), bias.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_SetMeanStd(benchmark::State& state) {
  const std::size_t n = 512, s = 32, d = static_cast<std::size_t>(state.range(0));
  const auto x = random_vector(n * s * d, 6);
  std::vector<double> y(n * 2 * d);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::set_mean_std_forward(n, s, d, x.data(), y.data());
    else
      reference::set_mean_std_forward(n, s, d, x.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Matmul<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Conv<true>)->Arg(16)->Arg(32);
BENCHMARK(BM_Conv<false>)->Arg(16)->Arg(32);
BENCHMARK(BM_SetMeanStd<true>)->Arg(32)->Arg(64);
BENCHMARK(BM_SetMeanStd<false>)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
