#include <benchmark/benchmark.h>

#include <vector>

#include "rifle/kernels.hpp"
#include "rifle/rng.hpp"

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  rifle::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1);
  const auto b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      rifle::kernels::parallel::gemm_nn(n, n, n, a, b, c, false);
    } else {
      rifle::kernels::reference::gemm_nn(n, n, n, a, b, c, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * n * n * n));
}

rifle::kernels::ConvShape conv_shape(std::size_t channels) {
  return {16, channels, channels, 32, 32, 1};
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto s = conv_shape(static_cast<std::size_t>(state.range(0)));
  const auto in = random_vector(s.batch * s.in_channels * s.in_plane(), 3);
  const auto w = random_vector(s.weight_size(), 4);
  const auto bias = random_vector(s.out_channels, 5);
  std::vector<double> out(s.batch * s.out_channels * s.out_plane());
  for (auto _ : state) {
    if constexpr (Parallel) {
      rifle::kernels::parallel::conv3x3_forward(s, in, w, bias, out);
    } else {
      rifle::kernels::reference::conv3x3_forward(s, in, w, bias, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto s = conv_shape(static_cast<std::size_t>(state.range(0)));
  const auto in = random_vector(s.batch * s.in_channels * s.in_plane(), 3);
  const auto w = random_vector(s.weight_size(), 4);
  const auto gout = random_vector(s.batch * s.out_channels * s.out_plane(), 6);
  std::vector<double> gin(in.size()), gw(w.size()), gb(s.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) {
      rifle::kernels::parallel::conv3x3_backward(s, in, w, gout, gin, gw, gb);
    } else {
      rifle::kernels::reference::conv3x3_backward(s, in, w, gout, gin, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Arg(8)->Arg(32);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Arg(8)->Arg(32);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Arg(8)->Arg(32);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Arg(8)->Arg(32);

BENCHMARK_MAIN();
