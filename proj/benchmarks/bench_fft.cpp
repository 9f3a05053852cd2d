#include <benchmark/benchmark.h>

#include <complex>
#include <vector>

#include "cxrnet/fft.hpp"
#include "cxrnet/rng.hpp"

namespace {

std::vector<std::complex<double>> noise(std::size_t n) {
  cxr::Rng rng(1);
  std::vector<std::complex<double>> v(n);
  for (auto& z : v) z = {rng.normal(), rng.normal()};
  return v;
}

void BM_Fft1d(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto& plan = cxr::fft_plan(n);
  auto data = noise(n);
  for (auto _ : state) {
    plan.forward(data.data());
    benchmark::DoNotOptimize(data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n));
}
// powers of two take the radix-2 path, the rest Bluestein
BENCHMARK(BM_Fft1d)->Arg(256)->Arg(300)->Arg(340)->Arg(1024);

void BM_Fft2d(benchmark::State& state) {
  const auto h = static_cast<std::size_t>(state.range(0));
  const auto w = static_cast<std::size_t>(state.range(1));
  auto data = noise(h * w);
  for (auto _ : state) {
    cxr::fft2_inplace(data.data(), h, w, false);
    benchmark::DoNotOptimize(data.data());
  }
}
BENCHMARK(BM_Fft2d)->Args({64, 64})->Args({256, 256})->Args({300, 340});

}  // namespace
