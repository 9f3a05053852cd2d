#include <benchmark/benchmark.h>

#include "cxrnet/rng.hpp"
#include "cxrnet/wst.hpp"

namespace {

cxr::Tensor image(std::size_t h, std::size_t w) {
  cxr::Rng rng(2);
  std::vector<double> v(h * w);
  for (auto& x : v) x = rng.uniform();
  return cxr::Tensor({h, w}, std::move(v));
}

cxr::wst::ScatterConfig config(const benchmark::State& state) {
  cxr::wst::ScatterConfig cfg;
  cfg.J = static_cast<int>(state.range(0));
  cfg.L = static_cast<int>(state.range(1));
  cfg.height = static_cast<std::size_t>(state.range(2));
  cfg.width = static_cast<std::size_t>(state.range(3));
  return cfg;
}

void BM_Filterbank(benchmark::State& state) {
  const auto cfg = config(state);
  for (auto _ : state) benchmark::DoNotOptimize(cxr::wst::build_filterbank(cfg));
}
BENCHMARK(BM_Filterbank)->Args({2, 6, 64, 64})->Args({2, 6, 300, 340})->Unit(benchmark::kMillisecond);

void BM_Scatter(benchmark::State& state) {
  const auto cfg = config(state);
  const auto fb = cxr::wst::build_filterbank(cfg);
  const auto x = image(cfg.height, cfg.width);
  const auto mode = state.range(4) ? cxr::wst::Decimation::Reference : cxr::wst::Decimation::Periodized;
  for (auto _ : state) benchmark::DoNotOptimize(cxr::wst::scatter(x, fb, mode));
}
BENCHMARK(BM_Scatter)
    ->Args({2, 6, 64, 64, 0})
    ->Args({2, 6, 64, 64, 1})
    ->Args({2, 6, 300, 340, 0})
    ->Args({2, 6, 300, 340, 1})
    ->Unit(benchmark::kMillisecond);

}  // namespace
