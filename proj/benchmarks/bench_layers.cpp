#include <benchmark/benchmark.h>

#include <map>
#include <string>

#include "cxrnet/losses.hpp"
#include "cxrnet/rng.hpp"
#include "cxrnet/segnet.hpp"

namespace {

cxr::Tensor uniform(cxr::Shape shape, std::uint64_t seed) {
  cxr::Rng rng(seed);
  cxr::Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform();
  return t;
}

void BM_SegnetForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto g = cxr::seg::build_segnet({}, 1);
  std::map<std::string, cxr::Tensor> in{{cxr::seg::kImageInput, uniform({1, n, n, 1}, 3)}};
  for (auto _ : state) g.forward(in, cxr::nn::Mode::Infer);
}
BENCHMARK(BM_SegnetForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SegnetStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto g = cxr::seg::build_segnet({}, 1);
  std::map<std::string, cxr::Tensor> in{{cxr::seg::kImageInput, uniform({1, n, n, 1}, 3)}};
  const auto out = g.output();
  const auto seed = cxr::Tensor::filled({1, n, n, 2}, 1.0);
  for (auto _ : state) {
    g.zero_grad();
    g.forward(in, cxr::nn::Mode::Train);
    g.backward(out, seed);
  }
}
BENCHMARK(BM_SegnetStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_WeightedTanimoto(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = uniform({8, n, n, 2}, 5);
  const auto y = uniform({8, n, n, 2}, 6);
  const auto w = uniform({8, n, n, 2}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(cxr::weighted_tanimoto_loss(p, y, w));
}
BENCHMARK(BM_WeightedTanimoto)->Arg(64)->Arg(256);

}  // namespace
