#include "ifblend/freq.hpp"
#include "ifblend/metrics.hpp"
#include "ifblend/model.hpp"

#include <benchmark/benchmark.h>
#include <torch/torch.h>

namespace {

void BM_HaarDwt(benchmark::State& state) {
  const auto side = state.range(0);
  const auto x = torch::rand({1, 3, side, side});
  for (auto _ : state) {
    auto bands = ifblend::haar_dwt(x);
    benchmark::DoNotOptimize(bands.ll.data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * 3 * side * side);
}
BENCHMARK(BM_HaarDwt)->Arg(64)->Arg(256)->Arg(1024);

void BM_HaarRoundTrip(benchmark::State& state) {
  const auto x = torch::rand({1, 3, 256, 256});
  for (auto _ : state) {
    auto back = ifblend::haar_idwt(ifblend::haar_dwt(x));
    benchmark::DoNotOptimize(back.data_ptr());
  }
}
BENCHMARK(BM_HaarRoundTrip);

void BM_LowHighSplit(benchmark::State& state) {
  const auto x = torch::rand({1, 32, 128, 128});
  const auto mode = state.range(0) == 0 ? ifblend::HighPassMode::kMaxPool
                                        : ifblend::HighPassMode::kResidual;
  for (auto _ : state) {
    auto split = ifblend::lowhigh_split(x, 3, 2, mode);
    benchmark::DoNotOptimize(split.high.data_ptr());
  }
}
BENCHMARK(BM_LowHighSplit)->Arg(0)->Arg(1);

void BM_Ssim(benchmark::State& state) {
  const auto side = state.range(0);
  const auto a = torch::rand({1, 3, side, side});
  const auto b = torch::rand({1, 3, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(ifblend::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256);

void BM_ModelForward(benchmark::State& state) {
  torch::NoGradGuard guard;
  torch::manual_seed(0);
  ifblend::IFBlend model(ifblend::ModelConfig{});
  model->eval();
  const auto side = state.range(0);
  const auto x = torch::rand({1, 3, side, side});
  for (auto _ : state) {
    auto y = model->forward(x);
    benchmark::DoNotOptimize(y.data_ptr());
  }
}
BENCHMARK(BM_ModelForward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
