#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "vqfuzz/interpolate.hpp"
#include "vqfuzz/metrics.hpp"
#include "vqfuzz/vqvae.hpp"

namespace {

vqfuzz::VqvaeArch bench_arch() {
  vqfuzz::VqvaeArch arch;
  arch.hidden_channels = 32;
  arch.residual_channels = 16;
  return arch;
}

// Nearest-entry search for a batch of 7x7 latent grids against K entries.
void BM_Quantize(benchmark::State& state) {
  torch::manual_seed(0);
  const auto k = state.range(0);
  const auto z = torch::randn({64, 64, 7, 7});
  const auto entries = torch::randn({k, 64});
  for (auto _ : state) benchmark::DoNotOptimize(vqfuzz::quantize(z, entries).indices);
  state.SetItemsProcessed(state.iterations() * 64 * 49);
}
BENCHMARK(BM_Quantize)->Arg(32)->Arg(512);

void BM_SsimBatch(benchmark::State& state) {
  torch::manual_seed(0);
  const auto a = torch::rand({state.range(0), 1, 28, 28});
  const auto b = torch::rand({state.range(0), 1, 28, 28});
  for (auto _ : state) benchmark::DoNotOptimize(vqfuzz::ssim_batch(a, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SsimBatch)->Arg(1)->Arg(256);

// Encode, interpolate, quantize and decode: the per-sample cost of generation.
void BM_GenerateBatch(benchmark::State& state) {
  torch::manual_seed(0);
  torch::NoGradGuard no_grad;
  vqfuzz::Vqvae model(bench_arch());
  model->eval();
  const auto x = torch::rand({state.range(0), 1, 28, 28});
  const auto y = torch::rand({state.range(0), 1, 28, 28});
  for (auto _ : state) {
    auto z = vqfuzz::interpolate(model->encode(x), model->encode(y), 0.2);
    benchmark::DoNotOptimize(model->decode(model->quantize(z).embedded));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateBatch)->Arg(1)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
