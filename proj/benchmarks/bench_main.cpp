#include <benchmark/benchmark.h>

#include "afldm/diffusion.hpp"
#include "afldm/networks.hpp"
#include "afldm/random.hpp"
#include "afldm/spectral.hpp"

namespace afldm {
namespace {

Tensor noise(const Shape& shape, std::uint64_t seed = 0) {
  Rng rng(seed);
  return rng.normal_tensor(shape);
}

void BM_FractionalShift(benchmark::State& state) {
  const auto n = state.range(0);
  const Tensor x = noise({8, 32, n, n});
  for (auto _ : state) benchmark::DoNotOptimize(spectral::shift(x, 0.37, -1.25, spectral::ShiftMode::kCropped));
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_FractionalShift)->Arg(8)->Arg(16)->Arg(32);

void BM_IdealDownsample(benchmark::State& state) {
  const Tensor x = noise({8, 32, 32, 32});
  for (auto _ : state) benchmark::DoNotOptimize(spectral::ideal_downsample(x, 2));
}
BENCHMARK(BM_IdealDownsample);

void BM_Conv3x3(benchmark::State& state) {
  const auto c = state.range(0);
  const Tensor x = noise({8, c, 16, 16});
  const Tensor w = noise({c, c, 3, 3}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w));
  state.SetItemsProcessed(state.iterations() * x.numel() * c * 9);
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64)->Arg(128);

void BM_FilteredNonlinearity(benchmark::State& state) {
  const Tensor x = noise({8, 32, 32, 32});
  for (auto _ : state) benchmark::DoNotOptimize(spectral::filtered_nonlinearity(x, Nonlinearity::kSiLU));
}
BENCHMARK(BM_FilteredNonlinearity);

ModelConfig bench_config(ModelKind kind, std::vector<int> widths) {
  ModelConfig c;
  c.kind = kind;
  c.widths = std::move(widths);
  return c;
}

void BM_VaeForward(benchmark::State& state) {
  const Vae vae(bench_config(ModelKind::kVae, {32, 64}));
  const Tensor x = noise({8, 3, 32, 32});
  const Tensor eps = noise({8, 4, 8, 8}, 1);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(vae.forward(x, eps).reconstruction);
}
BENCHMARK(BM_VaeForward)->Unit(benchmark::kMillisecond);

void BM_UNetForward(benchmark::State& state) {
  const UNet unet(bench_config(ModelKind::kUNet, {64, 128}));
  const Tensor z = noise({16, 4, 8, 8});
  const std::vector<int> t(16, 500);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(unet.forward(z, t));
}
BENCHMARK(BM_UNetForward)->Unit(benchmark::kMillisecond);

void BM_UNetLossStep(benchmark::State& state) {
  UNet unet(bench_config(ModelKind::kUNet, {64, 128}));
  unet.params().set_requires_grad(true);
  const NoiseSchedule s;
  const Tensor z0 = noise({16, 4, 8, 8});
  const Tensor eps = noise({16, 4, 8, 8}, 1);
  const std::vector<int> t(16, 500);
  for (auto _ : state) {
    GradTape tape;
    const auto l = unet_loss(unet, s, z0, t, eps, {0.75, -1.5}, 1.0, EqLossMode::kEquivariantAttention);
    tape.backward(l.total);
  }
}
BENCHMARK(BM_UNetLossStep)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace afldm

BENCHMARK_MAIN();
