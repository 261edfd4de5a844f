#include <benchmark/benchmark.h>
#include <vfe/evalkit.hpp>
#include <vfe/lookup.hpp>
#include <vfe/stcodec.hpp>
#include <vfe/stquant.hpp>
#include <vfe/synthetic.hpp>

using namespace vfe;

namespace {

BackboneConfig small_backbone() {
  BackboneConfig c;
  c.latent_dim = 32;
  c.stem_channels = 4;
  c.blocks = {{BlockKind::downsample, 8, 2, 1},  {BlockKind::residual, 8},
              {BlockKind::downsample, 16, 2, 2}, {BlockKind::residual, 16},
              {BlockKind::downsample, 32, 2, 1}, {BlockKind::residual, 32},
              {BlockKind::attention}};
  return c;
}

// Args: codebook size N, latent cells.
void BM_NearestNeighbourQuantize(benchmark::State& state) {
  torch::manual_seed(0);
  const int64_t n = state.range(0), cells = state.range(1);
  Codebook book{torch::randn({n, 64})};
  LatentGrid z{torch::randn({1, 1, cells, 64})};
  torch::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(nn_quantize(z, book).indices.indices);
  state.SetItemsProcessed(state.iterations() * cells);
}
BENCHMARK(BM_NearestNeighbourQuantize)->Args({64, 1024})->Args({1024, 1024})->Args({1024, 8192});

void BM_MarginalPriorKl(benchmark::State& state) {
  torch::manual_seed(0);
  const int64_t n = state.range(0), cells = state.range(1);
  Codebook book{torch::randn({n, 64}).requires_grad_(true)};
  LatentGrid z{torch::randn({1, 1, cells, 64})};
  for (auto _ : state) {
    auto r = marginal_prior_kl(z, book);
    r.kl.backward();
    book.items.mutable_grad().reset();
  }
  state.SetItemsProcessed(state.iterations() * cells);
}
BENCHMARK(BM_MarginalPriorKl)->Args({64, 1024})->Args({1024, 1024});

void BM_Encode(benchmark::State& state) {
  torch::manual_seed(0);
  auto enc = build_encoder(small_backbone());
  auto clip = synth_clip(1, {8, state.range(0)});
  torch::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(encode(enc, clip).values);
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Encode)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  auto a = synth_clip(2, {8, state.range(0)}), b = synth_clip(3, {8, state.range(0)});
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_PredictCodes(benchmark::State& state) {
  torch::manual_seed(0);
  LookupConfig cfg;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.dim = 64;
  cfg.codebook_size = 1024;
  cfg.grid = {4, state.range(0), state.range(0)};
  LookupTransformer model(cfg, CodebookKind::spatial);
  LatentGrid z{torch::randn({4, state.range(0), state.range(0), 64})};
  torch::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(predict_codes(z, model).indices.indices);
}
BENCHMARK(BM_PredictCodes)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
