#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "dpseq/bilstm2d.hpp"
#include "dpseq/metrics.hpp"
#include "dpseq/model.hpp"
#include "dpseq/rng.hpp"
#include "dpseq/stain.hpp"
#include "dpseq/tensor.hpp"

namespace {

using namespace dpseq;

Tensor<float> random_tensor(Shape shape, Rng& rng) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor<float>(std::move(shape), std::move(v));
}

ModelConfig small_config() {
  ModelConfig c;
  c.depths = {1, 1, 1, 1};
  c.embed_dims = {8, 8, 8, 8};
  c.hidden_dims = {4, 4, 4, 4};
  c.downsample = {false, false, false};
  c.patch_edge = 7;
  c.image_edge = 28;
  c.head_dims = {8, 4};
  c.n_classes = 2;
  c.mlp_ratio = 2;
  c.dropout = 0.0;
  return c;
}

void BM_Bilstm2dForward(benchmark::State& state) {
  const std::size_t edge = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  BiLstm2dParams<float> p = init_bilstm2d<float>(16, 8, rng);
  Tensor<float> image = random_tensor({edge, edge, 16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(bilstm2d_forward(image, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(edge * edge));
}
BENCHMARK(BM_Bilstm2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_ModelForward(benchmark::State& state) {
  DpseqModel<float> model = init_model<float>(small_config(), 1);
  Rng rng(2);
  Tensor<float> tile = random_tensor({28, 28, 3}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, tile));
}
BENCHMARK(BM_ModelForward);

void BM_ModelForwardBackward(benchmark::State& state) {
  DpseqModel<float> model = init_model<float>(small_config(), 1);
  visit_params(model, [](const std::string&, Tensor<float>& t) {
    t.storage()->requires_grad = true;
  });
  Rng rng(2);
  Tensor<float> tile = random_tensor({28, 28, 3}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    Tensor<float> loss = sum_all(forward(model, tile, &tape), &tape);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_ModelForwardBackward);

void BM_Auroc(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2;
    s[i] = rng.uniform();
  }
  for (auto _ : state) benchmark::DoNotOptimize(auroc(s, y));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

void BM_EstimateStains(benchmark::State& state) {
  const std::size_t edge = static_cast<std::size_t>(state.range(0));
  ImageU8 tile(edge, edge);
  Rng rng(4);
  for (auto& px : tile.pixels)
    px = static_cast<std::uint8_t>(40 + rng.below(180));
  for (auto _ : state) benchmark::DoNotOptimize(estimate_stains(tile));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(edge * edge));
}
BENCHMARK(BM_EstimateStains)->Arg(128)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
