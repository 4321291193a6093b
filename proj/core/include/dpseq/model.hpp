#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dpseq/bilstm2d.hpp"
#include "dpseq/model_config.hpp"
#include "dpseq/ops.hpp"
#include "dpseq/rng.hpp"
#include "dpseq/tensor.hpp"

namespace dpseq {

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // out × in
  Tensor<T> bias;    // out

  std::size_t in() const { return weight.dim(1); }
  std::size_t out() const { return weight.dim(0); }
};

template <typename T>
LinearParams<T> init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const T bound = T(1) / std::sqrt(T(in));
  std::vector<T> w(out * in);
  for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
  return {Tensor<T>({out, in}, std::move(w), true), Tensor<T>::zeros({out}, true)};
}

// x (N × in) -> (N × out)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p, Tape<T>* tape = nullptr) {
  return add(matmul(x, transpose2d(p.weight, tape), tape), p.bias, tape);
}

// Pre-norm residual block: x + BiLSTM2D(norm1(x)), then + MLP(norm2(·)).
template <typename T>
struct SequencerBlockParams {
  Tensor<T> norm1_gamma, norm1_beta;
  BiLstm2dParams<T> mixer;
  Tensor<T> norm2_gamma, norm2_beta;
  LinearParams<T> mlp_expand, mlp_contract;
};

template <typename T>
SequencerBlockParams<T> init_sequencer_block(std::size_t channels, std::size_t hidden,
                                             std::size_t mlp_ratio, Rng& rng) {
  SequencerBlockParams<T> p;
  p.norm1_gamma = Tensor<T>::full({channels}, T(1), true);
  p.norm1_beta = Tensor<T>::zeros({channels}, true);
  p.mixer = init_bilstm2d<T>(channels, hidden, rng);
  p.norm2_gamma = Tensor<T>::full({channels}, T(1), true);
  p.norm2_beta = Tensor<T>::zeros({channels}, true);
  p.mlp_expand = init_linear<T>(channels, channels * mlp_ratio, rng);
  p.mlp_contract = init_linear<T>(channels * mlp_ratio, channels, rng);
  return p;
}

template <typename T>
Tensor<T> sequencer_block(const Tensor<T>& x, const SequencerBlockParams<T>& p,
                          Tape<T>* tape = nullptr) {
  if (x.rank() != 3 || x.dim(2) != p.mixer.channels())
    throw ShapeError("sequencer_block input " + shape_str(x.shape()) +
                     " does not match block width " + std::to_string(p.mixer.channels()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<T> n1 = layer_norm(x, p.norm1_gamma, p.norm1_beta, T(kLayerNormEps), tape);
  Tensor<T> x1 = add(x, bilstm2d_forward(n1, p.mixer, tape), tape);
  Tensor<T> n2 = layer_norm(x1, p.norm2_gamma, p.norm2_beta, T(kLayerNormEps), tape);
  Tensor<T> m = reshape(n2, {h * w, c}, tape);
  m = linear(relu(linear(m, p.mlp_expand, tape), tape), p.mlp_contract, tape);
  return add(x1, reshape(m, {h, w, c}, tape), tape);
}

template <typename T>
struct DpseqModel {
  ModelConfig config;
  LinearParams<T> stem;  // E1 × patch²·3
  std::vector<std::vector<SequencerBlockParams<T>>> stages;
  std::vector<LinearParams<T>> downsamples;  // one per downsampled boundary, in order
  LinearParams<T> head1, head2;
  LinearParams<T> classifier;
};

namespace detail {
template <typename T>
LinearParams<T>& downsample_at(DpseqModel<T>& m, std::size_t boundary) {
  std::size_t idx = 0;
  for (std::size_t s = 0; s + 1 < boundary; ++s)
    if (m.config.downsample[s]) ++idx;
  return m.downsamples[idx];
}
}  // namespace detail

template <typename T>
DpseqModel<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  DpseqModel<T> m;
  m.config = config;
  Rng rng(derive_seed(seed, "model-init"));
  m.stem = init_linear<T>(config.patch_edge * config.patch_edge * 3, config.embed_dims[0], rng);
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<SequencerBlockParams<T>> blocks;
    for (std::size_t b = 0; b < config.depths[s]; ++b)
      blocks.push_back(init_sequencer_block<T>(config.embed_dims[s], config.hidden_dims[s],
                                               config.mlp_ratio, rng));
    m.stages.push_back(std::move(blocks));
    if (s < 3 && config.downsample[s])
      m.downsamples.push_back(init_linear<T>(4 * config.embed_dims[s], config.embed_dims[s + 1],
                                             rng));
    else if (s < 3 && config.embed_dims[s] != config.embed_dims[s + 1])
      throw std::invalid_argument("stage " + std::to_string(s + 1) + "->" + std::to_string(s + 2) +
                                  " changes width without a downsample projection");
  }
  m.head1 = init_linear<T>(config.embed_dims[3], config.head_dims[0], rng);
  m.head2 = init_linear<T>(config.head_dims[0], config.head_dims[1], rng);
  m.classifier = init_linear<T>(config.head_dims[1], config.n_classes, rng);
  return m;
}

template <typename T, typename Fn>
void visit_params(LinearParams<T>& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".W", p.weight);
  fn(prefix + ".b", p.bias);
}

template <typename T, typename Fn>
void visit_params(DpseqModel<T>& m, Fn&& fn) {
  visit_params(m.stem, "stem", fn);
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (std::size_t b = 0; b < m.stages[s].size(); ++b) {
      auto& blk = m.stages[s][b];
      const std::string tag = std::to_string(s) + "." + std::to_string(b);
      fn("block." + tag + ".norm1.gamma", blk.norm1_gamma);
      fn("block." + tag + ".norm1.beta", blk.norm1_beta);
      visit_params(blk.mixer, "bilstm2d." + tag, fn);
      fn("block." + tag + ".norm2.gamma", blk.norm2_gamma);
      fn("block." + tag + ".norm2.beta", blk.norm2_beta);
      visit_params(blk.mlp_expand, "block." + tag + ".mlp.fc1", fn);
      visit_params(blk.mlp_contract, "block." + tag + ".mlp.fc2", fn);
    }
    if (s < 3 && m.config.downsample[s])
      visit_params(detail::downsample_at(m, s + 1), "downsample." + std::to_string(s), fn);
  }
  visit_params(m.head1, "head.fc1", fn);
  visit_params(m.head2, "head.fc2", fn);
  visit_params(m.classifier, "classifier", fn);
}

template <typename T>
std::size_t param_count(const DpseqModel<T>& model) {
  std::size_t n = 0;
  visit_params(const_cast<DpseqModel<T>&>(model),
               [&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

namespace detail {
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, Tape<T>* tape) {
  const T keep = T(1) - static_cast<T>(rate);
  std::vector<T> mask(x.size());
  for (auto& v : mask) v = rng.uniform() < rate ? T(0) : T(1) / keep;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)), tape);
}
}  // namespace detail

// tile must already be standardized with the config's normalization
// constants. Dropout fires only when train_mode is set and a generator is
// supplied; inference is a pure function of (weights, tile).
template <typename T>
Tensor<T> forward(const DpseqModel<T>& model, const Tensor<T>& tile, Tape<T>* tape = nullptr,
                  bool train_mode = false, Rng* dropout_rng = nullptr) {
  const ModelConfig& cfg = model.config;
  if (tile.rank() != 3 || tile.dim(0) != cfg.image_edge || tile.dim(1) != cfg.image_edge ||
      tile.dim(2) != 3)
    throw ShapeError("forward expects a " + std::to_string(cfg.image_edge) + "x" +
                     std::to_string(cfg.image_edge) + "x3 tile, got " + shape_str(tile.shape()));

  std::size_t g = cfg.image_edge / cfg.patch_edge;
  Tensor<T> x = linear(patchify(tile, cfg.patch_edge, tape), model.stem, tape);
  for (std::size_t s = 0; s < 4; ++s) {
    Tensor<T> grid = reshape(x, {g, g, cfg.embed_dims[s]}, tape);
    for (const auto& blk : model.stages[s]) grid = sequencer_block(grid, blk, tape);
    x = reshape(grid, {g * g, cfg.embed_dims[s]}, tape);
    if (s < 3 && cfg.downsample[s]) {
      Tensor<T> merged = patchify(reshape(x, {g, g, cfg.embed_dims[s]}, tape), 2, tape);
      x = linear(merged, detail::downsample_at(const_cast<DpseqModel<T>&>(model), s + 1), tape);
      g /= 2;
    }
  }

  Tensor<T> pooled = reshape(mean_axis0(x, tape), {1, cfg.embed_dims[3]}, tape);
  Tensor<T> h = relu(linear(pooled, model.head1, tape), tape);
  const bool drop = train_mode && cfg.dropout > 0.0 && dropout_rng != nullptr;
  if (drop) h = detail::dropout(h, cfg.dropout, *dropout_rng, tape);
  h = relu(linear(h, model.head2, tape), tape);
  if (drop) h = detail::dropout(h, cfg.dropout, *dropout_rng, tape);
  return reshape(linear(h, model.classifier, tape), {cfg.n_classes}, tape);
}

// 224x224x3 tile -> 32x32xE1 grid of per-patch affine projections
// (exposed separately from forward for the shape contract)
template <typename T>
Tensor<T> patch_embed(const DpseqModel<T>& model, const Tensor<T>& tile, Tape<T>* tape = nullptr) {
  const ModelConfig& cfg = model.config;
  if (tile.rank() != 3 || tile.dim(0) % cfg.patch_edge != 0 || tile.dim(1) % cfg.patch_edge != 0)
    throw ShapeError("patch_embed input " + shape_str(tile.shape()) +
                     " is not divisible by patch edge " + std::to_string(cfg.patch_edge));
  const std::size_t gh = tile.dim(0) / cfg.patch_edge, gw = tile.dim(1) / cfg.patch_edge;
  Tensor<T> x = linear(patchify(tile, cfg.patch_edge, tape), model.stem, tape);
  return reshape(x, {gh, gw, cfg.embed_dims[0]}, tape);
}

// Swap the classifier for a fresh n_classes_new-way layer; every other
// tensor is left untouched (same storage, bit for bit).
template <typename T>
void replace_head(DpseqModel<T>& model, std::size_t n_classes_new, std::uint64_t seed) {
  if (n_classes_new < 2)
    throw std::invalid_argument("replace_head needs at least 2 classes, got " +
                                std::to_string(n_classes_new));
  Rng rng(derive_seed(seed, "classifier-init"));
  model.classifier = init_linear<T>(model.config.head_dims[1], n_classes_new, rng);
  model.config.n_classes = n_classes_new;
}

}  // namespace dpseq
