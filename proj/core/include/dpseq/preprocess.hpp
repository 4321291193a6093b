#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpseq/image.hpp"
#include "dpseq/model.hpp"
#include "dpseq/rng.hpp"

namespace dpseq {

// NCT-CRC-HE-100K tissue classes, alphabetical
inline constexpr std::array<const char*, 9> kTissueClasses = {
    "ADI", "BACK", "DEB", "LYM", "MUC", "MUS", "NORM", "STR", "TUM"};
inline constexpr std::size_t kTumorClass = 8;

// 8-bit RGB tile -> standardized (H,W,3) model input
template <typename T>
Tensor<T> tile_to_tensor(const ImageU8& image, const ModelConfig& cfg) {
  const ImageU8* src = &image;
  ImageU8 resized;
  if (image.height != cfg.image_edge || image.width != cfg.image_edge) {
    resized = resize_image(image, cfg.image_edge, cfg.image_edge);
    src = &resized;
  }
  std::vector<T> v(src->pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = i % 3;
    v[i] = static_cast<T>((src->pixels[i] / 255.0 - cfg.norm_mean[c]) / cfg.norm_std[c]);
  }
  return Tensor<T>({cfg.image_edge, cfg.image_edge, 3}, std::move(v));
}

// softmax probability of the TUM class under a 9-way tissue model
template <typename T>
double tumor_probability(const DpseqModel<T>& tissue_model, const Tensor<T>& tile) {
  if (tissue_model.config.n_classes != kTissueClasses.size())
    throw std::invalid_argument("tissue model has " +
                                std::to_string(tissue_model.config.n_classes) +
                                " classes, expected " + std::to_string(kTissueClasses.size()));
  Tensor<T> probs = softmax(forward(tissue_model, tile));
  return static_cast<double>(probs.values()[kTumorClass]);
}

// Indices of tiles whose tumor probability strictly exceeds the threshold,
// paired with their scores.
template <typename T>
std::vector<std::pair<std::size_t, double>> tumor_filter(const DpseqModel<T>& tissue_model,
                                                         const std::vector<Tensor<T>>& tiles,
                                                         double threshold) {
  std::vector<std::pair<std::size_t, double>> kept;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const double p = tumor_probability(tissue_model, tiles[i]);
    if (p > threshold) kept.emplace_back(i, p);
  }
  return kept;
}

// Uniform random subset of size cap (everything when n <= cap); deterministic
// per seed, returned in ascending index order.
inline std::vector<std::size_t> sample_tile_indices(std::size_t n, std::size_t cap,
                                                    std::uint64_t seed) {
  if (cap < 1) throw std::invalid_argument("sampling cap must be at least 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= cap) return idx;
  Rng rng(derive_seed(seed, "tile-sampling"));
  // partial Fisher-Yates: the first cap slots become the sample
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace dpseq
