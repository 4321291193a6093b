#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace dpseq {

// Architecture hyperparameters. Defaults are the deployed layout: 7-pixel
// patches on a 224 tile, stage depths 4/3/8/4, one 2x patch merge after
// stage 1, and a 384-256-32 head.
struct ModelConfig {
  std::array<std::size_t, 4> depths{4, 3, 8, 4};
  std::array<std::size_t, 4> embed_dims{192, 384, 384, 384};
  std::array<std::size_t, 4> hidden_dims{48, 96, 96, 96};  // BiLSTM D per stage
  std::array<bool, 3> downsample{true, false, false};      // 2x2 merge at stage boundary
  std::size_t patch_edge = 7;
  std::size_t image_edge = 224;
  std::array<std::size_t, 2> head_dims{256, 32};
  std::size_t n_classes = 9;
  std::size_t mlp_ratio = 3;
  double dropout = 0.1;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.5, 0.5, 0.5};

  std::size_t grid_edge(std::size_t stage) const {
    std::size_t g = image_edge / patch_edge;
    for (std::size_t s = 0; s < stage && s < 3; ++s)
      if (downsample[s]) g /= 2;
    return g;
  }

  void validate() const {
    if (image_edge == 0 || patch_edge == 0 || image_edge % patch_edge != 0)
      throw std::invalid_argument("image edge " + std::to_string(image_edge) +
                                  " is not divisible by patch edge " + std::to_string(patch_edge));
    if (n_classes < 2) throw std::invalid_argument("n_classes must be at least 2");
    std::size_t g = image_edge / patch_edge;
    for (std::size_t s = 0; s < 3; ++s)
      if (downsample[s]) {
        if (g % 2 != 0)
          throw std::invalid_argument("grid edge " + std::to_string(g) +
                                      " cannot be halved after stage " + std::to_string(s + 1));
        g /= 2;
      }
    for (std::size_t s = 0; s < 4; ++s)
      if (depths[s] == 0 || embed_dims[s] == 0 || hidden_dims[s] == 0)
        throw std::invalid_argument("stage " + std::to_string(s + 1) +
                                    " has a zero depth or width");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0,1)");
    for (double sd : norm_std)
      if (sd <= 0.0) throw std::invalid_argument("normalization std must be positive");
  }
};

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace dpseq
