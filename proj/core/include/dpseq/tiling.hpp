#pragma once

#include <cstddef>
#include <vector>

#include "dpseq/image.hpp"

namespace dpseq {

struct TileSpec {
  std::size_t tile_edge = 512;   // px at the working resolution
  double target_mpp = 0.5;       // µm/px
  std::size_t model_edge = 224;  // px after the final resize

  void validate() const {
    if (tile_edge == 0 || model_edge == 0 || target_mpp <= 0.0)
      throw ImageError("tile spec extents and MPP must be positive");
  }
};

struct Tile {
  ImageU8 image;
  std::size_t grid_row = 0;
  std::size_t grid_col = 0;
};

// Resamples to the target MPP (bilinear), then cuts a non-overlapping grid
// from the top-left corner; partial edge tiles are dropped.
std::vector<Tile> tessellate(const ImageU8& image, double source_mpp, const TileSpec& spec);

}  // namespace dpseq
