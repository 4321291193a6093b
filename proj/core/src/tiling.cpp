#include "dpseq/tiling.hpp"

#include <cmath>
#include <string>

namespace dpseq {

std::vector<Tile> tessellate(const ImageU8& image, double source_mpp, const TileSpec& spec) {
  spec.validate();
  if (source_mpp <= 0.0)
    throw ImageError("source MPP must be positive, got " + std::to_string(source_mpp));

  const double rescale = source_mpp / spec.target_mpp;
  const std::size_t h = static_cast<std::size_t>(std::llround(image.height * rescale));
  const std::size_t w = static_cast<std::size_t>(std::llround(image.width * rescale));
  if (h < spec.tile_edge || w < spec.tile_edge)
    throw ImageError("image is " + std::to_string(h) + "x" + std::to_string(w) + " at " +
                     std::to_string(spec.target_mpp) + " MPP, smaller than one " +
                     std::to_string(spec.tile_edge) + "px tile");
  const ImageU8 resampled =
      (h == image.height && w == image.width) ? image : resize_image(image, h, w);

  std::vector<Tile> tiles;
  for (std::size_t r = 0; (r + 1) * spec.tile_edge <= h; ++r)
    for (std::size_t c = 0; (c + 1) * spec.tile_edge <= w; ++c)
      tiles.push_back(Tile{crop(resampled, r * spec.tile_edge, c * spec.tile_edge, spec.tile_edge,
                                spec.tile_edge),
                           r, c});
  return tiles;
}

}  // namespace dpseq
