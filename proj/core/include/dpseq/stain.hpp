#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "dpseq/image.hpp"

namespace dpseq {

class InsufficientTissueError : public std::runtime_error {
 public:
  explicit InsufficientTissueError(const std::string& what) : std::runtime_error(what) {}
};

// Two H&E stain directions in optical-density space plus the reference
// concentration scale. Columns are unit-norm, non-negative, hematoxylin first
// (the column with the larger blue-channel OD).
struct StainProfile {
  int version = 1;
  std::array<std::array<double, 2>, 3> stain_matrix{};  // rows R,G,B; cols H,E
  std::array<double, 2> max_concentration{};            // 99th percentile per stain
  double beta = 0.15;
  double alpha = 1.0;
};

// OD = −log10(max(v,1)/255)
double od_from_u8(std::uint8_t v);
// inverse, clamped to [0,255], round half up
std::uint8_t u8_from_od(double od);

// per-pixel RGB optical densities, 3 values per pixel
std::vector<double> od_transform(const ImageU8& image);
ImageU8 od_inverse(const std::vector<double>& od, std::size_t height, std::size_t width);

// Macenko estimation: SVD plane of the thresholded OD cloud, angular
// percentiles alpha / 100−alpha. Throws InsufficientTissueError when fewer
// than min_tissue_pixels exceed the beta OD-norm threshold.
StainProfile estimate_stains(const ImageU8& tile, double beta = 0.15, double alpha = 1.0,
                             std::size_t min_tissue_pixels = 100);

// per-pixel stain concentrations (non-negative least squares), 2 per pixel
std::vector<double> stain_concentrations(const ImageU8& tile, const StainProfile& profile);

ImageU8 macenko_normalize(const ImageU8& tile, const StainProfile& source,
                          const StainProfile& reference);

void save_stain_profile(const std::filesystem::path& path, const StainProfile& profile);
StainProfile load_stain_profile(const std::filesystem::path& path);

}  // namespace dpseq
