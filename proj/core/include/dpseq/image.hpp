#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace dpseq {

class ImageError : public std::runtime_error {
 public:
  explicit ImageError(const std::string& what) : std::runtime_error(what) {}
};

// 8-bit RGB raster, row-major, interleaved channels.
struct ImageU8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height*width*3

  ImageU8() = default;
  ImageU8(std::size_t h, std::size_t w, std::uint8_t fill = 255)
      : height(h), width(w), pixels(h * w * 3, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
};

ImageU8 read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const ImageU8& image);

// bilinear
ImageU8 resize_image(const ImageU8& image, std::size_t height, std::size_t width);

ImageU8 crop(const ImageU8& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w);

}  // namespace dpseq
