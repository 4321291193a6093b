#include "dpseq/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace dpseq {

namespace {
cv::Mat to_mat(const ImageU8& image) {
  cv::Mat rgb(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

ImageU8 from_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  ImageU8 image(static_cast<std::size_t>(rgb.rows), static_cast<std::size_t>(rgb.cols));
  for (int y = 0; y < rgb.rows; ++y)
    std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3,
                image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
  return image;
}
}  // namespace

ImageU8 read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ImageError("cannot read image " + path.string());
  return from_mat(bgr);
}

void write_image(const std::filesystem::path& path, const ImageU8& image) {
  if (!cv::imwrite(path.string(), to_mat(image)))
    throw ImageError("cannot write image " + path.string());
}

ImageU8 resize_image(const ImageU8& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ImageError("resize to zero extent");
  if (height == image.height && width == image.width) return image;
  cv::Mat dst;
  cv::resize(to_mat(image), dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             cv::INTER_LINEAR);
  return from_mat(dst);
}

ImageU8 crop(const ImageU8& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  if (y + h > image.height || x + w > image.width)
    throw ImageError("crop exceeds image bounds");
  ImageU8 out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    std::copy_n(image.pixels.data() + ((y + r) * image.width + x) * 3, w * 3,
                out.pixels.data() + r * w * 3);
  return out;
}

}  // namespace dpseq
