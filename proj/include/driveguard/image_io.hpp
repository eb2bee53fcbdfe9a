#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "driveguard/metrics.hpp"
#include "driveguard/tensor.hpp"

namespace driveguard {

namespace image_detail {

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, std::size_t& height,
                                          std::size_t& width) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
    detail::fail("cannot read PNG ", path.string(), ": ", png.image.message);
  }
  png.image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr)) {
    detail::fail("cannot decode PNG ", path.string(), ": ", png.image.message);
  }
  height = png.image.height;
  width = png.image.width;
  return buffer;
}

inline void write_png(const std::filesystem::path& path, png_uint_32 format, std::size_t height, std::size_t width,
                      const std::vector<std::uint8_t>& buffer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  PngImage png;
  png.image.width = static_cast<png_uint_32>(width);
  png.image.height = static_cast<png_uint_32>(height);
  png.image.format = format;
  if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    detail::fail("cannot write PNG ", path.string(), ": ", png.image.message);
  }
}

}  // namespace image_detail

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// 8-bit RGB PNG (grey or alpha inputs are converted) to a 1 x 3 x H x W
/// tensor in [0,1].
inline Tensor load_png_rgb(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto buf = image_detail::read_png(path, PNG_FORMAT_RGB, h, w);
  Tensor t({1, 3, h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    auto plane = t.plane(0, c);
    for (std::size_t p = 0; p < h * w; ++p) plane[p] = static_cast<float>(buf[p * 3 + c]) / 255.0f;
  }
  return t;
}

/// Writes image `n` of a 3-channel tensor as 8-bit RGB.
inline void save_png_rgb(const Tensor& img, const std::filesystem::path& path, std::size_t n = 0) {
  detail::require(img.rank() == 4 && img.channels() == 3 && n < img.batch(), "save_png_rgb: expected N x 3 x H x W, got ",
                  to_string(img.shape()));
  const std::size_t h = img.height(), w = img.width();
  std::vector<std::uint8_t> buf(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    auto plane = img.plane(n, c);
    for (std::size_t p = 0; p < h * w; ++p) buf[p * 3 + c] = quantize(plane[p]);
  }
  image_detail::write_png(path, PNG_FORMAT_RGB, h, w, buf);
}

/// Single-channel 8-bit PNG of class IDs.
inline LabelMap load_label_png(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto buf = image_detail::read_png(path, PNG_FORMAT_GRAY, h, w);
  LabelMap m(h, w);
  for (std::size_t p = 0; p < h * w; ++p) m.ids[p] = buf[p];
  return m;
}

inline void save_label_png(const LabelMap& m, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf(m.size());
  for (std::size_t p = 0; p < m.size(); ++p) {
    detail::require(m.ids[p] >= 0 && m.ids[p] <= 255, "label id ", m.ids[p], " does not fit an 8-bit PNG");
    buf[p] = static_cast<std::uint8_t>(m.ids[p]);
  }
  image_detail::write_png(path, PNG_FORMAT_GRAY, m.height, m.width, buf);
}

}  // namespace driveguard
