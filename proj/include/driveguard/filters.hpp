#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "driveguard/parallel.hpp"
#include "driveguard/tensor.hpp"

namespace driveguard {

namespace filter_detail {

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t extent) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(extent) - 1));
}

}  // namespace filter_detail

/// Per-channel median over a kernel x kernel window, edges replicated.
template <typename T>
BasicTensor<T> median_filter(const BasicTensor<T>& img, std::size_t kernel = 3) {
  detail::require(img.rank() == 4, "median_filter: expected an N x C x H x W image");
  detail::require(kernel % 2 == 1, "median_filter: kernel ", kernel, " must be odd");
  if (kernel == 1) return img;
  const std::size_t H = img.height(), W = img.width();
  const auto r = static_cast<std::ptrdiff_t>(kernel / 2);
  BasicTensor<T> out(img.shape());
  parallel_for(0, img.batch() * img.channels(), [&](std::size_t nc) {
    const T* in = img.data().data() + nc * H * W;
    T* dst = out.data().data() + nc * H * W;
    std::vector<T> window(kernel * kernel);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t k = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::size_t yy = filter_detail::clamp_index(static_cast<std::ptrdiff_t>(y) + dy, H);
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            window[k++] = in[yy * W + filter_detail::clamp_index(static_cast<std::ptrdiff_t>(x) + dx, W)];
          }
        }
        auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
        std::nth_element(window.begin(), mid, window.end());
        dst[y * W + x] = *mid;
      }
  });
  return out;
}

/// Per-channel bilateral filter over a (2r+1)^2 window, edges replicated.
template <typename T>
BasicTensor<T> bilateral_filter(const BasicTensor<T>& img, double sigma_spatial = 2.0, double sigma_range = 0.1,
                                std::size_t radius = 4) {
  detail::require(img.rank() == 4, "bilateral_filter: expected an N x C x H x W image");
  detail::require(sigma_spatial > 0.0 && sigma_range > 0.0, "bilateral_filter: sigmas must be positive, got ",
                  sigma_spatial, " and ", sigma_range);
  detail::require(radius >= 1, "bilateral_filter: radius must be at least 1");
  const std::size_t H = img.height(), W = img.width(), D = 2 * radius + 1;
  const auto r = static_cast<std::ptrdiff_t>(radius);
  std::vector<double> spatial(D * D);
  for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
      spatial[static_cast<std::size_t>((dy + r) * static_cast<std::ptrdiff_t>(D) + dx + r)] =
          std::exp(-static_cast<double>(dy * dy + dx * dx) / (2.0 * sigma_spatial * sigma_spatial));
    }
  const double range_scale = -1.0 / (2.0 * sigma_range * sigma_range);
  BasicTensor<T> out(img.shape());
  parallel_for(0, img.batch() * img.channels(), [&](std::size_t nc) {
    const T* in = img.data().data() + nc * H * W;
    T* dst = out.data().data() + nc * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double center = in[y * W + x];
        double num = 0.0, den = 0.0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::size_t yy = filter_detail::clamp_index(static_cast<std::ptrdiff_t>(y) + dy, H);
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const double v = in[yy * W + filter_detail::clamp_index(static_cast<std::ptrdiff_t>(x) + dx, W)];
            const double w = spatial[static_cast<std::size_t>((dy + r) * static_cast<std::ptrdiff_t>(D) + dx + r)] *
                             std::exp((v - center) * (v - center) * range_scale);
            num += w * v;
            den += w;
          }
        }
        dst[y * W + x] = static_cast<T>(num / den);
      }
  });
  return out;
}

}  // namespace driveguard
