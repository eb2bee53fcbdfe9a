#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "driveguard/tensor.hpp"

namespace driveguard {

/// Dense per-pixel class IDs, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> ids;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0) : height(h), width(w), ids(h * w, fill) {}

  std::int32_t& at(std::size_t y, std::size_t x) { return ids[y * width + x]; }
  [[nodiscard]] std::int32_t at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  [[nodiscard]] std::size_t size() const { return ids.size(); }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

template <typename T>
double mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mse: shape mismatch ", to_string(a.shape()), " vs ", to_string(b.shape()));
  detail::require(a.size() > 0, "mse: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

/// Reported for identical images.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

inline double psnr_from_mse(double mse_value, double max_value = 1.0) {
  detail::require(max_value > 0.0, "psnr: max_value must be positive");
  if (mse_value <= 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(max_value * max_value / mse_value);
}

template <typename T>
double psnr(const BasicTensor<T>& a, const BasicTensor<T>& b, double max_value = 1.0) {
  return psnr_from_mse(mse(a, b), max_value);
}

/// Accumulates a class confusion matrix so that IoU can be pooled over a
/// dataset instead of averaging per-image ratios.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count) : classes_(class_count), counts_(class_count * class_count, 0) {
    detail::require(class_count > 0, "class count must be positive");
  }

  void add(const LabelMap& pred, const LabelMap& truth) {
    detail::require(pred.height == truth.height && pred.width == truth.width, "label map shape mismatch ",
                    pred.height, "x", pred.width, " vs ", truth.height, "x", truth.width);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto p = pred.ids[i], t = truth.ids[i];
      detail::require(p >= 0 && static_cast<std::size_t>(p) < classes_, "predicted class id ", p, " out of range");
      detail::require(t >= 0 && static_cast<std::size_t>(t) < classes_, "ground-truth class id ", t, " out of range");
      ++counts_[static_cast<std::size_t>(t) * classes_ + static_cast<std::size_t>(p)];
    }
  }

  [[nodiscard]] std::size_t class_count() const { return classes_; }
  [[nodiscard]] std::uint64_t count(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }

  [[nodiscard]] std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  [[nodiscard]] double pixel_accuracy() const {
    const auto t = total();
    detail::require(t > 0, "pixel accuracy of an empty confusion matrix");
    std::uint64_t correct = 0;
    for (std::size_t c = 0; c < classes_; ++c) correct += count(c, c);
    return static_cast<double>(correct) / static_cast<double>(t);
  }

  /// Mean over classes present in truth or prediction.
  [[nodiscard]] double mean_iou() const {
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes_; ++c) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t k = 0; k < classes_; ++k) {
        row += count(c, k);
        col += count(k, c);
      }
      const std::uint64_t inter = count(c, c);
      const std::uint64_t uni = row + col - inter;
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / static_cast<double>(uni);
      ++present;
    }
    detail::require(present > 0, "mean IoU of an empty confusion matrix");
    return sum / static_cast<double>(present);
  }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

inline double pixel_accuracy(const LabelMap& pred, const LabelMap& truth) {
  detail::require(pred.height == truth.height && pred.width == truth.width, "pixel_accuracy: shape mismatch");
  detail::require(pred.size() > 0, "pixel_accuracy: empty maps");
  std::size_t equal = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) equal += pred.ids[i] == truth.ids[i];
  return static_cast<double>(equal) / static_cast<double>(pred.size());
}

inline double mean_iou(const LabelMap& pred, const LabelMap& truth, std::size_t class_count) {
  ConfusionMatrix cm(class_count);
  cm.add(pred, truth);
  return cm.mean_iou();
}

}  // namespace driveguard
