#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "driveguard/metrics.hpp"
#include "driveguard/tensor.hpp"

namespace driveguard {

/// Nearest-prototype pixel classifier over (3x3 mean colour, 3x3 luminance
/// standard deviation) with a 3x3 majority smoothing pass.
class ToySegmenter {
 public:
  static constexpr std::size_t kFeatures = 4;
  using Feature = std::array<double, kFeatures>;

  ToySegmenter() = default;
  explicit ToySegmenter(std::size_t class_count) : prototypes_(class_count) {
    detail::require(class_count > 0, "segmenter needs at least one class");
  }

  [[nodiscard]] bool fitted() const { return fitted_; }
  [[nodiscard]] std::size_t class_count() const { return prototypes_.size(); }
  [[nodiscard]] const std::vector<Feature>& prototypes() const { return prototypes_; }

  /// Per-class mean feature over every labelled pixel.
  void fit(const std::vector<Tensor>& frames, const std::vector<LabelMap>& labels) {
    detail::require(!frames.empty() && frames.size() == labels.size(), "segmenter fit needs matching frames and labels");
    std::vector<Feature> sum(class_count(), Feature{});
    std::vector<std::size_t> count(class_count(), 0);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto feats = features(frames[i]);
      const auto& lab = labels[i];
      detail::require(lab.height == frames[i].height() && lab.width == frames[i].width(), "label map ", i,
                      " does not match its frame");
      for (std::size_t p = 0; p < lab.size(); ++p) {
        const auto c = lab.ids[p];
        detail::require(c >= 0 && static_cast<std::size_t>(c) < class_count(), "class id ", c, " out of range");
        for (std::size_t f = 0; f < kFeatures; ++f) sum[static_cast<std::size_t>(c)][f] += feats[p][f];
        ++count[static_cast<std::size_t>(c)];
      }
    }
    for (std::size_t c = 0; c < class_count(); ++c) {
      present_.push_back(count[c] > 0);
      for (std::size_t f = 0; f < kFeatures; ++f) {
        prototypes_[c][f] = count[c] ? sum[c][f] / static_cast<double>(count[c]) : 0.0;
      }
    }
    fitted_ = true;
  }

  [[nodiscard]] LabelMap segment(const Tensor& img) const {
    detail::require(fitted_, "segmenter prototypes are not fitted");
    const auto feats = features(img);
    const std::size_t H = img.height(), W = img.width();
    LabelMap raw(H, W);
    for (std::size_t p = 0; p < feats.size(); ++p) {
      double best = std::numeric_limits<double>::infinity();
      std::int32_t arg = 0;
      for (std::size_t c = 0; c < class_count(); ++c) {
        if (!present_[c]) continue;
        double d = 0.0;
        for (std::size_t f = 0; f < kFeatures; ++f) {
          const double diff = (feats[p][f] - prototypes_[c][f]) * kWeights[f];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          arg = static_cast<std::int32_t>(c);
        }
      }
      raw.ids[p] = arg;
    }
    return majority3(raw);
  }

 private:
  static constexpr std::array<double, kFeatures> kWeights{1.0, 1.0, 1.0, 2.0};

  static std::vector<Feature> features(const Tensor& img) {
    detail::require(img.rank() == 4 && img.batch() == 1 && img.channels() == 3, "segmenter expects a 1 x 3 x H x W frame");
    const std::size_t H = img.height(), W = img.width();
    std::vector<Feature> out(H * W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        Feature f{};
        double lum = 0.0, lum2 = 0.0;
        std::size_t n = 0;
        for (std::size_t yy = y > 0 ? y - 1 : 0; yy <= std::min(y + 1, H - 1); ++yy)
          for (std::size_t xx = x > 0 ? x - 1 : 0; xx <= std::min(x + 1, W - 1); ++xx) {
            const double r = img.at(0, 0, yy, xx), g = img.at(0, 1, yy, xx), b = img.at(0, 2, yy, xx);
            f[0] += r;
            f[1] += g;
            f[2] += b;
            const double l = 0.299 * r + 0.587 * g + 0.114 * b;
            lum += l;
            lum2 += l * l;
            ++n;
          }
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t c = 0; c < 3; ++c) f[c] *= inv;
        f[3] = std::sqrt(std::max(0.0, lum2 * inv - (lum * inv) * (lum * inv)));
        out[y * W + x] = f;
      }
    return out;
  }

  // Most frequent label in each 3x3 neighbourhood; ties keep the centre
  // label when it is among the most frequent, else the lowest ID.
  LabelMap majority3(const LabelMap& in) const {
    LabelMap out(in.height, in.width);
    std::vector<int> votes(class_count());
    for (std::size_t y = 0; y < in.height; ++y)
      for (std::size_t x = 0; x < in.width; ++x) {
        std::fill(votes.begin(), votes.end(), 0);
        for (std::size_t yy = y > 0 ? y - 1 : 0; yy <= std::min(y + 1, in.height - 1); ++yy)
          for (std::size_t xx = x > 0 ? x - 1 : 0; xx <= std::min(x + 1, in.width - 1); ++xx) {
            ++votes[static_cast<std::size_t>(in.at(yy, xx))];
          }
        const auto centre = in.at(y, x);
        std::int32_t best = centre;
        for (std::size_t c = 0; c < votes.size(); ++c) {
          if (votes[c] > votes[static_cast<std::size_t>(best)]) best = static_cast<std::int32_t>(c);
        }
        out.at(y, x) = best;
      }
    return out;
  }

  std::vector<Feature> prototypes_;
  std::vector<bool> present_;
  bool fitted_ = false;
};

}  // namespace driveguard
