#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "driveguard/rng.hpp"
#include "driveguard/tensor.hpp"

namespace driveguard {

enum class NoiseKind { none, gaussian, speckle, salt_pepper, poisson, stacked };

inline std::string_view to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::speckle: return "speckle";
    case NoiseKind::salt_pepper: return "salt_pepper";
    case NoiseKind::poisson: return "poisson";
    case NoiseKind::stacked: return "stacked";
  }
  return "?";
}

inline NoiseKind parse_noise_kind(std::string_view s) {
  for (auto k : {NoiseKind::none, NoiseKind::gaussian, NoiseKind::speckle, NoiseKind::salt_pepper, NoiseKind::poisson,
                 NoiseKind::stacked}) {
    if (s == to_string(k)) return k;
  }
  detail::fail("unknown noise kind '", s, "'");
}

struct DegradationConfig {
  /// Table value v becomes variance v * variance_scale on the [0,1] scale.
  double variance_scale = 0.01;
  double poisson_peak = 255.0;
  float artifact_fill = 0.0f;
  /// Apply all four statistical noises in sequence instead of one at random.
  bool stack_noises = false;
  /// Artifacts only, for occlusion studies.
  bool statistical_noise = true;
  double rect_min_fraction = 0.04;
  double rect_max_fraction = 0.12;
  std::size_t max_line_group = 3;
};

struct DegradationSpec {
  int level = 0;
  double salt_pepper_amount = 0.0;
  double gaussian_variance = 0.0;
  int artifact_min = 0;
  int artifact_max = -1;  // empty range at level 0
  double speckle_variance = 0.0;
  bool poisson_enabled = false;
  std::uint64_t rng_seed = 0;
  // Realized choices.
  NoiseKind noise = NoiseKind::none;
  int artifact_count = 0;

  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

struct ArtifactPlacement {
  enum class Kind { blank_region, line_group };
  enum class Orientation { horizontal, vertical };
  Kind kind = Kind::blank_region;
  // Covered rectangle, always inside the frame.
  std::size_t y = 0, x = 0, height = 0, width = 0;
  float fill = 0.0f;
  Orientation orientation = Orientation::horizontal;  // line groups
  std::size_t thickness = 0;                          // line groups

  friend bool operator==(const ArtifactPlacement&, const ArtifactPlacement&) = default;
};

namespace degradation_detail {

inline void require_image(const Tensor& img, const char* what) {
  detail::require(img.rank() == 4, what, ": expected an N x C x H x W image, got ", to_string(img.shape()));
}

inline float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace degradation_detail

/// Table 1 row for a level, with sigma^2 mapped through the variance scale.
inline DegradationSpec expand_level(int level, const DegradationConfig& cfg = {}) {
  detail::require(level >= 0 && level <= 4, "noise level ", level, " outside 0..4");
  DegradationSpec s;
  s.level = level;
  if (level == 0) return s;
  struct Row {
    double amount, sigma2;
    int lo, hi;
  };
  static constexpr Row table[] = {{0.1, 1.0, 1, 13}, {0.2, 4.0, 13, 25}, {0.3, 9.0, 25, 37}, {0.4, 16.0, 37, 49}};
  const Row& r = table[level - 1];
  s.salt_pepper_amount = r.amount;
  s.gaussian_variance = r.sigma2 * cfg.variance_scale;
  s.speckle_variance = s.gaussian_variance;
  s.artifact_min = r.lo;
  s.artifact_max = r.hi;
  s.poisson_enabled = true;
  return s;
}

inline Tensor gaussian_noise(const Tensor& img, double variance, std::uint64_t seed) {
  degradation_detail::require_image(img, "gaussian_noise");
  detail::require(variance >= 0.0, "gaussian_noise: negative variance ", variance);
  if (variance == 0.0) return img;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, std::sqrt(variance));
  Tensor out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = degradation_detail::clip01(img[i] + n(rng));
  return out;
}

/// g(x) = x + n * x.
inline Tensor speckle_noise(const Tensor& img, double variance, std::uint64_t seed) {
  degradation_detail::require_image(img, "speckle_noise");
  detail::require(variance >= 0.0, "speckle_noise: negative variance ", variance);
  if (variance == 0.0) return img;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, std::sqrt(variance));
  Tensor out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = degradation_detail::clip01(img[i] + n(rng) * img[i]);
  return out;
}

/// Replaces round(amount * H * W) pixel positions, shared across channels,
/// with 0 or 1 by a fair coin.
inline Tensor salt_pepper(const Tensor& img, double amount, std::uint64_t seed) {
  degradation_detail::require_image(img, "salt_pepper");
  detail::require(amount >= 0.0 && amount <= 1.0, "salt_pepper: amount ", amount, " outside [0,1]");
  Tensor out = img;
  if (amount == 0.0) return out;
  Rng rng(seed);
  const std::size_t N = img.batch(), C = img.channels(), P = img.height() * img.width();
  const auto count = static_cast<std::size_t>(std::llround(amount * static_cast<double>(P)));
  std::vector<std::size_t> idx(P);
  for (std::size_t n = 0; n < N; ++n) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `count` entries are a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(P - 1)));
      std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < count; ++i) {
      const float v = uniform01(rng) < 0.5 ? 1.0f : 0.0f;
      for (std::size_t c = 0; c < C; ++c) out.plane(n, c)[idx[i]] = v;
    }
  }
  return out;
}

inline Tensor poisson_noise(const Tensor& img, double peak, std::uint64_t seed) {
  degradation_detail::require_image(img, "poisson_noise");
  detail::require(peak > 0.0, "poisson_noise: peak must be positive, got ", peak);
  Rng rng(seed);
  Tensor out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double mean = std::max(0.0, static_cast<double>(img[i])) * peak;
    if (mean <= 0.0) continue;
    std::poisson_distribution<long long> p(mean);
    out[i] = degradation_detail::clip01(static_cast<double>(p(rng)) / peak);
  }
  return out;
}

/// Pixels covered by the placements, as an H x W mask.
inline std::vector<std::uint8_t> occlusion_mask(const std::vector<ArtifactPlacement>& placements, std::size_t height,
                                                std::size_t width) {
  std::vector<std::uint8_t> mask(height * width, 0);
  for (const auto& p : placements) {
    for (std::size_t y = p.y; y < p.y + p.height; ++y) {
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(y * width + p.x), p.width, std::uint8_t{1});
    }
  }
  return mask;
}

/// Each artifact is a blank rectangle (sides uniform in the configured
/// fraction of the frame) or a full-span group of adjacent lines, by a fair
/// coin. Placements are shared by every image of the batch.
inline std::pair<Tensor, std::vector<ArtifactPlacement>> add_artifacts(const Tensor& img, int count, std::uint64_t seed,
                                                                       const DegradationConfig& cfg = {}) {
  degradation_detail::require_image(img, "add_artifacts");
  detail::require(count >= 0, "add_artifacts: negative count ", count);
  detail::require(cfg.rect_min_fraction > 0.0 && cfg.rect_min_fraction <= cfg.rect_max_fraction &&
                      cfg.rect_max_fraction <= 1.0,
                  "add_artifacts: bad rectangle size range");
  detail::require(cfg.max_line_group >= 1, "add_artifacts: line groups need at least one line");
  const std::size_t H = img.height(), W = img.width();
  Rng rng(seed);
  std::vector<ArtifactPlacement> placements;
  auto side = [&](std::size_t extent) {
    const double f = cfg.rect_min_fraction + uniform01(rng) * (cfg.rect_max_fraction - cfg.rect_min_fraction);
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(f * static_cast<double>(extent))), 1, extent);
  };
  for (int i = 0; i < count; ++i) {
    ArtifactPlacement p;
    p.fill = cfg.artifact_fill;
    if (uniform01(rng) < 0.5) {
      p.kind = ArtifactPlacement::Kind::blank_region;
      p.height = side(H);
      p.width = side(W);
      p.y = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(H - p.height)));
      p.x = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(W - p.width)));
    } else {
      p.kind = ArtifactPlacement::Kind::line_group;
      p.orientation = uniform01(rng) < 0.5 ? ArtifactPlacement::Orientation::horizontal
                                           : ArtifactPlacement::Orientation::vertical;
      const bool horizontal = p.orientation == ArtifactPlacement::Orientation::horizontal;
      const std::size_t span = horizontal ? H : W;
      p.thickness = std::min<std::size_t>(
          span, static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(cfg.max_line_group))));
      const auto offset = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(span - p.thickness)));
      if (horizontal) {
        p.y = offset;
        p.height = p.thickness;
        p.width = W;
      } else {
        p.x = offset;
        p.width = p.thickness;
        p.height = H;
      }
    }
    placements.push_back(p);
  }
  Tensor out = img;
  for (const auto& p : placements) {
    for (std::size_t n = 0; n < img.batch(); ++n)
      for (std::size_t c = 0; c < img.channels(); ++c) {
        auto plane = out.plane(n, c);
        for (std::size_t y = p.y; y < p.y + p.height; ++y) std::fill_n(plane.begin() + y * W + p.x, p.width, p.fill);
      }
  }
  return {std::move(out), std::move(placements)};
}

struct Degraded {
  Tensor image;
  DegradationSpec spec;
  std::vector<ArtifactPlacement> placements;
};

/// Statistical noise (one kind chosen uniformly, or all four when stacked),
/// then artifacts with a count uniform in the level's range. A pure function
/// of (img, level, seed, cfg).
inline Degraded degrade_at_level(const Tensor& img, int level, std::uint64_t seed, const DegradationConfig& cfg = {}) {
  degradation_detail::require_image(img, "degrade_at_level");
  Degraded d;
  d.spec = expand_level(level, cfg);
  d.spec.rng_seed = seed;
  d.image = img;
  if (level == 0) return d;

  if (cfg.statistical_noise) {
    const std::uint64_t noise_seed = derive_seed(seed, {1});
    auto apply = [&](NoiseKind kind) {
      switch (kind) {
        case NoiseKind::gaussian: d.image = gaussian_noise(d.image, d.spec.gaussian_variance, derive_seed(noise_seed, {1})); break;
        case NoiseKind::speckle: d.image = speckle_noise(d.image, d.spec.speckle_variance, derive_seed(noise_seed, {2})); break;
        case NoiseKind::salt_pepper: d.image = salt_pepper(d.image, d.spec.salt_pepper_amount, derive_seed(noise_seed, {3})); break;
        case NoiseKind::poisson: d.image = poisson_noise(d.image, cfg.poisson_peak, derive_seed(noise_seed, {4})); break;
        default: break;
      }
    };
    const NoiseKind kinds[] = {NoiseKind::gaussian, NoiseKind::speckle, NoiseKind::salt_pepper, NoiseKind::poisson};
    if (cfg.stack_noises) {
      d.spec.noise = NoiseKind::stacked;
      for (auto k : kinds) apply(k);
    } else {
      Rng choose(derive_seed(seed, {0}));
      d.spec.noise = kinds[uniform_int(choose, 0, 3)];
      apply(d.spec.noise);
    }
  }

  Rng count_rng(derive_seed(seed, {2}));
  d.spec.artifact_count = static_cast<int>(uniform_int(count_rng, d.spec.artifact_min, d.spec.artifact_max));
  auto [out, placements] = add_artifacts(d.image, d.spec.artifact_count, derive_seed(seed, {3}), cfg);
  d.image = std::move(out);
  d.placements = std::move(placements);
  return d;
}

// Sidecar records: one tab-separated line per frame,
//   name  level  seed  noise  key=value;...  placement|placement|...
// with placements "blank:y,x,h,w,fill" or "lines:h|v,offset,thickness,fill".

struct SidecarRecord {
  std::string frame;
  DegradationSpec spec;
  std::vector<ArtifactPlacement> placements;

  friend bool operator==(const SidecarRecord&, const SidecarRecord&) = default;
};

inline std::string format_sidecar(const SidecarRecord& r, double poisson_peak = 255.0) {
  std::ostringstream os;
  os.precision(17);
  const auto& s = r.spec;
  os << r.frame << '\t' << s.level << '\t' << s.rng_seed << '\t' << to_string(s.noise) << '\t';
  os << "amount=" << s.salt_pepper_amount << ";gaussian_variance=" << s.gaussian_variance
     << ";speckle_variance=" << s.speckle_variance << ";poisson=" << (s.poisson_enabled ? 1 : 0)
     << ";peak=" << poisson_peak << ";artifact_range=" << s.artifact_min << ".." << s.artifact_max
     << ";artifact_count=" << s.artifact_count << '\t';
  for (std::size_t i = 0; i < r.placements.size(); ++i) {
    const auto& p = r.placements[i];
    if (i) os << '|';
    if (p.kind == ArtifactPlacement::Kind::blank_region) {
      os << "blank:" << p.y << ',' << p.x << ',' << p.height << ',' << p.width << ',' << p.fill;
    } else {
      const bool h = p.orientation == ArtifactPlacement::Orientation::horizontal;
      os << "lines:" << (h ? 'h' : 'v') << ',' << (h ? p.y : p.x) << ',' << p.thickness << ',' << p.fill;
    }
  }
  return os.str();
}

namespace degradation_detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace degradation_detail

/// Inverse of format_sidecar; frame extents restore full-span line groups.
inline SidecarRecord parse_sidecar(const std::string& line, std::size_t height, std::size_t width) {
  using degradation_detail::split;
  const auto cols = split(line, '\t');
  detail::require(cols.size() == 6, "sidecar record needs 6 tab-separated fields, got ", cols.size());
  SidecarRecord r;
  try {
    r.frame = cols[0];
    r.spec.level = std::stoi(cols[1]);
    r.spec.rng_seed = std::stoull(cols[2]);
    r.spec.noise = parse_noise_kind(cols[3]);
    for (const auto& kv : split(cols[4], ';')) {
      const auto eq = kv.find('=');
      detail::require(eq != std::string::npos, "sidecar parameter '", kv, "' lacks '='");
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "amount") r.spec.salt_pepper_amount = std::stod(val);
      else if (key == "gaussian_variance") r.spec.gaussian_variance = std::stod(val);
      else if (key == "speckle_variance") r.spec.speckle_variance = std::stod(val);
      else if (key == "poisson") r.spec.poisson_enabled = val == "1";
      else if (key == "artifact_count") r.spec.artifact_count = std::stoi(val);
      else if (key == "artifact_range") {
        const auto dots = val.find("..");
        detail::require(dots != std::string::npos, "bad artifact range '", val, "'");
        r.spec.artifact_min = std::stoi(val.substr(0, dots));
        r.spec.artifact_max = std::stoi(val.substr(dots + 2));
      }
    }
    if (!cols[5].empty()) {
      for (const auto& item : split(cols[5], '|')) {
        ArtifactPlacement p;
        const auto colon = item.find(':');
        detail::require(colon != std::string::npos, "bad placement '", item, "'");
        const auto kind = item.substr(0, colon);
        const auto f = split(item.substr(colon + 1), ',');
        if (kind == "blank") {
          detail::require(f.size() == 5, "blank placement needs 5 fields: '", item, "'");
          p.kind = ArtifactPlacement::Kind::blank_region;
          p.y = std::stoul(f[0]);
          p.x = std::stoul(f[1]);
          p.height = std::stoul(f[2]);
          p.width = std::stoul(f[3]);
          p.fill = std::stof(f[4]);
        } else if (kind == "lines") {
          detail::require(f.size() == 4 && (f[0] == "h" || f[0] == "v"), "bad line placement '", item, "'");
          p.kind = ArtifactPlacement::Kind::line_group;
          p.thickness = std::stoul(f[2]);
          p.fill = std::stof(f[3]);
          if (f[0] == "h") {
            p.orientation = ArtifactPlacement::Orientation::horizontal;
            p.y = std::stoul(f[1]);
            p.height = p.thickness;
            p.width = width;
          } else {
            p.orientation = ArtifactPlacement::Orientation::vertical;
            p.x = std::stoul(f[1]);
            p.width = p.thickness;
            p.height = height;
          }
        } else {
          detail::fail("unknown placement kind '", kind, "'");
        }
        detail::require(p.y + p.height <= height && p.x + p.width <= width, "placement '", item, "' leaves the frame");
        r.placements.push_back(p);
      }
    }
  } catch (const std::logic_error& e) {
    detail::fail("malformed sidecar record: ", e.what());
  }
  return r;
}

}  // namespace driveguard
