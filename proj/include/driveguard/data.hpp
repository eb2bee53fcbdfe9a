#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "driveguard/degradation.hpp"
#include "driveguard/image_io.hpp"
#include "driveguard/metrics.hpp"
#include "driveguard/rng.hpp"

namespace driveguard {

/// Frames are 1 x 3 x H x W tensors in [0,1].
struct FrameSequence {
  std::vector<Tensor> frames;
  std::vector<LabelMap> labels;  // empty, or one per frame
  std::string source;
  double frame_interval = 1.0;

  [[nodiscard]] std::size_t size() const { return frames.size(); }
  [[nodiscard]] bool has_labels() const { return !labels.empty(); }

  void validate() const {
    detail::require(!frames.empty(), "sequence '", source, "' has no frames");
    const Shape& s = frames.front().shape();
    detail::require(s.size() == 4 && s[0] == 1, "sequence '", source, "': frames must be 1 x C x H x W");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      detail::require(frames[i].shape() == s, "sequence '", source, "': frame ", i, " has shape ",
                      to_string(frames[i].shape()), ", expected ", to_string(s));
    }
    if (has_labels()) {
      detail::require(labels.size() == frames.size(), "sequence '", source, "': ", labels.size(), " label maps for ",
                      frames.size(), " frames");
      for (std::size_t i = 0; i < labels.size(); ++i) {
        detail::require(labels[i].height == s[2] && labels[i].width == s[3], "sequence '", source, "': label map ", i,
                        " is ", labels[i].height, "x", labels[i].width, ", frames are ", s[2], "x", s[3]);
      }
    }
  }
};

namespace data_detail {

inline std::vector<std::filesystem::path> matching_files(const std::filesystem::path& dir, const std::string& pattern) {
  detail::require(std::filesystem::is_directory(dir), "not a directory: ", dir.string());
  const std::regex re(pattern);
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), re)) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace data_detail

/// Loads frames from `dir/frames` (labels from `dir/labels` if present), or
/// from `dir` itself. Files are taken in lexicographic order.
inline FrameSequence load_sequence(const std::filesystem::path& dir, const std::string& pattern = R"(.*\.png)") {
  FrameSequence seq;
  seq.source = dir.filename().string();
  const bool nested = std::filesystem::is_directory(dir / "frames");
  const auto frame_dir = nested ? dir / "frames" : dir;
  for (const auto& p : data_detail::matching_files(frame_dir, pattern)) seq.frames.push_back(load_png_rgb(p));
  detail::require(!seq.frames.empty(), "no frames matching '", pattern, "' in ", frame_dir.string());
  if (nested && std::filesystem::is_directory(dir / "labels")) {
    for (const auto& p : data_detail::matching_files(dir / "labels", pattern)) seq.labels.push_back(load_label_png(p));
  }
  seq.validate();
  return seq;
}

inline void save_sequence(const FrameSequence& seq, const std::filesystem::path& dir) {
  seq.validate();
  char name[32];
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::snprintf(name, sizeof name, "%06zu.png", i);
    save_png_rgb(seq.frames[i], dir / "frames" / name);
    if (seq.has_labels()) save_label_png(seq.labels[i], dir / "labels" / name);
  }
}

/// Sequence directories under `root` (sorted), or `root` itself when it
/// directly holds a sequence.
inline std::vector<std::filesystem::path> sequence_dirs(const std::filesystem::path& root) {
  detail::require(std::filesystem::is_directory(root), "not a directory: ", root.string());
  if (std::filesystem::is_directory(root / "frames")) return {root};
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory() && std::filesystem::is_directory(e.path() / "frames")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty() && !data_detail::matching_files(root, R"(.*\.png)").empty()) out.push_back(root);
  detail::require(!out.empty(), "no frame sequences under ", root.string());
  return out;
}

inline std::vector<FrameSequence> load_corpus(const std::filesystem::path& root) {
  std::vector<FrameSequence> out;
  for (const auto& d : sequence_dirs(root)) out.push_back(load_sequence(d));
  return out;
}

struct SamplePair {
  Tensor input;                   // x'
  std::optional<Tensor> previous; // degraded previous frame
  Tensor target;                  // x
  bool is_clean = false;
  DegradationSpec spec;
  std::vector<ArtifactPlacement> placements;
  std::optional<LabelMap> label;
  std::size_t frame_index = 0;
};

struct PairConfig {
  std::vector<int> level_schedule{2};  // cycled over pair indices
  double clean_ratio = 0.25;
  std::size_t temporal_stride = 1;
  bool with_previous = true;
  DegradationConfig degradation;
};

/// Evenly interleaved: pair i is clean iff ceil((i+1)r) > ceil(ir), which
/// gives exactly ceil(n r) clean pairs among the first n.
inline bool is_clean_index(std::size_t i, double ratio) {
  if (ratio <= 0.0) return false;
  auto c = [ratio](std::size_t k) { return std::ceil(static_cast<double>(k) * ratio - 1e-9); };
  return c(i + 1) > c(i);
}

inline std::size_t previous_index(std::size_t i, std::size_t stride) { return i >= stride ? i - stride : 0; }

/// One pair per frame. Degraded pairs use degrade_at_level with seeds derived
/// from (seed, frame index); the previous frame gets its own derived seed.
inline std::vector<SamplePair> make_pairs(const FrameSequence& seq, const PairConfig& cfg, std::uint64_t seed) {
  detail::require(!seq.frames.empty(), "make_pairs: empty sequence");
  seq.validate();
  detail::require(cfg.temporal_stride >= 1, "make_pairs: temporal stride must be at least 1");
  detail::require(seq.size() > cfg.temporal_stride || !cfg.with_previous, "make_pairs: sequence of ", seq.size(),
                  " frames is not longer than the temporal stride ", cfg.temporal_stride);
  detail::require(cfg.clean_ratio >= 0.0 && cfg.clean_ratio <= 1.0, "make_pairs: clean ratio outside [0,1]");
  detail::require(!cfg.level_schedule.empty(), "make_pairs: empty level schedule");
  std::vector<SamplePair> pairs;
  pairs.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    SamplePair p;
    p.frame_index = i;
    p.target = seq.frames[i];
    if (seq.has_labels()) p.label = seq.labels[i];
    p.is_clean = is_clean_index(i, cfg.clean_ratio);
    const int level = cfg.level_schedule[i % cfg.level_schedule.size()];
    const std::size_t prev = previous_index(i, cfg.temporal_stride);
    if (p.is_clean) {
      p.input = p.target;
      p.spec = expand_level(0);
      if (cfg.with_previous) p.previous = seq.frames[prev];
    } else {
      auto d = degrade_at_level(p.target, level, derive_seed(seed, {i, 0}), cfg.degradation);
      p.input = std::move(d.image);
      p.spec = d.spec;
      p.placements = std::move(d.placements);
      if (cfg.with_previous) {
        p.previous = degrade_at_level(seq.frames[prev], level, derive_seed(seed, {i, 1}), cfg.degradation).image;
      }
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

struct AugmentConfig {
  double crop_min = 0.8, crop_max = 1.0;        // side fraction kept
  double rotation_min = -10.0, rotation_max = 10.0;  // degrees
  double zoom_min = 0.9, zoom_max = 1.1;
  double hue_shift = 0.03;                      // +- fraction of the hue circle
  double saturation_min = 0.8, saturation_max = 1.2;
  double value_min = 0.85, value_max = 1.15;
  double gamma_min = 0.8, gamma_max = 1.25;
  double p_crop = 0.5, p_rotate = 0.5, p_zoom = 0.5, p_hsv = 0.5, p_gamma = 0.5;
  int max_retries = 8;

  static AugmentConfig none() {
    AugmentConfig c;
    c.p_crop = c.p_rotate = c.p_zoom = c.p_hsv = c.p_gamma = 0.0;
    return c;
  }
};

/// One sampled transform set.
struct AugmentParams {
  // Output pixel (x, y) samples source (a*x + b*y + c, d*x + e*y + f).
  double a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;
  bool geometric = false;
  double hue = 0.0, saturation = 1.0, value = 1.0, gamma = 1.0;
  bool photometric = false;
};

inline AugmentParams sample_augment(const AugmentConfig& cfg, std::size_t height, std::size_t width, std::uint64_t seed) {
  detail::require(cfg.crop_min > 0.0 && cfg.crop_min <= cfg.crop_max && cfg.crop_max <= 1.0, "augment: bad crop range");
  detail::require(cfg.zoom_min > 0.0 && cfg.zoom_min <= cfg.zoom_max, "augment: bad zoom range");
  detail::require(cfg.gamma_min > 0.0 && cfg.gamma_min <= cfg.gamma_max, "augment: bad gamma range");
  detail::require(cfg.max_retries >= 1, "augment: max_retries must be positive");
  Rng rng(seed);
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  auto chance = [&](double p) { return uniform01(rng) < p; };
  AugmentParams ap;
  const double H = static_cast<double>(height), W = static_cast<double>(width);

  // Crop: source window [ox, ox + fw) x [oy, oy + fh), stretched to the frame.
  double fx = 1.0, fy = 1.0, ox = 0.0, oy = 0.0;
  if (chance(cfg.p_crop)) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      const double frac = u(cfg.crop_min, cfg.crop_max);
      const double cw = std::round(frac * W), ch = std::round(frac * H);
      if (cw < 1.0 || ch < 1.0) continue;
      fx = cw / W;
      fy = ch / H;
      ox = std::floor(u(0.0, W - cw + 1.0 - 1e-9));
      oy = std::floor(u(0.0, H - ch + 1.0 - 1e-9));
      ok = true;
    }
    detail::require(ok, "augment: no valid crop after ", cfg.max_retries, " attempts");
    ap.geometric |= fx != 1.0 || fy != 1.0 || ox != 0.0 || oy != 0.0;
  }
  const double angle = chance(cfg.p_rotate) ? u(cfg.rotation_min, cfg.rotation_max) * std::numbers::pi / 180.0 : 0.0;
  const double zoom = chance(cfg.p_zoom) ? u(cfg.zoom_min, cfg.zoom_max) : 1.0;
  ap.geometric |= angle != 0.0 || zoom != 1.0;

  // Rotation and zoom about the frame centre, then the crop mapping.
  const double cx = (W - 1.0) / 2.0, cy = (H - 1.0) / 2.0;
  const double cs = std::cos(angle) / zoom, sn = std::sin(angle) / zoom;
  // q = R/zoom * (p - centre) + centre
  const double qa = cs, qb = -sn, qc = cx - cs * cx + sn * cy;
  const double qd = sn, qe = cs, qf = cy - sn * cx - cs * cy;
  // source = crop(q): ox + fx * q.x, oy + fy * q.y
  ap.a = fx * qa;
  ap.b = fx * qb;
  ap.c = ox + fx * qc;
  ap.d = fy * qd;
  ap.e = fy * qe;
  ap.f = oy + fy * qf;

  if (chance(cfg.p_hsv)) {
    ap.hue = u(-cfg.hue_shift, cfg.hue_shift);
    ap.saturation = u(cfg.saturation_min, cfg.saturation_max);
    ap.value = u(cfg.value_min, cfg.value_max);
    ap.photometric = true;
  }
  if (chance(cfg.p_gamma)) {
    ap.gamma = u(cfg.gamma_min, cfg.gamma_max);
    ap.photometric = true;
  }
  return ap;
}

namespace data_detail {

inline double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

/// Bilinear resampling with edge replication.
inline Tensor warp_image(const Tensor& img, const AugmentParams& ap) {
  const std::size_t H = img.height(), W = img.width();
  Tensor out(img.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double sx = clampd(ap.a * x + ap.b * y + ap.c, 0.0, static_cast<double>(W - 1));
      const double sy = clampd(ap.d * x + ap.e * y + ap.f, 0.0, static_cast<double>(H - 1));
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double tx = sx - static_cast<double>(x0), ty = sy - static_cast<double>(y0);
      for (std::size_t n = 0; n < img.batch(); ++n)
        for (std::size_t c = 0; c < img.channels(); ++c) {
          auto src = img.plane(n, c);
          const double top = src[y0 * W + x0] * (1 - tx) + src[y0 * W + x1] * tx;
          const double bot = src[y1 * W + x0] * (1 - tx) + src[y1 * W + x1] * tx;
          out.plane(n, c)[y * W + x] = static_cast<float>(top * (1 - ty) + bot * ty);
        }
    }
  return out;
}

}  // namespace data_detail

/// Nearest-neighbour resampling keeps class IDs discrete.
inline LabelMap warp_labels(const LabelMap& m, const AugmentParams& ap) {
  if (!ap.geometric) return m;
  LabelMap out(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      const double sx = data_detail::clampd(std::round(ap.a * x + ap.b * y + ap.c), 0.0, static_cast<double>(m.width - 1));
      const double sy = data_detail::clampd(std::round(ap.d * x + ap.e * y + ap.f), 0.0, static_cast<double>(m.height - 1));
      out.at(y, x) = m.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
    }
  return out;
}

/// HSV jitter then gamma on a 3-channel image, clipped to [0,1].
inline Tensor photometric(const Tensor& img, const AugmentParams& ap) {
  if (!ap.photometric) return img;
  detail::require(img.channels() == 3, "photometric augmentation needs RGB");
  Tensor out(img.shape());
  const std::size_t P = img.height() * img.width();
  for (std::size_t n = 0; n < img.batch(); ++n) {
    auto R = img.plane(n, 0), G = img.plane(n, 1), B = img.plane(n, 2);
    auto oR = out.plane(n, 0), oG = out.plane(n, 1), oB = out.plane(n, 2);
    for (std::size_t p = 0; p < P; ++p) {
      const double r = R[p], g = G[p], b = B[p];
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), delta = mx - mn;
      double h = 0.0;
      if (delta > 0.0) {
        if (mx == r) h = std::fmod((g - b) / delta + 6.0, 6.0);
        else if (mx == g) h = (b - r) / delta + 2.0;
        else h = (r - g) / delta + 4.0;
        h /= 6.0;
      }
      double s = mx > 0.0 ? delta / mx : 0.0, v = mx;
      h = std::fmod(h + ap.hue + 1.0, 1.0);
      s = data_detail::clampd(s * ap.saturation, 0.0, 1.0);
      v = data_detail::clampd(v * ap.value, 0.0, 1.0);
      const double hh = h * 6.0;
      const auto sector = static_cast<int>(std::floor(hh)) % 6;
      const double f = hh - std::floor(hh);
      const double pv = v * (1 - s), qv = v * (1 - s * f), tv = v * (1 - s * (1 - f));
      double rgb[3];
      switch (sector) {
        case 0: rgb[0] = v, rgb[1] = tv, rgb[2] = pv; break;
        case 1: rgb[0] = qv, rgb[1] = v, rgb[2] = pv; break;
        case 2: rgb[0] = pv, rgb[1] = v, rgb[2] = tv; break;
        case 3: rgb[0] = pv, rgb[1] = qv, rgb[2] = v; break;
        case 4: rgb[0] = tv, rgb[1] = pv, rgb[2] = v; break;
        default: rgb[0] = v, rgb[1] = pv, rgb[2] = qv; break;
      }
      oR[p] = static_cast<float>(data_detail::clampd(std::pow(rgb[0], ap.gamma), 0.0, 1.0));
      oG[p] = static_cast<float>(data_detail::clampd(std::pow(rgb[1], ap.gamma), 0.0, 1.0));
      oB[p] = static_cast<float>(data_detail::clampd(std::pow(rgb[2], ap.gamma), 0.0, 1.0));
    }
  }
  return out;
}

inline Tensor apply_augment(const Tensor& img, const AugmentParams& ap) {
  return photometric(ap.geometric ? data_detail::warp_image(img, ap) : img, ap);
}

/// One sampled transform set applied to every image member (and,
/// geometrically, to the label map).
inline SamplePair augment_pair(const SamplePair& pair, const AugmentConfig& cfg, std::uint64_t seed) {
  const AugmentParams ap = sample_augment(cfg, pair.target.height(), pair.target.width(), seed);
  if (!ap.geometric && !ap.photometric) return pair;
  SamplePair out = pair;
  out.target = apply_augment(pair.target, ap);
  out.input = apply_augment(pair.input, ap);
  if (pair.previous) out.previous = apply_augment(*pair.previous, ap);
  if (pair.label) out.label = warp_labels(*pair.label, ap);
  return out;
}

struct ClassMap {
  std::map<std::int32_t, std::int32_t> table;
  std::vector<std::string> names;  // indexed by unified ID

  [[nodiscard]] std::size_t class_count() const { return names.size(); }

  void validate() const {
    for (const auto& [src, dst] : table) {
      detail::require(dst >= 0 && static_cast<std::size_t>(dst) < names.size(), "class map: unified id ", dst,
                      " for source id ", src, " outside [0, ", names.size(), ")");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      detail::require(!names[i].empty(), "class map: unified id ", i, " is never assigned");
    }
  }

  static ClassMap identity(const std::vector<std::string>& names) {
    ClassMap m;
    m.names = names;
    for (std::size_t i = 0; i < names.size(); ++i) m.table[static_cast<std::int32_t>(i)] = static_cast<std::int32_t>(i);
    return m;
  }
};

/// Lines "source_id unified_id class_name"; '#' starts a comment.
inline ClassMap parse_class_map(std::istream& in) {
  ClassMap m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::int32_t src = 0, dst = 0;
    std::string name;
    if (!(ls >> src)) continue;
    detail::require(static_cast<bool>(ls >> dst >> name), "class map line ", lineno, ": expected 'source unified name'");
    detail::require(dst >= 0, "class map line ", lineno, ": negative unified id");
    detail::require(!m.table.count(src), "class map line ", lineno, ": source id ", src, " mapped twice");
    m.table[src] = dst;
    if (m.names.size() <= static_cast<std::size_t>(dst)) m.names.resize(static_cast<std::size_t>(dst) + 1);
    auto& slot = m.names[static_cast<std::size_t>(dst)];
    detail::require(slot.empty() || slot == name, "class map line ", lineno, ": unified id ", dst, " named both '", slot,
                    "' and '", name, "'");
    slot = name;
  }
  m.validate();
  return m;
}

inline ClassMap load_class_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "cannot read class map ", path.string());
  return parse_class_map(in);
}

inline LabelMap remap_labels(const LabelMap& map, const ClassMap& cm) {
  LabelMap out(map.height, map.width);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto it = cm.table.find(map.ids[i]);
    detail::require(it != cm.table.end(), "unknown source class id ", map.ids[i]);
    out.ids[i] = it->second;
  }
  return out;
}

}  // namespace driveguard
