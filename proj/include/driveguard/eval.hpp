#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driveguard/architectures.hpp"
#include "driveguard/data.hpp"
#include "driveguard/filters.hpp"
#include "driveguard/image_io.hpp"
#include "driveguard/metrics.hpp"
#include "driveguard/segmenter.hpp"
#include "driveguard/ssim.hpp"

namespace driveguard {

/// A restoration method. `previous` is the restored input's predecessor in
/// the degraded stream, or null for methods that do not use it.
struct RestoreMethod {
  std::string name;
  bool needs_previous = false;
  std::function<Tensor(const Tensor& current, const Tensor* previous)> restore;
};

inline RestoreMethod identity_method() {
  return {"identity", false, [](const Tensor& x, const Tensor*) { return x; }};
}

inline RestoreMethod median_method(std::size_t kernel = 3) {
  return {"median", false, [kernel](const Tensor& x, const Tensor*) { return median_filter(x, kernel); }};
}

inline RestoreMethod bilateral_method(double sigma_spatial = 2.0, double sigma_range = 0.1, std::size_t radius = 4) {
  return {"bilateral", false, [=](const Tensor& x, const Tensor*) {
            return bilateral_filter(x, sigma_spatial, sigma_range, radius);
          }};
}

/// The model is captured by reference and must outlive the method.
inline RestoreMethod model_method(const ModelGraph<float>& model, std::string name = {}) {
  if (name.empty()) name = display_name(model.config.kind);
  return {std::move(name), model.uses_previous_frame(),
          [&model](const Tensor& x, const Tensor* prev) { return infer(model, x, prev); }};
}

inline constexpr int kAverageLevel = -1;

struct MetricRow {
  std::string method;
  int noise_level = 0;  // kAverageLevel for the across-level mean
  std::size_t n = 0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double pixel_acc = std::numeric_limits<double>::quiet_NaN();
  double mean_iou = std::numeric_limits<double>::quiet_NaN();
};

struct EvalConfig {
  std::vector<int> levels{0, 1, 2, 3, 4};
  std::uint64_t seed = 0;
  DegradationConfig degradation;
  std::size_t temporal_stride = 1;
  /// Segmentation metrics come from the external predictions when set,
  /// else from the segmenter when set, else are left NaN.
  const ToySegmenter* segmenter = nullptr;
  std::filesystem::path external_predictions;
  std::filesystem::path dump_images;
};

/// Per-frame key shared by image dumps and external predictions:
/// level_<L>/<sequence index>/<frame index>.png
inline std::filesystem::path frame_key(int level, std::size_t sequence, std::size_t frame) {
  std::ostringstream seq, name;
  seq << std::setw(3) << std::setfill('0') << sequence;
  name << std::setw(6) << std::setfill('0') << frame << ".png";
  return std::filesystem::path("level_" + std::to_string(level)) / seq.str() / name.str();
}

/// Degraded stream of one sequence at one level; seeds depend only on
/// (seed, level, sequence, frame).
inline std::vector<Degraded> degrade_sequence(const FrameSequence& seq, int level, std::size_t sequence_index,
                                              std::uint64_t seed, const DegradationConfig& cfg = {}) {
  std::vector<Degraded> out(seq.size());
  parallel_for(0, seq.size(), [&](std::size_t i) {
    out[i] = degrade_at_level(seq.frames[i], level,
                              derive_seed(seed, {static_cast<std::uint64_t>(level), sequence_index, i}), cfg);
  });
  return out;
}

/// Unweighted mean of per-level rows.
inline MetricRow average_row(const std::vector<MetricRow>& rows) {
  detail::require(!rows.empty(), "average of zero rows");
  MetricRow a;
  a.method = rows.front().method;
  a.noise_level = kAverageLevel;
  a.pixel_acc = a.mean_iou = 0.0;
  for (const auto& r : rows) {
    a.n += r.n;
    a.mse += r.mse;
    a.psnr += r.psnr;
    a.ssim += r.ssim;
    a.pixel_acc += r.pixel_acc;
    a.mean_iou += r.mean_iou;
  }
  const double k = static_cast<double>(rows.size());
  a.mse /= k;
  a.psnr /= k;
  a.ssim /= k;
  a.pixel_acc /= k;
  a.mean_iou /= k;
  return a;
}

/// One row per level (frame-mean MSE, PSNR, SSIM; pooled confusion matrix
/// for the segmentation metrics) followed by the average row.
inline std::vector<MetricRow> evaluate(const RestoreMethod& method, const std::vector<FrameSequence>& dataset,
                                       const EvalConfig& cfg) {
  detail::require(!dataset.empty(), "evaluation dataset is empty");
  detail::require(!cfg.levels.empty(), "no evaluation levels");
  detail::require(cfg.temporal_stride >= 1, "temporal stride must be at least 1");
  const bool external = !cfg.external_predictions.empty();
  const bool segment = external || cfg.segmenter != nullptr;
  std::size_t classes = 0;
  for (const auto& seq : dataset) {
    seq.validate();
    detail::require(!method.needs_previous || seq.size() > cfg.temporal_stride, "method ", method.name,
                    " needs sequences longer than the temporal stride; '", seq.source, "' has ", seq.size(),
                    " frame(s)");
    detail::require(!segment || seq.has_labels(), "segmentation metrics requested but sequence '", seq.source,
                    "' has no labels");
    for (const auto& lab : seq.labels)
      for (auto id : lab.ids) classes = std::max(classes, static_cast<std::size_t>(std::max(id, 0)) + 1);
  }
  if (cfg.segmenter != nullptr) classes = std::max(classes, cfg.segmenter->class_count());

  std::vector<MetricRow> rows;
  for (int level : cfg.levels) {
    MetricRow row;
    row.method = method.name;
    row.noise_level = level;
    std::optional<ConfusionMatrix> cm;
    if (segment) cm.emplace(classes);
    for (std::size_t s = 0; s < dataset.size(); ++s) {
      const auto& seq = dataset[s];
      const auto degraded = degrade_sequence(seq, level, s, cfg.seed, cfg.degradation);
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const Tensor* prev = method.needs_previous ? &degraded[previous_index(i, cfg.temporal_stride)].image : nullptr;
        const Tensor restored = method.restore(degraded[i].image, prev);
        const Tensor& clean = seq.frames[i];
        row.mse += mse(restored, clean);
        row.psnr += psnr(restored, clean);
        row.ssim += ssim_mean(restored, clean);
        ++row.n;
        const auto key = frame_key(level, s, i);
        if (!cfg.dump_images.empty()) save_png_rgb(restored, cfg.dump_images / method.name / key);
        if (external) {
          const auto pred = load_label_png(cfg.external_predictions / key);
          cm->add(pred, seq.labels[i]);
        } else if (segment) {
          cm->add(cfg.segmenter->segment(restored), seq.labels[i]);
        }
      }
    }
    const double n = static_cast<double>(row.n);
    row.mse /= n;
    row.psnr /= n;
    row.ssim /= n;
    if (cm) {
      row.pixel_acc = cm->pixel_accuracy();
      row.mean_iou = cm->mean_iou();
    }
    rows.push_back(row);
  }
  rows.push_back(average_row(rows));
  return rows;
}

struct OcclusionRow {
  std::string method;
  int noise_level = 0;
  std::size_t n = 0;
  std::size_t occluded_pixels = 0;
  double occluded_mse = 0.0;
  double clear_mse = 0.0;
};

/// Artifact-only degradation; squared error pooled separately over pixels
/// inside and outside the artifact regions.
inline OcclusionRow occlusion_report(const RestoreMethod& method, const std::vector<FrameSequence>& dataset, int level,
                                     std::uint64_t seed, std::size_t temporal_stride = 1) {
  detail::require(!dataset.empty(), "occlusion report dataset is empty");
  DegradationConfig dc;
  dc.statistical_noise = false;
  OcclusionRow row;
  row.method = method.name;
  row.noise_level = level;
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t out_count = 0;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const auto& seq = dataset[s];
    seq.validate();
    const auto degraded = degrade_sequence(seq, level, s, seed, dc);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Tensor* prev = method.needs_previous ? &degraded[previous_index(i, temporal_stride)].image : nullptr;
      const Tensor restored = method.restore(degraded[i].image, prev);
      const Tensor& clean = seq.frames[i];
      const std::size_t H = clean.height(), W = clean.width(), C = clean.channels();
      const auto mask = occlusion_mask(degraded[i].placements, H, W);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < H * W; ++p) {
          const double d = static_cast<double>(restored.data()[c * H * W + p]) - clean.data()[c * H * W + p];
          if (mask[p]) {
            in_sum += d * d;
          } else {
            out_sum += d * d;
          }
        }
      std::size_t covered = 0;
      for (auto m : mask) covered += m;
      row.occluded_pixels += covered * C;
      out_count += (H * W - covered) * C;
      ++row.n;
    }
  }
  detail::require(row.occluded_pixels > 0, "occlusion report: no artifact placements at level ", level);
  row.occluded_mse = in_sum / static_cast<double>(row.occluded_pixels);
  row.clear_mse = out_count ? out_sum / static_cast<double>(out_count) : 0.0;
  return row;
}

inline std::string format_occlusion_report(const std::vector<OcclusionRow>& rows) {
  std::ostringstream os;
  os << "method,noise_level,n,occluded_pixels,occluded_mse,clear_mse\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.method << ',' << r.noise_level << ',' << r.n << ',' << r.occluded_pixels << ',' << r.occluded_mse << ','
       << r.clear_mse << '\n';
  }
  return os.str();
}

namespace eval_detail {

inline std::string number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline double parse_number(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  detail::require(used == s.size() && !s.empty(), "report: bad number '", s, "'");
  return v;
}

inline bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace eval_detail

inline bool same_row(const MetricRow& a, const MetricRow& b) {
  using eval_detail::same_number;
  return a.method == b.method && a.noise_level == b.noise_level && a.n == b.n && same_number(a.mse, b.mse) &&
         same_number(a.psnr, b.psnr) && same_number(a.ssim, b.ssim) && same_number(a.pixel_acc, b.pixel_acc) &&
         same_number(a.mean_iou, b.mean_iou);
}

inline constexpr const char* kReportHeader = "method,noise_level,n,mse,psnr,ssim,pixel_acc,mean_iou";

inline std::string level_label(int level) { return level == kAverageLevel ? "avg" : std::to_string(level); }

inline std::string format_report_csv(const std::vector<MetricRow>& rows) {
  using eval_detail::number;
  std::ostringstream os;
  os << kReportHeader << '\n';
  for (const auto& r : rows) {
    detail::require(!r.method.empty() && r.method.find_first_of(",\n") == std::string::npos, "report: method name '",
                    r.method, "' is empty or contains a separator");
    os << r.method << ',' << level_label(r.noise_level) << ',' << r.n << ',' << number(r.mse) << ',' << number(r.psnr)
       << ',' << number(r.ssim) << ',' << number(r.pixel_acc) << ',' << number(r.mean_iou) << '\n';
  }
  return os.str();
}

inline std::vector<MetricRow> parse_report_csv(std::istream& in) {
  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)) && line == kReportHeader, "report: missing header '",
                  kReportHeader, "'");
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    detail::require(f.size() == 8, "report line ", lineno, ": expected 8 fields, got ", f.size());
    MetricRow r;
    r.method = f[0];
    r.noise_level = f[1] == "avg" ? kAverageLevel : static_cast<int>(eval_detail::parse_number(f[1]));
    r.n = static_cast<std::size_t>(eval_detail::parse_number(f[2]));
    r.mse = eval_detail::parse_number(f[3]);
    r.psnr = eval_detail::parse_number(f[4]);
    r.ssim = eval_detail::parse_number(f[5]);
    r.pixel_acc = eval_detail::parse_number(f[6]);
    r.mean_iou = eval_detail::parse_number(f[7]);
    rows.push_back(r);
  }
  return rows;
}

/// Methods as columns, metrics as rows, using each method's average row
/// (or its only row when there is no average).
inline std::string format_report_markdown(const std::vector<MetricRow>& rows) {
  std::vector<const MetricRow*> cols;
  for (const auto& r : rows) {
    auto it = std::find_if(cols.begin(), cols.end(), [&](const MetricRow* c) { return c->method == r.method; });
    if (it == cols.end()) {
      cols.push_back(&r);
    } else if (r.noise_level == kAverageLevel) {
      *it = &r;
    }
  }
  std::ostringstream os;
  os << "| Metric |";
  for (const auto* c : cols) os << ' ' << c->method << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) os << "---|";
  os << '\n';
  const std::vector<std::pair<std::string, double MetricRow::*>> metrics{
      {"MSE", &MetricRow::mse}, {"PSNR", &MetricRow::psnr}, {"SSIM", &MetricRow::ssim},
      {"Pixel accuracy", &MetricRow::pixel_acc}, {"Mean IoU", &MetricRow::mean_iou}};
  for (const auto& [label, field] : metrics) {
    os << "| " << label << " |";
    for (const auto* c : cols) {
      const double v = c->*field;
      os << ' ';
      if (std::isfinite(v)) {
        os << std::fixed << std::setprecision(4) << v;
      } else {
        os << eval_detail::number(v);
      }
      os << " |";
    }
    os << '\n';
  }
  return os.str();
}

enum class ReportFormat { csv, markdown };

inline void write_report(const std::vector<MetricRow>& rows, const std::filesystem::path& path, ReportFormat format) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  detail::require(static_cast<bool>(out), "cannot write report ", path.string());
  out << (format == ReportFormat::csv ? format_report_csv(rows) : format_report_markdown(rows));
  detail::require(static_cast<bool>(out.flush()), "write to report ", path.string(), " failed");
}

inline std::vector<MetricRow> read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  detail::require(static_cast<bool>(in), "cannot read report ", path.string());
  return parse_report_csv(in);
}

}  // namespace driveguard
