#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "driveguard/tape.hpp"
#include "driveguard/tensor.hpp"

namespace driveguard {

enum class SsimWindow { uniform, gaussian };

struct SsimConfig {
  std::size_t radius = 5;  // window side 2*radius + 1
  SsimWindow window = SsimWindow::gaussian;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  [[nodiscard]] std::size_t side() const { return 2 * radius + 1; }
  [[nodiscard]] double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  [[nodiscard]] double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }

  /// Normalised 1-D window; the 2-D window is its outer product.
  [[nodiscard]] std::vector<double> weights_1d() const {
    std::vector<double> w(side());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = static_cast<double>(i) - static_cast<double>(radius);
      w[i] = window == SsimWindow::uniform ? 1.0 : std::exp(-d * d / (2.0 * sigma * sigma));
      total += w[i];
    }
    for (double& v : w) v /= total;
    return w;
  }
};

namespace ssim_detail {

// Windowed weighted mean over valid centers: (H - 2r) x (W - 2r) output.
inline std::vector<double> filter_valid(const std::vector<double>& in, std::size_t H, std::size_t W,
                                        const std::vector<double>& w) {
  const std::size_t K = w.size(), OH = H - K + 1, OW = W - K + 1;
  std::vector<double> tmp(H * OW, 0.0), out(OH * OW, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = w[k];
      const double* src = in.data() + h * W + k;
      double* dst = tmp.data() + h * OW;
      for (std::size_t j = 0; j < OW; ++j) dst[j] += wk * src[j];
    }
  }
  for (std::size_t i = 0; i < OH; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = w[k];
      const double* src = tmp.data() + (i + k) * OW;
      double* dst = out.data() + i * OW;
      for (std::size_t j = 0; j < OW; ++j) dst[j] += wk * src[j];
    }
  }
  return out;
}

// Adjoint of filter_valid: scatters a valid-center map back to H x W.
inline std::vector<double> filter_adjoint(const std::vector<double>& g, std::size_t H, std::size_t W,
                                          const std::vector<double>& w) {
  const std::size_t K = w.size(), OH = H - K + 1, OW = W - K + 1;
  std::vector<double> tmp(H * OW, 0.0), out(H * W, 0.0);
  for (std::size_t i = 0; i < OH; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = w[k];
      const double* src = g.data() + i * OW;
      double* dst = tmp.data() + (i + k) * OW;
      for (std::size_t j = 0; j < OW; ++j) dst[j] += wk * src[j];
    }
  }
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = w[k];
      const double* src = tmp.data() + h * OW;
      double* dst = out.data() + h * W + k;
      for (std::size_t j = 0; j < OW; ++j) dst[j] += wk * src[j];
    }
  }
  return out;
}

/// Sum of per-window SSIM over one plane. When grad_x is non-null, adds
/// scale * d(sum)/dx into it.
template <typename T>
double plane_ssim_sum(std::span<const T> x, std::span<const T> y, std::size_t H, std::size_t W,
                      const SsimConfig& cfg, const std::vector<double>& w, std::span<T> grad_x = {},
                      double scale = 0.0) {
  const std::size_t n = H * W;
  std::vector<double> xd(n), yd(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xd[i] = x[i];
    yd[i] = y[i];
    xx[i] = xd[i] * xd[i];
    yy[i] = yd[i] * yd[i];
    xy[i] = xd[i] * yd[i];
  }
  const auto mx = filter_valid(xd, H, W, w), my = filter_valid(yd, H, W, w);
  const auto exx = filter_valid(xx, H, W, w), eyy = filter_valid(yy, H, W, w), exy = filter_valid(xy, H, W, w);
  const double c1 = cfg.c1(), c2 = cfg.c2();
  const bool want_grad = !grad_x.empty();
  std::vector<double> g_mean, g_sq, g_cross;
  if (want_grad) {
    g_mean.resize(mx.size());
    g_sq.resize(mx.size());
    g_cross.resize(mx.size());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double a = mx[i], b = my[i];
    const double a1 = 2.0 * a * b + c1;
    const double a2 = 2.0 * (exy[i] - a * b) + c2;
    const double b1 = a * a + b * b + c1;
    const double b2 = (exx[i] - a * a) + (eyy[i] - b * b) + c2;
    const double s = (a1 * a2) / (b1 * b2);
    total += s;
    if (want_grad) {
      const double denom = b1 * b2;
      g_sq[i] = scale * (-s / b2);
      g_cross[i] = scale * (2.0 * a1 / denom);
      g_mean[i] = scale * ((2.0 * b * a2 - 2.0 * b * a1) / denom - s * (2.0 * a / b1 - 2.0 * a / b2));
    }
  }
  if (want_grad) {
    const auto t_mean = filter_adjoint(g_mean, H, W, w);
    const auto t_sq = filter_adjoint(g_sq, H, W, w);
    const auto t_cross = filter_adjoint(g_cross, H, W, w);
    for (std::size_t i = 0; i < n; ++i) {
      grad_x[i] += static_cast<T>(t_mean[i] + 2.0 * xd[i] * t_sq[i] + yd[i] * t_cross[i]);
    }
  }
  return total;
}

template <typename T>
void require_ssim_inputs(const BasicTensor<T>& a, const BasicTensor<T>& b, const SsimConfig& cfg) {
  detail::require(a.shape() == b.shape(), "ssim: shape mismatch ", to_string(a.shape()), " vs ", to_string(b.shape()));
  detail::require(a.rank() == 4, "ssim: expected NCHW tensors");
  detail::require(a.height() >= cfg.side() && a.width() >= cfg.side(), "ssim: image ", a.height(), "x", a.width(),
                  " smaller than the ", cfg.side(), "x", cfg.side(), " window");
}

}  // namespace ssim_detail

/// Mean windowed SSIM over valid window centers, channels and batch.
template <typename T>
double ssim_mean(const BasicTensor<T>& a, const BasicTensor<T>& b, const SsimConfig& cfg = {}) {
  ssim_detail::require_ssim_inputs(a, b, cfg);
  const auto w = cfg.weights_1d();
  const std::size_t H = a.height(), W = a.width();
  double total = 0.0;
  for (std::size_t n = 0; n < a.batch(); ++n) {
    for (std::size_t c = 0; c < a.channels(); ++c) {
      total += ssim_detail::plane_ssim_sum<T>(a.plane(n, c), b.plane(n, c), H, W, cfg, w);
    }
  }
  const double centers = static_cast<double>((H - 2 * cfg.radius) * (W - 2 * cfg.radius));
  return total / (centers * static_cast<double>(a.batch() * a.channels()));
}

/// Differentiable mean SSIM of pred against a fixed target, as a [1] tensor.
template <typename T>
Var<T> ssim_mean(Var<T> pred, const BasicTensor<T>& target, const SsimConfig& cfg = {}) {
  const double value = ssim_mean(pred.value(), target, cfg);
  const std::size_t pi = pred.id();
  return pred.tape().record(BasicTensor<T>({1}, {static_cast<T>(value)}), {pred},
                            [pi, target, cfg](Tape<T>& t, std::size_t self) {
    const auto& p = t.value(pi);
    auto& g = t.grad_accumulator(pi);
    const auto w = cfg.weights_1d();
    const std::size_t H = p.height(), W = p.width();
    const double centers = static_cast<double>((H - 2 * cfg.radius) * (W - 2 * cfg.radius));
    const double scale = static_cast<double>(t.grad(self)[0]) / (centers * static_cast<double>(p.batch() * p.channels()));
    for (std::size_t n = 0; n < p.batch(); ++n) {
      for (std::size_t c = 0; c < p.channels(); ++c) {
        ssim_detail::plane_ssim_sum<T>(p.plane(n, c), target.plane(n, c), H, W, cfg, w, g.plane(n, c), scale);
      }
    }
  });
}

}  // namespace driveguard
