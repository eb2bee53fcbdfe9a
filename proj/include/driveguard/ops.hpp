#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "driveguard/parallel.hpp"
#include "driveguard/tape.hpp"
#include "driveguard/tensor.hpp"

namespace driveguard {

enum class Padding { same, valid };
enum class BatchNormMode { train, infer };

/// Output extent and leading zero-pad of a strided window along one axis.
struct ConvAxis {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

inline ConvAxis conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  detail::require(stride >= 1 && kernel >= 1, "stride and kernel size must be positive");
  if (padding == Padding::same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + kernel;
    const std::size_t pad_total = needed > in ? needed - in : 0;
    return {out, pad_total / 2};
  }
  detail::require(in >= kernel, "valid convolution: input extent ", in, " smaller than kernel ", kernel);
  return {(in - kernel) / stride + 1, 0};
}

template <typename T>
struct BatchNormState {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  T momentum = T(0.99);
  T epsilon = T(1e-3);

  static BatchNormState identity(std::size_t channels) {
    BatchNormState s;
    s.gamma = BasicTensor<T>::full({channels}, T{1});
    s.beta = BasicTensor<T>::zeros({channels});
    s.running_mean = BasicTensor<T>::zeros({channels});
    s.running_var = BasicTensor<T>::full({channels}, T{1});
    return s;
  }
};

namespace kernels {

inline void require_image(const Shape& s, const char* what) {
  detail::require(s.size() == 4, what, ": expected an NCHW tensor, got ", to_string(s));
}

// Range of output columns whose source column ow*stride + offset lies in [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::ptrdiff_t offset, std::size_t stride, std::size_t extent,
                                                       std::size_t out) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  std::ptrdiff_t hi_src = static_cast<std::ptrdiff_t>(extent) - 1 - offset;
  if (hi_src < 0) return {0, 0};
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(hi_src / s, static_cast<std::ptrdiff_t>(out) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi) + 1};
}

/// Per-channel 2D cross-correlation. kernel shape [C, K, K].
template <typename T>
BasicTensor<T> depthwise_forward(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::size_t stride,
                                 Padding padding) {
  require_image(x.shape(), "depthwise_conv");
  detail::require(kernel.rank() == 3 && kernel.dim(0) == x.channels() && kernel.dim(1) == kernel.dim(2),
                  "depthwise kernels ", to_string(kernel.shape()), " incompatible with input channels ", x.channels());
  const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width(), K = kernel.dim(1);
  const ConvAxis ah = conv_axis(H, K, stride, padding), aw = conv_axis(W, K, stride, padding);
  BasicTensor<T> out({N, C, ah.out, aw.out});
  parallel_for(0, N * C, [&](std::size_t nc) {
    const std::size_t c = nc % C;
    const T* in = x.data().data() + nc * H * W;
    T* o = out.data().data() + nc * ah.out * aw.out;
    const T* k = kernel.data().data() + c * K * K;
    for (std::size_t kh = 0; kh < K; ++kh) {
      const auto [oh0, oh1] = valid_range(static_cast<std::ptrdiff_t>(kh) - static_cast<std::ptrdiff_t>(ah.pad_before),
                                          stride, H, ah.out);
      for (std::size_t kw = 0; kw < K; ++kw) {
        const T wgt = k[kh * K + kw];
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(aw.pad_before);
        const auto [ow0, ow1] = valid_range(off, stride, W, aw.out);
        for (std::size_t oh = oh0; oh < oh1; ++oh) {
          const T* row = in + (oh * stride + kh - ah.pad_before) * W;
          T* orow = o + oh * aw.out;
          for (std::size_t ow = ow0; ow < ow1; ++ow) {
            orow[ow] += wgt * row[static_cast<std::ptrdiff_t>(ow * stride) + off];
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
void depthwise_backward(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::size_t stride, Padding padding,
                        const BasicTensor<T>& grad_out, BasicTensor<T>* grad_x, BasicTensor<T>* grad_kernel) {
  const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width(), K = kernel.dim(1);
  const ConvAxis ah = conv_axis(H, K, stride, padding), aw = conv_axis(W, K, stride, padding);
  const std::size_t OH = ah.out, OW = aw.out;
  parallel_for(0, C, [&](std::size_t c) {
    const T* k = kernel.data().data() + c * K * K;
    for (std::size_t kh = 0; kh < K; ++kh) {
      const auto [oh0, oh1] = valid_range(static_cast<std::ptrdiff_t>(kh) - static_cast<std::ptrdiff_t>(ah.pad_before),
                                          stride, H, OH);
      for (std::size_t kw = 0; kw < K; ++kw) {
        const T wgt = k[kh * K + kw];
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(aw.pad_before);
        const auto [ow0, ow1] = valid_range(off, stride, W, OW);
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t nc = n * C + c;
          const T* in = x.data().data() + nc * H * W;
          const T* go = grad_out.data().data() + nc * OH * OW;
          T* gx = grad_x ? grad_x->data().data() + nc * H * W : nullptr;
          for (std::size_t oh = oh0; oh < oh1; ++oh) {
            const std::size_t ih = oh * stride + kh - ah.pad_before;
            const T* row = in + ih * W;
            const T* grow = go + oh * OW;
            if (gx != nullptr) {
              T* gxrow = gx + ih * W;
              for (std::size_t ow = ow0; ow < ow1; ++ow) {
                gxrow[static_cast<std::ptrdiff_t>(ow * stride) + off] += wgt * grow[ow];
              }
            }
            T local = 0;
            for (std::size_t ow = ow0; ow < ow1; ++ow) local += grow[ow] * row[static_cast<std::ptrdiff_t>(ow * stride) + off];
            acc += static_cast<double>(local);
          }
        }
        if (grad_kernel != nullptr) grad_kernel->data()[c * K * K + kh * K + kw] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 1x1 convolution: out[n, o, p] = sum_i weights[o, i] * x[n, i, p] + bias[o].
template <typename T>
BasicTensor<T> pointwise_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>* bias) {
  require_image(x.shape(), "pointwise_conv");
  detail::require(weights.rank() == 2 && weights.dim(1) == x.channels(), "pointwise weights ",
                  to_string(weights.shape()), " incompatible with input channels ", x.channels());
  const std::size_t N = x.batch(), Cin = x.channels(), Cout = weights.dim(0), P = x.height() * x.width();
  if (bias != nullptr) detail::require(bias->rank() == 1 && bias->dim(0) == Cout, "pointwise bias length mismatch");
  BasicTensor<T> out({N, Cout, x.height(), x.width()});
  Eigen::Map<const RowMatrix<T>> w(weights.data().data(), Cout, Cin);
  for (std::size_t n = 0; n < N; ++n) {
    Eigen::Map<const RowMatrix<T>> in(x.data().data() + n * Cin * P, Cin, P);
    Eigen::Map<RowMatrix<T>> o(out.data().data() + n * Cout * P, Cout, P);
    o.noalias() = w * in;
    if (bias != nullptr) {
      for (std::size_t c = 0; c < Cout; ++c) o.row(c).array() += (*bias)[c];
    }
  }
  return out;
}

template <typename T>
void pointwise_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights, const BasicTensor<T>& grad_out,
                        BasicTensor<T>* grad_x, BasicTensor<T>* grad_weights, BasicTensor<T>* grad_bias) {
  const std::size_t N = x.batch(), Cin = x.channels(), Cout = weights.dim(0), P = x.height() * x.width();
  Eigen::Map<const RowMatrix<T>> w(weights.data().data(), Cout, Cin);
  for (std::size_t n = 0; n < N; ++n) {
    Eigen::Map<const RowMatrix<T>> in(x.data().data() + n * Cin * P, Cin, P);
    Eigen::Map<const RowMatrix<T>> go(grad_out.data().data() + n * Cout * P, Cout, P);
    if (grad_x != nullptr) {
      Eigen::Map<RowMatrix<T>> gx(grad_x->data().data() + n * Cin * P, Cin, P);
      gx.noalias() += w.transpose() * go;
    }
    if (grad_weights != nullptr) {
      Eigen::Map<RowMatrix<T>> gw(grad_weights->data().data(), Cout, Cin);
      gw.noalias() += go * in.transpose();
    }
    if (grad_bias != nullptr) {
      // Fixed summation order; Eigen's vectorised sum depends on pointer alignment.
      for (std::size_t c = 0; c < Cout; ++c) {
        const T* row = grad_out.data().data() + (n * Cout + c) * P;
        double acc = 0.0;
        for (std::size_t p = 0; p < P; ++p) acc += static_cast<double>(row[p]);
        (*grad_bias)[c] += static_cast<T>(acc);
      }
    }
  }
}

template <typename T>
BasicTensor<T> upsample_forward(const BasicTensor<T>& x, std::size_t factor) {
  require_image(x.shape(), "upsample_nearest");
  detail::require(factor >= 1, "upsample factor must be >= 1");
  const std::size_t H = x.height(), W = x.width(), OW = W * factor;
  BasicTensor<T> out({x.batch(), x.channels(), H * factor, OW});
  for (std::size_t nc = 0; nc < x.batch() * x.channels(); ++nc) {
    const T* in = x.data().data() + nc * H * W;
    T* o = out.data().data() + nc * H * factor * OW;
    for (std::size_t oh = 0; oh < H * factor; ++oh) {
      const T* row = in + (oh / factor) * W;
      for (std::size_t ow = 0; ow < OW; ++ow) o[oh * OW + ow] = row[ow / factor];
    }
  }
  return out;
}

template <typename T>
void upsample_backward(const BasicTensor<T>& grad_out, std::size_t factor, BasicTensor<T>& grad_x) {
  const std::size_t H = grad_x.height(), W = grad_x.width(), OW = W * factor;
  for (std::size_t nc = 0; nc < grad_x.batch() * grad_x.channels(); ++nc) {
    const T* go = grad_out.data().data() + nc * H * factor * OW;
    T* gx = grad_x.data().data() + nc * H * W;
    for (std::size_t oh = 0; oh < H * factor; ++oh) {
      T* row = gx + (oh / factor) * W;
      for (std::size_t ow = 0; ow < OW; ++ow) row[ow / factor] += go[oh * OW + ow];
    }
  }
}

template <typename T>
BasicTensor<T> concat_forward(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_image(a.shape(), "concat_channels");
  require_image(b.shape(), "concat_channels");
  detail::require(a.batch() == b.batch() && a.height() == b.height() && a.width() == b.width(),
                  "concat_channels: batch/spatial mismatch ", to_string(a.shape()), " vs ", to_string(b.shape()));
  const std::size_t N = a.batch(), Ca = a.channels(), Cb = b.channels(), P = a.height() * a.width();
  BasicTensor<T> out({N, Ca + Cb, a.height(), a.width()});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + n * Ca * P, Ca * P, out.data().data() + n * (Ca + Cb) * P);
    std::copy_n(b.data().data() + n * Cb * P, Cb * P, out.data().data() + (n * (Ca + Cb) + Ca) * P);
  }
  return out;
}

/// Channels [begin, end) of an NCHW tensor.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_image(x.shape(), "slice_channels");
  detail::require(begin < end && end <= x.channels(), "slice_channels: invalid range [", begin, ", ", end, ")");
  const std::size_t N = x.batch(), C = x.channels(), P = x.height() * x.width(), S = end - begin;
  BasicTensor<T> out({N, S, x.height(), x.width()});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x.data().data() + (n * C + begin) * P, S * P, out.data().data() + n * S * P);
  }
  return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Differentiable ops

template <typename T>
Var<T> depthwise_conv(Var<T> x, Var<T> kernel, std::size_t stride, Padding padding) {
  auto out = kernels::depthwise_forward(x.value(), kernel.value(), stride, padding);
  const std::size_t xi = x.id(), ki = kernel.id();
  return x.tape().record(std::move(out), {x, kernel}, [xi, ki, stride, padding](Tape<T>& t, std::size_t self) {
    BasicTensor<T>* gx = t.requires_grad(xi) ? &t.grad_accumulator(xi) : nullptr;
    BasicTensor<T>* gk = t.requires_grad(ki) ? &t.grad_accumulator(ki) : nullptr;
    kernels::depthwise_backward(t.value(xi), t.value(ki), stride, padding, t.grad(self), gx, gk);
  });
}

template <typename T>
Var<T> pointwise_conv(Var<T> x, Var<T> weights, const Var<T>* bias = nullptr) {
  const BasicTensor<T>* b = bias ? &bias->value() : nullptr;
  auto out = kernels::pointwise_forward(x.value(), weights.value(), b);
  const std::size_t xi = x.id(), wi = weights.id();
  const bool has_bias = bias != nullptr;
  const std::size_t bi = has_bias ? bias->id() : 0;
  auto backward = [xi, wi, bi, has_bias](Tape<T>& t, std::size_t self) {
    BasicTensor<T>* gx = t.requires_grad(xi) ? &t.grad_accumulator(xi) : nullptr;
    BasicTensor<T>* gw = t.requires_grad(wi) ? &t.grad_accumulator(wi) : nullptr;
    BasicTensor<T>* gb = has_bias && t.requires_grad(bi) ? &t.grad_accumulator(bi) : nullptr;
    kernels::pointwise_backward(t.value(xi), t.value(wi), t.grad(self), gx, gw, gb);
  };
  if (has_bias) return x.tape().record(std::move(out), {x, weights, *bias}, backward);
  return x.tape().record(std::move(out), {x, weights}, backward);
}

/// Depthwise spatial convolution followed by a 1x1 channel-mixing convolution.
/// depthwise_kernels: [C_in, K, K]; pointwise_kernels: [C_out, C_in].
template <typename T>
Var<T> conv_separable(Var<T> x, Var<T> depthwise_kernels, Var<T> pointwise_kernels, std::size_t stride,
                      Padding padding, const Var<T>* bias = nullptr) {
  detail::require(depthwise_kernels.value().rank() == 3 && depthwise_kernels.value().dim(0) == x.value().dim(1),
                  "conv_separable: depthwise kernel count ", depthwise_kernels.value().dim(0),
                  " does not match input channels ", x.value().dim(1));
  detail::require(pointwise_kernels.value().rank() == 2 &&
                      pointwise_kernels.value().dim(1) == depthwise_kernels.value().dim(0),
                  "conv_separable: pointwise kernels ", to_string(pointwise_kernels.value().shape()),
                  " do not match depthwise output channels");
  return pointwise_conv(depthwise_conv(x, depthwise_kernels, stride, padding), pointwise_kernels, bias);
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
  auto out = kernels::upsample_forward(x.value(), factor);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi, factor](Tape<T>& t, std::size_t self) {
    kernels::upsample_backward(t.grad(self), factor, t.grad_accumulator(xi));
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi](Tape<T>& t, std::size_t self) {
    const auto& in = t.value(xi);
    const auto& go = t.grad(self);
    auto& gx = t.grad_accumulator(xi);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > T{0}) gx[i] += go[i];
    }
  });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

/// With `open_interval`, saturated results are pulled off 0 and 1 so the
/// output stays strictly inside (0, 1) after rounding.
template <typename T>
Var<T> sigmoid(Var<T> x, bool open_interval = false) {
  BasicTensor<T> out = x.value();
  for (T& v : out.data()) v = sigmoid_scalar(v);
  if (open_interval) {
    const T lo = std::numeric_limits<T>::min(), hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
    for (T& v : out.data()) v = std::clamp(v, lo, hi);
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x}, [xi](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& go = t.grad(self);
    auto& gx = t.grad_accumulator(xi);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += go[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  auto out = kernels::concat_forward(a.value(), b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
    const auto& go = t.grad(self);
    const std::size_t ca = t.value(ai).channels(), cb = t.value(bi).channels();
    if (t.requires_grad(ai)) {
      auto part = kernels::slice_channels(go, 0, ca);
      auto& ga = t.grad_accumulator(ai);
      for (std::size_t i = 0; i < part.size(); ++i) ga[i] += part[i];
    }
    if (t.requires_grad(bi)) {
      auto part = kernels::slice_channels(go, ca, ca + cb);
      auto& gb = t.grad_accumulator(bi);
      for (std::size_t i = 0; i < part.size(); ++i) gb[i] += part[i];
    }
  });
}

/// Batch normalisation over (N, H, W) per channel. In train mode the batch
/// statistics normalise the input and update state's running statistics by
/// exponential moving average; infer mode applies the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, BatchNormMode mode) {
  const BasicTensor<T>& in = x.value();
  detail::require(!in.empty(), "batch_norm: zero-size batch");
  kernels::require_image(in.shape(), "batch_norm");
  const std::size_t N = in.batch(), C = in.channels(), P = in.height() * in.width();
  detail::require(gamma.value().size() == C && beta.value().size() == C && state.running_mean.size() == C &&
                      state.running_var.size() == C,
                  "batch_norm: state has wrong channel count for input with ", C, " channels");
  const double count = static_cast<double>(N * P);
  auto xhat = std::make_shared<BasicTensor<T>>(in.shape());
  auto inv_std = std::make_shared<std::vector<T>>(C);
  BasicTensor<T> out(in.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == BatchNormMode::train) {
      for (std::size_t n = 0; n < N; ++n) {
        for (T v : in.plane(n, c)) mean += v;
      }
      mean /= count;
      for (std::size_t n = 0; n < N; ++n) {
        for (T v : in.plane(n, c)) var += (v - mean) * (v - mean);
      }
      var /= count;
      state.running_mean[c] = static_cast<T>(state.momentum * state.running_mean[c] + (1 - state.momentum) * mean);
      state.running_var[c] = static_cast<T>(state.momentum * state.running_var[c] + (1 - state.momentum) * var);
    } else {
      mean = state.running_mean[c];
      var = std::max<double>(0.0, state.running_var[c]);
    }
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(state.epsilon));
    (*inv_std)[c] = static_cast<T>(istd);
    const T g = gamma.value()[c], b = beta.value()[c];
    for (std::size_t n = 0; n < N; ++n) {
      auto src = in.plane(n, c);
      auto xh = xhat->plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        xh[p] = static_cast<T>((src[p] - mean) * istd);
        dst[p] = g * xh[p] + b;
      }
    }
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [xi, gi, bi, xhat, inv_std, mode, count](Tape<T>& t, std::size_t self) {
    const auto& go = t.grad(self);
    const std::size_t N = go.batch(), C = go.channels(), P = go.height() * go.width();
    const auto& g = t.value(gi);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        auto dy = go.plane(n, c);
        auto xh = xhat->plane(n, c);
        for (std::size_t p = 0; p < P; ++p) {
          sum_dy += dy[p];
          sum_dy_xhat += static_cast<double>(dy[p]) * xh[p];
        }
      }
      if (t.requires_grad(gi)) t.grad_accumulator(gi)[c] += static_cast<T>(sum_dy_xhat);
      if (t.requires_grad(bi)) t.grad_accumulator(bi)[c] += static_cast<T>(sum_dy);
      if (!t.requires_grad(xi)) continue;
      auto& gx = t.grad_accumulator(xi);
      const double scale = static_cast<double>(g[c]) * (*inv_std)[c];
      for (std::size_t n = 0; n < N; ++n) {
        auto dy = go.plane(n, c);
        auto xh = xhat->plane(n, c);
        auto dx = gx.plane(n, c);
        if (mode == BatchNormMode::train) {
          const double mean_dy = sum_dy / count, mean_dy_xhat = sum_dy_xhat / count;
          for (std::size_t p = 0; p < P; ++p) dx[p] += static_cast<T>(scale * (dy[p] - mean_dy - xh[p] * mean_dy_xhat));
        } else {
          for (std::size_t p = 0; p < P; ++p) dx[p] += static_cast<T>(scale * dy[p]);
        }
      }
    }
  });
}

/// Batch norm with gamma/beta taken from state as constants.
template <typename T>
Var<T> batch_norm(Var<T> x, BatchNormState<T>& state, BatchNormMode mode) {
  Tape<T>& tape = x.tape();
  return batch_norm(x, tape.leaf(state.gamma), tape.leaf(state.beta), state, mode);
}

/// Mean of (pred - target)^2 over all elements, as a [1] tensor.
template <typename T>
Var<T> mse_loss(Var<T> pred, const BasicTensor<T>& target) {
  detail::require(pred.value().shape() == target.shape(), "mse: shape mismatch ", to_string(pred.value().shape()),
                  " vs ", to_string(target.shape()));
  double acc = 0.0;
  const auto& p = pred.value();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - target[i];
    acc += d * d;
  }
  const double count = static_cast<double>(p.size());
  const std::size_t pi = pred.id();
  return pred.tape().record(BasicTensor<T>({1}, {static_cast<T>(acc / count)}), {pred},
                            [pi, target, count](Tape<T>& t, std::size_t self) {
    const double scale = 2.0 * static_cast<double>(t.grad(self)[0]) / count;
    const auto& p = t.value(pi);
    auto& g = t.grad_accumulator(pi);
    for (std::size_t i = 0; i < p.size(); ++i) g[i] += static_cast<T>(scale * (static_cast<double>(p[i]) - target[i]));
  });
}

/// offset + sum_i weight_i * term_i over scalar terms.
template <typename T>
Var<T> scalar_affine(std::vector<std::pair<T, Var<T>>> terms, T offset) {
  detail::require(!terms.empty(), "scalar_affine needs at least one term");
  double acc = offset;
  for (const auto& [w, v] : terms) {
    detail::require(v.value().size() == 1, "scalar_affine terms must be scalars");
    acc += static_cast<double>(w) * v.value()[0];
  }
  Tape<T>& tape = terms.front().second.tape();
  std::vector<std::pair<T, std::size_t>> ids;
  for (const auto& [w, v] : terms) ids.emplace_back(w, v.id());
  auto backward = [ids](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (const auto& [w, id] : ids) {
      if (t.requires_grad(id)) t.grad_accumulator(id)[0] += w * g;
    }
  };
  std::vector<Var<T>> inputs;
  for (const auto& term : terms) inputs.push_back(term.second);
  return tape.record(BasicTensor<T>({1}, {static_cast<T>(acc)}), inputs, backward);
}

}  // namespace driveguard
