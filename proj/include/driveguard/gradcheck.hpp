#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "driveguard/losses.hpp"
#include "driveguard/ops.hpp"
#include "driveguard/rng.hpp"
#include "driveguard/ssim.hpp"

namespace driveguard {

/// A scalar function of one tensor together with its analytic gradient.
template <typename T>
struct ScalarFunction {
  std::function<double(const BasicTensor<T>&)> value;
  std::function<BasicTensor<T>(const BasicTensor<T>&)> gradient;
};

struct GradCheckOptions {
  double epsilon = 1e-3;
  std::size_t samples = 200;  // coordinates checked; all of them if the tensor is smaller
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the analytic gradient against central differences on sampled
/// coordinates; error is |a - n| / max(|a|, |n|, 1e-8).
template <typename T>
GradCheckResult finite_difference_check(const ScalarFunction<T>& f, const BasicTensor<T>& params,
                                        const GradCheckOptions& opts = {}) {
  detail::require(opts.epsilon > 0.0, "finite difference epsilon must be positive");
  const BasicTensor<T> analytic = f.gradient(params);
  detail::require(analytic.shape() == params.shape(), "analytic gradient shape mismatch");

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > opts.samples) {
    Rng rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.samples);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  BasicTensor<T> probe = params;
  for (std::size_t idx : coords) {
    const T original = probe[idx];
    probe[idx] = static_cast<T>(original + opts.epsilon);
    const double up = f.value(probe);
    probe[idx] = static_cast<T>(original - opts.epsilon);
    const double down = f.value(probe);
    probe[idx] = original;
    detail::require(std::isfinite(up) && std::isfinite(down), "non-finite forward value during finite differences");
    const double numeric = (up - down) / (2.0 * opts.epsilon);
    const double a = analytic[idx];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (result.coordinates == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = idx;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
    ++result.coordinates;
  }
  return result;
}

/// Wraps a tape-recorded computation. Non-scalar outputs are reduced with
/// a fixed projection so that every output element contributes.
template <typename T>
ScalarFunction<T> tape_function(std::function<Var<T>(Tape<T>&, Var<T>)> build,
                                std::optional<BasicTensor<T>> projection = std::nullopt) {
  ScalarFunction<T> f;
  f.value = [build, projection](const BasicTensor<T>& x) {
    Tape<T> tape;
    const Var<T> out = build(tape, tape.leaf(x, false));
    const auto& v = out.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(v[i]) * (projection ? (*projection)[i] : T{1});
    return acc;
  };
  f.gradient = [build, projection](const BasicTensor<T>& x) {
    Tape<T> tape;
    const Var<T> in = tape.leaf(x, true);
    const Var<T> out = build(tape, in);
    BasicTensor<T> seed = projection ? *projection : BasicTensor<T>::full(out.value().shape(), T{1});
    tape.backward(out, &seed);
    return tape.grad_or_zeros(in);
  };
  return f;
}

/// One named gradient check of the standard op suite.
struct OpCheck {
  std::string name;
  bool is_loss = false;
  std::function<GradCheckResult(std::uint64_t seed, double epsilon)> run;
};

namespace gradcheck_detail {

using D = double;

inline BasicTensor<D> away_from_zero(BasicTensor<D> t, double margin) {
  for (D& v : t.data()) v = (v < 0 ? -1.0 : 1.0) * (margin + std::abs(v));
  return t;
}

// Checks d/d(argument `which`) of build(args...) with the other arguments held fixed.
inline OpCheck make_check(std::string name, bool is_loss, std::function<std::vector<BasicTensor<D>>(Rng&)> make_args,
                          std::size_t which,
                          std::function<Var<D>(Tape<D>&, const std::vector<Var<D>>&)> build) {
  OpCheck check;
  check.name = std::move(name);
  check.is_loss = is_loss;
  check.run = [make_args, which, build](std::uint64_t seed, double epsilon) {
    Rng rng(seed);
    const std::vector<BasicTensor<D>> args = make_args(rng);
    auto bound = [args, which, build](Tape<D>& tape, Var<D> x) {
      std::vector<Var<D>> vars;
      for (std::size_t i = 0; i < args.size(); ++i) vars.push_back(i == which ? x : tape.leaf(args[i]));
      return build(tape, vars);
    };
    // Probe once to size the projection.
    Tape<D> probe;
    const Shape out_shape = bound(probe, probe.leaf(args[which])).value().shape();
    std::optional<BasicTensor<D>> projection;
    if (element_count(out_shape) > 1) projection = random_uniform<D>(out_shape, rng, -1.0, 1.0);
    GradCheckOptions opts;
    opts.epsilon = epsilon;
    opts.samples = 200;
    opts.seed = seed + 1;
    return finite_difference_check(tape_function<D>(bound, projection), args[which], opts);
  };
  return check;
}

}  // namespace gradcheck_detail

/// Every differentiable layer op and both loss terms, on inputs no larger
/// than 2x8x16x16, evaluated in double precision.
inline std::vector<OpCheck> standard_op_checks() {
  using namespace gradcheck_detail;
  std::vector<OpCheck> checks;
  const Shape img{2, 8, 16, 16};

  auto dw_args = [img](Rng& rng) {
    return std::vector<BasicTensor<D>>{random_uniform<D>(img, rng, -1, 1), random_normal<D>({8, 3, 3}, rng, 0, 0.5)};
  };
  for (std::size_t stride : {1u, 2u}) {
    const std::string suffix = stride == 1 ? "" : "_stride2";
    auto build = [stride](Tape<D>&, const std::vector<Var<D>>& v) { return depthwise_conv(v[0], v[1], stride, Padding::same); };
    checks.push_back(make_check("depthwise_conv" + suffix + ".input", false, dw_args, 0, build));
    checks.push_back(make_check("depthwise_conv" + suffix + ".kernel", false, dw_args, 1, build));
  }

  auto pw_args = [img](Rng& rng) {
    return std::vector<BasicTensor<D>>{random_uniform<D>(img, rng, -1, 1), random_normal<D>({6, 8}, rng, 0, 0.5),
                                       random_normal<D>({6}, rng, 0, 0.5)};
  };
  auto pw_build = [](Tape<D>&, const std::vector<Var<D>>& v) { return pointwise_conv(v[0], v[1], &v[2]); };
  checks.push_back(make_check("pointwise_conv.input", false, pw_args, 0, pw_build));
  checks.push_back(make_check("pointwise_conv.weights", false, pw_args, 1, pw_build));
  checks.push_back(make_check("pointwise_conv.bias", false, pw_args, 2, pw_build));

  auto sep_args = [img](Rng& rng) {
    return std::vector<BasicTensor<D>>{random_uniform<D>(img, rng, -1, 1), random_normal<D>({8, 3, 3}, rng, 0, 0.5),
                                       random_normal<D>({5, 8}, rng, 0, 0.5)};
  };
  for (std::size_t stride : {1u, 2u}) {
    const std::string base = stride == 1 ? "conv_separable" : "conv_separable_stride2";
    auto build = [stride](Tape<D>&, const std::vector<Var<D>>& v) {
      return conv_separable(v[0], v[1], v[2], stride, Padding::same);
    };
    checks.push_back(make_check(base + ".input", false, sep_args, 0, build));
    checks.push_back(make_check(base + ".depthwise", false, sep_args, 1, build));
    checks.push_back(make_check(base + ".pointwise", false, sep_args, 2, build));
  }

  checks.push_back(make_check(
      "upsample_nearest", false,
      [](Rng& rng) { return std::vector<BasicTensor<D>>{random_uniform<D>({2, 8, 8, 8}, rng, -1, 1)}; }, 0,
      [](Tape<D>&, const std::vector<Var<D>>& v) { return upsample_nearest(v[0], 2); }));

  auto bn_args = [img](Rng& rng) {
    return std::vector<BasicTensor<D>>{random_uniform<D>(img, rng, -1, 1), random_uniform<D>({8}, rng, 0.5, 1.5),
                                       random_uniform<D>({8}, rng, -0.5, 0.5)};
  };
  for (BatchNormMode mode : {BatchNormMode::train, BatchNormMode::infer}) {
    const std::string base = mode == BatchNormMode::train ? "batch_norm_train" : "batch_norm_infer";
    auto build = [mode](Tape<D>&, const std::vector<Var<D>>& v) {
      auto state = BatchNormState<D>::identity(8);
      for (std::size_t c = 0; c < 8; ++c) {
        state.running_mean[c] = 0.1 * static_cast<double>(c) - 0.3;
        state.running_var[c] = 0.5 + 0.1 * static_cast<double>(c);
      }
      return batch_norm(v[0], v[1], v[2], state, mode);
    };
    checks.push_back(make_check(base + ".input", false, bn_args, 0, build));
    checks.push_back(make_check(base + ".gamma", false, bn_args, 1, build));
    checks.push_back(make_check(base + ".beta", false, bn_args, 2, build));
  }

  checks.push_back(make_check(
      "relu", false,
      [img](Rng& rng) { return std::vector<BasicTensor<D>>{away_from_zero(random_uniform<D>(img, rng, -1, 1), 0.05)}; }, 0,
      [](Tape<D>&, const std::vector<Var<D>>& v) { return relu(v[0]); }));
  checks.push_back(make_check(
      "sigmoid", false, [img](Rng& rng) { return std::vector<BasicTensor<D>>{random_uniform<D>(img, rng, -4, 4)}; }, 0,
      [](Tape<D>&, const std::vector<Var<D>>& v) { return sigmoid(v[0]); }));

  auto cat_args = [](Rng& rng) {
    return std::vector<BasicTensor<D>>{random_uniform<D>({2, 3, 16, 16}, rng, -1, 1),
                                       random_uniform<D>({2, 5, 16, 16}, rng, -1, 1)};
  };
  auto cat_build = [](Tape<D>&, const std::vector<Var<D>>& v) { return concat_channels(v[0], v[1]); };
  checks.push_back(make_check("concat_channels.a", false, cat_args, 0, cat_build));
  checks.push_back(make_check("concat_channels.b", false, cat_args, 1, cat_build));

  auto pair_args = [](Rng& rng) {
    return std::vector<BasicTensor<D>>{random_uniform<D>({2, 3, 16, 16}, rng), random_uniform<D>({2, 3, 16, 16}, rng)};
  };
  checks.push_back(make_check("mse_loss", true, pair_args, 0, [](Tape<D>&, const std::vector<Var<D>>& v) {
    return mse_loss(v[0], v[1].value());
  }));
  checks.push_back(make_check("ssim_loss", true, pair_args, 0, [](Tape<D>&, const std::vector<Var<D>>& v) {
    return scalar_affine<D>({{-1.0, ssim_mean(v[0], v[1].value())}}, 1.0);
  }));
  checks.push_back(make_check("combined_loss", true, pair_args, 0, [](Tape<D>&, const std::vector<Var<D>>& v) {
    return combined_loss(v[0], v[1].value(), LossWeights{});
  }));
  return checks;
}

}  // namespace driveguard
