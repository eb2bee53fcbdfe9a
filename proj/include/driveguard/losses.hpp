#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "driveguard/ops.hpp"
#include "driveguard/ssim.hpp"

namespace driveguard {

struct LossWeights {
  double mse = 1.0;
  double ssim = 0.1;

  void validate() const {
    detail::require(mse >= 0.0 && ssim >= 0.0, "loss weights must be non-negative");
    detail::require(mse > 0.0 || ssim > 0.0, "loss weights must not both be zero");
  }
};

enum class LossMode { mse, ssim, combined };

inline std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::mse: return "mse";
    case LossMode::ssim: return "ssim";
    case LossMode::combined: return "combined";
  }
  return "?";
}

inline LossMode parse_loss_mode(std::string_view s) {
  if (s == "mse") return LossMode::mse;
  if (s == "ssim") return LossMode::ssim;
  if (s == "combined") return LossMode::combined;
  detail::fail("unknown loss mode '", s, "'");
}

/// Weights actually applied for a loss mode: single-term modes zero the other term.
inline LossWeights effective_weights(LossMode mode, LossWeights w) {
  if (mode == LossMode::mse) w.ssim = 0.0;
  if (mode == LossMode::ssim) w.mse = 0.0;
  w.validate();
  return w;
}

/// lambda_mse * MSE + lambda_ssim * (1 - SSIM). Terms with zero weight are
/// not evaluated at all.
template <typename T>
Var<T> combined_loss(Var<T> pred, const BasicTensor<T>& target, const LossWeights& weights,
                     const SsimConfig& cfg = {}) {
  weights.validate();
  std::vector<std::pair<T, Var<T>>> terms;
  T offset{0};
  if (weights.mse > 0.0) terms.emplace_back(static_cast<T>(weights.mse), mse_loss(pred, target));
  if (weights.ssim > 0.0) {
    terms.emplace_back(static_cast<T>(-weights.ssim), ssim_mean(pred, target, cfg));
    offset = static_cast<T>(weights.ssim);
  }
  return scalar_affine(std::move(terms), offset);
}

}  // namespace driveguard
