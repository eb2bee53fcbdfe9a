#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "driveguard/ops.hpp"
#include "driveguard/rng.hpp"

namespace driveguard {

enum class ArchitectureKind { ae, scae, stae };

inline std::string_view to_string(ArchitectureKind kind) {
  switch (kind) {
    case ArchitectureKind::ae: return "ae";
    case ArchitectureKind::scae: return "scae";
    case ArchitectureKind::stae: return "stae";
  }
  return "?";
}

/// Display name used in reports.
inline std::string display_name(ArchitectureKind kind) {
  switch (kind) {
    case ArchitectureKind::ae: return "AE";
    case ArchitectureKind::scae: return "SCAE";
    case ArchitectureKind::stae: return "STAE";
  }
  return "?";
}

inline ArchitectureKind parse_architecture(std::string_view s) {
  if (s == "ae" || s == "AE") return ArchitectureKind::ae;
  if (s == "scae" || s == "SCAE") return ArchitectureKind::scae;
  if (s == "stae" || s == "STAE") return ArchitectureKind::stae;
  detail::fail("unknown architecture '", s, "'");
}

struct ArchitectureConfig {
  ArchitectureKind kind = ArchitectureKind::scae;
  std::size_t height = 64;
  std::size_t width = 64;
  std::array<std::size_t, 4> widths{32, 64, 128, 256};
  std::size_t kernel_size = 3;
  std::size_t in_channels = 3;

  void validate() const {
    detail::require(height > 0 && width > 0 && height % 8 == 0 && width % 8 == 0, "input size ", height, "x", width,
                    " must be a positive multiple of 8");
    detail::require(kernel_size % 2 == 1, "kernel size must be odd");
    for (auto w : widths) detail::require(w > 0, "channel widths must be positive");
    detail::require(in_channels > 0, "input channel count must be positive");
  }

  /// Same layer table (kind, widths, kernel, channels); spatial size is free
  /// because every model is fully convolutional.
  [[nodiscard]] bool same_topology(const ArchitectureConfig& o) const {
    return kind == o.kind && widths == o.widths && kernel_size == o.kernel_size && in_channels == o.in_channels;
  }
};

/// One separable-conv layer: concat(pre) -> [upsample x2] -> concat(.., post)
/// -> separable conv -> batchnorm + relu (or bias + sigmoid for the output).
/// "input" and "previous" name the current and previous frames.
struct LayerSpec {
  std::string name;
  std::vector<std::string> pre;
  bool upsample = false;
  std::vector<std::string> post;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  bool output = false;
};

template <typename T>
struct Layer {
  LayerSpec spec;
  BasicTensor<T> depthwise;  // [in, K, K]
  BasicTensor<T> pointwise;  // [out, in]
  BasicTensor<T> bias;       // [out], output layer only
  BatchNormState<T> norm;    // hidden layers only
};

template <typename T>
struct ModelGraph {
  ArchitectureConfig config;
  std::vector<Layer<T>> layers;

  /// Trainable tensors in a stable order.
  std::vector<std::pair<std::string, BasicTensor<T>*>> parameters() {
    std::vector<std::pair<std::string, BasicTensor<T>*>> out;
    for (auto& layer : layers) {
      const std::string& n = layer.spec.name;
      out.emplace_back(n + ".depthwise", &layer.depthwise);
      out.emplace_back(n + ".pointwise", &layer.pointwise);
      if (layer.spec.output) {
        out.emplace_back(n + ".bias", &layer.bias);
      } else {
        out.emplace_back(n + ".bn.gamma", &layer.norm.gamma);
        out.emplace_back(n + ".bn.beta", &layer.norm.beta);
      }
    }
    return out;
  }

  /// Parameters plus batchnorm running statistics: everything that is saved.
  std::vector<std::pair<std::string, BasicTensor<T>*>> tensors() {
    auto out = parameters();
    for (auto& layer : layers) {
      if (layer.spec.output) continue;
      out.emplace_back(layer.spec.name + ".bn.running_mean", &layer.norm.running_mean);
      out.emplace_back(layer.spec.name + ".bn.running_var", &layer.norm.running_var);
    }
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : const_cast<ModelGraph*>(this)->parameters()) n += t->size();
    return n;
  }

  [[nodiscard]] bool uses_previous_frame() const { return config.kind == ArchitectureKind::stae; }

  template <typename U>
  [[nodiscard]] ModelGraph<U> cast() const {
    ModelGraph<U> m;
    m.config = config;
    for (const auto& l : layers) {
      Layer<U> c;
      c.spec = l.spec;
      c.depthwise = l.depthwise.template cast<U>();
      c.pointwise = l.pointwise.template cast<U>();
      if (!l.bias.empty()) c.bias = l.bias.template cast<U>();
      if (!l.spec.output) {
        c.norm.gamma = l.norm.gamma.template cast<U>();
        c.norm.beta = l.norm.beta.template cast<U>();
        c.norm.running_mean = l.norm.running_mean.template cast<U>();
        c.norm.running_var = l.norm.running_var.template cast<U>();
        c.norm.momentum = static_cast<U>(l.norm.momentum);
        c.norm.epsilon = static_cast<U>(l.norm.epsilon);
      }
      m.layers.push_back(std::move(c));
    }
    return m;
  }
};

/// Layer table for an architecture. Encoder E1 runs at full resolution so
/// that skip concatenations meet decoder tensors of equal extent.
inline std::vector<LayerSpec> layer_table(const ArchitectureConfig& cfg) {
  cfg.validate();
  const auto& w = cfg.widths;
  const bool skips = cfg.kind != ArchitectureKind::ae;
  const bool temporal = cfg.kind == ArchitectureKind::stae;
  std::vector<LayerSpec> t;
  t.push_back({"e1", {"input"}, false, {}, cfg.in_channels, w[0], 1, false});
  t.push_back({"e2", {"e1"}, false, {}, w[0], w[1], 2, false});
  if (temporal) {
    t.push_back({"p1", {"previous"}, false, {}, cfg.in_channels, w[0], 1, false});
    t.push_back({"p2", {"p1"}, false, {}, w[0], w[1], 2, false});
    t.push_back({"e3", {"e2", "p2"}, false, {}, 2 * w[1], w[2], 2, false});
  } else {
    t.push_back({"e3", {"e2"}, false, {}, w[1], w[2], 2, false});
  }
  t.push_back({"e4", {"e3"}, false, {}, w[2], w[3], 2, false});
  t.push_back({"d1", {"e4"}, true, {}, w[3], w[2], 1, false});
  if (skips) {
    t.push_back({"d2", {"d1", "e3"}, true, {}, 2 * w[2], w[1], 1, false});
    t.push_back({"d3", {"d2"}, true, {"e1"}, w[1] + w[0], w[0], 1, false});
  } else {
    t.push_back({"d2", {"d1"}, true, {}, w[2], w[1], 1, false});
    t.push_back({"d3", {"d2"}, true, {}, w[1], w[0], 1, false});
  }
  t.push_back({"d4", {"d3"}, false, {}, w[0], cfg.in_channels, 1, true});
  return t;
}

/// Closed-form trainable parameter count of a layer table.
inline std::size_t expected_parameter_count(const ArchitectureConfig& cfg) {
  std::size_t total = 0;
  const std::size_t k2 = cfg.kernel_size * cfg.kernel_size;
  for (const auto& l : layer_table(cfg)) {
    total += k2 * l.in_channels + l.in_channels * l.out_channels + (l.output ? l.out_channels : 2 * l.out_channels);
  }
  return total;
}

/// Graph with zero weights and identity batchnorm; see init_params.
template <typename T = float>
ModelGraph<T> build_model(const ArchitectureConfig& cfg) {
  ModelGraph<T> m;
  m.config = cfg;
  const std::size_t K = cfg.kernel_size;
  for (auto& spec : layer_table(cfg)) {
    Layer<T> layer;
    layer.depthwise = BasicTensor<T>::zeros({spec.in_channels, K, K});
    layer.pointwise = BasicTensor<T>::zeros({spec.out_channels, spec.in_channels});
    if (spec.output) {
      layer.bias = BasicTensor<T>::zeros({spec.out_channels});
    } else {
      layer.norm = BatchNormState<T>::identity(spec.out_channels);
    }
    layer.spec = std::move(spec);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

template <typename T = float>
ModelGraph<T> build_ae(ArchitectureConfig cfg) {
  cfg.kind = ArchitectureKind::ae;
  return build_model<T>(cfg);
}
template <typename T = float>
ModelGraph<T> build_scae(ArchitectureConfig cfg) {
  cfg.kind = ArchitectureKind::scae;
  return build_model<T>(cfg);
}
template <typename T = float>
ModelGraph<T> build_stae(ArchitectureConfig cfg) {
  cfg.kind = ArchitectureKind::stae;
  return build_model<T>(cfg);
}

/// He-normal kernels (std sqrt(2 / fan_in)), unit gamma, zero beta and
/// bias, running statistics (0, 1).
template <typename T>
void init_params(ModelGraph<T>& m, std::uint64_t seed) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& layer = m.layers[i];
    const std::size_t K = layer.depthwise.dim(1);
    Rng dw_rng(derive_seed(seed, {i, 0}));
    Rng pw_rng(derive_seed(seed, {i, 1}));
    layer.depthwise = random_normal<T>(layer.depthwise.shape(), dw_rng, 0.0, std::sqrt(2.0 / static_cast<double>(K * K)));
    layer.pointwise = random_normal<T>(layer.pointwise.shape(), pw_rng, 0.0,
                                       std::sqrt(2.0 / static_cast<double>(layer.spec.in_channels)));
    if (layer.spec.output) {
      layer.bias.fill(T{0});
    } else {
      layer.norm = BatchNormState<T>::identity(layer.spec.out_channels);
    }
  }
}

struct ForwardOptions {
  BatchNormMode mode = BatchNormMode::infer;
  /// Edges "src->dst" whose tensor is replaced by zeros (ablation).
  std::set<std::string> disabled_edges;
};

template <typename T>
struct ForwardResult {
  Var<T> output;
  /// Parameter leaves in ModelGraph::parameters() order.
  std::vector<Var<T>> parameters;
};

/// Records one forward pass. AE and SCAE ignore `previous`; STAE requires it.
template <typename T>
ForwardResult<T> forward(ModelGraph<T>& m, Tape<T>& tape, Var<T> current, std::optional<Var<T>> previous,
                         const ForwardOptions& opts = {}, bool trainable = false) {
  const auto& x = current.value();
  detail::require(x.rank() == 4 && x.channels() == m.config.in_channels, "model input must be N x ",
                  m.config.in_channels, " x H x W, got ", to_string(x.shape()));
  detail::require(x.height() % 8 == 0 && x.width() % 8 == 0, "model input extent ", x.height(), "x", x.width(),
                  " is not divisible by 8");
  std::map<std::string, Var<T>> named;
  named["input"] = current;
  if (m.uses_previous_frame()) {
    detail::require(previous.has_value(), "STAE needs a previous frame");
    detail::require(previous->value().shape() == x.shape(), "previous frame shape ", to_string(previous->value().shape()),
                    " differs from current ", to_string(x.shape()));
    named["previous"] = *previous;
  }

  ForwardResult<T> result;
  auto fetch = [&](const std::string& src, const std::string& dst) {
    const Var<T> v = named.at(src);
    if (opts.disabled_edges.count(src + "->" + dst)) return tape.leaf(BasicTensor<T>::zeros(v.value().shape()));
    return v;
  };
  auto join = [&](const std::vector<std::string>& srcs, const std::string& dst, std::optional<Var<T>> head) {
    std::optional<Var<T>> acc = head;
    for (const auto& s : srcs) {
      const Var<T> v = fetch(s, dst);
      acc = acc ? concat_channels(*acc, v) : v;
    }
    return *acc;
  };

  for (auto& layer : m.layers) {
    const auto& spec = layer.spec;
    Var<T> h = join(spec.pre, spec.name, std::nullopt);
    if (spec.upsample) h = upsample_nearest(h, 2);
    if (!spec.post.empty()) h = join(spec.post, spec.name, h);

    const Var<T> dw = tape.leaf(layer.depthwise, trainable);
    const Var<T> pw = tape.leaf(layer.pointwise, trainable);
    result.parameters.push_back(dw);
    result.parameters.push_back(pw);
    if (spec.output) {
      const Var<T> b = tape.leaf(layer.bias, trainable);
      result.parameters.push_back(b);
      h = sigmoid(conv_separable(h, dw, pw, spec.stride, Padding::same, &b), true);
    } else {
      const Var<T> g = tape.leaf(layer.norm.gamma, trainable);
      const Var<T> be = tape.leaf(layer.norm.beta, trainable);
      result.parameters.push_back(g);
      result.parameters.push_back(be);
      h = relu(batch_norm(conv_separable(h, dw, pw, spec.stride, Padding::same), g, be, layer.norm, opts.mode));
    }
    named[spec.name] = h;
  }
  result.output = named.at(m.layers.back().spec.name);
  return result;
}

/// Inference with running batchnorm statistics (no state is modified).
template <typename T>
BasicTensor<T> infer(const ModelGraph<T>& m, const BasicTensor<T>& current, const BasicTensor<T>* previous = nullptr,
                     const ForwardOptions& opts = {}) {
  detail::require(opts.mode == BatchNormMode::infer, "infer() runs batchnorm in infer mode");
  Tape<T> tape;
  std::optional<Var<T>> prev;
  if (previous != nullptr) prev = tape.leaf(*previous);
  // Infer-mode batchnorm reads but never writes running statistics.
  auto& graph = const_cast<ModelGraph<T>&>(m);
  return forward(graph, tape, tape.leaf(current), prev, opts).output.value();
}

}  // namespace driveguard
