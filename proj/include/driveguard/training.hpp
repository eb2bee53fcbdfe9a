#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driveguard/architectures.hpp"
#include "driveguard/data.hpp"
#include "driveguard/losses.hpp"
#include "driveguard/weights_io.hpp"

namespace driveguard {

/// Raised when a training step produces a non-finite loss or gradient.
class TrainingDiverged : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::size_t step = 0;
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;
};

/// Bias-corrected Adam, in place. Moments are created on the first call.
template <typename T>
void adam_step(const std::vector<BasicTensor<T>*>& params, const std::vector<BasicTensor<T>>& grads,
               AdamState<T>& state, double lr) {
  detail::require(lr > 0.0, "adam: learning rate must be positive, got ", lr);
  detail::require(params.size() == grads.size(), "adam: ", params.size(), " parameters but ", grads.size(), " gradients");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(BasicTensor<T>::zeros(p->shape()));
      state.v.push_back(BasicTensor<T>::zeros(p->shape()));
    }
  }
  detail::require(state.m.size() == params.size(), "adam: state tracks ", state.m.size(), " tensors, got ", params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::require(params[i]->shape() == grads[i].shape() && state.m[i].shape() == grads[i].shape(),
                    "adam: shape mismatch at tensor ", i, ": parameter ", to_string(params[i]->shape()), ", gradient ",
                    to_string(grads[i].shape()), ", moment ", to_string(state.m[i].shape()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const auto& g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + state.epsilon));
    }
  }
}

/// Scales gradients so their joint L2 norm is at most max_norm. Returns the
/// norm before clipping.
template <typename T>
double clip_global_norm(std::vector<BasicTensor<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (T& v : g.data()) v = static_cast<T>(v * s);
  }
  return norm;
}

template <typename T>
struct Batch {
  BasicTensor<T> input;
  BasicTensor<T> target;
  std::optional<BasicTensor<T>> previous;
};

inline Batch<float> make_batch(const std::vector<SamplePair>& pairs, const std::vector<std::size_t>& indices,
                               bool with_previous) {
  detail::require(!indices.empty(), "make_batch: no samples");
  std::vector<Tensor> in, tg, pv;
  for (std::size_t i : indices) {
    const auto& p = pairs.at(i);
    in.push_back(p.input);
    tg.push_back(p.target);
    if (with_previous) {
      detail::require(p.previous.has_value(), "make_batch: pair ", i, " has no previous frame");
      pv.push_back(*p.previous);
    }
  }
  Batch<float> b{stack_batch(in), stack_batch(tg), std::nullopt};
  if (with_previous) b.previous = stack_batch(pv);
  return b;
}

struct StepStats {
  double loss = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
  double grad_norm = 0.0;
};

/// Train-mode forward and backward. Fills grads in parameters() order and
/// advances batchnorm running statistics.
template <typename T>
StepStats compute_gradients(ModelGraph<T>& m, const Batch<T>& batch, LossMode mode, const LossWeights& weights,
                            std::vector<BasicTensor<T>>& grads) {
  Tape<T> tape;
  std::optional<Var<T>> prev;
  if (m.uses_previous_frame()) {
    detail::require(batch.previous.has_value(), "STAE training needs previous frames");
    prev = tape.leaf(*batch.previous);
  }
  ForwardOptions opts;
  opts.mode = BatchNormMode::train;
  const auto fr = forward(m, tape, tape.leaf(batch.input), prev, opts, true);
  const Var<T> loss = combined_loss(fr.output, batch.target, effective_weights(mode, weights));
  StepStats s;
  s.loss = static_cast<double>(loss.value()[0]);
  s.mse = mse(fr.output.value(), batch.target);
  s.ssim = ssim_mean(fr.output.value(), batch.target);
  tape.backward(loss);
  grads.clear();
  for (const auto& p : fr.parameters) grads.push_back(tape.grad_or_zeros(p));
  return s;
}

struct TrainConfig {
  ArchitectureConfig architecture;
  LossMode loss_mode = LossMode::combined;
  LossWeights weights;
  double learning_rate = 1e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  PairConfig pairs;
  AugmentConfig augment;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_dir;
  std::filesystem::path output;    // final DGW1 weights, optional
  std::filesystem::path loss_log;  // CSV, optional

  void validate() const {
    architecture.validate();
    effective_weights(loss_mode, weights);
    detail::require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive, got ",
                    learning_rate);
    detail::require(epochs > 0, "epochs must be positive");
    detail::require(batch_size > 0, "batch size must be positive");
    detail::require(clip_norm >= 0.0, "clip norm must be non-negative");
    detail::require(checkpoint_every == 0 || !checkpoint_dir.empty(), "checkpoint cadence set without a directory");
  }
};

/// One optimizer step with clipping. Any failure is reported against the
/// batch seed that produced the batch.
template <typename T>
StepStats train_step(ModelGraph<T>& m, AdamState<T>& adam, const Batch<T>& batch, const TrainConfig& cfg,
                     std::uint64_t batch_seed) {
  std::vector<BasicTensor<T>> grads;
  StepStats s;
  try {
    s = compute_gradients(m, batch, cfg.loss_mode, cfg.weights, grads);
  } catch (const ContractViolation& e) {
    throw TrainingDiverged("training step failed for batch seed " + std::to_string(batch_seed) + ": " + e.what());
  }
  s.grad_norm = clip_global_norm(grads, cfg.clip_norm);
  if (!std::isfinite(s.loss) || !std::isfinite(s.grad_norm)) {
    throw TrainingDiverged("non-finite loss " + std::to_string(s.loss) + " (gradient norm " +
                           std::to_string(s.grad_norm) + ") for batch seed " + std::to_string(batch_seed));
  }
  std::vector<BasicTensor<T>*> params;
  for (auto& [name, t] : m.parameters()) params.push_back(t);
  adam_step(params, grads, adam, cfg.learning_rate);
  return s;
}

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_mse = 0.0;
  double mean_ssim = 0.0;
};

struct TrainResult {
  ModelGraph<float> model;
  std::vector<EpochStats> history;
};

inline std::string format_loss_log(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,mean_loss,mean_mse,mean_ssim\n" << std::setprecision(9);
  for (const auto& e : history) os << e.epoch << ',' << e.mean_loss << ',' << e.mean_mse << ',' << e.mean_ssim << '\n';
  return os.str();
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    detail::require(static_cast<bool>(out), "cannot write ", path.string());
    out << text;
    detail::require(static_cast<bool>(out.flush()), "write to ", path.string(), " failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".dgw";
  return dir / name.str();
}

/// Trains on every frame of every sequence. Each epoch re-degrades the corpus
/// with fresh seeds, augments each pair, shuffles, and steps over batches.
/// The final batch of an epoch may be short.
inline TrainResult train(const TrainConfig& cfg, const std::vector<FrameSequence>& corpus) {
  cfg.validate();
  detail::require(!corpus.empty(), "training corpus is empty");
  for (const auto& seq : corpus) detail::require(!seq.frames.empty(), "training sequence '", seq.source, "' is empty");

  TrainResult r;
  r.model = build_model<float>(cfg.architecture);
  init_params(r.model, derive_seed(cfg.seed, {0}));
  AdamState<float> adam;
  PairConfig pc = cfg.pairs;
  pc.with_previous = r.model.uses_previous_frame();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<SamplePair> pairs;
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      auto ps = make_pairs(corpus[s], pc, derive_seed(cfg.seed, {1, epoch, s}));
      for (std::size_t i = 0; i < ps.size(); ++i) {
        pairs.push_back(augment_pair(ps[i], cfg.augment, derive_seed(cfg.seed, {2, epoch, s, i})));
      }
    }
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, {3, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(shuffle_rng, 0, static_cast<std::int64_t>(i - 1)))]);
    }

    EpochStats es;
    es.epoch = epoch;
    double weight = 0.0;
    for (std::size_t b = 0, start = 0; start < order.size(); ++b, start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const auto batch = make_batch(pairs, idx, pc.with_previous);
      const auto s = train_step(r.model, adam, batch, cfg, derive_seed(cfg.seed, {4, epoch, b}));
      const double w = static_cast<double>(idx.size());
      es.mean_loss += s.loss * w;
      es.mean_mse += s.mse * w;
      es.mean_ssim += s.ssim * w;
      weight += w;
    }
    es.mean_loss /= weight;
    es.mean_mse /= weight;
    es.mean_ssim /= weight;
    r.history.push_back(es);

    if (!cfg.loss_log.empty()) write_text_atomic(cfg.loss_log, format_loss_log(r.history));
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      save_weights(r.model, checkpoint_path(cfg.checkpoint_dir, epoch));
    }
  }
  if (!cfg.output.empty()) save_weights(r.model, cfg.output);
  return r;
}

/// Moving average of mean_loss over `window` epochs; counts how often a
/// window average rises above its predecessor.
inline std::size_t smoothed_loss_increases(const std::vector<EpochStats>& history, std::size_t window = 5) {
  if (history.size() < window + 1) return 0;
  std::vector<double> avg;
  for (std::size_t i = 0; i + window <= history.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = i; k < i + window; ++k) s += history[k].mean_loss;
    avg.push_back(s / static_cast<double>(window));
  }
  std::size_t rises = 0;
  for (std::size_t i = 1; i < avg.size(); ++i) rises += avg[i] > avg[i - 1];
  return rises;
}

}  // namespace driveguard
