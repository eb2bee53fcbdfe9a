#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driveguard/driveguard.hpp"

namespace driveguard::cli {

namespace fs = std::filesystem;

inline const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names{"synth", "degrade", "train", "restore", "eval", "gradcheck"};
  return names;
}

/// `key = value` lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot read config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw CLI::ValidationError("--config", path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Config entries become `--key=value` arguments placed right after the
/// subcommand, so later command-line flags take precedence.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<fs::path> config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (!config) return args;
  std::size_t sub = 0;
  for (std::size_t i = 1; i < args.size() && sub == 0; ++i) {
    for (const auto& n : subcommand_names()) {
      if (args[i] == n) sub = i;
    }
  }
  if (sub == 0) return args;
  std::vector<std::string> injected;
  for (const auto& [k, v] : read_config(*config)) {
    if (k == "config") throw CLI::ValidationError("--config", "config files cannot include other config files");
    injected.push_back("--" + k + "=" + v);
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub) + 1, injected.begin(), injected.end());
  return args;
}

inline std::vector<int> parse_levels(const std::string& text) {
  std::vector<int> levels;
  std::stringstream ss(text);
  for (std::string cell; std::getline(ss, cell, ',');) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cell.size() || v < 0 || v > 4) {
      throw CLI::ValidationError("--levels", "expected comma-separated levels in 0..4, got '" + text + "'");
    }
    levels.push_back(v);
  }
  if (levels.empty()) throw CLI::ValidationError("--levels", "no levels given");
  return levels;
}

/// Frame files of one sequence directory together with the directory they
/// live in and the directory that mirrors it under `out_root`.
struct SequenceFiles {
  fs::path frame_dir;
  fs::path label_dir;     // empty when absent
  fs::path out_dir;       // mirrored frame directory
  fs::path out_sequence;  // mirrored sequence directory
  std::vector<fs::path> frames;
};

inline std::vector<SequenceFiles> sequence_files(const fs::path& in_root, const fs::path& out_root) {
  std::vector<SequenceFiles> out;
  for (const auto& d : sequence_dirs(in_root)) {
    SequenceFiles s;
    const bool nested = fs::is_directory(d / "frames");
    s.frame_dir = nested ? d / "frames" : d;
    if (nested && fs::is_directory(d / "labels")) s.label_dir = d / "labels";
    const auto rel = fs::relative(d, in_root);
    s.out_sequence = (out_root / rel).lexically_normal();
    s.out_dir = nested ? s.out_sequence / "frames" : s.out_sequence;
    s.frames = data_detail::matching_files(s.frame_dir, R"(.*\.png)");
    out.push_back(std::move(s));
  }
  return out;
}

inline void copy_labels(const SequenceFiles& s) {
  if (s.label_dir.empty()) return;
  const auto dst = s.out_sequence / "labels";
  fs::create_directories(dst);
  for (const auto& p : data_detail::matching_files(s.label_dir, R"(.*\.png)")) {
    fs::copy_file(p, dst / p.filename(), fs::copy_options::overwrite_existing);
  }
}

struct SynthArgs {
  fs::path out;
  std::size_t sequences = 8, frames = 24, size = 64;
  std::uint64_t seed = 0;
};

inline void run_synth(const SynthArgs& a, std::ostream& out) {
  for (std::size_t s = 0; s < a.sequences; ++s) {
    const auto seq = generate_synthetic_sequence(derive_seed(a.seed, {s}), a.frames, a.size, a.size);
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03zu", s);
    save_sequence(seq, a.out / name);
  }
  std::ofstream classes(a.out / "classes.txt");
  classes << "# source unified name\n";
  const auto& names = synthetic_class_names();
  for (std::size_t c = 0; c < names.size(); ++c) classes << c << ' ' << c << ' ' << names[c] << '\n';
  out << "wrote " << a.sequences << " sequences of " << a.frames << " frames (" << a.size << "x" << a.size << ") to "
      << a.out.string() << '\n';
}

struct DegradeArgs {
  fs::path input, output;
  int level = 2;
  std::uint64_t seed = 0;
  bool stack_noises = false;
  bool artifacts_only = false;
};

inline void run_degrade(const DegradeArgs& a, std::ostream& out) {
  DegradationConfig dc;
  dc.stack_noises = a.stack_noises;
  dc.statistical_noise = !a.artifacts_only;
  std::size_t total = 0;
  const auto seqs = sequence_files(a.input, a.output);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& sf = seqs[s];
    std::ostringstream sidecar;
    for (std::size_t i = 0; i < sf.frames.size(); ++i) {
      const Tensor img = load_png_rgb(sf.frames[i]);
      const auto d = degrade_at_level(img, a.level,
                                      derive_seed(a.seed, {static_cast<std::uint64_t>(a.level), s, i}), dc);
      save_png_rgb(d.image, sf.out_dir / sf.frames[i].filename());
      sidecar << format_sidecar({sf.frames[i].filename().string(), d.spec, d.placements}, dc.poisson_peak) << '\n';
      ++total;
    }
    copy_labels(sf);
    write_text_atomic(sf.out_sequence / "degradation.tsv", sidecar.str());
  }
  out << "degraded " << total << " frames at level " << a.level << " into " << a.output.string() << '\n';
}

struct TrainArgs {
  std::string arch = "scae", loss = "combined";
  fs::path data, out, loss_log, checkpoint_dir;
  std::size_t epochs = 30, batch = 8, size = 0, checkpoint_every = 0, temporal_stride = 1;
  double lr = 1e-4, lambda_mse = 1.0, lambda_ssim = 0.1, clean_ratio = 0.25;
  int level = 2;
  std::uint64_t seed = 0;
  bool no_augment = false;
};

inline void run_train(const TrainArgs& a, std::ostream& out) {
  const auto corpus = load_corpus(a.data);
  const auto& f0 = corpus.front().frames.front();
  for (const auto& seq : corpus) {
    detail::require(seq.frames.front().shape() == f0.shape(), "sequence '", seq.source, "' frame shape ",
                    to_string(seq.frames.front().shape()), " differs from ", to_string(f0.shape()));
  }
  detail::require(a.size == 0 || (a.size == f0.height() && a.size == f0.width()), "--size ", a.size,
                  " does not match the training frames (", f0.height(), "x", f0.width(), ")");
  TrainConfig cfg;
  cfg.architecture.kind = parse_architecture(a.arch);
  cfg.architecture.height = f0.height();
  cfg.architecture.width = f0.width();
  cfg.loss_mode = parse_loss_mode(a.loss);
  cfg.weights = {a.lambda_mse, a.lambda_ssim};
  cfg.learning_rate = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.pairs.level_schedule = {a.level};
  cfg.pairs.clean_ratio = a.clean_ratio;
  cfg.pairs.temporal_stride = a.temporal_stride;
  if (a.no_augment) cfg.augment = AugmentConfig::none();
  cfg.output = a.out;
  cfg.loss_log = a.loss_log.empty() ? fs::path(a.out).replace_extension(".loss.csv") : a.loss_log;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.checkpoint_dir = a.checkpoint_dir.empty() && a.checkpoint_every > 0 ? fs::path(a.out).replace_extension(".ckpt")
                                                                           : a.checkpoint_dir;
  const auto r = train(cfg, corpus);
  const auto& last = r.history.back();
  out << "trained " << display_name(cfg.architecture.kind) << " for " << cfg.epochs << " epochs; final loss "
      << last.mean_loss << ", mse " << last.mean_mse << ", ssim " << last.mean_ssim << "\nweights: " << a.out.string()
      << "\nloss log: " << cfg.loss_log.string() << '\n';
}

struct RestoreArgs {
  fs::path weights, input, output;
  std::size_t temporal_stride = 1;
};

inline void run_restore(const RestoreArgs& a, std::ostream& out) {
  const auto model = load_weights(a.weights);
  detail::require(a.temporal_stride >= 1, "--temporal-stride must be at least 1");
  std::size_t total = 0;
  for (const auto& sf : sequence_files(a.input, a.output)) {
    std::vector<Tensor> frames;
    for (const auto& p : sf.frames) frames.push_back(load_png_rgb(p));
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const Tensor* prev = model.uses_previous_frame() ? &frames[previous_index(i, a.temporal_stride)] : nullptr;
      save_png_rgb(infer(model, frames[i], prev), sf.out_dir / sf.frames[i].filename());
      ++total;
    }
    copy_labels(sf);
  }
  out << "restored " << total << " frames with " << display_name(model.config.kind) << " into " << a.output.string()
      << '\n';
}

struct EvalArgs {
  fs::path data, report, markdown, dump_images, external_preds, occlusion_report, segmenter_data;
  std::vector<std::string> weights, filters;
  bool identity = false, no_segmentation = false;
  std::string levels = "0,1,2,3,4";
  std::uint64_t seed = 0;
  std::size_t temporal_stride = 1, median_kernel = 3, bilateral_radius = 4;
  double sigma_spatial = 2.0, sigma_range = 0.1;
  int occlusion_level = 3;
};

inline void run_eval(const EvalArgs& a, std::ostream& out) {
  if (a.weights.empty() && a.filters.empty() && !a.identity) {
    throw CLI::ValidationError("eval", "choose at least one of --weights, --filter, --identity");
  }
  const auto levels = parse_levels(a.levels);
  const auto dataset = load_corpus(a.data);
  std::vector<ModelGraph<float>> models;
  models.reserve(a.weights.size());
  for (const auto& w : a.weights) models.push_back(load_weights(w));

  std::vector<RestoreMethod> methods;
  if (a.identity) methods.push_back(identity_method());
  for (const auto& f : a.filters) {
    if (f == "median") {
      methods.push_back(median_method(a.median_kernel));
    } else if (f == "bilateral") {
      methods.push_back(bilateral_method(a.sigma_spatial, a.sigma_range, a.bilateral_radius));
    } else {
      throw CLI::ValidationError("--filter", "unknown filter '" + f + "' (median|bilateral)");
    }
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::string name = display_name(models[i].config.kind);
    for (const auto& m : methods) {
      if (m.name == name) name += "_" + std::to_string(i);
    }
    methods.push_back(model_method(models[i], name));
  }

  EvalConfig cfg;
  cfg.levels = levels;
  cfg.seed = a.seed;
  cfg.temporal_stride = a.temporal_stride;
  cfg.dump_images = a.dump_images;
  cfg.external_predictions = a.external_preds;
  bool labelled = true;
  for (const auto& seq : dataset) labelled = labelled && seq.has_labels();
  std::optional<ToySegmenter> seg;
  if (a.external_preds.empty() && !a.no_segmentation && labelled) {
    std::vector<FrameSequence> fit_data;
    if (!a.segmenter_data.empty()) fit_data = load_corpus(a.segmenter_data);
    const auto& source = a.segmenter_data.empty() ? dataset : fit_data;
    std::vector<Tensor> frames;
    std::vector<LabelMap> labels;
    std::size_t classes = 1;
    for (const auto& seq : source) {
      detail::require(seq.has_labels(), "segmenter data ", seq.source, " has no labels");
      frames.insert(frames.end(), seq.frames.begin(), seq.frames.end());
      labels.insert(labels.end(), seq.labels.begin(), seq.labels.end());
      for (const auto& l : seq.labels)
        for (auto id : l.ids) classes = std::max(classes, static_cast<std::size_t>(std::max(id, 0)) + 1);
    }
    seg.emplace(classes);
    seg->fit(frames, labels);
    cfg.segmenter = &*seg;
  }

  std::vector<MetricRow> rows;
  std::vector<OcclusionRow> occlusion;
  for (const auto& m : methods) {
    const auto r = evaluate(m, dataset, cfg);
    rows.insert(rows.end(), r.begin(), r.end());
    if (!a.occlusion_report.empty()) {
      occlusion.push_back(occlusion_report(m, dataset, a.occlusion_level, a.seed, a.temporal_stride));
    }
  }
  write_report(rows, a.report, ReportFormat::csv);
  if (!a.markdown.empty()) write_report(rows, a.markdown, ReportFormat::markdown);
  if (!a.occlusion_report.empty()) write_text_atomic(a.occlusion_report, format_occlusion_report(occlusion));
  out << format_report_markdown(rows);
}

struct GradcheckArgs {
  std::string op = "all";
  double tolerance = 1e-3;
  double epsilon = 1e-3;
  std::uint64_t seed = 1;
};

/// Loss terms get five times the layer tolerance.
inline bool run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto checks = standard_op_checks();
  bool any = false, ok = true;
  for (const auto& c : checks) {
    if (a.op != "all" && c.name != a.op && c.name.rfind(a.op + ".", 0) != 0) continue;
    any = true;
    const auto r = c.run(a.seed, a.epsilon);
    const double tol = c.is_loss ? 5.0 * a.tolerance : a.tolerance;
    const bool pass = r.max_relative_error < tol;
    ok = ok && pass;
    out << (pass ? "PASS " : "FAIL ") << c.name << " max_rel_err=" << r.max_relative_error << " tol=" << tol
        << " coords=" << r.coordinates << '\n';
  }
  if (!any) {
    std::string names;
    for (const auto& c : checks) names += " " + c.name;
    throw CLI::ValidationError("--op", "unknown op '" + a.op + "'; known:" + names);
  }
  return ok;
}

/// Exit codes: 0 success, 1 contract violation or failed check, 2 usage error.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DriveGuard: degrade, restore and evaluate driving-camera frames", "driveguard"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value file; flags override it");
  };

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--sequences", synth.sequences, "Number of sequences")->check(CLI::PositiveNumber);
  s->add_option("--frames", synth.frames, "Frames per sequence")->check(CLI::Range(2, 100000));
  s->add_option("--size", synth.size, "Frame side length (multiple of 8)")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Seed");
  add_config(s);

  DegradeArgs degrade;
  auto* d = app.add_subcommand("degrade", "Apply a noise level to frames and record sidecars");
  d->add_option("--input", degrade.input, "Input sequence or corpus directory")->required();
  d->add_option("--output", degrade.output, "Output directory")->required();
  d->add_option("--level", degrade.level, "Noise level 0..4")->check(CLI::Range(0, 4));
  d->add_option("--seed", degrade.seed, "Seed");
  d->add_flag("--stack-noises", degrade.stack_noises, "Apply all four noise models in sequence");
  d->add_flag("--artifacts-only", degrade.artifacts_only, "Skip statistical noise");
  add_config(d);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a restoration autoencoder");
  t->add_option("--arch", tr.arch, "ae|scae|stae")->check(CLI::IsMember({"ae", "scae", "stae"}));
  t->add_option("--loss", tr.loss, "mse|ssim|combined")->check(CLI::IsMember({"mse", "ssim", "combined"}));
  t->add_option("--data", tr.data, "Corpus directory")->required();
  t->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::PositiveNumber);
  t->add_option("--lr", tr.lr, "Learning rate")->check(CLI::PositiveNumber);
  t->add_option("--batch", tr.batch, "Batch size")->check(CLI::PositiveNumber);
  t->add_option("--size", tr.size, "Expected frame side length");
  t->add_option("--seed", tr.seed, "Seed");
  t->add_option("--out", tr.out, "Output DGW1 weights")->required();
  t->add_option("--lambda-mse", tr.lambda_mse, "MSE weight")->check(CLI::NonNegativeNumber);
  t->add_option("--lambda-ssim", tr.lambda_ssim, "SSIM weight")->check(CLI::NonNegativeNumber);
  t->add_option("--level", tr.level, "Training noise level")->check(CLI::Range(0, 4));
  t->add_option("--clean-ratio", tr.clean_ratio, "Fraction of clean pairs")->check(CLI::Range(0.0, 1.0));
  t->add_option("--temporal-stride", tr.temporal_stride, "Previous-frame offset")->check(CLI::PositiveNumber);
  t->add_flag("--no-augment", tr.no_augment, "Disable augmentation");
  t->add_option("--loss-log", tr.loss_log, "Loss CSV (default: <out>.loss.csv)");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint cadence in epochs (0: off)");
  t->add_option("--checkpoint-dir", tr.checkpoint_dir, "Checkpoint directory (default: <out>.ckpt)");
  add_config(t);

  RestoreArgs rs;
  auto* r = app.add_subcommand("restore", "Restore degraded frames with trained weights");
  r->add_option("--weights", rs.weights, "DGW1 weights")->required();
  r->add_option("--input", rs.input, "Degraded sequence or corpus directory")->required();
  r->add_option("--output", rs.output, "Output directory")->required();
  r->add_option("--temporal-stride", rs.temporal_stride, "Previous-frame offset")->check(CLI::PositiveNumber);
  add_config(r);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate methods over noise levels");
  e->add_option("--data", ev.data, "Clean corpus directory")->required();
  e->add_option("--weights", ev.weights, "DGW1 weights (repeatable)")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  e->add_option("--filter", ev.filters, "median|bilateral (repeatable)")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  e->add_flag("--identity", ev.identity, "Evaluate the unrestored input");
  e->add_option("--levels", ev.levels, "Comma-separated noise levels");
  e->add_option("--report", ev.report, "CSV report path")->required();
  e->add_option("--markdown", ev.markdown, "Markdown report path");
  e->add_option("--dump-images", ev.dump_images, "Directory for restored PNGs");
  e->add_option("--external-preds", ev.external_preds, "Directory of predicted label PNGs");
  e->add_option("--occlusion-report", ev.occlusion_report, "CSV of occluded-region MSE (artifact-only attack)");
  e->add_option("--occlusion-level", ev.occlusion_level, "Level for the occlusion report")->check(CLI::Range(1, 4));
  e->add_flag("--no-segmentation", ev.no_segmentation, "Skip segmentation metrics");
  e->add_option("--segmenter-data", ev.segmenter_data, "Labelled corpus the toy segmenter is fitted on (default: --data)");
  e->add_option("--seed", ev.seed, "Seed");
  e->add_option("--temporal-stride", ev.temporal_stride, "Previous-frame offset")->check(CLI::PositiveNumber);
  e->add_option("--median-kernel", ev.median_kernel, "Median kernel size (odd)");
  e->add_option("--bilateral-radius", ev.bilateral_radius, "Bilateral window radius");
  e->add_option("--sigma-spatial", ev.sigma_spatial, "Bilateral spatial sigma");
  e->add_option("--sigma-range", ev.sigma_range, "Bilateral range sigma");
  add_config(e);

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  g->add_option("--op", gc.op, "all or an op name");
  g->add_option("--tolerance", gc.tolerance, "Max relative error for layer ops")->check(CLI::PositiveNumber);
  g->add_option("--epsilon", gc.epsilon, "Finite-difference step")->check(CLI::PositiveNumber);
  g->add_option("--seed", gc.seed, "Seed");
  add_config(g);

  try {
    args = expand_config(std::move(args));
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
    if (s->parsed()) run_synth(synth, out);
    if (d->parsed()) run_degrade(degrade, out);
    if (t->parsed()) run_train(tr, out);
    if (r->parsed()) run_restore(rs, out);
    if (e->parsed()) run_eval(ev, out);
    if (g->parsed()) return run_gradcheck(gc, out) ? 0 : 1;
    return 0;
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::Error& ex) {
    err << "error: " << ex.what() << "\n\n" << app.help();
    return 2;
  } catch (const ContractViolation& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace driveguard::cli
