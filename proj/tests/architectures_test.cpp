#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "driveguard/architectures.hpp"
#include "driveguard/gradcheck.hpp"
#include "driveguard/losses.hpp"
#include "driveguard/weights_io.hpp"

using namespace driveguard;

namespace {

ArchitectureConfig config_for(ArchitectureKind kind, std::size_t size = 64) {
  ArchitectureConfig c;
  c.kind = kind;
  c.height = c.width = size;
  return c;
}

ModelGraph<float> seeded_model(ArchitectureKind kind, std::uint64_t seed = 11) {
  auto m = build_model<float>(config_for(kind));
  init_params(m, seed);
  return m;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  return acc / static_cast<double>(a.size());
}

const ArchitectureKind kAllKinds[] = {ArchitectureKind::ae, ArchitectureKind::scae, ArchitectureKind::stae};

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("driveguard_arch_" + name);
}

}  // namespace

TEST(Architectures, ForwardPreservesShapeAndRange) {
  Rng rng(1);
  for (auto kind : kAllKinds) {
    const auto m = seeded_model(kind);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{64, 64}, {32, 48}}) {
      const Tensor x = random_uniform<float>({2, 3, h, w}, rng);
      const Tensor out = infer(m, x, &x);
      EXPECT_EQ(out.shape(), x.shape()) << to_string(kind);
      for (float v : out.data()) {
        ASSERT_GT(v, 0.0f);
        ASSERT_LT(v, 1.0f);
      }
    }
  }
}

TEST(Architectures, RejectsIndivisibleSizes) {
  auto cfg = config_for(ArchitectureKind::ae);
  cfg.height = 60;
  EXPECT_THROW(build_model<float>(cfg), ContractViolation);
  const auto m = seeded_model(ArchitectureKind::ae);
  EXPECT_THROW(infer(m, Tensor({1, 3, 36, 36})), ContractViolation);
}

TEST(Architectures, ZeroKernelsGiveConstantBiasOutput) {
  auto m = build_model<float>(config_for(ArchitectureKind::scae));
  m.layers.back().bias = Tensor({3}, {-1.0f, 0.0f, 2.0f});
  Rng rng(2);
  const Tensor out = infer(m, random_uniform<float>({1, 3, 16, 16}, rng));
  const float expect[] = {1.0f / (1.0f + std::exp(1.0f)), 0.5f, 1.0f / (1.0f + std::exp(-2.0f))};
  for (std::size_t c = 0; c < 3; ++c) {
    for (float v : out.plane(0, c)) ASSERT_FLOAT_EQ(v, expect[c]);
  }
}

TEST(Architectures, ParameterCountMatchesClosedForm) {
  // 3->32->64->128->256 encoder, mirrored decoder, K=3.
  EXPECT_EQ(seeded_model(ArchitectureKind::ae).parameter_count(), 93982u);
  for (auto kind : kAllKinds) {
    EXPECT_EQ(seeded_model(kind).parameter_count(), expected_parameter_count(config_for(kind)));
  }
  // SCAE adds the wider D2/D3 inputs; STAE adds the previous-frame stream and a wider E3.
  EXPECT_EQ(seeded_model(ArchitectureKind::scae).parameter_count(), 93982u + (9 + 64) * 128 + (9 + 32) * 32);
  EXPECT_EQ(seeded_model(ArchitectureKind::stae).parameter_count(),
            seeded_model(ArchitectureKind::scae).parameter_count() + 187 + 2464 + (9 + 128) * 64);
}

TEST(Architectures, SingleFrameModelsIgnorePreviousFrame) {
  Rng rng(3);
  const Tensor x = random_uniform<float>({1, 3, 32, 32}, rng);
  const Tensor p = random_uniform<float>({1, 3, 32, 32}, rng);
  for (auto kind : {ArchitectureKind::ae, ArchitectureKind::scae}) {
    const auto m = seeded_model(kind);
    EXPECT_EQ(infer(m, x), infer(m, x, &p));
    EXPECT_EQ(infer(m, x, &x), infer(m, x, &p));
  }
}

TEST(Architectures, SkipEdgesAreLive) {
  Rng rng(4);
  const Tensor x = random_uniform<float>({1, 3, 32, 32}, rng);
  for (auto kind : {ArchitectureKind::scae, ArchitectureKind::stae}) {
    const auto m = seeded_model(kind);
    const Tensor base = infer(m, x, &x);
    for (const char* edge : {"e3->d2", "e1->d3"}) {
      ForwardOptions opts;
      opts.disabled_edges.insert(edge);
      EXPECT_GT(mean_abs_diff(base, infer(m, x, &x, opts)), 1e-5) << to_string(kind) << " " << edge;
    }
  }
}

TEST(Architectures, StaeDependsOnPreviousFrame) {
  Rng rng(5);
  const auto m = seeded_model(ArchitectureKind::stae);
  const Tensor x = random_uniform<float>({1, 3, 32, 32}, rng);
  Tensor p = x;
  const Tensor same = infer(m, x, &p);
  for (float v : same.data()) ASSERT_TRUE(std::isfinite(v));
  for (float& v : p.data()) v = std::clamp(v + static_cast<float>(uniform01(rng) - 0.5) * 0.2f, 0.0f, 1.0f);
  EXPECT_GT(mean_abs_diff(same, infer(m, x, &p)), 1e-4);
  EXPECT_THROW(infer(m, x), ContractViolation);
  const Tensor wrong({1, 3, 16, 16});
  EXPECT_THROW(infer(m, x, &wrong), ContractViolation);
}

TEST(Architectures, StaeTemporalStreamFeedsOnlyE3) {
  const auto table = layer_table(config_for(ArchitectureKind::stae));
  for (const auto& l : table) {
    if (l.name == "e3") {
      EXPECT_EQ(l.pre, (std::vector<std::string>{"e2", "p2"}));
    } else {
      for (const auto& src : l.pre) EXPECT_NE(src, "p2") << l.name;
      for (const auto& src : l.post) EXPECT_NE(src, "p1") << l.name;
    }
  }
}

TEST(InitParams, SeededAndDistinct) {
  auto a = seeded_model(ArchitectureKind::stae, 7);
  auto b = seeded_model(ArchitectureKind::stae, 7);
  auto c = seeded_model(ArchitectureKind::stae, 8);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i].second, *pb[i].second) << pa[i].first;
    any_diff |= !(*pa[i].second == *pc[i].second);
  }
  EXPECT_TRUE(any_diff);
  for (auto& layer : a.layers) {
    if (layer.spec.output) continue;
    for (float g : layer.norm.gamma.data()) EXPECT_EQ(g, 1.0f);
    for (float v : layer.norm.running_var.data()) EXPECT_EQ(v, 1.0f);
  }
}

TEST(InitParams, KernelVarianceMatchesFanIn) {
  auto sample_var = [](const Tensor& t) {
    double mean = 0.0, sq = 0.0;
    for (float v : t.data()) mean += v;
    mean /= static_cast<double>(t.size());
    for (float v : t.data()) sq += (v - mean) * (v - mean);
    return sq / static_cast<double>(t.size() - 1);
  };
  // Per layer on tensors large enough for a 20% band to be meaningful.
  auto m = seeded_model(ArchitectureKind::stae, 21);
  for (auto& layer : m.layers) {
    const double dw_target = 2.0 / 9.0, pw_target = 2.0 / static_cast<double>(layer.spec.in_channels);
    if (layer.depthwise.size() >= 500) {
      EXPECT_NEAR(sample_var(layer.depthwise) / dw_target, 1.0, 0.2) << layer.spec.name;
    }
    if (layer.pointwise.size() >= 500) {
      EXPECT_NEAR(sample_var(layer.pointwise) / pw_target, 1.0, 0.2) << layer.spec.name;
    }
  }
  // Every tensor, averaged over seeds.
  std::vector<double> dw_ratio(m.layers.size(), 0.0), pw_ratio(m.layers.size(), 0.0);
  const int seeds = 30;
  for (int s = 0; s < seeds; ++s) {
    auto r = seeded_model(ArchitectureKind::stae, 100 + s);
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
      dw_ratio[i] += sample_var(r.layers[i].depthwise) / (2.0 / 9.0) / seeds;
      pw_ratio[i] += sample_var(r.layers[i].pointwise) / (2.0 / static_cast<double>(r.layers[i].spec.in_channels)) / seeds;
    }
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    EXPECT_NEAR(dw_ratio[i], 1.0, 0.2) << m.layers[i].spec.name;
    EXPECT_NEAR(pw_ratio[i], 1.0, 0.2) << m.layers[i].spec.name;
  }
}

// Combined-loss gradient of every parameter tensor against central
// differences, in double precision at 32x32 with train-mode batchnorm.
class EndToEndGradient : public ::testing::TestWithParam<ArchitectureKind> {};

TEST_P(EndToEndGradient, CombinedLossMatchesFiniteDifferences) {
  auto base = seeded_model(GetParam(), 31).cast<double>();
  Rng rng(32);
  const auto x = random_uniform<double>({2, 3, 32, 32}, rng);
  const auto prev = random_uniform<double>({2, 3, 32, 32}, rng);
  const auto target = random_uniform<double>({2, 3, 32, 32}, rng);

  auto loss_and_grads = [&](ModelGraph<double>& m, bool want_grads) {
    Tape<double> tape;
    ForwardOptions opts;
    opts.mode = BatchNormMode::train;
    const auto fwd = forward(m, tape, tape.leaf(x), std::optional(tape.leaf(prev)), opts, want_grads);
    const Var<double> loss = combined_loss(fwd.output, target, LossWeights{});
    const double value = loss.value()[0];
    std::vector<BasicTensor<double>> grads;
    if (want_grads) {
      tape.backward(loss);
      for (const auto& p : fwd.parameters) grads.push_back(tape.grad_or_zeros(p));
    }
    return std::make_pair(value, grads);
  };

  ModelGraph<double> work = base;
  const auto analytic = loss_and_grads(work, true).second;
  const auto names = work.parameters();
  ASSERT_EQ(analytic.size(), names.size());

  std::set<std::string> layers_checked;
  for (std::size_t i = 0; i < names.size(); ++i) {
    ScalarFunction<double> f;
    f.value = [&, i](const BasicTensor<double>& p) {
      ModelGraph<double> m = base;
      *m.parameters()[i].second = p;
      return loss_and_grads(m, false).first;
    };
    f.gradient = [&, i](const BasicTensor<double>&) { return analytic[i]; };
    GradCheckOptions opts;
    opts.epsilon = 1e-6;
    opts.samples = 12;
    opts.seed = i;
    const auto r = finite_difference_check(f, *base.parameters()[i].second, opts);
    EXPECT_LT(r.max_relative_error, 1e-3) << names[i].first << " analytic " << r.worst_analytic << " numeric "
                                          << r.worst_numeric;
    layers_checked.insert(names[i].first.substr(0, names[i].first.find('.')));
  }
  EXPECT_EQ(layers_checked.size(), base.layers.size());
}

INSTANTIATE_TEST_SUITE_P(AllKinds, EndToEndGradient, ::testing::ValuesIn(kAllKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(WeightsIo, Crc64MatchesXzCheckValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc64(s.data(), s.size()), 0x995DC9BBDF1939FAULL);
}

TEST(WeightsIo, RoundTripIsBitwiseExact) {
  for (auto kind : kAllKinds) {
    auto m = seeded_model(kind, 41);
    // Non-trivial running statistics.
    Rng rng(42);
    for (auto& layer : m.layers) {
      if (layer.spec.output) continue;
      layer.norm.running_mean = random_normal<float>(layer.norm.running_mean.shape(), rng);
      layer.norm.running_var = random_uniform<float>(layer.norm.running_var.shape(), rng, 0.5, 2.0);
    }
    const auto path = temp_file(std::string(to_string(kind)) + ".dgw");
    save_weights(m, path);
    const auto cfg = config_for(kind);
    auto loaded = load_weights(path, &cfg);
    auto a = m.tensors(), b = loaded.tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].first, b[i].first);
      EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
    }
    const Tensor x = random_uniform<float>({1, 3, 32, 32}, rng);
    EXPECT_EQ(infer(m, x, &x), infer(loaded, x, &x));
    EXPECT_EQ(encode_weights(m), encode_weights(loaded));
    std::filesystem::remove(path);
  }
}

TEST(WeightsIo, DistinctErrors) {
  auto m = seeded_model(ArchitectureKind::scae, 43);
  const std::string good = encode_weights(m);
  const auto scae = config_for(ArchitectureKind::scae);
  const auto stae = config_for(ArchitectureKind::stae);
  EXPECT_NO_THROW(decode_weights(good, &scae));
  EXPECT_THROW(decode_weights(good, &stae), WeightsManifestError);

  std::string bad_magic = good;
  bad_magic[3] = '2';
  EXPECT_THROW(decode_weights(bad_magic), WeightsFormatError);

  EXPECT_THROW(decode_weights(good.substr(0, good.size() - 100)), WeightsTruncatedError);
  EXPECT_THROW(decode_weights(good.substr(0, 20)), WeightsTruncatedError);

  std::string flipped = good;
  flipped[good.size() - 8 - 1000] ^= 0x10;
  EXPECT_THROW(decode_weights(flipped), WeightsChecksumError);

  const auto path = temp_file("flipped.dgw");
  std::ofstream(path, std::ios::binary) << flipped;
  EXPECT_THROW(load_weights(path), WeightsChecksumError);
  std::filesystem::remove(path);
}
