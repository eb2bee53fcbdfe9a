#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "driveguard/degradation.hpp"
#include "driveguard/metrics.hpp"

using namespace driveguard;

namespace {

Tensor constant_image(std::size_t h, std::size_t w, float v, std::size_t channels = 1) {
  return Tensor::full({1, channels, h, w}, v);
}

// Smooth colour ramp with a few bands, values in [0.1, 0.9].
Tensor test_scene(std::size_t h = 64, std::size_t w = 64) {
  Tensor t({1, 3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = 0.5 + 0.4 * std::sin(0.1 * static_cast<double>(x + 2 * c) + 0.07 * static_cast<double>(y));
        t.at(0, c, y, x) = static_cast<float>(v);
      }
  return t;
}

struct Moments {
  double mean = 0.0, variance = 0.0;
};

Moments moments_of_delta(const Tensor& out, const Tensor& in, double scale = 1.0) {
  Moments m;
  const auto n = static_cast<double>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) m.mean += (out[i] - in[i]) / scale;
  m.mean /= n;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = (out[i] - in[i]) / scale - m.mean;
    m.variance += d * d;
  }
  m.variance /= n - 1;
  return m;
}

}  // namespace

TEST(GaussianNoise, ZeroVarianceAndDeterminism) {
  const Tensor img = test_scene();
  EXPECT_EQ(gaussian_noise(img, 0.0, 1), img);
  EXPECT_EQ(gaussian_noise(img, 0.02, 9), gaussian_noise(img, 0.02, 9));
  EXPECT_NE(gaussian_noise(img, 0.02, 9), gaussian_noise(img, 0.02, 10));
  EXPECT_THROW(gaussian_noise(img, -0.1, 1), ContractViolation);
}

TEST(GaussianNoise, MomentsOverSeeds) {
  const Tensor img = constant_image(256, 256, 0.5f);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = moments_of_delta(gaussian_noise(img, 0.01, seed), img);
    EXPECT_NEAR(m.mean, 0.0, 0.003) << seed;
    EXPECT_NEAR(m.variance / 0.01, 1.0, 0.15) << seed;
  }
}

TEST(SpeckleNoise, ZeroImageStaysZeroAndMoments) {
  const Tensor zero = constant_image(32, 32, 0.0f, 3);
  EXPECT_EQ(speckle_noise(zero, 0.5, 1), zero);
  const Tensor img = constant_image(256, 256, 0.5f);
  EXPECT_EQ(speckle_noise(img, 0.0, 1), img);
  EXPECT_THROW(speckle_noise(img, -1.0, 1), ContractViolation);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = moments_of_delta(speckle_noise(img, 0.04, seed), img);
    EXPECT_NEAR(std::sqrt(m.variance) / 0.1, 1.0, 0.15) << seed;
  }
}

TEST(SaltPepper, IdentityFullAndCounts) {
  const Tensor img = test_scene(128, 128);
  EXPECT_EQ(salt_pepper(img, 0.0, 3), img);
  for (float v : salt_pepper(img, 1.0, 3).data()) ASSERT_TRUE(v == 0.0f || v == 1.0f);
  EXPECT_THROW(salt_pepper(img, 1.5, 3), ContractViolation);
  EXPECT_THROW(salt_pepper(img, -0.1, 3), ContractViolation);

  const Tensor gray = constant_image(128, 128, 0.5f, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor out = salt_pepper(gray, 0.3, seed);
    std::size_t salt = 0, pepper = 0;
    for (std::size_t p = 0; p < 128 * 128; ++p) {
      const float v = out.plane(0, 0)[p];
      // The mask is shared across channels.
      ASSERT_EQ(out.plane(0, 1)[p], v);
      ASSERT_EQ(out.plane(0, 2)[p], v);
      salt += v == 1.0f;
      pepper += v == 0.0f;
    }
    const double fraction = static_cast<double>(salt + pepper) / (128.0 * 128.0);
    EXPECT_GE(fraction, 0.27);
    EXPECT_LE(fraction, 0.33);
    const double ratio = static_cast<double>(salt) / static_cast<double>(salt + pepper);
    EXPECT_GE(ratio, 0.4);
    EXPECT_LE(ratio, 0.6);
  }
}

TEST(PoissonNoise, ZeroImageAndMoments) {
  const Tensor zero = constant_image(16, 16, 0.0f);
  EXPECT_EQ(poisson_noise(zero, 255.0, 4), zero);
  EXPECT_THROW(poisson_noise(zero, 0.0, 4), ContractViolation);
  const Tensor img = constant_image(256, 256, 0.5f);
  EXPECT_EQ(poisson_noise(img, 255.0, 4), poisson_noise(img, 255.0, 4));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor out = poisson_noise(img, 255.0, seed);
    const auto m = moments_of_delta(out, Tensor::zeros(out.shape()));
    EXPECT_NEAR(m.mean, 0.5, 0.01) << seed;
    EXPECT_NEAR(m.variance / (0.5 / 255.0), 1.0, 0.2) << seed;
  }
}

TEST(Artifacts, CountZeroIsIdentity) {
  const Tensor img = test_scene();
  const auto [out, placements] = add_artifacts(img, 0, 5);
  EXPECT_EQ(out, img);
  EXPECT_TRUE(placements.empty());
  EXPECT_THROW(add_artifacts(img, -1, 5), ContractViolation);
}

TEST(Artifacts, PlacementsInsideAndFilled) {
  const Tensor img = test_scene();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [out, placements] = add_artifacts(img, 5, seed);
    ASSERT_EQ(placements.size(), 5u);
    for (const auto& p : placements) {
      EXPECT_LE(p.y + p.height, 64u);
      EXPECT_LE(p.x + p.width, 64u);
      EXPECT_GT(p.height * p.width, 0u);
      if (p.kind == ArtifactPlacement::Kind::line_group) {
        EXPECT_GE(p.thickness, 1u);
        EXPECT_LE(p.thickness, 3u);
        EXPECT_TRUE(p.width == 64 || p.height == 64);
      }
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = p.y; y < p.y + p.height; ++y)
          for (std::size_t x = p.x; x < p.x + p.width; ++x) ASSERT_EQ(out.at(0, c, y, x), 0.0f);
    }
  }
}

TEST(Artifacts, ChangedPixelsExactlyTileThePlacements) {
  // Image strictly above the fill value, so every covered pixel changes.
  const Tensor img = test_scene();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [out, placements] = add_artifacts(img, 12, seed);
    const auto mask = occlusion_mask(placements, 64, 64);
    for (std::size_t p = 0; p < 64 * 64; ++p) {
      const bool changed = out.plane(0, 0)[p] != img.plane(0, 0)[p];
      ASSERT_EQ(changed, mask[p] == 1) << "seed " << seed << " pixel " << p;
    }
  }
}

TEST(Artifacts, OccludedAreaMatchesAnalyticExpectation) {
  // Per artifact: half the time a rectangle with sides uniform in
  // [0.04, 0.12] of the frame (mean area 0.08^2), otherwise 1-3 full-span
  // lines (mean 2 / 256 of the frame). Union of 20 independent artifacts.
  const double per_artifact = 0.5 * 0.08 * 0.08 + 0.5 * 2.0 / 256.0;
  const double expected = 1.0 - std::pow(1.0 - per_artifact, 20);
  const Tensor img = constant_image(256, 256, 0.5f);
  double mean_fraction = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [out, placements] = add_artifacts(img, 20, seed);
    std::size_t zeros = 0;
    for (float v : out.data()) zeros += v == 0.0f;
    const double fraction = static_cast<double>(zeros) / (256.0 * 256.0);
    EXPECT_GE(fraction, 0.5 * expected) << seed;
    EXPECT_LE(fraction, 2.0 * expected) << seed;
    mean_fraction += fraction / 10.0;
  }
  EXPECT_NEAR(mean_fraction / expected, 1.0, 0.25);
}

TEST(Levels, TableOneExpansion) {
  const double amount[] = {0.0, 0.1, 0.2, 0.3, 0.4};
  const double sigma2[] = {0.0, 1.0, 4.0, 9.0, 16.0};
  const int lo[] = {0, 1, 13, 25, 37};
  const int hi[] = {-1, 13, 25, 37, 49};
  for (int level = 0; level <= 4; ++level) {
    const auto s = expand_level(level);
    EXPECT_EQ(s.salt_pepper_amount, amount[level]);
    EXPECT_EQ(s.gaussian_variance, sigma2[level] * 0.01);
    EXPECT_DOUBLE_EQ(s.speckle_variance, sigma2[level] * 0.01);
    EXPECT_EQ(s.artifact_min, lo[level]);
    EXPECT_EQ(s.artifact_max, hi[level]);
    EXPECT_EQ(s.poisson_enabled, level > 0);
  }
  const auto two = expand_level(2);
  EXPECT_DOUBLE_EQ(two.salt_pepper_amount, 0.2);
  EXPECT_DOUBLE_EQ(two.gaussian_variance, 0.04);
  EXPECT_EQ(two.artifact_min, 13);
  EXPECT_EQ(two.artifact_max, 25);
  DegradationConfig raw;
  raw.variance_scale = 1.0;
  EXPECT_DOUBLE_EQ(expand_level(3, raw).gaussian_variance, 9.0);
  EXPECT_THROW(expand_level(5), ContractViolation);
  EXPECT_THROW(expand_level(-1), ContractViolation);
}

TEST(Levels, LevelZeroIsIdentityAndLevelsAreReproducible) {
  const Tensor img = test_scene();
  const auto zero = degrade_at_level(img, 0, 77);
  EXPECT_EQ(zero.image, img);
  EXPECT_TRUE(zero.placements.empty());
  EXPECT_EQ(zero.spec.noise, NoiseKind::none);
  for (int level = 1; level <= 4; ++level) {
    const auto a = degrade_at_level(img, level, 77), b = degrade_at_level(img, level, 77);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.spec, b.spec);
    EXPECT_EQ(a.placements, b.placements);
    EXPECT_GE(a.spec.artifact_count, a.spec.artifact_min);
    EXPECT_LE(a.spec.artifact_count, a.spec.artifact_max);
    EXPECT_EQ(a.placements.size(), static_cast<std::size_t>(a.spec.artifact_count));
    for (float v : a.image.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  EXPECT_THROW(degrade_at_level(img, 7, 1), ContractViolation);
}

TEST(Levels, EveryNoiseKindIsChosen) {
  const Tensor img = test_scene(16, 16);
  std::set<NoiseKind> seen;
  for (std::uint64_t seed = 0; seed < 60; ++seed) seen.insert(degrade_at_level(img, 1, seed).spec.noise);
  EXPECT_EQ(seen.size(), 4u);
  DegradationConfig stacked;
  stacked.stack_noises = true;
  EXPECT_EQ(degrade_at_level(img, 1, 3, stacked).spec.noise, NoiseKind::stacked);
  DegradationConfig artifacts_only;
  artifacts_only.statistical_noise = false;
  const auto d = degrade_at_level(img, 2, 3, artifacts_only);
  const auto mask = occlusion_mask(d.placements, 16, 16);
  for (std::size_t p = 0; p < 256; ++p) {
    if (!mask[p]) {
      ASSERT_EQ(d.image.plane(0, 0)[p], img.plane(0, 0)[p]);
    }
  }
}

TEST(Levels, MeanMseIncreasesWithLevel) {
  const Tensor img = test_scene();
  double previous = 0.0;
  for (int level = 1; level <= 4; ++level) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) total += mse(img, degrade_at_level(img, level, seed).image);
    const double mean = total / 50.0;
    EXPECT_GT(mean, previous) << "level " << level;
    previous = mean;
  }
}

TEST(Sidecar, RoundTrip) {
  const Tensor img = test_scene(48, 64);
  for (int level = 0; level <= 4; ++level) {
    const auto d = degrade_at_level(img, level, 1000 + level);
    const SidecarRecord rec{"frame_0007.png", d.spec, d.placements};
    const std::string line = format_sidecar(rec);
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 5);
    EXPECT_EQ(parse_sidecar(line, 48, 64), rec) << line;
  }
  EXPECT_THROW(parse_sidecar("a\tb", 8, 8), ContractViolation);
  EXPECT_THROW(parse_sidecar("f\tx\t1\tnone\t\t", 8, 8), ContractViolation);
  EXPECT_THROW(parse_sidecar("f\t1\t1\tgaussian\t\tblank:6,6,4,4,0", 8, 8), ContractViolation);
}
