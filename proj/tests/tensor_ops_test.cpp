#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "driveguard/gradcheck.hpp"
#include "driveguard/ops.hpp"
#include "driveguard/rng.hpp"

using namespace driveguard;

namespace {

// Direct nested-loop depthwise+pointwise convolution with explicit zero
// padding. Independent of the engine's row-range arithmetic.
std::vector<double> naive_separable(const Tensor& x, const Tensor& dw, const Tensor& pw, std::size_t stride,
                                   std::size_t out_h, std::size_t out_w, std::size_t pad_top, std::size_t pad_left) {
  const std::size_t C = x.channels(), K = dw.dim(1), Cout = pw.dim(0);
  std::vector<double> mid(C * out_h * out_w, 0.0), out(Cout * out_h * out_w, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oh = 0; oh < out_h; ++oh)
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        double acc = 0.0;
        for (std::size_t kh = 0; kh < K; ++kh)
          for (std::size_t kw = 0; kw < K; ++kw) {
            const long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad_top);
            const long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad_left);
            if (ih < 0 || iw < 0 || ih >= static_cast<long>(x.height()) || iw >= static_cast<long>(x.width())) continue;
            acc += dw[(c * K + kh) * K + kw] * x.at(0, c, ih, iw);
          }
        mid[(c * out_h + oh) * out_w + ow] = acc;
      }
  for (std::size_t o = 0; o < Cout; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < out_h * out_w; ++p) out[o * out_h * out_w + p] += pw[o * C + c] * mid[c * out_h * out_w + p];
  return out;
}

Tensor run_separable(const Tensor& x, const Tensor& dw, const Tensor& pw, std::size_t stride, Padding pad) {
  Tape<float> tape;
  return conv_separable(tape.leaf(x), tape.leaf(dw), tape.leaf(pw), stride, pad).value();
}

}  // namespace

TEST(ConvSeparable, DeltaKernelsAreIdentity) {
  Rng rng(3);
  const Tensor x = random_uniform<float>({2, 3, 7, 9}, rng);
  Tensor dw({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) dw[c * 9 + 4] = 1.0f;
  Tensor pw({3, 3});
  for (std::size_t c = 0; c < 3; ++c) pw[c * 3 + c] = 1.0f;
  EXPECT_EQ(run_separable(x, dw, pw, 1, Padding::same), x);
}

TEST(ConvSeparable, ZeroKernelsGiveZeroOutput) {
  Rng rng(4);
  const Tensor x = random_uniform<float>({1, 4, 8, 8}, rng);
  const Tensor out = run_separable(x, Tensor({4, 3, 3}), Tensor({5, 4}), 2, Padding::same);
  EXPECT_EQ(out.shape(), (Shape{1, 5, 4, 4}));
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ConvSeparable, RampBoxStride2MatchesNestedLoopOracle) {
  Tensor x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  const Tensor dw = Tensor::full({1, 3, 3}, 1.0f);
  const Tensor pw = Tensor::full({1, 1}, 1.0f);
  const Tensor out = run_separable(x, dw, pw, 2, Padding::same);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 2, 2}));
  // Same padding for 4 -> 2 with a 3-tap window pads one zero at the end.
  const auto oracle = naive_separable(x, dw, pw, 2, 2, 2, 0, 0);
  const std::vector<double> frozen{45, 39, 66, 50};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(oracle[i], frozen[i]);
    EXPECT_FLOAT_EQ(out[i], static_cast<float>(frozen[i]));
  }
}

TEST(ConvSeparable, RandomCasesMatchNestedLoopOracle) {
  Rng rng(11);
  for (std::size_t stride : {1u, 2u}) {
    const Tensor x = random_uniform<float>({1, 3, 9, 6}, rng, -1, 1);
    const Tensor dw = random_normal<float>({3, 3, 3}, rng);
    const Tensor pw = random_normal<float>({4, 3}, rng);
    const Tensor out = run_separable(x, dw, pw, stride, Padding::same);
    const ConvAxis ah = conv_axis(9, 3, stride, Padding::same), aw = conv_axis(6, 3, stride, Padding::same);
    const auto oracle = naive_separable(x, dw, pw, stride, ah.out, aw.out, ah.pad_before, aw.pad_before);
    ASSERT_EQ(out.size(), oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(out[i], oracle[i], 1e-5);
    const Tensor valid = run_separable(x, dw, pw, stride, Padding::valid);
    const ConvAxis vh = conv_axis(9, 3, stride, Padding::valid), vw = conv_axis(6, 3, stride, Padding::valid);
    const auto voracle = naive_separable(x, dw, pw, stride, vh.out, vw.out, 0, 0);
    ASSERT_EQ(valid.size(), voracle.size());
    for (std::size_t i = 0; i < voracle.size(); ++i) EXPECT_NEAR(valid[i], voracle[i], 1e-5);
  }
}

TEST(ConvSeparable, SpatialExtentFollowsStride) {
  Rng rng(5);
  for (std::size_t h : {5u, 8u, 13u, 16u}) {
    const Tensor x = random_uniform<float>({1, 2, h, h + 3}, rng);
    const Tensor dw = random_normal<float>({2, 3, 3}, rng);
    const Tensor pw = random_normal<float>({2, 2}, rng);
    EXPECT_EQ(run_separable(x, dw, pw, 1, Padding::same).shape(), (Shape{1, 2, h, h + 3}));
    EXPECT_EQ(run_separable(x, dw, pw, 2, Padding::same).shape(), (Shape{1, 2, (h + 1) / 2, (h + 4) / 2}));
  }
}

TEST(ConvSeparable, KernelChannelMismatchIsContractViolation) {
  Tape<float> tape;
  auto x = tape.leaf(Tensor({1, 3, 4, 4}));
  EXPECT_THROW(conv_separable(x, tape.leaf(Tensor({2, 3, 3})), tape.leaf(Tensor({2, 2})), 1, Padding::same),
               ContractViolation);
  EXPECT_THROW(conv_separable(x, tape.leaf(Tensor({3, 3, 3})), tape.leaf(Tensor({2, 4})), 1, Padding::same),
               ContractViolation);
}

TEST(UpsampleNearest, FactorOneIsIdentity) {
  Rng rng(1);
  Tape<float> tape;
  const Tensor x = random_uniform<float>({2, 3, 4, 5}, rng);
  EXPECT_EQ(upsample_nearest(tape.leaf(x), 1).value(), x);
}

TEST(UpsampleNearest, BlockReplication) {
  Tape<float> tape;
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor out = upsample_nearest(tape.leaf(x), 2).value();
  const std::vector<float> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(out.values(), expected);
}

TEST(UpsampleNearest, EveryPixelMapsToItsSource) {
  Rng rng(2);
  Tape<float> tape;
  const Tensor x = random_uniform<float>({1, 3, 5, 7}, rng);
  const Tensor out = upsample_nearest(tape.leaf(x), 2).value();
  ASSERT_EQ(out.shape(), (Shape{1, 3, 10, 14}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t h = 0; h < 10; ++h)
      for (std::size_t w = 0; w < 14; ++w) ASSERT_EQ(out.at(0, c, h, w), x.at(0, c, h / 2, w / 2));
}

TEST(BatchNorm, ConstantInputNormalisesToZero) {
  Tape<float> tape;
  auto state = BatchNormState<float>::identity(2);
  const Tensor out = batch_norm(tape.leaf(Tensor::full({3, 2, 4, 4}, 0.7f)), state, BatchNormMode::train).value();
  for (float v : out.data()) EXPECT_NEAR(v, 0.0f, 1e-6);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(8);
  Tape<float> tape;
  auto state = BatchNormState<float>::identity(3);
  state.gamma.fill(0.0f);
  state.beta.fill(5.0f);
  for (auto mode : {BatchNormMode::train, BatchNormMode::infer}) {
    const Tensor out = batch_norm(tape.leaf(random_uniform<float>({2, 3, 4, 4}, rng)), state, mode).value();
    for (float v : out.data()) EXPECT_FLOAT_EQ(v, 5.0f);
  }
}

TEST(BatchNorm, TwoPassStatisticsOracle) {
  Tape<float> tape;
  const Tensor x({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto state = BatchNormState<float>::identity(1);
  const Tensor out = batch_norm(tape.leaf(x), state, BatchNormMode::train).value();
  double mean = 0.0;
  for (float v : x.data()) mean += v;
  mean /= 8.0;
  double var = 0.0;
  for (float v : x.data()) var += (v - mean) * (v - mean);
  var /= 8.0;
  EXPECT_DOUBLE_EQ(mean, 4.5);
  EXPECT_DOUBLE_EQ(var, 5.25);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[i], (x[i] - mean) / std::sqrt(var + 1e-3), 1e-6);
  // running statistics: EMA with momentum 0.99 from (0, 1)
  EXPECT_NEAR(state.running_mean[0], 0.01 * 4.5, 1e-6);
  EXPECT_NEAR(state.running_var[0], 0.99 + 0.01 * 5.25, 1e-6);
}

TEST(BatchNorm, InferModeIsAffine) {
  Rng rng(9);
  auto state = BatchNormState<float>::identity(2);
  state.running_mean = Tensor({2}, {0.2f, -0.4f});
  state.running_var = Tensor({2}, {0.5f, 2.0f});
  state.gamma = Tensor({2}, {1.5f, -0.5f});
  state.beta = Tensor({2}, {0.1f, 0.3f});
  const Tensor x = random_uniform<float>({1, 2, 3, 3}, rng);
  Tape<float> tape;
  const Tensor once = batch_norm(tape.leaf(x), state, BatchNormMode::infer).value();
  const Tensor twice = batch_norm(tape.leaf(once), state, BatchNormMode::infer).value();
  for (std::size_t c = 0; c < 2; ++c) {
    const double a = state.gamma[c] / std::sqrt(state.running_var[c] + 1e-3);
    const double b = state.beta[c] - a * state.running_mean[c];
    for (std::size_t p = 0; p < 9; ++p) {
      const double v = x[c * 9 + p];
      EXPECT_NEAR(once[c * 9 + p], a * v + b, 1e-5);
      EXPECT_NEAR(twice[c * 9 + p], a * (a * v + b) + b, 1e-5);
    }
  }
  EXPECT_EQ(state.running_mean[0], 0.2f);  // infer leaves statistics untouched
}

TEST(BatchNorm, RejectsChannelMismatchAndEmptyBatch) {
  Tape<float> tape;
  auto state = BatchNormState<float>::identity(2);
  EXPECT_THROW(batch_norm(tape.leaf(Tensor({1, 3, 2, 2})), state, BatchNormMode::train), ContractViolation);
  EXPECT_THROW(batch_norm(tape.leaf(Tensor{}), state, BatchNormMode::train), ContractViolation);
}

TEST(Activations, Relu) {
  Tape<float> tape;
  EXPECT_EQ(relu(tape.leaf(Tensor({3}, {-1, 0, 2.5f}))).value().values(), (std::vector<float>{0, 0, 2.5f}));
  EXPECT_EQ(relu(tape.leaf(Tensor({3}, {-1, -2, -3}))).value().values(), (std::vector<float>{0, 0, 0}));
  EXPECT_EQ(relu(tape.leaf(Tensor({2}, {1, 3}))).value().values(), (std::vector<float>{1, 3}));
}

TEST(Activations, Sigmoid) {
  Tape<float> tape;
  const Tensor out = sigmoid(tape.leaf(Tensor({3}, {0.0f, 20.0f, 1.0f}))).value();
  EXPECT_EQ(out[0], 0.5f);
  EXPECT_NEAR(out[1], 1.0, 1e-8);
  EXPECT_NEAR(out[2], 0.7310585786300049, 1e-6);  // 1 / (1 + e^-1)
  EXPECT_GT(sigmoid_scalar(-30.0), 0.0);
}

TEST(ConcatChannels, SlicesRecoverInputs) {
  Rng rng(12);
  Tape<float> tape;
  const Tensor a = random_uniform<float>({2, 2, 3, 4}, rng);
  const Tensor b = random_uniform<float>({2, 3, 3, 4}, rng);
  const Tensor ab = concat_channels(tape.leaf(a), tape.leaf(b)).value();
  ASSERT_EQ(ab.shape(), (Shape{2, 5, 3, 4}));
  EXPECT_EQ(kernels::slice_channels(ab, 0, 2), a);
  EXPECT_EQ(kernels::slice_channels(ab, 2, 5), b);
  const Tensor az = concat_channels(tape.leaf(a), tape.leaf(Tensor({2, 3, 3, 4}))).value();
  EXPECT_EQ(kernels::slice_channels(az, 0, 2), a);
  EXPECT_THROW(concat_channels(tape.leaf(a), tape.leaf(Tensor({2, 3, 4, 4}))), ContractViolation);
}

TEST(ConcatChannels, BackwardSplitsGradient) {
  Tape<float> tape;
  auto a = tape.leaf(Tensor({1, 1, 1, 2}), true);
  auto b = tape.leaf(Tensor({1, 2, 1, 2}), true);
  auto out = concat_channels(a, b);
  const Tensor seed({1, 3, 1, 2}, {1, 2, 3, 4, 5, 6});
  tape.backward(out, &seed);
  EXPECT_EQ(tape.grad(a.id()).values(), (std::vector<float>{1, 2}));
  EXPECT_EQ(tape.grad(b.id()).values(), (std::vector<float>{3, 4, 5, 6}));
}

TEST(Backprop, MseGradientOnIdentityModel) {
  Rng rng(13);
  const Tensor pred = random_uniform<float>({1, 3, 4, 4}, rng);
  const Tensor target = random_uniform<float>({1, 3, 4, 4}, rng);
  Tape<float> tape;
  auto p = tape.leaf(pred, true);
  tape.backward(mse_loss(p, target));
  const auto& g = tape.grad(p.id());
  for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_NEAR(g[i], 2.0 * (pred[i] - target[i]) / 48.0, 1e-7);
}

TEST(Backprop, OptimumHasZeroGradient) {
  Rng rng(14);
  const Tensor x = random_uniform<float>({1, 3, 16, 16}, rng);
  Tape<float> tape;
  auto p = tape.leaf(x, true);
  tape.backward(combined_loss(p, x, LossWeights{}));
  for (float v : tape.grad(p.id()).data()) EXPECT_NEAR(v, 0.0f, 1e-7);
}

TEST(Backprop, StaleGraphIsRejected) {
  Tape<float> tape;
  auto p = tape.leaf(Tensor::full({1, 1, 2, 2}, 0.5f), true);
  auto loss = mse_loss(p, Tensor({1, 1, 2, 2}));
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractViolation);
  EXPECT_THROW(relu(p), ContractViolation);
}

TEST(Backprop, SeedShapeMustMatchOutput) {
  Tape<float> tape;
  auto p = tape.leaf(Tensor({1, 1, 2, 2}), true);
  auto out = relu(p);
  const Tensor wrong({1, 1, 2, 3});
  EXPECT_THROW(tape.backward(out, &wrong), ContractViolation);
}

TEST(FiniteDifference, Quadratic) {
  Rng rng(15);
  const auto x = random_uniform<double>({50}, rng, -1, 1);
  ScalarFunction<double> f;
  f.value = [](const BasicTensor<double>& t) {
    double s = 0;
    for (double v : t.data()) s += v * v;
    return s;
  };
  f.gradient = [](const BasicTensor<double>& t) {
    auto g = t;
    for (double& v : g.data()) v *= 2;
    return g;
  };
  EXPECT_LT(finite_difference_check(f, x).max_relative_error, 1e-4);
}

TEST(FiniteDifference, ReluSumAwayFromKink) {
  Rng rng(16);
  auto x = random_uniform<double>({1, 2, 8, 8}, rng, -1, 1);
  for (double& v : x.data()) v = (v < 0 ? -1 : 1) * (0.05 + std::abs(v));
  auto f = tape_function<double>([](Tape<double>&, Var<double> v) { return relu(v); });
  EXPECT_LT(finite_difference_check(f, x).max_relative_error, 1e-4);
}

TEST(FiniteDifference, SsimLossWrtFirstImage) {
  Rng rng(17);
  const auto a = random_uniform<double>({1, 3, 32, 32}, rng);
  const auto b = random_uniform<double>({1, 3, 32, 32}, rng);
  auto f = tape_function<double>([b](Tape<double>&, Var<double> v) {
    return scalar_affine<double>({{-1.0, ssim_mean(v, b)}}, 1.0);
  });
  EXPECT_LT(finite_difference_check(f, a).max_relative_error, 5e-3);
}

TEST(FiniteDifference, NonFiniteForwardIsContractViolation) {
  ScalarFunction<double> f;
  f.value = [](const BasicTensor<double>& t) { return t[0] > 0 ? std::log(-1.0) : 0.0; };
  f.gradient = [](const BasicTensor<double>& t) { return t; };
  EXPECT_THROW(finite_difference_check(f, BasicTensor<double>({1}, {0.5})), ContractViolation);
}

TEST(FiniteDifference, EveryStandardOpPasses) {
  for (const auto& check : standard_op_checks()) {
    for (std::uint64_t seed : {1u, 2u}) {
      const auto r = check.run(seed, 1e-3);
      const double tol = check.is_loss ? 5e-3 : 1e-3;
      EXPECT_LT(r.max_relative_error, tol) << check.name << " seed " << seed << " worst index " << r.worst_index
                                           << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
      EXPECT_GT(r.coordinates, 0u);
    }
  }
}

TEST(Determinism, RepeatedForwardIsBitwiseIdentical) {
  Rng rng(18);
  const Tensor x = random_uniform<float>({2, 4, 16, 16}, rng);
  const Tensor dw = random_normal<float>({4, 3, 3}, rng);
  const Tensor pw = random_normal<float>({6, 4}, rng);
  EXPECT_EQ(run_separable(x, dw, pw, 2, Padding::same), run_separable(x, dw, pw, 2, Padding::same));
}
