#include <gtest/gtest.h>

#include <cmath>

#include "rdnet/error.hpp"
#include "rdnet/named_arrays.hpp"
#include "rdnet/ops.hpp"
#include "rdnet/parameter.hpp"
#include "test_util.hpp"

namespace rdnet {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

// Plain nested-loop convolution, kept free of the im2col path.
std::vector<double> reference_conv(const Tensor<double>& x, const Tensor<double>& w,
                                   const Tensor<double>& b, int stride, int pad) {
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = w.dim(0), K = w.dim(2);
  const auto Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(B * O * Ho * Wo));
  for (std::int64_t n = 0; n < B; ++n)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t xx = 0; xx < Wo; ++xx) {
          double acc = b[o];
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t ky = 0; ky < K; ++ky)
              for (std::int64_t kx = 0; kx < K; ++kx) {
                const auto iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((n * C + c) * H + iy) * W + ix] * w[((o * C + c) * K + ky) * K + kx];
              }
          out[static_cast<std::size_t>(((n * O + o) * Ho + y) * Wo + xx)] = acc;
        }
  return out;
}

TEST(Conv2d, SumOfOnes) {
  auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto b = Tensor<float>::zeros({1});
  auto y = conv2d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0f);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(3);
  auto x = random_tensor<float>({2, 1, 4, 5}, rng);
  auto y = conv2d(x, Tensor<float>::full({1, 1, 1, 1}, 1.0f), Tensor<float>::zeros({1}), 1, 0);
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Conv2d, MatchesLoopReferenceStride2Pad1) {
  Rng rng(11);
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto y = conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  const auto ref = reference_conv(x, w, b, 2, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, Float32WithinToleranceOfReferenceOnManyShapes) {
  Rng rng(5);
  const int configs[][5] = {{3, 4, 7, 2, 3}, {4, 8, 3, 1, 1}, {8, 4, 1, 1, 0}, {2, 2, 3, 2, 0}};
  for (const auto& c : configs) {
    auto xd = random_tensor<double>({2, c[0], 9, 8}, rng);
    auto wd = random_tensor<double>({c[1], c[0], c[2], c[2]}, rng);
    auto bd = random_tensor<double>({c[1]}, rng);
    auto y = conv2d(xd.cast<float>(), wd.cast<float>(), bd.cast<float>(), c[3], c[4]);
    const auto ref = reference_conv(xd, wd, bd, c[3], c[4]);
    ASSERT_EQ(static_cast<std::size_t>(y.numel()), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
  }
}

TEST(Conv2d, BiasShiftIsLinear) {
  Rng rng(2);
  auto x = random_tensor<double>({2, 3, 6, 6}, rng);
  auto w = random_tensor<double>({4, 3, 3, 3}, rng);
  auto b = random_tensor<double>({4}, rng);
  auto b2 = b.clone();
  const double delta = 0.37;
  b2.mutable_data()[1] += delta;
  auto y1 = conv2d(x, w, b, 2, 1);
  auto y2 = conv2d(x, w, b2, 2, 1);
  const auto hw = y1.dim(2) * y1.dim(3);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 4; ++c) {
      double s1 = 0, s2 = 0;
      for (std::int64_t i = 0; i < hw; ++i) {
        s1 += y1[(n * 4 + c) * hw + i];
        s2 += y2[(n * 4 + c) * hw + i];
      }
      EXPECT_NEAR(s2 - s1, c == 1 ? delta * static_cast<double>(hw) : 0.0, 1e-10);
    }
}

TEST(Conv2d, ShapeErrorsNameAxes) {
  auto x = Tensor<float>::zeros({1, 3, 8, 8});
  auto w = Tensor<float>::zeros({4, 2, 3, 3});
  try {
    conv2d(x, w, Tensor<float>::zeros({4}), 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
  }
  EXPECT_THROW(conv2d(Tensor<float>::zeros({1, 3, 2, 2}), Tensor<float>::zeros({1, 3, 5, 5}),
                      Tensor<float>(), 1, 0),
               ShapeError);
}

TEST(PixelShuffle, DeclaredOrdering) {
  auto x = Tensor<float>::from_data({1, 4, 1, 1}, {1, 2, 3, 4});
  auto y = pixel_shuffle(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), (std::vector<float>{1, 2, 3, 4}));
  auto back = pixel_unshuffle(y, 2);
  EXPECT_EQ(back.shape(), x.shape());
  EXPECT_EQ(max_abs_diff(back, x), 0.0);
}

TEST(PixelShuffle, FactorOneIsIdentity) {
  Rng rng(1);
  auto x = random_tensor<float>({2, 3, 4, 5}, rng);
  EXPECT_EQ(max_abs_diff(pixel_shuffle(x, 1), x), 0.0);
  EXPECT_EQ(max_abs_diff(pixel_unshuffle(x, 1), x), 0.0);
}

TEST(PixelShuffle, RoundTripsBitExactlyOverRandomShapes) {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const int r = 1 + static_cast<int>(rng.below(3));
    const std::int64_t b = 1 + rng.below(2), c = (1 + rng.below(3)) * r * r;
    const std::int64_t h = 1 + rng.below(4), w = 1 + rng.below(4);
    auto x = random_tensor<float>({b, c, h, w}, rng);
    auto y = pixel_unshuffle(pixel_shuffle(x, r), r);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y[i], x[i]);
    auto z = random_tensor<float>({b, c / (r * r), h * r, w * r}, rng);
    auto z2 = pixel_shuffle(pixel_unshuffle(z, r), r);
    for (std::int64_t i = 0; i < z.numel(); ++i) ASSERT_EQ(z2[i], z[i]);
  }
}

TEST(PixelShuffle, Errors) {
  EXPECT_THROW(pixel_shuffle(Tensor<float>::zeros({1, 6, 2, 2}), 2), ShapeError);
  EXPECT_THROW(pixel_unshuffle(Tensor<float>::zeros({1, 1, 3, 4}), 2), ShapeError);
  auto u = pixel_unshuffle(Tensor<float>::zeros({1, 1, 4, 4}), 2);
  EXPECT_EQ(u.shape(), (Shape{1, 4, 2, 2}));
}

TEST(Resample, NearestUpsampleRepeatsBlocks) {
  auto x = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = resample(x, {2, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const std::vector<float> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), expected);
}

TEST(Resample, ConstantStaysConstantAndBlockImageIsFixedPoint) {
  auto c = Tensor<float>::full({1, 2, 4, 6}, 0.25f);
  for (Rational s : {Rational{1, 2}, Rational{2, 1}}) {
    auto y = resample(c, s);
    for (float v : y.data()) EXPECT_EQ(v, 0.25f);
  }
  auto up = resample(Tensor<float>::from_data({1, 1, 2, 2}, {5, 6, 7, 8}), {2, 1});
  auto round = resample(resample(up, {1, 2}), {2, 1});
  EXPECT_EQ(max_abs_diff(round, up), 0.0);
  EXPECT_THROW(resample(c, {3, 1}), ValueError);
  EXPECT_THROW(resample(Tensor<float>::zeros({1, 1, 3, 4}), {1, 2}), ShapeError);
}

TEST(Backward, LinearAndQuadratic) {
  Rng rng(4);
  auto p = random_tensor<float>({3, 4}, rng, -1, 1, true);
  backward(sum(p));
  for (float g : p.grad()) EXPECT_EQ(g, 1.0f);
  p.zero_grad();
  backward(scale(sum(square(p)), 0.5f));
  for (std::int64_t i = 0; i < p.numel(); ++i) EXPECT_FLOAT_EQ(p.grad()[i], p[i]);
}

TEST(Backward, AccumulatesUntilZeroed) {
  auto p = Tensor<double>::full({2}, 1.0, true);
  backward(sum(p));
  backward(sum(p));
  EXPECT_EQ(p.grad()[0], 2.0);
  p.zero_grad();
  EXPECT_EQ(p.grad()[1], 0.0);
}

TEST(Backward, RejectsNonScalar) {
  auto p = Tensor<float>::full({2}, 1.0f, true);
  EXPECT_THROW(backward(scale(p, 2.0f)), ShapeError);
}

TEST(Backward, NoGradGuardSkipsRecording) {
  auto p = Tensor<float>::full({2}, 1.0f, true);
  NoGradGuard guard;
  auto y = sum(p);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(GradCheck, SumIsExact) {
  ParameterStore<double> store(1);
  store.create_uniform("p", {5}, 1.0);
  auto& p = store.at("p");
  std::vector<Parameter<double>*> params{store.find("p")};
  const auto report = grad_check([&] { return sum(p); }, params, 1e-3, 5);
  EXPECT_LT(report.max_relative_error, 1e-10);
  EXPECT_EQ(report.coordinates, 5u);
}

TEST(GradCheck, StepShrinksAcrossAbsKink) {
  ParameterStore<double> store(1);
  auto x = store.create_constant("x", {2}, 0.0);
  x.mutable_data()[0] = 3e-4;  // inside the 2h stencil of eps 1e-3
  x.mutable_data()[1] = 0.5;
  std::vector<Parameter<double>*> params{store.find("x")};
  const auto report = grad_check([&] { return sum(abs(x)); }, params, 1e-3, 2, 1, Stencil::kFivePoint);
  EXPECT_LT(report.max_relative_error, 1e-10);
  EXPECT_GE(report.step_shrinks, 1u);
  EXPECT_EQ(report.kinked_coordinates, 0u);

  x.mutable_data()[0] = 0.0;  // on the kink: no step avoids it
  const auto at_kink = grad_check([&] { return sum(abs(x)); }, params, 1e-3, 2, 1, Stencil::kFivePoint);
  EXPECT_EQ(at_kink.kinked_coordinates, 1u);
  EXPECT_EQ(at_kink.step_shrinks, static_cast<std::size_t>(kGradCheckMaxShrinks));
}

TEST(GradCheck, ShuffleResampleComposite) {
  ParameterStore<double> store(7);
  auto x = store.create_uniform("x", {1, 8, 2, 2}, 1.0);
  auto w = store.create_uniform("w", {3, 2, 3, 3}, 0.5);
  auto s = store.create_uniform("s", {3}, 1.0);
  auto target = Tensor<double>::full({1, 3, 4, 4}, 0.1);
  auto f = [&] {
    auto up = pixel_shuffle(x, 2);                        // 1x2x4x4
    auto y = swish(conv2d(resample(up, {2, 1}), w, Tensor<double>(), 2, 1));  // 1x3x4x4
    auto z = scale_channels(sigmoid(y), s);
    auto d = resample(pixel_unshuffle(z, 2), {2, 1});
    return add(mean(square(sub(pixel_shuffle(d, 2), resample(target, {2, 1})))),
               mean(mul(z, z)));
  };
  std::vector<Parameter<double>*> params;
  for (auto& p : store.all()) params.push_back(&p);
  const auto report = grad_check(f, params, 1e-3, 16);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
}

TEST(GradCheck, EveryPrimitive) {
  Rng rng(9);
  ParameterStore<double> store(9);
  auto a = store.create_uniform("a", {2, 4, 4, 4}, 1.0);
  auto lw = store.create_uniform("lw", {3, 4}, 1.0);
  auto lb = store.create_uniform("lb", {3}, 1.0);
  auto gamma = store.create_uniform("gamma", {4}, 1.0);
  for (auto& v : gamma.mutable_data()) v = 1.0 + 0.5 * v;
  auto f = [&] {
    auto [gx, gy] = image_gradient(a);
    auto pooled = global_avg_pool(swish(add(gx, scale(gy, 0.5))));
    auto l = linear(pooled, lw, lb);
    auto d = divide_channels(a, gamma);
    auto sl = slice_channels(d, 1, 3);
    auto padded = crop(reflect_pad(sl, 2, 3), 5, 6);
    return add(add(mean(square(l)), sum(scale(sigmoid(padded), 0.1))),
               mean(reshape(add_scalar(d, 0.3), {2, 64})));
  };
  std::vector<Parameter<double>*> params;
  for (auto& p : store.all()) params.push_back(&p);
  const auto report = grad_check(f, params, 1e-3, 12);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
}

TEST(GradCheck, NonFiniteIsAnError) {
  ParameterStore<double> store(1);
  auto p = store.create_constant("p", {1}, 0.0);
  std::vector<Parameter<double>*> params{store.find("p")};
  EXPECT_THROW(grad_check([&] { return divide_channels(reshape(p, {1, 1, 1, 1}), reshape(p, {1})); },
                          params),
               NonFiniteError);
}

TEST(Tensor, FiniteCheckAndShapeInvariant) {
  auto t = Tensor<float>::from_data({2}, {1.0f, std::nanf("")});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(check_finite(t, "t"), NonFiniteError);
  EXPECT_THROW(Tensor<float>::from_data({3}, {1.0f}), ShapeError);
}

TEST(NamedArrays, LayoutIsLittleEndianAndExact) {
  NamedArrays c;
  c.add("ab", {2}, {1.0f, -2.5f});
  const auto bytes = c.serialize();
  const std::vector<std::uint8_t> expected{'R', 'D', 'N', '1', 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 2, 0, 0, 0,
                                           0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x20, 0xC0};
  EXPECT_EQ(bytes, expected);
}

TEST(NamedArrays, RandomContainersRoundTripBitExact) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    NamedArrays c;
    const auto n = rng.below(5);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::vector<std::uint32_t> ext;
      const auto rank = rng.below(4);
      std::uint32_t count = 1;
      for (std::uint64_t k = 0; k < rank; ++k) {
        ext.push_back(static_cast<std::uint32_t>(rng.below(4)));
        count *= ext.back();
      }
      std::vector<float> v(count);
      for (auto& x : v) x = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64()));
      c.add("entry/" + std::to_string(i) + "/\xCE\xB3", ext, v);
    }
    const auto bytes = c.serialize();
    EXPECT_EQ(NamedArrays::parse(bytes).serialize(), bytes);
  }
}

TEST(NamedArrays, RejectsMalformedInput) {
  EXPECT_THROW(NamedArrays::parse({'X', 'D', 'N', '1', 0, 0, 0, 0}), FormatError);
  NamedArrays c;
  c.add("a", {3}, {1, 2, 3});
  auto bytes = c.serialize();
  bytes.pop_back();
  EXPECT_THROW(NamedArrays::parse(bytes), FormatError);
  EXPECT_THROW(c.add("a", {1}, {0}), FormatError);
  EXPECT_THROW(c.add("b", {2}, {0}), FormatError);
}

TEST(NamedArrays, TextEntries) {
  NamedArrays c;
  c.add_text("meta/config", "stage=2\nseed=7\n");
  EXPECT_EQ(*NamedArrays::parse(c.serialize()).text("meta/config"), "stage=2\nseed=7\n");
  EXPECT_FALSE(c.text("missing").has_value());
}

}  // namespace
}  // namespace rdnet
