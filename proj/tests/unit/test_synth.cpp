#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "rdnet/error.hpp"
#include "rdnet/image_io.hpp"
#include "rdnet/synth.hpp"
#include "rdnet/tapg.hpp"
#include "test_util.hpp"

namespace rdnet {
namespace {

using testing::random_tensor;

Tensor<float> batch1(const Tensor<float>& t) {
  return Tensor<float>::from_data({1, 3, t.dim(1), t.dim(2)}, std::vector<float>(t.data().begin(), t.data().end()));
}

TEST(SampleRate, GoldenSeedZero) {
  Rng rng(0);
  const auto got = sample_rate(rng).to_array();
  const std::array<double, 6> golden{0.976662162, 0.886305599, 0.805286754, 0.976705583, 0.285077353, 0.461860611};
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(got[i], golden[i], 1e-8) << i;
}

TEST(SampleRate, RangesAndSpread) {
  Rng rng(3);
  int equal_channels = 0;
  for (int k = 0; k < 10000; ++k) {
    const auto r = sample_rate(rng);
    for (int c = 0; c < 3; ++c) {
      ASSERT_GE(r.alpha[c], kAlphaMin);
      ASSERT_LE(r.alpha[c], kAlphaMax);
      ASSERT_GE(r.beta[c], kBetaMin);
      ASSERT_LE(r.beta[c], kBetaMax);
    }
    if (r.alpha[0] == r.alpha[1] || r.beta[1] == r.beta[2]) ++equal_channels;
  }
  EXPECT_EQ(equal_channels, 0);
}

TEST(Compose, ZeroReflectionScalesTransmission) {
  Rng rng(1);
  auto t = random_tensor<float>({3, 8, 8}, rng, 0, 1);
  const auto rate = TransmissionRate{{0.9, 0.8, 1.0}, {0.5, 0.5, 0.5}};
  const auto s = compose(t, Tensor<float>::zeros({3, 8, 8}), rate, 1.5);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    EXPECT_FLOAT_EQ(s.mixture[i], static_cast<float>(rate.alpha[i / 64]) * t[i]);
  }
}

TEST(Compose, ScreenBlendAtUnitRates) {
  Rng rng(2);
  auto t = random_tensor<float>({3, 8, 8}, rng, 0, 1);
  auto r = random_tensor<float>({3, 8, 8}, rng, 0, 1);
  const auto s = compose(t, r, TransmissionRate{{1, 1, 1}, {1, 1, 1}}, 0.0);
  for (std::int64_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(s.mixture[i], t[i] + r[i] - t[i] * r[i], 1e-6);
}

TEST(Compose, MatchesDirectFormula) {
  Rng rng(4);
  for (int draw = 0; draw < 10; ++draw) {
    auto t = random_tensor<float>({3, 12, 10}, rng, 0, 1);
    auto r = random_tensor<float>({3, 12, 10}, rng, 0, 1);
    const auto rate = sample_rate(rng);
    const double sigma = rng.uniform(0, 3);
    const auto s = compose(t, r, rate, sigma);
    const auto rb = gaussian_blur(r, sigma);
    ASSERT_EQ(testing::max_abs_diff(s.reflection, rb), 0.0);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const auto c = static_cast<std::size_t>(i / 120);
      const double v = rate.alpha[c] * t[i] + rate.beta[c] * rb[i] - static_cast<double>(t[i]) * rb[i];
      ASSERT_NEAR(s.mixture[i], std::clamp(v, 0.0, 1.0), 1e-6);
    }
  }
}

TEST(Compose, MonotoneInBeta) {
  Rng rng(5);
  auto t = random_tensor<float>({3, 6, 6}, rng, 0, 0.99);
  auto r = random_tensor<float>({3, 6, 6}, rng, 0.01, 1);
  auto lo = compose(t, r, TransmissionRate{{0.8, 0.8, 0.8}, {0.2, 0.2, 0.2}}, 1.0);
  auto hi = compose(t, r, TransmissionRate{{0.8, 0.8, 0.8}, {0.6, 0.6, 0.6}}, 1.0);
  for (std::int64_t i = 0; i < t.numel(); ++i) EXPECT_GE(hi.mixture[i], lo.mixture[i]);
}

TEST(Compose, ShapeMismatch) {
  EXPECT_THROW(compose(Tensor<float>::zeros({3, 4, 4}), Tensor<float>::zeros({3, 4, 5}), {}, 0), ShapeError);
}

TEST(GaussianBlur, ConstantImageAndZeroSigma) {
  auto c = Tensor<float>::full({3, 9, 7}, 0.25f);
  auto b = gaussian_blur(c, 2.0);
  for (std::int64_t i = 0; i < b.numel(); ++i) EXPECT_NEAR(b[i], 0.25f, 1e-6);
  Rng rng(6);
  auto x = random_tensor<float>({3, 5, 5}, rng, 0, 1);
  EXPECT_EQ(testing::max_abs_diff(gaussian_blur(x, 0.0), x), 0.0);
}

TEST(ProceduralTexture, InRangeAndSeeded) {
  Rng a(7), b(7);
  auto t = procedural_texture(a, 32, 32);
  auto u = procedural_texture(b, 32, 32);
  EXPECT_EQ(t.shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(testing::max_abs_diff(t, u), 0.0);
  EXPECT_GE(*std::min_element(t.data().begin(), t.data().end()), 0.0f);
  EXPECT_LE(*std::max_element(t.data().begin(), t.data().end()), 1.0f);
}

TEST(BuildDataset, SameSeedSameBytes) {
  const auto a = build_dataset({6, 11});
  const auto b = build_dataset({6, 11});
  const auto c = build_dataset({6, 12});
  EXPECT_EQ(a.container.serialize(), b.container.serialize());
  EXPECT_EQ(a.manifest, b.manifest);
  EXPECT_NE(a.container.serialize(), c.container.serialize());
}

TEST(BuildDataset, EmptyCount) {
  const auto d = build_dataset({0, 1});
  EXPECT_EQ(d.manifest, "");
  EXPECT_EQ(dataset_size(d.container), 0u);
}

TEST(BuildDataset, ManifestAndSamplesAgree) {
  const auto d = build_dataset({5, 2});
  EXPECT_EQ(std::count(d.manifest.begin(), d.manifest.end(), '\n'), 5);
  EXPECT_EQ(d.manifest.substr(0, 38), "sample0\tsample0/I\tsample0/T\tsample0/R\t");
  const auto samples = load_dataset(d.container);
  ASSERT_EQ(samples.size(), 5u);
  for (const auto& s : samples) {
    // The stored reflection is the blurred layer, so the mixture follows it
    // directly.
    for (std::int64_t i = 0; i < s.mixture.numel(); ++i) {
      const auto c = static_cast<std::size_t>(i / (32 * 32));
      const double v = s.rate.alpha[c] * s.transmission[i] + s.rate.beta[c] * s.reflection[i] -
                       static_cast<double>(s.transmission[i]) * s.reflection[i];
      ASSERT_NEAR(s.mixture[i], std::clamp(v, 0.0, 1.0), 1e-6);
    }
    EXPECT_GE(s.blur_sigma, 0.0);
    EXPECT_LE(s.blur_sigma, kMaxBlurSigma);
  }
}

TEST(BuildDataset, ZeroReflectionRatesRoundTripThroughFit) {
  const auto samples = load_dataset(build_dataset({20, 3, 16, 16, {}, true}).container);
  for (const auto& s : samples) {
    const auto fit = closed_form_fit(batch1(s.transmission), batch1(s.mixture));
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(fit.alpha[c], s.rate.alpha[c], 1e-4);
      EXPECT_NEAR(fit.beta[c], 0.0, 1e-4);
    }
  }
}

TEST(BuildDataset, SourceDirectoryWithUnreadableFile) {
  testing::TempDir dir("synth_src");
  Rng rng(8);
  write_image(dir / "a.png", random_tensor<float>({3, 40, 48}, rng, 0, 1));
  write_image(dir / "b.ppm", random_tensor<float>({3, 20, 20}, rng, 0, 1));
  write_file_bytes(dir / "notes.txt", {'h', 'i'});
  DatasetOptions o{4, 1, 16, 16, dir.path()};
  const auto d = build_dataset(o);
  ASSERT_EQ(d.warnings.size(), 1u);
  EXPECT_NE(d.warnings[0].find("notes.txt"), std::string::npos);
  EXPECT_EQ(dataset_size(d.container), 4u);
}

TEST(BuildDataset, NoReadableSources) {
  testing::TempDir dir("synth_empty");
  write_file_bytes(dir / "x.bin", {1, 2, 3});
  EXPECT_THROW(build_dataset({2, 1, 16, 16, dir.path()}), IoError);
}

TEST(LoadSample, MissingEntry) {
  NamedArrays c;
  EXPECT_THROW(load_sample(c, 0), FormatError);
}

}  // namespace
}  // namespace rdnet
