#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rdnet/named_arrays.hpp"
#include "rdnet/random.hpp"
#include "rdnet/tapg.hpp"
#include "rdnet/tensor.hpp"

namespace rdnet {

// Tensors are 3 x H x W. reflection holds the blurred layer that was mixed.
struct SynthSample {
  Tensor<float> mixture;
  Tensor<float> transmission;
  Tensor<float> reflection;
  TransmissionRate rate;
  double blur_sigma = 0.0;
};

inline constexpr double kAlphaMin = 0.8, kAlphaMax = 1.0;
inline constexpr double kBetaMin = 0.2, kBetaMax = 1.0;
inline constexpr double kMaxBlurSigma = 3.0;

// alpha_c ~ U[0.8, 1], beta_c ~ U[0.2, 1], drawn alpha R, G, B then beta R, G, B.
TransmissionRate sample_rate(Rng& rng);

// Separable Gaussian with radius ceil(3 sigma) and clamped borders;
// sigma <= 0 returns a copy.
Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma);

// I = clip(alpha * T + beta * blur(R) - T * blur(R), 0, 1), per channel.
SynthSample compose(const Tensor<float>& transmission, const Tensor<float>& reflection,
                    const TransmissionRate& rate, double blur_sigma);

// Multi-octave value noise, one field per channel mixed with a shared
// luminance field, rescaled to a random per-channel mean in [0.3, 0.7] and
// spread in [0.12, 0.2], then clamped to [0, 1].
Tensor<float> procedural_texture(Rng& rng, std::int64_t height, std::int64_t width);

struct DatasetOptions {
  std::size_t count = 0;
  std::uint64_t seed = kDefaultSeed;
  std::int64_t height = 32;
  std::int64_t width = 32;
  std::filesystem::path source_dir;  // empty: procedural textures
  bool zero_reflection = false;      // R = 0 and no blur, for oracle checks
  double max_blur_sigma = kMaxBlurSigma;
};

struct Dataset {
  NamedArrays container;
  std::string manifest;
  std::vector<std::string> warnings;
};

// Entries per sample k: "sample{k}/I", "sample{k}/T", "sample{k}/R" (3 x H x W),
// "sample{k}/rate" (6) and "sample{k}/blur" (1). Manifest lines are
// tab-separated: id, the I/T/R entry names, six rate values, blur sigma.
Dataset build_dataset(const DatasetOptions& options);

std::size_t dataset_size(const NamedArrays& container);
SynthSample load_sample(const NamedArrays& container, std::size_t index);
std::vector<SynthSample> load_dataset(const NamedArrays& container);

}  // namespace rdnet
