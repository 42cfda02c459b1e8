#pragma once

#include <array>
#include <vector>

#include "rdnet/parameter.hpp"
#include "rdnet/tensor.hpp"

namespace rdnet {

// Per-channel linear relation I ~ alpha * T + beta, channels ordered R, G, B.
struct TransmissionRate {
  std::array<double, 3> alpha{1.0, 1.0, 1.0};
  std::array<double, 3> beta{0.0, 0.0, 0.0};

  // (alpha_R, alpha_G, alpha_B, beta_R, beta_G, beta_B)
  std::array<double, 6> to_array() const;
  static TransmissionRate from_array(const std::array<double, 6>& v);
  bool finite() const;
};

// Exact least-squares minimiser of ||alpha_c * T_c + beta_c - I_c||_2 per
// channel, pooled over batch and pixels. T and I are 3 x H x W or
// B x 3 x H x W. Throws DegenerateFitError when var(T_c) <= 1e-8.
template <typename Real>
TransmissionRate closed_form_fit(const Tensor<Real>& transmission, const Tensor<Real>& mixture);

// Stacks rates into a B x 6 tensor in to_array() order.
template <typename Real>
Tensor<Real> rates_to_tensor(const std::vector<TransmissionRate>& rates);
template <typename Real>
std::vector<TransmissionRate> rates_from_tensor(const Tensor<Real>& t);

// Four stride-2 3x3 conv stages (16, 32, 64, 128 channels) with swish, global
// average pooling, and a linear head to the six rate parameters. Stands in
// for an ImageNet-pretrained backbone.
template <typename Real>
class RateEstimator {
 public:
  static constexpr std::array<std::int64_t, 4> kStageChannels{16, 32, 64, 128};

  explicit RateEstimator(ParameterStore<Real>& store);

  // B x 3 x H x W -> B x 6. Throws NonFiniteError on NaN/Inf output.
  Tensor<Real> forward(const Tensor<Real>& image) const;
  std::vector<TransmissionRate> estimate(const Tensor<Real>& image) const;

  const Linear<Real>& head() const { return head_; }

 private:
  std::vector<Conv2d<Real>> trunk_;
  Linear<Real> head_;
};

// Three-layer MLP 6 -> 64 -> 64 -> C producing one scale per embedding
// channel. The output bias starts at 1 so an untrained generator is close to
// neutral modulation.
template <typename Real>
class PromptGenerator {
 public:
  static constexpr std::int64_t kHidden = 64;

  PromptGenerator(ParameterStore<Real>& store, std::int64_t channels);

  // B x 6 -> B x C
  Tensor<Real> forward(const Tensor<Real>& rates) const;
  std::int64_t channels() const { return channels_; }

 private:
  Linear<Real> fc1_, fc2_, fc3_;
  std::int64_t channels_;
};

// P o F with the per-channel prompt broadcast over batch (if 1 x C) and space.
template <typename Real>
Tensor<Real> modulate(const Tensor<Real>& embedding, const Tensor<Real>& prompt);

// (I - beta) / alpha per channel and sample, clamped to [0, 1]. |alpha| is
// floored at 1e-3. rates is B x 6. Not differentiable with respect to rates.
template <typename Real>
Tensor<Real> adjust_input(const Tensor<Real>& image, const Tensor<Real>& rates);

}  // namespace rdnet
