#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rdnet/hdec.hpp"
#include "rdnet/parameter.hpp"
#include "rdnet/tensor.hpp"

namespace rdnet {

struct LossWeights {
  double c0 = 1.0;  // transmission MSE
  double c1 = 0.0;  // reflection MSE
  double c2 = 0.0;  // transmission gradient L1
  double perceptual = 0.01;
  std::array<double, 4> layer{0.2, 0.2, 0.2, 0.2};

  static LossWeights stage1() { return {1.0, 0.0, 0.0, 0.01, {0.2, 0.2, 0.2, 0.2}}; }
  static LossWeights stage2() { return {0.3, 0.9, 0.6, 0.01, {0.2, 0.2, 0.2, 0.2}}; }
  void validate() const;
};

inline constexpr std::uint64_t kPerceptualSeed = 0xFEA7;

// Frozen, seeded four-stage conv feature extractor used for the perceptual
// term. Its parameters never require grad.
template <typename Real>
class PerceptualExtractor {
 public:
  static constexpr std::array<std::int64_t, 4> kStageChannels{16, 32, 64, 128};

  explicit PerceptualExtractor(std::uint64_t seed = kPerceptualSeed);

  std::vector<Tensor<Real>> features(const Tensor<Real>& image) const;
  const ParameterStore<Real>& parameters() const { return store_; }

 private:
  ParameterStore<Real> store_;
  std::vector<Conv2d<Real>> stages_;
};

// c0 * mean((T_hat - T)^2) + c1 * mean((R_hat - R)^2)
//   + c2 * mean(|grad T_hat - grad T|), the last mean taken over both
// gradient directions.
template <typename Real>
Tensor<Real> content_loss(const Tensor<Real>& t_hat, const Tensor<Real>& t, const Tensor<Real>& r_hat,
                          const Tensor<Real>& r, const LossWeights& weights);

// sum_j layer_j * mean(|phi_j(T_hat) - phi_j(T)|)
template <typename Real>
Tensor<Real> perceptual_loss(const Tensor<Real>& t_hat, const Tensor<Real>& t,
                             const PerceptualExtractor<Real>& extractor, const LossWeights& weights);

// content + perceptual weight * perceptual (the latter skipped when the
// weight is zero).
template <typename Real>
Tensor<Real> total_loss(const LayerPair<Real>& pair, const Tensor<Real>& t, const Tensor<Real>& r,
                        const LossWeights& weights, const PerceptualExtractor<Real>& extractor);

// Equal-weight mean of total_loss over the per-column decompositions.
template <typename Real>
Tensor<Real> multi_column_loss(const std::vector<LayerPair<Real>>& pairs, const Tensor<Real>& t,
                               const Tensor<Real>& r, const LossWeights& weights,
                               const PerceptualExtractor<Real>& extractor);

}  // namespace rdnet
