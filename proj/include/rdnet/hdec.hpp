#pragma once

#include <vector>

#include "rdnet/mcre.hpp"
#include "rdnet/parameter.hpp"
#include "rdnet/tensor.hpp"

namespace rdnet {

// Decomposition of an input image. transmission == input + transmission_residual
// and reflection == input + reflection_residual, before any clamping.
template <typename Real>
struct LayerPair {
  Tensor<Real> transmission;
  Tensor<Real> reflection;
  Tensor<Real> transmission_residual;
  Tensor<Real> reflection_residual;
};

// up = pixel_shuffle(conv1x1(upper), 2); out = lower * sigmoid(up) + up
template <typename Real>
Tensor<Real> level_decode(const Tensor<Real>& upper, const Tensor<Real>& lower,
                          const Conv2d<Real>& up_conv);

// One decoder per encoder column. Folds the pyramid from the end level down
// and maps level 0 to six full-resolution residual channels (T then R).
template <typename Real>
class HierarchyDecoder {
 public:
  HierarchyDecoder(const McreConfig& config, int column, ParameterStore<Real>& store);

  LayerPair<Real> decode(const PyramidState<Real>& pyramid, const Tensor<Real>& image) const;

 private:
  std::vector<Conv2d<Real>> up_;  // up_[j] lifts level j+1 to level j
  Conv2d<Real> head_;
  int levels_;
};

// Zeroes every decoder weight and bias, giving T_hat = R_hat = input.
template <typename Real>
void make_decoders_identity(ParameterStore<Real>& store);

}  // namespace rdnet
