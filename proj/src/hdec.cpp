#include "rdnet/hdec.hpp"

#include <string>

#include "rdnet/error.hpp"
#include "rdnet/ops.hpp"

namespace rdnet {

template <typename Real>
Tensor<Real> level_decode(const Tensor<Real>& upper, const Tensor<Real>& lower,
                          const Conv2d<Real>& up_conv) {
  auto up = pixel_shuffle(up_conv(upper), 2);
  if (up.shape() != lower.shape()) {
    throw ShapeError("level_decode: upsampled feature " + to_string(up.shape()) +
                     " does not match lower feature " + to_string(lower.shape()));
  }
  return add(mul(lower, sigmoid(up)), up);
}

template <typename Real>
HierarchyDecoder<Real>::HierarchyDecoder(const McreConfig& config, int column,
                                         ParameterStore<Real>& store)
    : levels_(config.num_levels) {
  const std::string prefix = "hdec/col" + std::to_string(column);
  for (int j = 0; j + 1 < levels_; ++j) {
    up_.push_back(Conv2d<Real>::create(store, prefix + "/ld" + std::to_string(j) + "/conv",
                                       config.channels(j + 1), 4 * config.channels(j), 1, 1, 0));
  }
  head_ = Conv2d<Real>::create(store, prefix + "/head", config.channels(0), 4 * 6, 1, 1, 0);
}

template <typename Real>
LayerPair<Real> HierarchyDecoder<Real>::decode(const PyramidState<Real>& pyramid,
                                               const Tensor<Real>& image) const {
  if (pyramid.size() != static_cast<std::size_t>(levels_)) {
    throw ShapeError("decode: pyramid has " + std::to_string(pyramid.size()) + " levels, expected " +
                     std::to_string(levels_));
  }
  Tensor<Real> x = pyramid[static_cast<std::size_t>(levels_ - 1)];
  for (int j = levels_ - 2; j >= 0; --j) {
    x = level_decode(x, pyramid[static_cast<std::size_t>(j)], up_[static_cast<std::size_t>(j)]);
  }
  auto residuals = pixel_shuffle(head_(x), 2);
  if (residuals.dim(0) != image.dim(0) || residuals.dim(2) != image.dim(2) ||
      residuals.dim(3) != image.dim(3) || image.dim(1) != 3) {
    throw ShapeError("decode: residuals " + to_string(residuals.shape()) +
                     " do not match input image " + to_string(image.shape()));
  }
  LayerPair<Real> pair;
  pair.transmission_residual = slice_channels(residuals, 0, 3);
  pair.reflection_residual = slice_channels(residuals, 3, 6);
  pair.transmission = add(image, pair.transmission_residual);
  pair.reflection = add(image, pair.reflection_residual);
  return pair;
}

template <typename Real>
void make_decoders_identity(ParameterStore<Real>& store) {
  for (auto& p : store.all()) {
    if (p.name.starts_with("hdec/")) fill(p.tensor, Real(0));
  }
}

#define RDNET_INSTANTIATE_HDEC(Real)                                                          \
  template Tensor<Real> level_decode(const Tensor<Real>&, const Tensor<Real>&,                \
                                     const Conv2d<Real>&);                                    \
  template class HierarchyDecoder<Real>;                                                      \
  template void make_decoders_identity(ParameterStore<Real>&);

RDNET_INSTANTIATE_HDEC(float)
RDNET_INSTANTIATE_HDEC(double)

}  // namespace rdnet
