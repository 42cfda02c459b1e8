#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rdnet/tensor.hpp"

// Differentiable primitives. Image-like tensors are B x C x H x W, row-major
// with width fastest. Every op records its backward when grad mode is on and
// any input requires grad.
namespace rdnet {

template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, Real factor);
template <typename Real> Tensor<Real> add_scalar(const Tensor<Real>& a, Real value);

template <typename Real> Tensor<Real> square(const Tensor<Real>& a);
// Subgradient 0 at the origin.
template <typename Real> Tensor<Real> abs(const Tensor<Real>& a);

// While armed, abs() folds the sign of every input element into signature,
// so two evaluations with equal signatures sat on the same smooth branch.
struct KinkProbe {
  bool armed = false;
  std::uint64_t signature = 0;
};
KinkProbe& kink_probe();  // per thread
template <typename Real> Tensor<Real> sigmoid(const Tensor<Real>& a);
// x * sigmoid(x)
template <typename Real> Tensor<Real> swish(const Tensor<Real>& a);
// Pass-through gradient inside [lo, hi], zero outside.
template <typename Real> Tensor<Real> clamp(const Tensor<Real>& a, Real lo, Real hi);

template <typename Real> Tensor<Real> sum(const Tensor<Real>& a);
template <typename Real> Tensor<Real> mean(const Tensor<Real>& a);
// sum(a * b) for same-shape a, b.
template <typename Real> Tensor<Real> dot(const Tensor<Real>& a, const Tensor<Real>& b);

// x: B x C x H x W. s holds C values (shape [C] or [1, C], broadcast over the
// batch) or B*C values (shape [B, C]).
template <typename Real> Tensor<Real> scale_channels(const Tensor<Real>& x, const Tensor<Real>& s);
template <typename Real> Tensor<Real> divide_channels(const Tensor<Real>& x, const Tensor<Real>& s);

// weight: C_out x C_in x K x K; bias: C_out values or undefined.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    int stride, int padding);

// Channel c maps to output channel c / r^2, sub-pixel row (c mod r^2) / r,
// sub-pixel column c mod r.
template <typename Real> Tensor<Real> pixel_shuffle(const Tensor<Real>& input, int r);
template <typename Real> Tensor<Real> pixel_unshuffle(const Tensor<Real>& input, int r);

struct Rational {
  int num = 1;
  int den = 1;
};

// Nearest-neighbour resampling; scale must be 1/2 or 2 (1/1 is the identity).
template <typename Real> Tensor<Real> resample(const Tensor<Real>& input, Rational scale);

// x: B x in; weight: out x in; bias: out values.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

// B x C x H x W -> B x C
template <typename Real> Tensor<Real> global_avg_pool(const Tensor<Real>& x);

// Channels [begin, end) of a B x C x H x W tensor.
template <typename Real>
Tensor<Real> slice_channels(const Tensor<Real>& x, std::int64_t begin, std::int64_t end);

template <typename Real> Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);

// Mirror padding (no edge repeat) on the two spatial axes.
template <typename Real>
Tensor<Real> reflect_pad(const Tensor<Real>& x, std::int64_t bottom, std::int64_t right);
template <typename Real>
Tensor<Real> crop(const Tensor<Real>& x, std::int64_t height, std::int64_t width);

// Forward differences along width (gx) and height (gy); the last column of gx
// and last row of gy are zero.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> image_gradient(const Tensor<Real>& x);

// Concatenates along axis 0. Not differentiable; meant for batching data.
template <typename Real> Tensor<Real> concat_batch(const std::vector<Tensor<Real>>& items);

// Relative L-infinity distance: max|a - b| / max(max|b|, 1e-30).
template <typename Real> double max_relative_error(const Tensor<Real>& a, const Tensor<Real>& b);

}  // namespace rdnet
