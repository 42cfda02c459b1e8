#pragma once

#include <cstdint>

#include "rdnet/model.hpp"
#include "rdnet/parameter.hpp"
#include "rdnet/random.hpp"

namespace rdnet {

// Every channel scale gets a random sign and a magnitude in [0.5, 1.5]. The
// default all-ones scales hide sign and scale bugs in reverse passes.
template <typename Real>
void randomize_channel_scales(ParameterStore<Real>& store, Rng& rng);

// x + amplitude where row + column is odd, on every plane of B x C x H x W.
template <typename Real>
Tensor<Real> checker_offset(const Tensor<Real>& x, double amplitude);

// Encoder columns become copies of their predecessor and every decoder is
// zeroed, so both predicted layers equal the input.
template <typename Real>
void make_identity_degenerate(ParameterStore<Real>& store);

struct PipelineCheckOptions {
  int num_columns = 2;
  int num_levels = 3;
  std::int64_t base_channels = 8;
  std::int64_t size = 32;
  std::uint64_t seed = kDefaultSeed;
  double eps = 1e-2;
  std::size_t samples_per_param = 2;
  Stencil stencil = Stencil::kFivePoint;
};

// Finite-difference check of the stage-2 total loss with respect to every
// trainable parameter (the frozen estimator excluded) in 64-bit mode. Targets
// sit on a +-2 checkerboard around the prediction, which keeps the pixel L1
// terms away from their kinks; deep perceptual features still pass near zero
// and rely on grad_check's step shrinking.
GradCheckReport pipeline_grad_check(const PipelineCheckOptions& options);

}  // namespace rdnet
