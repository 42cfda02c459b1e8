#pragma once

#include <cstdint>
#include <vector>

#include "rdnet/parameter.hpp"
#include "rdnet/tensor.hpp"

namespace rdnet {

struct McreConfig {
  int num_columns = 4;
  int num_levels = 4;
  std::int64_t base_channels = 64;
  int channel_multiplier = 2;
  double gamma_min = 1e-3;

  void validate() const;
  // Channels at level j: base_channels * channel_multiplier^j.
  std::int64_t channels(int level) const;
  // Input images must have spatial extents divisible by this (2^num_levels).
  std::int64_t spatial_divisor() const { return std::int64_t{1} << num_levels; }
};

// Level features of one column. Level j holds channels(j) channels at
// (H / 2^(j+1), W / 2^(j+1)) relative to the input image.
template <typename Real>
struct PyramidState {
  std::vector<Tensor<Real>> features;

  std::size_t size() const { return features.size(); }
  const Tensor<Real>& operator[](std::size_t j) const { return features[j]; }
};

// Blocks of one (column, level) cell:
//   out = omega(theta(below) + delta(above)) + gamma * prev
// delta is a 1x1 conv followed by pixel_shuffle(2); it is absent at the end
// level. omega is conv3x3 -> swish -> conv3x3.
template <typename Real>
struct LevelParams {
  Conv2d<Real> theta;
  Conv2d<Real> delta;  // undefined weight at the end level
  Conv2d<Real> omega_in;
  Conv2d<Real> omega_out;
  Tensor<Real> gamma;  // one scale per channel

  bool has_delta() const { return delta.weight.defined(); }
};

template <typename Real>
Tensor<Real> level_fusion(const Tensor<Real>& below, const Tensor<Real>& above,
                          const LevelParams<Real>& params);

template <typename Real>
Tensor<Real> level_forward(const Tensor<Real>& prev_column, const Tensor<Real>& below,
                           const Tensor<Real>& above, const LevelParams<Real>& params);

// Recovers prev_column from the output of level_forward given the same
// below/above inputs. Throws InvertibilityError if any |gamma| < gamma_min.
template <typename Real>
Tensor<Real> level_reverse(const Tensor<Real>& out, const Tensor<Real>& below,
                           const Tensor<Real>& above, const LevelParams<Real>& params,
                           double gamma_min);

// Multi-column reversible encoder. Columns are numbered 1..N; "column 0" is the
// pyramid produced by the hierarchy extractor that feeds column 1.
template <typename Real>
class Mcre {
 public:
  Mcre(const McreConfig& config, ParameterStore<Real>& store);

  const McreConfig& config() const { return config_; }

  // 7x7 stride-2 conv, 3 -> C channels.
  Tensor<Real> column_embed(const Tensor<Real>& image) const;
  // Trainable strided-conv ladder standing in for a pretrained backbone.
  PyramidState<Real> phe_extract(const Tensor<Real>& image) const;

  PyramidState<Real> column_forward(int column, const Tensor<Real>& embedding,
                                    const PyramidState<Real>& previous) const;
  // Rebuilds column (column - 1) from column `column`, walking levels from
  // the end level down because level j needs level j+1 of the earlier column.
  PyramidState<Real> reconstruct_column(int column, const PyramidState<Real>& current,
                                        const Tensor<Real>& embedding) const;

  // prompt may be undefined (no modulation). Returns the N column pyramids.
  std::vector<PyramidState<Real>> encode(const Tensor<Real>& image, const Tensor<Real>& prompt) const;
  std::vector<PyramidState<Real>> encode_from(const Tensor<Real>& embedding,
                                              const PyramidState<Real>& phe) const;

  const LevelParams<Real>& level(int column, int j) const;
  LevelParams<Real>& level(int column, int j);

  void check_image(const Tensor<Real>& image) const;
  void check_pyramid(const PyramidState<Real>& pyramid, std::int64_t batch, std::int64_t height,
                     std::int64_t width) const;

 private:
  McreConfig config_;
  Conv2d<Real> embed_;
  std::vector<Conv2d<Real>> phe_;
  std::vector<std::vector<LevelParams<Real>>> columns_;  // [column-1][level]
};

// |scale| >= gamma_min for every parameter named ".../gamma/scale"; values
// inside the band move to sign * gamma_min (zero maps to +gamma_min).
template <typename Real>
void project_gammas(ParameterStore<Real>& store, double gamma_min);

// Zeroes every fusion block (omega) and sets every gamma to 1, which turns
// each column into an exact copy of its predecessor.
template <typename Real>
void make_encoder_identity(ParameterStore<Real>& store);

}  // namespace rdnet
