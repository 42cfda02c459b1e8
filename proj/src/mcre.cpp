#include "rdnet/mcre.hpp"

#include <cmath>
#include <string>

#include "rdnet/error.hpp"
#include "rdnet/ops.hpp"
#include "rdnet/tapg.hpp"

namespace rdnet {

void McreConfig::validate() const {
  if (num_columns < 1) throw ConfigError("num_columns must be >= 1");
  if (num_levels < 2) throw ConfigError("num_levels must be >= 2");
  if (base_channels < 4 || base_channels % 4 != 0) {
    throw ConfigError("base_channels must be a positive multiple of 4");
  }
  if (channel_multiplier < 1) throw ConfigError("channel_multiplier must be >= 1");
  if (!(gamma_min > 0.0)) throw ConfigError("gamma_min must be positive");
}

std::int64_t McreConfig::channels(int level) const {
  std::int64_t c = base_channels;
  for (int j = 0; j < level; ++j) c *= channel_multiplier;
  return c;
}

template <typename Real>
Tensor<Real> level_fusion(const Tensor<Real>& below, const Tensor<Real>& above,
                          const LevelParams<Real>& params) {
  if (above.defined() != params.has_delta()) {
    throw ShapeError(params.has_delta()
                         ? "level_forward: non-end level needs the upper feature of the previous column"
                         : "level_forward: end level takes no upper feature");
  }
  auto fused = params.theta(below);
  if (above.defined()) {
    auto up = pixel_shuffle(params.delta(above), 2);
    if (up.shape() != fused.shape()) {
      throw ShapeError("level_forward: upsampled upper feature " + to_string(up.shape()) +
                       " does not match downsampled lower feature " + to_string(fused.shape()));
    }
    fused = add(fused, up);
  }
  return params.omega_out(swish(params.omega_in(fused)));
}

template <typename Real>
Tensor<Real> level_forward(const Tensor<Real>& prev_column, const Tensor<Real>& below,
                           const Tensor<Real>& above, const LevelParams<Real>& params) {
  auto fused = level_fusion(below, above, params);
  if (fused.shape() != prev_column.shape()) {
    throw ShapeError("level_forward: fused feature " + to_string(fused.shape()) +
                     " does not match previous-column feature " + to_string(prev_column.shape()));
  }
  return add(fused, scale_channels(prev_column, params.gamma));
}

template <typename Real>
Tensor<Real> level_reverse(const Tensor<Real>& out, const Tensor<Real>& below,
                           const Tensor<Real>& above, const LevelParams<Real>& params,
                           double gamma_min) {
  for (std::int64_t c = 0; c < params.gamma.numel(); ++c) {
    if (!(std::abs(static_cast<double>(params.gamma[c])) >= gamma_min)) {
      throw InvertibilityError("channel scale " + std::to_string(c) + " has magnitude " +
                               std::to_string(std::abs(static_cast<double>(params.gamma[c]))) +
                               " below gamma_min " + std::to_string(gamma_min));
    }
  }
  auto fused = level_fusion(below, above, params);
  if (fused.shape() != out.shape()) {
    throw ShapeError("level_reverse: fused feature " + to_string(fused.shape()) +
                     " does not match output feature " + to_string(out.shape()));
  }
  return divide_channels(sub(out, fused), params.gamma);
}

template <typename Real>
Mcre<Real>::Mcre(const McreConfig& config, ParameterStore<Real>& store) : config_(config) {
  config_.validate();
  const int levels = config_.num_levels;
  embed_ = Conv2d<Real>::create(store, "mcre/embed", 3, config_.base_channels, 7, 2, 3);
  for (int j = 0; j < levels; ++j) {
    const std::int64_t in = j == 0 ? 3 : config_.channels(j - 1);
    phe_.push_back(Conv2d<Real>::create(store, "mcre/phe/level" + std::to_string(j), in,
                                        config_.channels(j), 3, 2, 1));
  }
  for (int i = 1; i <= config_.num_columns; ++i) {
    std::vector<LevelParams<Real>> column;
    for (int j = 0; j < levels; ++j) {
      const std::string prefix = "mcre/col" + std::to_string(i) + "/level" + std::to_string(j);
      const std::int64_t c = config_.channels(j);
      LevelParams<Real> p;
      // Level 0 shares the embedding's resolution and width, so its lower
      // input is mapped without striding.
      const std::int64_t below = j == 0 ? config_.base_channels : config_.channels(j - 1);
      p.theta = Conv2d<Real>::create(store, prefix + "/theta", below, c, 3, j == 0 ? 1 : 2, 1);
      if (j + 1 < levels) {
        p.delta = Conv2d<Real>::create(store, prefix + "/delta", config_.channels(j + 1), 4 * c, 1, 1, 0);
      }
      p.omega_in = Conv2d<Real>::create(store, prefix + "/omega/conv1", c, c, 3, 1, 1);
      p.omega_out = Conv2d<Real>::create(store, prefix + "/omega/conv2", c, c, 3, 1, 1);
      p.gamma = store.create_constant(prefix + "/gamma/scale", {c}, 1.0);
      column.push_back(std::move(p));
    }
    columns_.push_back(std::move(column));
  }
}

template <typename Real>
void Mcre<Real>::check_image(const Tensor<Real>& image) const {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("encoder input must be B x 3 x H x W, got " + to_string(image.shape()));
  }
  const auto div = config_.spatial_divisor();
  if (image.dim(2) % div != 0 || image.dim(3) % div != 0) {
    throw ShapeError("image spatial size " + std::to_string(image.dim(2)) + "x" +
                     std::to_string(image.dim(3)) + " must be divisible by " + std::to_string(div) +
                     " (2^num_levels)");
  }
}

template <typename Real>
void Mcre<Real>::check_pyramid(const PyramidState<Real>& pyramid, std::int64_t batch,
                               std::int64_t height, std::int64_t width) const {
  if (pyramid.size() != static_cast<std::size_t>(config_.num_levels)) {
    throw ShapeError("pyramid has " + std::to_string(pyramid.size()) + " levels, expected " +
                     std::to_string(config_.num_levels));
  }
  for (int j = 0; j < config_.num_levels; ++j) {
    const Shape expected{batch, config_.channels(j), height >> (j + 1), width >> (j + 1)};
    if (pyramid[j].shape() != expected) {
      throw ShapeError("pyramid level " + std::to_string(j) + " has shape " +
                       to_string(pyramid[j].shape()) + ", schedule requires " + to_string(expected));
    }
  }
}

template <typename Real>
Tensor<Real> Mcre<Real>::column_embed(const Tensor<Real>& image) const {
  check_image(image);
  return embed_(image);
}

template <typename Real>
PyramidState<Real> Mcre<Real>::phe_extract(const Tensor<Real>& image) const {
  check_image(image);
  PyramidState<Real> out;
  Tensor<Real> x = image;
  for (const auto& conv : phe_) {
    x = swish(conv(x));
    out.features.push_back(x);
  }
  return out;
}

template <typename Real>
const LevelParams<Real>& Mcre<Real>::level(int column, int j) const {
  if (column < 1 || column > config_.num_columns || j < 0 || j >= config_.num_levels) {
    throw ValueError("no encoder cell (column " + std::to_string(column) + ", level " +
                     std::to_string(j) + ")");
  }
  return columns_[static_cast<std::size_t>(column - 1)][static_cast<std::size_t>(j)];
}

template <typename Real>
LevelParams<Real>& Mcre<Real>::level(int column, int j) {
  return const_cast<LevelParams<Real>&>(std::as_const(*this).level(column, j));
}

template <typename Real>
PyramidState<Real> Mcre<Real>::column_forward(int column, const Tensor<Real>& embedding,
                                              const PyramidState<Real>& previous) const {
  const int levels = config_.num_levels;
  if (previous.size() != static_cast<std::size_t>(levels)) {
    throw ShapeError("column_forward: previous pyramid has " + std::to_string(previous.size()) +
                     " levels, expected " + std::to_string(levels));
  }
  PyramidState<Real> out;
  for (int j = 0; j < levels; ++j) {
    const auto& below = j == 0 ? embedding : out.features[static_cast<std::size_t>(j - 1)];
    const Tensor<Real> above = j + 1 < levels ? previous[static_cast<std::size_t>(j + 1)] : Tensor<Real>();
    out.features.push_back(level_forward(previous[static_cast<std::size_t>(j)], below, above, level(column, j)));
  }
  return out;
}

template <typename Real>
PyramidState<Real> Mcre<Real>::reconstruct_column(int column, const PyramidState<Real>& current,
                                                  const Tensor<Real>& embedding) const {
  const int levels = config_.num_levels;
  if (current.size() != static_cast<std::size_t>(levels)) {
    throw ShapeError("reconstruct_column: pyramid has " + std::to_string(current.size()) +
                     " levels, expected " + std::to_string(levels));
  }
  PyramidState<Real> prev;
  prev.features.resize(static_cast<std::size_t>(levels));
  for (int j = levels - 1; j >= 0; --j) {
    const auto& below = j == 0 ? embedding : current[static_cast<std::size_t>(j - 1)];
    const Tensor<Real> above = j + 1 < levels ? prev.features[static_cast<std::size_t>(j + 1)] : Tensor<Real>();
    prev.features[static_cast<std::size_t>(j)] =
        level_reverse(current[static_cast<std::size_t>(j)], below, above, level(column, j), config_.gamma_min);
  }
  return prev;
}

template <typename Real>
std::vector<PyramidState<Real>> Mcre<Real>::encode_from(const Tensor<Real>& embedding,
                                                        const PyramidState<Real>& phe) const {
  std::vector<PyramidState<Real>> out;
  const PyramidState<Real>* previous = &phe;
  for (int i = 1; i <= config_.num_columns; ++i) {
    out.push_back(column_forward(i, embedding, *previous));
    previous = &out.back();
  }
  return out;
}

template <typename Real>
std::vector<PyramidState<Real>> Mcre<Real>::encode(const Tensor<Real>& image,
                                                   const Tensor<Real>& prompt) const {
  auto embedding = column_embed(image);
  if (prompt.defined()) embedding = modulate(embedding, prompt);
  return encode_from(embedding, phe_extract(image));
}

template <typename Real>
void project_gammas(ParameterStore<Real>& store, double gamma_min) {
  const Real floor = static_cast<Real>(gamma_min);
  for (auto& p : store.all()) {
    if (!p.name.ends_with("/gamma/scale")) continue;
    for (auto& v : p.tensor.mutable_data()) {
      if (std::abs(v) < floor) v = v < 0 ? -floor : floor;
    }
  }
}

template <typename Real>
void make_encoder_identity(ParameterStore<Real>& store) {
  for (auto& p : store.all()) {
    if (!p.name.starts_with("mcre/col")) continue;
    if (p.name.find("/omega/") != std::string::npos) fill(p.tensor, Real(0));
    if (p.name.ends_with("/gamma/scale")) fill(p.tensor, Real(1));
  }
}

#define RDNET_INSTANTIATE_MCRE(Real)                                                              \
  template class Mcre<Real>;                                                                      \
  template Tensor<Real> level_fusion(const Tensor<Real>&, const Tensor<Real>&,                    \
                                     const LevelParams<Real>&);                                   \
  template Tensor<Real> level_forward(const Tensor<Real>&, const Tensor<Real>&,                   \
                                      const Tensor<Real>&, const LevelParams<Real>&);             \
  template Tensor<Real> level_reverse(const Tensor<Real>&, const Tensor<Real>&,                   \
                                      const Tensor<Real>&, const LevelParams<Real>&, double);     \
  template void project_gammas(ParameterStore<Real>&, double);                                    \
  template void make_encoder_identity(ParameterStore<Real>&);

RDNET_INSTANTIATE_MCRE(float)
RDNET_INSTANTIATE_MCRE(double)

}  // namespace rdnet
