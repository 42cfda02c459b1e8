#include "rdnet/losses.hpp"

#include <string>

#include "rdnet/error.hpp"
#include "rdnet/ops.hpp"

namespace rdnet {

void LossWeights::validate() const {
  if (c0 < 0 || c1 < 0 || c2 < 0 || perceptual < 0) {
    throw ConfigError("loss coefficients must be non-negative");
  }
  for (double w : layer) {
    if (w < 0) throw ConfigError("perceptual layer weights must be non-negative");
  }
}

template <typename Real>
PerceptualExtractor<Real>::PerceptualExtractor(std::uint64_t seed) : store_(seed) {
  std::int64_t in = 3;
  for (std::size_t s = 0; s < kStageChannels.size(); ++s) {
    stages_.push_back(Conv2d<Real>::create(store_, "perceptual/stage" + std::to_string(s), in,
                                           kStageChannels[s], 3, 2, 1, /*requires_grad=*/false));
    in = kStageChannels[s];
  }
}

template <typename Real>
std::vector<Tensor<Real>> PerceptualExtractor<Real>::features(const Tensor<Real>& image) const {
  std::vector<Tensor<Real>> out;
  Tensor<Real> x = image;
  for (const auto& conv : stages_) {
    x = swish(conv(x));
    out.push_back(x);
  }
  return out;
}

namespace {

template <typename Real>
void require_same(const Tensor<Real>& a, const Tensor<Real>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace

template <typename Real>
Tensor<Real> content_loss(const Tensor<Real>& t_hat, const Tensor<Real>& t, const Tensor<Real>& r_hat,
                          const Tensor<Real>& r, const LossWeights& weights) {
  require_same(t_hat, t, "content_loss (transmission)");
  require_same(r_hat, r, "content_loss (reflection)");
  auto loss = scale(mean(square(sub(t_hat, t))), static_cast<Real>(weights.c0));
  if (weights.c1 != 0.0) {
    loss = add(loss, scale(mean(square(sub(r_hat, r))), static_cast<Real>(weights.c1)));
  }
  if (weights.c2 != 0.0) {
    auto [gx_hat, gy_hat] = image_gradient(t_hat);
    auto [gx, gy] = image_gradient(t);
    auto l1 = scale(add(mean(abs(sub(gx_hat, gx))), mean(abs(sub(gy_hat, gy)))), Real(0.5));
    loss = add(loss, scale(l1, static_cast<Real>(weights.c2)));
  }
  return loss;
}

template <typename Real>
Tensor<Real> perceptual_loss(const Tensor<Real>& t_hat, const Tensor<Real>& t,
                             const PerceptualExtractor<Real>& extractor, const LossWeights& weights) {
  require_same(t_hat, t, "perceptual_loss");
  const auto a = extractor.features(t_hat);
  const auto b = extractor.features(t);
  Tensor<Real> loss;
  for (std::size_t j = 0; j < a.size(); ++j) {
    auto term = scale(mean(abs(sub(a[j], b[j]))), static_cast<Real>(weights.layer[j]));
    loss = loss.defined() ? add(loss, term) : term;
  }
  return loss;
}

template <typename Real>
Tensor<Real> total_loss(const LayerPair<Real>& pair, const Tensor<Real>& t, const Tensor<Real>& r,
                        const LossWeights& weights, const PerceptualExtractor<Real>& extractor) {
  auto loss = content_loss(pair.transmission, t, pair.reflection, r, weights);
  if (weights.perceptual != 0.0) {
    loss = add(loss, scale(perceptual_loss(pair.transmission, t, extractor, weights),
                           static_cast<Real>(weights.perceptual)));
  }
  return loss;
}

template <typename Real>
Tensor<Real> multi_column_loss(const std::vector<LayerPair<Real>>& pairs, const Tensor<Real>& t,
                               const Tensor<Real>& r, const LossWeights& weights,
                               const PerceptualExtractor<Real>& extractor) {
  if (pairs.empty()) throw ValueError("multi_column_loss: no column outputs");
  Tensor<Real> loss;
  for (const auto& pair : pairs) {
    auto term = total_loss(pair, t, r, weights, extractor);
    loss = loss.defined() ? add(loss, term) : term;
  }
  return scale(loss, Real(1) / static_cast<Real>(pairs.size()));
}

#define RDNET_INSTANTIATE_LOSSES(Real)                                                         \
  template class PerceptualExtractor<Real>;                                                    \
  template Tensor<Real> content_loss(const Tensor<Real>&, const Tensor<Real>&,                 \
                                     const Tensor<Real>&, const Tensor<Real>&,                 \
                                     const LossWeights&);                                      \
  template Tensor<Real> perceptual_loss(const Tensor<Real>&, const Tensor<Real>&,              \
                                        const PerceptualExtractor<Real>&, const LossWeights&); \
  template Tensor<Real> total_loss(const LayerPair<Real>&, const Tensor<Real>&,                \
                                   const Tensor<Real>&, const LossWeights&,                    \
                                   const PerceptualExtractor<Real>&);                          \
  template Tensor<Real> multi_column_loss(const std::vector<LayerPair<Real>>&,                 \
                                          const Tensor<Real>&, const Tensor<Real>&,            \
                                          const LossWeights&, const PerceptualExtractor<Real>&);

RDNET_INSTANTIATE_LOSSES(float)
RDNET_INSTANTIATE_LOSSES(double)

}  // namespace rdnet
