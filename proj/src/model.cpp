#include "rdnet/model.hpp"

#include <string>

#include "rdnet/error.hpp"
#include "rdnet/ops.hpp"

namespace rdnet {

template <typename Real>
RdNet<Real>::RdNet(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      store_(seed),
      estimator_(store_),
      prompt_(store_, config.mcre.base_channels),
      mcre_(config.mcre, store_) {
  for (int i = 1; i <= config_.mcre.num_columns; ++i) {
    decoders_.emplace_back(config_.mcre, i, store_);
  }
}

template <typename Real>
const HierarchyDecoder<Real>& RdNet<Real>::decoder(int column) const {
  if (column < 1 || column > config_.mcre.num_columns) {
    throw ValueError("no decoder for column " + std::to_string(column));
  }
  return decoders_[static_cast<std::size_t>(column - 1)];
}

template <typename Real>
typename RdNet<Real>::Stem RdNet<Real>::stem(const Tensor<Real>& image) const {
  mcre_.check_image(image);
  Stem s;
  {
    NoGradGuard guard;
    s.rates = estimator_.forward(image).detach();
  }
  s.input = config_.adjust_input ? adjust_input(image, s.rates) : image;
  s.embedding = mcre_.column_embed(s.input);
  if (config_.use_prompt) {
    s.prompt = prompt_.forward(s.rates);
    s.embedding = modulate(s.embedding, s.prompt);
  }
  s.phe = mcre_.phe_extract(s.input);
  return s;
}

template <typename Real>
ForwardResult<Real> RdNet<Real>::forward(const Tensor<Real>& image) const {
  auto s = stem(image);
  ForwardResult<Real> r;
  r.pyramids = mcre_.encode_from(s.embedding, s.phe);
  for (int i = 1; i <= config_.mcre.num_columns; ++i) {
    r.pairs.push_back(decoder(i).decode(r.pyramids[static_cast<std::size_t>(i - 1)], s.input));
  }
  r.rates = s.rates;
  r.input = s.input;
  r.prompt = s.prompt;
  r.embedding = s.embedding;
  r.phe = s.phe;
  return r;
}

template <typename Real>
Tensor<Real> RdNet<Real>::loss(const Tensor<Real>& image, const Tensor<Real>& transmission,
                               const Tensor<Real>& reflection, const LossWeights& weights,
                               const PerceptualExtractor<Real>& extractor) const {
  return multi_column_loss(forward(image).pairs, transmission, reflection, weights, extractor);
}

namespace {

template <typename Real>
PyramidState<Real> leaf_copy(const PyramidState<Real>& p) {
  PyramidState<Real> out;
  for (const auto& f : p.features) {
    auto leaf = f.detach();
    leaf.set_requires_grad(true);
    out.features.push_back(leaf);
  }
  return out;
}

template <typename Real>
Tensor<Real> grad_of(const Tensor<Real>& leaf) {
  if (leaf.has_grad()) {
    const auto g = leaf.grad();
    return Tensor<Real>::from_data(leaf.shape(), std::vector<Real>(g.begin(), g.end()));
  }
  return Tensor<Real>::zeros(leaf.shape());
}

template <typename Real>
void accumulate(Tensor<Real>& into, const Tensor<Real>& leaf) {
  if (!leaf.has_grad()) return;
  auto dst = into.mutable_data();
  const auto& g = leaf.grad();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
}

// Scalar whose gradient with respect to each output equals the given seed.
template <typename Real>
Tensor<Real> surrogate(const std::vector<Tensor<Real>>& outputs, const std::vector<Tensor<Real>>& seeds) {
  Tensor<Real> s;
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    if (!outputs[k].requires_grad()) continue;
    auto term = dot(outputs[k], seeds[k]);
    s = s.defined() ? add(s, term) : term;
  }
  return s;
}

}  // namespace

template <typename Real>
double RdNet<Real>::reversible_backward(const Tensor<Real>& image, const Tensor<Real>& transmission,
                                        const Tensor<Real>& reflection, const LossWeights& weights,
                                        const PerceptualExtractor<Real>& extractor) const {
  const int columns = config_.mcre.num_columns;
  const int levels = config_.mcre.num_levels;
  auto s = stem(image);
  const auto embedding = s.embedding.detach();

  PyramidState<Real> current;
  {
    NoGradGuard guard;
    current = mcre_.column_forward(1, embedding, PyramidState<Real>{[&] {
      std::vector<Tensor<Real>> v;
      for (const auto& f : s.phe.features) v.push_back(f.detach());
      return v;
    }()});
    for (int i = 2; i <= columns; ++i) current = mcre_.column_forward(i, embedding, current);
  }

  std::vector<Tensor<Real>> grad_pyramid;
  for (int j = 0; j < levels; ++j) grad_pyramid.push_back(Tensor<Real>::zeros(current[j].shape()));
  auto grad_embedding = Tensor<Real>::zeros(embedding.shape());
  const Real column_weight = Real(1) / static_cast<Real>(columns);
  double total = 0.0;

  for (int i = columns; i >= 1; --i) {
    // Loss of this column's decoder.
    auto features = leaf_copy(current);
    auto column_loss = scale(total_loss(decoder(i).decode(features, s.input), transmission, reflection,
                                        weights, extractor),
                             column_weight);
    total += static_cast<double>(column_loss.item());
    backward(column_loss);
    for (int j = 0; j < levels; ++j) accumulate(grad_pyramid[j], features.features[j]);

    // Rebuild the previous column, then push the pyramid gradient through
    // a tracked recomputation of this column.
    PyramidState<Real> previous;
    {
      NoGradGuard guard;
      previous = mcre_.reconstruct_column(i, current, embedding);
    }
    auto prev_leaf = leaf_copy(previous);
    auto emb_leaf = embedding.detach();
    emb_leaf.set_requires_grad(true);
    auto out = mcre_.column_forward(i, emb_leaf, prev_leaf);
    auto link = surrogate(out.features, grad_pyramid);
    if (link.defined()) backward(link);
    for (int j = 0; j < levels; ++j) grad_pyramid[j] = grad_of(prev_leaf.features[j]);
    accumulate(grad_embedding, emb_leaf);
    current = std::move(previous);
  }

  std::vector<Tensor<Real>> roots = s.phe.features;
  std::vector<Tensor<Real>> seeds = grad_pyramid;
  roots.push_back(s.embedding);
  seeds.push_back(grad_embedding);
  auto link = surrogate(roots, seeds);
  if (link.defined()) backward(link);
  return total;
}

template <typename Real>
LayerPair<Real> RdNet<Real>::infer(const Tensor<Real>& image) const {
  NoGradGuard guard;
  auto s = stem(image);
  auto pyramids = mcre_.encode_from(s.embedding, s.phe);
  return decoders_.back().decode(pyramids.back(), s.input);
}

template class RdNet<float>;
template class RdNet<double>;

}  // namespace rdnet
