#include "rdnet/diagnostics.hpp"

#include <vector>

#include "rdnet/hdec.hpp"
#include "rdnet/losses.hpp"
#include "rdnet/mcre.hpp"

namespace rdnet {

template <typename Real>
void randomize_channel_scales(ParameterStore<Real>& store, Rng& rng) {
  for (auto& p : store.all()) {
    if (!p.name.ends_with("/gamma/scale")) continue;
    for (auto& v : p.tensor.mutable_data()) {
      v = static_cast<Real>((rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.5, 1.5));
    }
  }
}

template <typename Real>
Tensor<Real> checker_offset(const Tensor<Real>& x, double amplitude) {
  const auto h = x.dim(2), w = x.dim(3);
  std::vector<Real> v(x.data().begin(), x.data().end());
  for (std::size_t k = 0; k < v.size(); ++k) {
    const auto i = static_cast<std::int64_t>(k) % (h * w);
    if ((i / w + i % w) % 2) v[k] += static_cast<Real>(amplitude);
  }
  return Tensor<Real>::from_data(x.shape(), std::move(v));
}

template <typename Real>
void make_identity_degenerate(ParameterStore<Real>& store) {
  make_encoder_identity(store);
  make_decoders_identity(store);
}

GradCheckReport pipeline_grad_check(const PipelineCheckOptions& o) {
  ModelConfig cfg;
  cfg.mcre.num_columns = o.num_columns;
  cfg.mcre.num_levels = o.num_levels;
  cfg.mcre.base_channels = o.base_channels;
  RdNet<double> model(cfg, o.seed);
  Rng rng(o.seed ^ 0x6C8E9CF570932BD5ULL);
  randomize_channel_scales(model.parameters(), rng);
  const PerceptualExtractor<double> extractor;
  const Shape shape{1, 3, o.size, o.size};
  auto uniform = [&] {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = rng.uniform();
    return Tensor<double>::from_data(shape, std::move(v));
  };
  const auto image = uniform();
  const auto reflection = uniform();
  const auto target = checker_offset(model.infer(image).transmission, 2.0);
  std::vector<Parameter<double>*> params;
  for (auto& p : model.parameters().all()) {
    if (!p.name.starts_with("tapg/estimator/")) params.push_back(&p);
  }
  return grad_check([&] { return model.loss(image, target, reflection, LossWeights::stage2(), extractor); },
                    params, o.eps, o.samples_per_param, o.seed, o.stencil);
}

#define RDNET_INSTANTIATE_DIAGNOSTICS(Real)                                      \
  template void randomize_channel_scales(ParameterStore<Real>&, Rng&);          \
  template Tensor<Real> checker_offset(const Tensor<Real>&, double);             \
  template void make_identity_degenerate(ParameterStore<Real>&);

RDNET_INSTANTIATE_DIAGNOSTICS(float)
RDNET_INSTANTIATE_DIAGNOSTICS(double)

}  // namespace rdnet
