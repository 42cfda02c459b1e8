#pragma once

#include <cstdint>
#include <vector>

#include "rdnet/hdec.hpp"
#include "rdnet/losses.hpp"
#include "rdnet/mcre.hpp"
#include "rdnet/parameter.hpp"
#include "rdnet/tapg.hpp"
#include "rdnet/tensor.hpp"

namespace rdnet {

struct ModelConfig {
  McreConfig mcre;
  bool use_prompt = true;
  bool adjust_input = false;
};

template <typename Real>
struct ForwardResult {
  Tensor<Real> rates;   // B x 6, detached estimator output
  Tensor<Real> input;   // network input (the adjusted image when adjusting)
  Tensor<Real> prompt;  // B x C, undefined without prompting
  Tensor<Real> embedding;
  PyramidState<Real> phe;
  std::vector<PyramidState<Real>> pyramids;
  std::vector<LayerPair<Real>> pairs;  // one per column; the last is the reported output
};

// Estimator, prompt generator, reversible encoder, and one decoder per
// column, all registered in one store. The estimator never receives
// gradients from the restoration losses.
template <typename Real>
class RdNet {
 public:
  RdNet(const ModelConfig& config, std::uint64_t seed = kDefaultSeed);
  RdNet(const RdNet&) = delete;
  RdNet& operator=(const RdNet&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore<Real>& parameters() { return store_; }
  const ParameterStore<Real>& parameters() const { return store_; }
  const RateEstimator<Real>& estimator() const { return estimator_; }
  const PromptGenerator<Real>& prompt_generator() const { return prompt_; }
  const Mcre<Real>& encoder() const { return mcre_; }
  const HierarchyDecoder<Real>& decoder(int column) const;

  // Full graph with every activation retained.
  ForwardResult<Real> forward(const Tensor<Real>& image) const;

  // Column-averaged total loss over the full graph. Call backward() on it.
  Tensor<Real> loss(const Tensor<Real>& image, const Tensor<Real>& transmission,
                    const Tensor<Real>& reflection, const LossWeights& weights,
                    const PerceptualExtractor<Real>& extractor) const;

  // Same loss and parameter gradients as backward(loss(...)), but only one
  // column's activations are alive at a time: earlier pyramids are rebuilt
  // from later ones by the reverse connection. Accumulates into parameter
  // grads and returns the loss value.
  double reversible_backward(const Tensor<Real>& image, const Tensor<Real>& transmission,
                             const Tensor<Real>& reflection, const LossWeights& weights,
                             const PerceptualExtractor<Real>& extractor) const;

  // Output of the final column without gradient tracking.
  LayerPair<Real> infer(const Tensor<Real>& image) const;

 private:
  struct Stem {
    Tensor<Real> rates, input, prompt, embedding;
    PyramidState<Real> phe;
  };
  Stem stem(const Tensor<Real>& image) const;

  ModelConfig config_;
  ParameterStore<Real> store_;
  RateEstimator<Real> estimator_;
  PromptGenerator<Real> prompt_;
  Mcre<Real> mcre_;
  std::vector<HierarchyDecoder<Real>> decoders_;
};

}  // namespace rdnet
