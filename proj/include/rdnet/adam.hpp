#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "rdnet/named_arrays.hpp"
#include "rdnet/parameter.hpp"

namespace rdnet {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction and a constant learning rate. Moments are kept
// per parameter in registration order.
template <typename Real>
class Adam {
 public:
  Adam(std::vector<Parameter<Real>*> params, AdamConfig config);

  // Throws ValueError naming the first parameter without a gradient.
  void step();
  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

  // "adam/m/<name>" and "adam/v/<name>" as float32.
  void append_state(NamedArrays& out) const;
  void load_state(const NamedArrays& in, std::int64_t step);

 private:
  std::vector<Parameter<Real>*> params_;
  std::vector<std::vector<Real>> m_, v_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

}  // namespace rdnet
