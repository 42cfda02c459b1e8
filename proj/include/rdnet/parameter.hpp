#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "rdnet/named_arrays.hpp"
#include "rdnet/random.hpp"
#include "rdnet/tensor.hpp"

namespace rdnet {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> tensor;
};

// Owns every named parameter of a model, in registration order. The order
// fixes both the initialisation draws and the checkpoint layout.
template <typename Real>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = kDefaultSeed) : rng_(seed) {}

  // Uniform in [-bound, bound].
  Tensor<Real> create_uniform(const std::string& name, Shape shape, double bound,
                              bool requires_grad = true);
  Tensor<Real> create_constant(const std::string& name, Shape shape, double value,
                               bool requires_grad = true);

  std::vector<Parameter<Real>>& all() { return params_; }
  const std::vector<Parameter<Real>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  Parameter<Real>* find(std::string_view name);
  const Parameter<Real>* find(std::string_view name) const;
  Tensor<Real>& at(std::string_view name);
  std::vector<Parameter<Real>*> with_prefix(std::string_view prefix);

  void zero_grad();
  std::int64_t count_values() const;

  // Float32 snapshot of every parameter whose name starts with prefix.
  NamedArrays export_arrays(std::string_view prefix = "") const;
  void append_to(NamedArrays& out, std::string_view prefix = "") const;
  // Copies values for every matching parameter; each must be present with
  // matching extents.
  void import_arrays(const NamedArrays& in, std::string_view prefix = "");

  Rng& rng() { return rng_; }

 private:
  Tensor<Real> add(const std::string& name, Tensor<Real> tensor);

  std::vector<Parameter<Real>> params_;
  Rng rng_;
};

template <typename Real>
struct Conv2d {
  Tensor<Real> weight;
  Tensor<Real> bias;
  int stride = 1;
  int padding = 0;

  // Weight and bias drawn uniform in +-1/sqrt(in * kernel^2). Registered as
  // name + "/weight" and name + "/bias".
  static Conv2d create(ParameterStore<Real>& store, const std::string& name, std::int64_t in,
                       std::int64_t out, int kernel, int stride, int padding,
                       bool requires_grad = true);

  Tensor<Real> operator()(const Tensor<Real>& x) const;
  std::int64_t out_channels() const { return weight.dim(0); }
};

template <typename Real>
struct Linear {
  Tensor<Real> weight;
  Tensor<Real> bias;

  static Linear create(ParameterStore<Real>& store, const std::string& name, std::int64_t in,
                       std::int64_t out, bool requires_grad = true);
  Tensor<Real> operator()(const Tensor<Real>& x) const;
};

template <typename Real>
void fill(Tensor<Real>& t, Real value);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_parameter;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t step_shrinks = 0;        // stencils retried with a quarter step
  std::size_t kinked_coordinates = 0;  // still straddling abs() after every retry
};

inline constexpr int kGradCheckMaxShrinks = 4;

enum class Stencil {
  kCentral,    // (f(x+h) - f(x-h)) / 2h
  kFivePoint,  // fourth-order central difference over x +- h, x +- 2h
};

// Compares reverse-mode gradients of a scalar function with central finite
// differences on sampled coordinates of params. Per-coordinate error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). Runs in double.
// A stencil that moves any abs() input across zero is repeated with the step
// divided by 4, up to kGradCheckMaxShrinks times.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<Parameter<double>*>& params, double eps = 1e-3,
                           std::size_t samples_per_param = 4, std::uint64_t seed = kDefaultSeed,
                           Stencil stencil = Stencil::kCentral);

}  // namespace rdnet
