#include "rdnet/parameter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rdnet/error.hpp"
#include "rdnet/ops.hpp"

namespace rdnet {

template <typename Real>
Tensor<Real> ParameterStore<Real>::add(const std::string& name, Tensor<Real> tensor) {
  if (find(name)) throw ValueError("duplicate parameter name '" + name + "'");
  params_.push_back({name, tensor});
  return tensor;
}

template <typename Real>
Tensor<Real> ParameterStore<Real>::create_uniform(const std::string& name, Shape shape,
                                                  double bound, bool requires_grad) {
  std::vector<Real> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<Real>(rng_.uniform(-bound, bound));
  return add(name, Tensor<Real>::from_data(std::move(shape), std::move(values), requires_grad));
}

template <typename Real>
Tensor<Real> ParameterStore<Real>::create_constant(const std::string& name, Shape shape,
                                                   double value, bool requires_grad) {
  return add(name, Tensor<Real>::full(std::move(shape), static_cast<Real>(value), requires_grad));
}

template <typename Real>
Parameter<Real>* ParameterStore<Real>::find(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename Real>
const Parameter<Real>* ParameterStore<Real>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename Real>
Tensor<Real>& ParameterStore<Real>::at(std::string_view name) {
  auto* p = find(name);
  if (!p) throw ValueError("unknown parameter '" + std::string(name) + "'");
  return p->tensor;
}

template <typename Real>
std::vector<Parameter<Real>*> ParameterStore<Real>::with_prefix(std::string_view prefix) {
  std::vector<Parameter<Real>*> out;
  for (auto& p : params_) {
    if (p.name.starts_with(prefix)) out.push_back(&p);
  }
  return out;
}

template <typename Real>
void ParameterStore<Real>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename Real>
std::int64_t ParameterStore<Real>::count_values() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename Real>
void ParameterStore<Real>::append_to(NamedArrays& out, std::string_view prefix) const {
  for (const auto& p : params_) {
    if (!p.name.starts_with(prefix)) continue;
    std::vector<std::uint32_t> extents(p.tensor.shape().begin(), p.tensor.shape().end());
    std::vector<float> values(p.tensor.data().begin(), p.tensor.data().end());
    out.add(p.name, std::move(extents), std::move(values));
  }
}

template <typename Real>
NamedArrays ParameterStore<Real>::export_arrays(std::string_view prefix) const {
  NamedArrays out;
  append_to(out, prefix);
  return out;
}

template <typename Real>
void ParameterStore<Real>::import_arrays(const NamedArrays& in, std::string_view prefix) {
  for (auto& p : params_) {
    if (!p.name.starts_with(prefix)) continue;
    const auto* e = in.find(p.name);
    if (!e) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    Shape shape(e->extents.begin(), e->extents.end());
    if (shape != p.tensor.shape()) {
      throw ShapeError("parameter '" + p.name + "' has shape " + to_string(p.tensor.shape()) +
                       " but checkpoint stores " + to_string(shape));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(e->values.begin(), e->values.end(), dst.begin());
  }
}

template <typename Real>
Conv2d<Real> Conv2d<Real>::create(ParameterStore<Real>& store, const std::string& name,
                                  std::int64_t in, std::int64_t out, int kernel, int stride,
                                  int padding, bool requires_grad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  Conv2d conv;
  conv.weight = store.create_uniform(name + "/weight", {out, in, kernel, kernel}, bound, requires_grad);
  conv.bias = store.create_uniform(name + "/bias", {out}, bound, requires_grad);
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

template <typename Real>
Tensor<Real> Conv2d<Real>::operator()(const Tensor<Real>& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

template <typename Real>
Linear<Real> Linear<Real>::create(ParameterStore<Real>& store, const std::string& name,
                                  std::int64_t in, std::int64_t out, bool requires_grad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear lin;
  lin.weight = store.create_uniform(name + "/weight", {out, in}, bound, requires_grad);
  lin.bias = store.create_uniform(name + "/bias", {out}, bound, requires_grad);
  return lin;
}

template <typename Real>
Tensor<Real> Linear<Real>::operator()(const Tensor<Real>& x) const {
  return linear(x, weight, bias);
}

template <typename Real>
void fill(Tensor<Real>& t, Real value) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), value);
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<Parameter<double>*>& params, double eps,
                           std::size_t samples_per_param, std::uint64_t seed, Stencil stencil) {
  if (!(eps > 0.0)) throw ValueError("grad_check: eps must be positive");
  for (auto* p : params) p->tensor.zero_grad();
  {
    const auto loss = f();
    check_finite(loss, "grad_check loss");
    backward(loss);
  }

  // Signature of the unperturbed point; a stencil whose evaluations land on
  // other abs() branches measures the kink rather than the derivative.
  std::uint64_t center_signature = 0;
  {
    NoGradGuard guard;
    auto& probe = kink_probe();
    probe = KinkProbe{true, 0};
    f();
    center_signature = probe.signature;
    probe = KinkProbe{};
  }

  Rng rng(seed);
  GradCheckReport report;
  for (auto* p : params) {
    auto& t = p->tensor;
    const auto n = static_cast<std::size_t>(t.numel());
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > samples_per_param) {
      // Partial Fisher-Yates for a distinct sample.
      for (std::size_t i = 0; i < samples_per_param; ++i) {
        std::swap(coords[i], coords[i + rng.below(n - i)]);
      }
      coords.resize(samples_per_param);
    }
    const bool has_grad = t.has_grad();
    for (std::size_t idx : coords) {
      const double analytic = has_grad ? t.grad()[idx] : 0.0;
      double numeric = 0.0;
      {
        NoGradGuard guard;
        auto data = t.mutable_data();
        const double original = data[idx];
        auto& probe = kink_probe();
        bool crossed = false;
        auto at = [&](double offset) {
          data[idx] = original + offset;
          probe = KinkProbe{true, 0};
          const double v = f().item();
          crossed = crossed || probe.signature != center_signature;
          probe = KinkProbe{};
          if (!std::isfinite(v)) {
            data[idx] = original;
            throw NonFiniteError("grad_check: non-finite loss while perturbing '" + p->name + "'");
          }
          return v;
        };
        double h = eps;
        for (int attempt = 0;; ++attempt) {
          crossed = false;
          if (stencil == Stencil::kFivePoint) {
            numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12.0 * h);
          } else {
            numeric = (at(h) - at(-h)) / (2.0 * h);
          }
          if (!crossed || attempt == kGradCheckMaxShrinks) break;
          h /= 4;
          ++report.step_shrinks;
        }
        if (crossed) ++report.kinked_coordinates;
        data[idx] = original;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++report.coordinates;
      if (err > report.max_relative_error || report.worst_index < 0) {
        report.max_relative_error = std::max(report.max_relative_error, err);
        if (err >= report.max_relative_error) {
          report.worst_parameter = p->name;
          report.worst_index = static_cast<std::int64_t>(idx);
          report.worst_analytic = analytic;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Linear<float>;
template struct Linear<double>;
template void fill<float>(Tensor<float>&, float);
template void fill<double>(Tensor<double>&, double);

}  // namespace rdnet
