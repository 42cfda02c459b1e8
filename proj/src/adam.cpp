#include "rdnet/adam.hpp"

#include <cmath>
#include <string>

#include "rdnet/error.hpp"

namespace rdnet {

template <typename Real>
Adam<Real>::Adam(std::vector<Parameter<Real>*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate >= 0) || !(config_.beta1 >= 0 && config_.beta1 < 1) ||
      !(config_.beta2 >= 0 && config_.beta2 < 1) || !(config_.eps > 0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  for (auto* p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p->tensor.numel()), Real(0));
    v_.emplace_back(static_cast<std::size_t>(p->tensor.numel()), Real(0));
  }
}

template <typename Real>
void Adam<Real>::step() {
  for (auto* p : params_) {
    if (!p->tensor.has_grad()) throw ValueError("parameter '" + p->name + "' has no gradient");
  }
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto data = params_[k]->tensor.mutable_data();
    const auto grad = params_[k]->tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = static_cast<Real>(config_.beta1 * m[i] + (1 - config_.beta1) * g);
      v[i] = static_cast<Real>(config_.beta2 * v[i] + (1 - config_.beta2) * g * g);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      data[i] = static_cast<Real>(data[i] - config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

template <typename Real>
void Adam<Real>::append_state(NamedArrays& out) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    std::vector<std::uint32_t> extents;
    for (auto e : params_[k]->tensor.shape()) extents.push_back(static_cast<std::uint32_t>(e));
    out.add("adam/m/" + params_[k]->name, extents, std::vector<float>(m_[k].begin(), m_[k].end()));
    out.add("adam/v/" + params_[k]->name, extents, std::vector<float>(v_[k].begin(), v_[k].end()));
  }
}

template <typename Real>
void Adam<Real>::load_state(const NamedArrays& in, std::int64_t step) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (auto [prefix, dst] : {std::pair{"adam/m/", &m_[k]}, std::pair{"adam/v/", &v_[k]}}) {
      const auto& e = in.at(prefix + params_[k]->name);
      if (e.values.size() != dst->size()) {
        throw FormatError("optimizer state '" + e.name + "' has " + std::to_string(e.values.size()) +
                          " values, expected " + std::to_string(dst->size()));
      }
      dst->assign(e.values.begin(), e.values.end());
    }
  }
  step_ = step;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace rdnet
