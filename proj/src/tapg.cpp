#include "rdnet/tapg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rdnet/error.hpp"
#include "rdnet/ops.hpp"

namespace rdnet {

std::array<double, 6> TransmissionRate::to_array() const {
  return {alpha[0], alpha[1], alpha[2], beta[0], beta[1], beta[2]};
}

TransmissionRate TransmissionRate::from_array(const std::array<double, 6>& v) {
  return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}

bool TransmissionRate::finite() const {
  for (double v : to_array()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename Real>
TransmissionRate closed_form_fit(const Tensor<Real>& transmission, const Tensor<Real>& mixture) {
  if (transmission.shape() != mixture.shape()) {
    throw ShapeError("closed_form_fit: shape mismatch " + to_string(transmission.shape()) + " vs " +
                     to_string(mixture.shape()));
  }
  const auto& s = transmission.shape();
  const bool batched = s.size() == 4;
  if (!(s.size() == 3 || batched) || s[batched ? 1 : 0] != 3) {
    throw ShapeError("closed_form_fit: expected 3 x H x W or B x 3 x H x W, got " + to_string(s));
  }
  const std::int64_t batch = batched ? s[0] : 1;
  const std::int64_t hw = s[s.size() - 1] * s[s.size() - 2];
  const double n = static_cast<double>(batch * hw);
  static constexpr const char* kNames[3] = {"R", "G", "B"};
  TransmissionRate rate;
  for (int c = 0; c < 3; ++c) {
    auto for_each = [&](auto&& fn) {
      for (std::int64_t b = 0; b < batch; ++b) {
        const std::int64_t base = (b * 3 + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          fn(static_cast<double>(transmission[base + i]), static_cast<double>(mixture[base + i]));
        }
      }
    };
    double mt = 0, mi = 0;
    for_each([&](double t, double x) {
      mt += t;
      mi += x;
    });
    mt /= n;
    mi /= n;
    double var = 0, cov = 0;
    for_each([&](double t, double x) {
      var += (t - mt) * (t - mt);
      cov += (t - mt) * (x - mi);
    });
    var /= n;
    cov /= n;
    if (!(var > 1e-8)) {
      throw DegenerateFitError(std::string("closed_form_fit: channel ") + kNames[c] +
                               " of the transmission is near-constant (variance " +
                               std::to_string(var) + ")");
    }
    rate.alpha[c] = cov / var;
    rate.beta[c] = mi - rate.alpha[c] * mt;
  }
  return rate;
}

template <typename Real>
Tensor<Real> rates_to_tensor(const std::vector<TransmissionRate>& rates) {
  std::vector<Real> v;
  for (const auto& r : rates) {
    for (double x : r.to_array()) v.push_back(static_cast<Real>(x));
  }
  return Tensor<Real>::from_data({static_cast<std::int64_t>(rates.size()), 6}, std::move(v));
}

template <typename Real>
std::vector<TransmissionRate> rates_from_tensor(const Tensor<Real>& t) {
  if (t.rank() != 2 || t.dim(1) != 6) throw ShapeError("rates must be B x 6, got " + to_string(t.shape()));
  std::vector<TransmissionRate> out;
  for (std::int64_t b = 0; b < t.dim(0); ++b) {
    std::array<double, 6> a{};
    for (int k = 0; k < 6; ++k) a[k] = static_cast<double>(t[b * 6 + k]);
    out.push_back(TransmissionRate::from_array(a));
  }
  return out;
}

template <typename Real>
RateEstimator<Real>::RateEstimator(ParameterStore<Real>& store) {
  std::int64_t in = 3;
  for (std::size_t s = 0; s < kStageChannels.size(); ++s) {
    trunk_.push_back(Conv2d<Real>::create(store, "tapg/estimator/stage" + std::to_string(s), in,
                                          kStageChannels[s], 3, 2, 1));
    // He-uniform bound; with the plain fan-in bound the pooled features start
    // near zero and five epochs barely move them.
    for (auto& v : trunk_.back().weight.mutable_data()) v *= static_cast<Real>(std::sqrt(6.0));
    in = kStageChannels[s];
  }
  head_ = Linear<Real>::create(store, "tapg/estimator/head", in, 6);
}

template <typename Real>
Tensor<Real> RateEstimator<Real>::forward(const Tensor<Real>& image) const {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("rate estimator input must be B x 3 x H x W, got " + to_string(image.shape()));
  }
  Tensor<Real> x = add_scalar(image, Real(-0.5));
  for (const auto& conv : trunk_) x = swish(conv(x));
  auto out = head_(global_avg_pool(x));
  check_finite(out, "rate estimate");
  return out;
}

template <typename Real>
std::vector<TransmissionRate> RateEstimator<Real>::estimate(const Tensor<Real>& image) const {
  NoGradGuard guard;
  return rates_from_tensor(forward(image));
}

template <typename Real>
PromptGenerator<Real>::PromptGenerator(ParameterStore<Real>& store, std::int64_t channels)
    : channels_(channels) {
  fc1_ = Linear<Real>::create(store, "tapg/mlp/fc1", 6, kHidden);
  fc2_ = Linear<Real>::create(store, "tapg/mlp/fc2", kHidden, kHidden);
  fc3_ = Linear<Real>::create(store, "tapg/mlp/fc3", kHidden, channels);
  fill(fc3_.bias, Real(1));
}

template <typename Real>
Tensor<Real> PromptGenerator<Real>::forward(const Tensor<Real>& rates) const {
  if (rates.rank() != 2 || rates.dim(1) != 6) {
    throw ShapeError("prompt generator expects B x 6 rates, got " + to_string(rates.shape()));
  }
  check_finite(rates, "transmission rate");
  return fc3_(swish(fc2_(swish(fc1_(rates)))));
}

template <typename Real>
Tensor<Real> modulate(const Tensor<Real>& embedding, const Tensor<Real>& prompt) {
  if (embedding.rank() != 4) {
    throw ShapeError("modulate: embedding must be B x C x H x W, got " + to_string(embedding.shape()));
  }
  const auto c = embedding.dim(1);
  const bool per_channel = prompt.numel() == c;
  const bool per_sample = prompt.rank() == 2 && prompt.dim(0) == embedding.dim(0) && prompt.dim(1) == c;
  if (!per_channel && !per_sample) {
    throw ShapeError("modulate: prompt " + to_string(prompt.shape()) + " does not match " +
                     std::to_string(c) + " embedding channels");
  }
  return scale_channels(embedding, prompt);
}

template <typename Real>
Tensor<Real> adjust_input(const Tensor<Real>& image, const Tensor<Real>& rates) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("adjust_input: image must be B x 3 x H x W, got " + to_string(image.shape()));
  }
  if (rates.rank() != 2 || rates.dim(0) != image.dim(0) || rates.dim(1) != 6) {
    throw ShapeError("adjust_input: rates must be B x 6, got " + to_string(rates.shape()));
  }
  const std::int64_t hw = image.dim(2) * image.dim(3);
  std::vector<Real> out(image.data().begin(), image.data().end());
  for (std::int64_t b = 0; b < image.dim(0); ++b) {
    for (int c = 0; c < 3; ++c) {
      double alpha = static_cast<double>(rates[b * 6 + c]);
      const double beta = static_cast<double>(rates[b * 6 + 3 + c]);
      if (std::abs(alpha) < 1e-3) alpha = alpha < 0 ? -1e-3 : 1e-3;
      Real* p = out.data() + (b * 3 + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        p[i] = static_cast<Real>(std::clamp((static_cast<double>(p[i]) - beta) / alpha, 0.0, 1.0));
      }
    }
  }
  return Tensor<Real>::from_data(image.shape(), std::move(out));
}

#define RDNET_INSTANTIATE_TAPG(Real)                                                         \
  template TransmissionRate closed_form_fit(const Tensor<Real>&, const Tensor<Real>&);       \
  template Tensor<Real> rates_to_tensor<Real>(const std::vector<TransmissionRate>&);         \
  template std::vector<TransmissionRate> rates_from_tensor(const Tensor<Real>&);             \
  template class RateEstimator<Real>;                                                        \
  template class PromptGenerator<Real>;                                                      \
  template Tensor<Real> modulate(const Tensor<Real>&, const Tensor<Real>&);                  \
  template Tensor<Real> adjust_input(const Tensor<Real>&, const Tensor<Real>&);

RDNET_INSTANTIATE_TAPG(float)
RDNET_INSTANTIATE_TAPG(double)

}  // namespace rdnet
