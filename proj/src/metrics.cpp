#include "rdnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "rdnet/error.hpp"

namespace rdnet {
namespace {

struct Planes {
  std::int64_t count = 0, height = 0, width = 0;
  std::vector<double> values;  // count planes of height x width
};

template <typename Real>
Planes luma(const Tensor<Real>& t) {
  const auto& s = t.shape();
  if (s.size() != 3 && s.size() != 4) throw ShapeError("ssim: expected rank 3 or 4, got " + to_string(s));
  const std::int64_t batch = s.size() == 4 ? s[0] : 1;
  const std::int64_t channels = s[s.size() - 3];
  Planes p{batch, s[s.size() - 2], s[s.size() - 1], {}};
  const std::int64_t hw = p.height * p.width;
  p.values.resize(static_cast<std::size_t>(batch * hw));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t i = 0; i < hw; ++i) {
      double v = 0;
      if (channels == 3) {
        auto px = [&](int c) { return std::clamp(static_cast<double>(t[(b * 3 + c) * hw + i]), 0.0, 1.0); };
        v = 0.299 * px(0) + 0.587 * px(1) + 0.114 * px(2);
      } else if (channels == 1) {
        v = std::clamp(static_cast<double>(t[b * hw + i]), 0.0, 1.0);
      } else {
        throw ShapeError("ssim: expected 1 or 3 channels, got " + to_string(s));
      }
      p.values[static_cast<std::size_t>(b * hw + i)] = v;
    }
  }
  return p;
}

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const double* src, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& k) {
  const auto n = static_cast<std::int64_t>(k.size());
  const std::int64_t ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::int64_t i = 0; i < n; ++i) acc += k[i] * src[y * w + x + i];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::int64_t i = 0; i < n; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

template <typename Real>
double psnr(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.numel() == 0) throw ShapeError("psnr: empty input");
  double se = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = std::clamp(static_cast<double>(a[i]), 0.0, 1.0) -
                     std::clamp(static_cast<double>(b[i]), 0.0, 1.0);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

template <typename Real>
double ssim(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5, kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  const Planes pa = luma(a), pb = luma(b);
  if (pa.height < kWindow || pa.width < kWindow) {
    throw ShapeError("ssim: image " + to_string(a.shape()) + " smaller than the 11x11 window");
  }
  std::vector<double> k(kWindow);
  double ksum = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    k[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    ksum += k[i];
  }
  for (auto& v : k) v /= ksum;

  const std::int64_t hw = pa.height * pa.width;
  double total = 0;
  std::int64_t count = 0;
  std::vector<double> aa(static_cast<std::size_t>(hw)), bb(aa.size()), ab(aa.size());
  for (std::int64_t p = 0; p < pa.count; ++p) {
    const double* x = pa.values.data() + p * hw;
    const double* y = pb.values.data() + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      aa[i] = x[i] * x[i];
      bb[i] = y[i] * y[i];
      ab[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, pa.height, pa.width, k);
    const auto my = filter_valid(y, pa.height, pa.width, k);
    const auto sxx = filter_valid(aa.data(), pa.height, pa.width, k);
    const auto syy = filter_valid(bb.data(), pa.height, pa.width, k);
    const auto sxy = filter_valid(ab.data(), pa.height, pa.width, k);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + kC1) * (2 * cxy + kC2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  double sp = 0, ss = 0;
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9f,%.9f", r.psnr, r.ssim);
    out << r.sample_id << ',' << buf << '\n';
    sp += r.psnr;
    ss += r.ssim;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  std::snprintf(buf, sizeof buf, "%.9f,%.9f", sp / n, ss / n);
  out << "mean," << buf << '\n';
}

template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

}  // namespace rdnet
