#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rdnet/tensor.hpp"

namespace rdnet {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) after clamping both inputs to [0, 1]; 99 dB when equal.
template <typename Real>
double psnr(const Tensor<Real>& a, const Tensor<Real>& b);

// Mean SSIM on luma (0.299 R + 0.587 G + 0.114 B) with an 11x11 Gaussian
// window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1, over valid window
// positions. Accepts 3 x H x W, B x 3 x H x W, or single-channel inputs.
template <typename Real>
double ssim(const Tensor<Real>& a, const Tensor<Real>& b);

struct MetricsRow {
  std::string sample_id;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline constexpr const char* kMetricsHeader = "sample_id,psnr,ssim";

// Header, one row per sample, then a "mean" row.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

}  // namespace rdnet
