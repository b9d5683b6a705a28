#pragma once

#include "dernn/tensor.hpp"

namespace dernn {

// 10 log10(peak² / MSE). Identical inputs give +infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Mean SSIM over the valid (fully inside) Gaussian windows of two [H, W] planes.
double ssim_plane(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});
// Mean of per-band SSIM over [H, W, C] cubes.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});

struct SamResult {
  double degrees = 0.0;  // mean spectral angle over counted pixels
  Index skipped = 0;     // pixels where either spectrum has zero norm
};

SamResult sam(const Tensor& a, const Tensor& b);

// mean(sqrt((a − b)² + eps²))
double charbonnier(const Tensor& a, const Tensor& b, double eps = 1e-3);

// Normalized 1D Gaussian of the given odd length.
Eigen::VectorXd gaussian_window(int length, double sigma);

}  // namespace dernn
