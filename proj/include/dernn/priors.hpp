#pragma once

#include "dernn/tensor.hpp"

namespace dernn {

struct TvOptions {
  double weight = 0.1;
  int iters = 20;
};

// Per-band isotropic TV proximal step, argmin_u ½‖u − x‖² + weight·TV(u),
// approximated by Chambolle's dual projection iterations (tau = 1/8, p0 = 0).
Tensor tv_denoise(const Tensor& x, const TvOptions& opt = {});

// Isotropic total variation of one band of a [H, W, C] cube (forward differences).
double total_variation(const Tensor& cube, Index band);

}  // namespace dernn
