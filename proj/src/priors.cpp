#include "dernn/priors.hpp"

#include <cmath>

namespace dernn {

namespace {

using Plane = Eigen::ArrayXXd;  // (row, col)

void gradient(const Plane& u, Plane& gx, Plane& gy) {
  const Index h = u.rows(), w = u.cols();
  gx.setZero(h, w);
  gy.setZero(h, w);
  if (w > 1) gx.leftCols(w - 1) = u.rightCols(w - 1) - u.leftCols(w - 1);
  if (h > 1) gy.topRows(h - 1) = u.bottomRows(h - 1) - u.topRows(h - 1);
}

// Negative adjoint of `gradient`.
Plane divergence(const Plane& px, const Plane& py) {
  const Index h = px.rows(), w = px.cols();
  Plane d = Plane::Zero(h, w);
  if (w > 1) {
    d.leftCols(w - 1) += px.leftCols(w - 1);
    d.rightCols(w - 1) -= px.leftCols(w - 1);
  }
  if (h > 1) {
    d.topRows(h - 1) += py.topRows(h - 1);
    d.bottomRows(h - 1) -= py.topRows(h - 1);
  }
  return d;
}

Plane extract(const Tensor& cube, Index band) {
  const Index h = cube.dim(0), w = cube.dim(1);
  Plane p(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) p(r, c) = cube(r, c, band);
  }
  return p;
}

}  // namespace

Tensor tv_denoise(const Tensor& x, const TvOptions& opt) {
  require_rank(x.shape(), 3, "tv_denoise input");
  if (opt.weight < 0.0) throw InvalidParameter("tv_denoise: weight must be >= 0");
  if (opt.iters < 1) throw InvalidParameter("tv_denoise: iters must be >= 1");
  if (opt.weight == 0.0) return x;

  constexpr double tau = 0.125;
  const Index h = x.dim(0), w = x.dim(1), bands = x.dim(2);
  Tensor out(x.shape());
  Plane gx, gy;
  for (Index n = 0; n < bands; ++n) {
    const Plane f = extract(x, n);
    Plane px = Plane::Zero(h, w), py = Plane::Zero(h, w);
    for (int it = 0; it < opt.iters; ++it) {
      gradient(divergence(px, py) - f / opt.weight, gx, gy);
      const Plane denom = 1.0 + tau * (gx.square() + gy.square()).sqrt();
      px = (px + tau * gx) / denom;
      py = (py + tau * gy) / denom;
    }
    const Plane u = f - opt.weight * divergence(px, py);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) out(r, c, n) = u(r, c);
    }
  }
  return out;
}

double total_variation(const Tensor& cube, Index band) {
  require_rank(cube.shape(), 3, "total_variation input");
  Plane gx, gy;
  gradient(extract(cube, band), gx, gy);
  return (gx.square() + gy.square()).sqrt().sum();
}

}  // namespace dernn
