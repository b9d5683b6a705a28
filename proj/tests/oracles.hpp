#pragma once

// Reference implementations shared by the unit tests and the acceptance
// suite. Each is written from the defining formula with plain loops or a
// dense solve, independent of the library's layouts.

#include <Eigen/LU>

#include <cmath>
#include <string>
#include <vector>

#include "dernn/autograd.hpp"
#include "dernn/cassi.hpp"
#include "dernn/param_store.hpp"

namespace testing {

using namespace dernn;

// argmin ‖y − Φ s‖² + μ‖s − shift(z)‖² solved densely, mapped back to the cube.
inline Tensor dense_data_step(const Tensor& z, const Tensor& y, const SensingOp& op, double mu) {
  const Eigen::MatrixXd phi = materialize_dense(op);
  const Index n = phi.cols();
  const Eigen::MatrixXd a = phi.transpose() * phi + mu * Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd rhs = phi.transpose() * y.vec() + mu * shift_cube(z, op.step()).vec();
  return unshift_cube(Tensor(op.shifted_mask().shape(), a.fullPivLu().solve(rhs)), op.step());
}

inline Tensor qkv(const ParamStore& s, const std::string& p, const Tensor& x) {
  const Tensor a = ad::conv2d(x, s.at(p + ".pw.w"), s.at(p + ".pw.b"));
  return ad::conv2d(a, s.at(p + ".dw.w"), s.at(p + ".dw.b"), {1, 1, x.dim(2)});
}

// Attention written per output position. Local: `grid` is the window size M
// and every pixel attends within its window. Non-local: `grid` is N, each of
// the N x N windows is one token and scores sum over all of its pixels.
inline Tensor attention_oracle(const ParamStore& s, const std::string& p, const Tensor& x, Index heads, Index grid,
                               bool local) {
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2), d = c / heads;
  const Tensor q = qkv(s, p + ".q", x), k = qkv(s, p + ".k", x), v = qkv(s, p + ".v", x);
  const Tensor& pos = s.at(p + ".pos");
  Tensor out({h, w, c});
  if (local) {
    const Index m = grid;
    for (Index wy = 0; wy < h / m; ++wy)
      for (Index wx = 0; wx < w / m; ++wx)
        for (Index hd = 0; hd < heads; ++hd)
          for (Index i = 0; i < m * m; ++i) {
            const Index iy = wy * m + i / m, ix = wx * m + i % m;
            std::vector<double> logit(static_cast<std::size_t>(m * m));
            double top = -1e300;
            for (Index j = 0; j < m * m; ++j) {
              const Index jy = wy * m + j / m, jx = wx * m + j % m;
              double acc = 0;
              for (Index e = 0; e < d; ++e) acc += q(iy, ix, hd * d + e) * k(jy, jx, hd * d + e);
              logit[static_cast<std::size_t>(j)] = acc / std::sqrt(double(d)) + pos(hd, i, j);
              top = std::max(top, logit[static_cast<std::size_t>(j)]);
            }
            double z = 0;
            for (double& l : logit) z += (l = std::exp(l - top));
            for (Index j = 0; j < m * m; ++j) {
              const Index jy = wy * m + j / m, jx = wx * m + j % m;
              for (Index e = 0; e < d; ++e) out(iy, ix, hd * d + e) += logit[static_cast<std::size_t>(j)] / z * v(jy, jx, hd * d + e);
            }
          }
  } else {
    const Index n = grid, sy = h / n, sx = w / n;
    const double scale = 1.0 / std::sqrt(double(sy * sx * d));
    auto score = [&](Index hd, Index a, Index b) {
      double acc = 0;
      for (Index py = 0; py < sy; ++py)
        for (Index px = 0; px < sx; ++px)
          for (Index e = 0; e < d; ++e)
            acc += q((a / n) * sy + py, (a % n) * sx + px, hd * d + e) * k((b / n) * sy + py, (b % n) * sx + px, hd * d + e);
      return acc * scale + pos(hd, a, b);
    };
    for (Index hd = 0; hd < heads; ++hd)
      for (Index a = 0; a < n * n; ++a) {
        std::vector<double> logit(static_cast<std::size_t>(n * n));
        double top = -1e300, z = 0;
        for (Index b = 0; b < n * n; ++b) top = std::max(top, logit[static_cast<std::size_t>(b)] = score(hd, a, b));
        for (double& l : logit) z += (l = std::exp(l - top));
        for (Index b = 0; b < n * n; ++b)
          for (Index py = 0; py < sy; ++py)
            for (Index px = 0; px < sx; ++px)
              for (Index e = 0; e < d; ++e)
                out((a / n) * sy + py, (a % n) * sx + px, hd * d + e) +=
                    logit[static_cast<std::size_t>(b)] / z * v((b / n) * sy + py, (b % n) * sx + px, hd * d + e);
      }
  }
  return ad::conv2d(out, s.at(p + ".proj.w"), s.at(p + ".proj.b"));
}

}  // namespace testing
