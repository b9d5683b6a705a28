#include "dernn/metrics.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace dernn {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InvalidShape(std::string(what) + ": shapes differ " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
  }
}

using Plane = Eigen::ArrayXXd;

// 'valid' separable filtering: rows then columns.
Plane filter_valid(const Plane& p, const Eigen::VectorXd& k) {
  const Index n = k.size();
  const Index h = p.rows() - n + 1, w = p.cols() - n + 1;
  Plane tmp = Plane::Zero(p.rows(), w);
  for (Index j = 0; j < n; ++j) tmp += k[j] * p.middleCols(j, w);
  Plane out = Plane::Zero(h, w);
  for (Index i = 0; i < n; ++i) out += k[i] * tmp.middleRows(i, h);
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same(a, b, "psnr");
  if (!(peak > 0.0)) throw InvalidParameter("psnr: peak must be positive");
  if (a.size() == 0) throw InvalidShape("psnr: empty input");
  const double mse = (a.vec() - b.vec()).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

Eigen::VectorXd gaussian_window(int length, double sigma) {
  if (length < 1 || length % 2 == 0) throw InvalidParameter("gaussian window length must be odd");
  Eigen::VectorXd k(length);
  const double c = (length - 1) / 2.0;
  for (int i = 0; i < length; ++i) k[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
  return k / k.sum();
}

double ssim_plane(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  require_same(a, b, "ssim");
  require_rank(a.shape(), 2, "ssim plane");
  const Index h = a.dim(0), w = a.dim(1);
  if (h < opt.window || w < opt.window) {
    throw InvalidShape("ssim: image " + shape_string(a.shape()) + " smaller than the " + std::to_string(opt.window) +
                       "-pixel window");
  }
  const Eigen::VectorXd k = gaussian_window(opt.window, opt.sigma);
  Plane pa = Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.data(), h, w);
  Plane pb = Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(b.data(), h, w);
  const double c1 = std::pow(opt.k1 * opt.data_range, 2);
  const double c2 = std::pow(opt.k2 * opt.data_range, 2);
  const Plane mu_a = filter_valid(pa, k);
  const Plane mu_b = filter_valid(pb, k);
  const Plane saa = filter_valid(pa * pa, k) - mu_a * mu_a;
  const Plane sbb = filter_valid(pb * pb, k) - mu_b * mu_b;
  const Plane sab = filter_valid(pa * pb, k) - mu_a * mu_b;
  const Plane map = ((2.0 * mu_a * mu_b + c1) * (2.0 * sab + c2)) /
                    ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2));
  return map.mean();
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  require_same(a, b, "ssim");
  require_rank(a.shape(), 3, "ssim cube");
  const Index h = a.dim(0), w = a.dim(1), bands = a.dim(2);
  double total = 0.0;
  for (Index n = 0; n < bands; ++n) {
    Tensor pa({h, w}), pb({h, w});
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        pa(r, c) = a(r, c, n);
        pb(r, c) = b(r, c, n);
      }
    }
    total += ssim_plane(pa, pb, opt);
  }
  return total / static_cast<double>(bands);
}

SamResult sam(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sam");
  require_rank(a.shape(), 3, "sam cube");
  const Index bands = a.dim(2);
  const Index pixels = a.dim(0) * a.dim(1);
  SamResult r;
  double total = 0.0;
  for (Index p = 0; p < pixels; ++p) {
    auto sa = a.vec().segment(p * bands, bands);
    auto sb = b.vec().segment(p * bands, bands);
    const double na = sa.norm(), nb = sb.norm();
    if (na == 0.0 || nb == 0.0) {
      ++r.skipped;
      continue;
    }
    const double cosv = std::clamp(sa.dot(sb) / (na * nb), -1.0, 1.0);
    total += std::acos(cosv);
  }
  const Index counted = pixels - r.skipped;
  if (counted == 0) throw NumericalError("sam: every pixel has a zero spectrum");
  r.degrees = total / static_cast<double>(counted) * 180.0 / std::numbers::pi;
  return r;
}

double charbonnier(const Tensor& a, const Tensor& b, double eps) {
  require_same(a, b, "charbonnier");
  if (!(eps > 0.0)) throw InvalidParameter("charbonnier: eps must be positive");
  if (a.size() == 0) throw InvalidShape("charbonnier: empty input");
  return ((a.vec() - b.vec()).array().square() + eps * eps).sqrt().mean();
}

}  // namespace dernn
