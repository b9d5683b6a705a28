#include <cmath>

#include "dernn/metrics.hpp"
#include "dernn/phantom.hpp"
#include "dernn/priors.hpp"
#include "support.hpp"

using namespace dernn;
using testing::random_tensor;

namespace {

double tv_objective(const Tensor& u, const Tensor& f, double weight) {
  double tv = 0.0;
  for (Index n = 0; n < u.dim(2); ++n) tv += total_variation(u, n);
  return 0.5 * (u.vec() - f.vec()).squaredNorm() + weight * tv;
}

// SSIM straight from the definition: a full 2D Gaussian window at every valid
// position, local statistics by direct summation.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const int r = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double wsum = 0;
  double win[11][11];
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) wsum += win[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * sigma * sigma));
  const Index h = a.dim(0), w = a.dim(1);
  double total = 0;
  int count = 0;
  for (Index y = r; y < h - r; ++y)
    for (Index x = r; x < w - r; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const double k = win[i + r][j + r] / wsum, va = a(y + i, x + j), vb = b(y + i, x + j);
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("tv leaves constants alone and preserves each band's mean") {
  const Tensor c = Tensor::constant({6, 7, 2}, 0.3);
  CHECK(max_abs_diff(tv_denoise(c, {0.5, 20}), c) < 1e-15);
  const Tensor x = random_tensor({9, 8, 3}, 1, 0, 1);
  const Tensor u = tv_denoise(x, {0.2, 20});
  for (Index n = 0; n < 3; ++n) {
    double su = 0, sx = 0;
    for (Index i = 0; i < 72; ++i) {
      su += u[i * 3 + n];
      sx += x[i * 3 + n];
    }
    CHECK(su == doctest::Approx(sx).epsilon(1e-12));
  }
  CHECK(tv_denoise(x, {0.0, 20}) == x);
  CHECK_THROWS_AS(tv_denoise(x, {-1.0, 20}), InvalidParameter);
}

TEST_CASE("tv step lowers the proximal objective and smooths") {
  const Tensor x = random_tensor({12, 12, 2}, 2, 0, 1);
  for (double weight : {0.05, 0.2, 1.0}) {
    const Tensor u = tv_denoise(x, {weight, 20});
    CHECK(tv_objective(u, x, weight) < tv_objective(x, x, weight));
    CHECK(total_variation(u, 0) < total_variation(x, 0));
    const Tensor longer = tv_denoise(x, {weight, 200});
    CHECK(tv_objective(longer, x, weight) <= tv_objective(u, x, weight) + 1e-9);
  }
}

TEST_CASE("heavy tv weight flattens each band to its mean") {
  const Tensor x = random_tensor({5, 5, 1}, 3, 0, 1);
  const Tensor u = tv_denoise(x, {100.0, 5000});
  CHECK((u.vec().array() - x.vec().mean()).abs().maxCoeff() < 1e-3);
}

TEST_CASE("psnr by hand") {
  Tensor a({2, 2, 1}), b({2, 2, 1});
  b[0] = 0.2;  // MSE 0.01
  CHECK(psnr(a, b) == doctest::Approx(20.0));
  CHECK(psnr(a, b, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)));
  CHECK(std::isinf(psnr(a, a)));
  CHECK_THROWS_AS(psnr(a, Tensor({2, 2, 2})), InvalidShape);
}

TEST_CASE("ssim matches the windowed definition") {
  const Tensor a = random_tensor({17, 14, 1}, 4, 0, 1);
  Tensor b = a;
  const Tensor noise = random_tensor({17, 14, 1}, 5, -0.1, 0.1);
  b.vec() += noise.vec();
  const Tensor pa = a.reshaped({17, 14}), pb = b.reshaped({17, 14});
  CHECK(ssim_plane(pa, pb) == doctest::Approx(ssim_oracle(pa, pb)).epsilon(1e-10));
  CHECK(ssim_plane(pa, pb) == doctest::Approx(ssim_plane(pb, pa)).epsilon(1e-14));
  CHECK(ssim(a, a) == doctest::Approx(1.0));
  CHECK(ssim(a, b) < 1.0);
  CHECK_THROWS(ssim_plane(Tensor({8, 20}), Tensor({8, 20})));
}

TEST_CASE("gaussian window is normalized and symmetric") {
  const Eigen::VectorXd g = gaussian_window(11, 1.5);
  CHECK(g.sum() == doctest::Approx(1.0));
  for (int i = 0; i < 5; ++i) CHECK(g[i] == doctest::Approx(g[10 - i]));
  CHECK(g.maxCoeff() == g[5]);
}

TEST_CASE("sam angles, scale invariance and skipped pixels") {
  Tensor a({1, 3, 2}), b({1, 3, 2});
  a(0, 0, 0) = 1;
  b(0, 0, 0) = 1;
  b(0, 0, 1) = 1;  // 45 degrees
  a(0, 1, 0) = 2;
  b(0, 1, 0) = 5;  // 0 degrees
  a(0, 2, 1) = 1;  // b zero here: skipped
  const SamResult r = sam(a, b);
  CHECK(r.skipped == 1);
  CHECK(r.degrees == doctest::Approx(22.5));
  CHECK_THROWS_AS(sam(Tensor({1, 1, 2}), Tensor({1, 1, 2})), NumericalError);
}

TEST_CASE("charbonnier by hand") {
  const Tensor a = Tensor::from_values({2}, {0.0, 0.0}), b = Tensor::from_values({2}, {0.3, -0.4});
  const double eps = 0.1;
  CHECK(charbonnier(a, b, eps) == doctest::Approx((std::sqrt(0.09 + 0.01) + std::sqrt(0.16 + 0.01)) / 2));
  CHECK(charbonnier(a, a) == doctest::Approx(1e-3));
}

TEST_CASE("phantom is seeded and in range") {
  const Tensor p = make_phantom(32, 24, 6, 1);
  CHECK(p.shape() == Shape{32, 24, 6});
  CHECK(p.vec().minCoeff() >= 0.0);
  CHECK(p.vec().maxCoeff() <= 1.0);
  CHECK(make_phantom(32, 24, 6, 1) == p);
  CHECK_FALSE(make_phantom(32, 24, 6, 2) == p);
  CHECK(p.vec().maxCoeff() - p.vec().minCoeff() > 0.3);
}
