#include "dernn/autograd.hpp"
#include "support.hpp"

using namespace dernn;
using testing::random_tensor;

namespace {

// Scatter formulation: every input pixel pushes its contribution to the
// outputs whose receptive field contains it.
Tensor scatter_conv(const Tensor& x, const Tensor& k, const Tensor& b, Index stride, Index pad, Index groups) {
  const Index h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const Index cout = k.dim(0), ks = k.dim(1), cg = k.dim(3);
  const Index ho = (h + 2 * pad - ks) / stride + 1, wo = (w + 2 * pad - ks) / stride + 1;
  Tensor out({ho, wo, cout});
  for (Index oy = 0; oy < ho; ++oy)
    for (Index ox = 0; ox < wo; ++ox)
      for (Index o = 0; o < cout; ++o) out(oy, ox, o) = b[o];
  for (Index iy = 0; iy < h; ++iy) {
    for (Index ix = 0; ix < w; ++ix) {
      for (Index ci = 0; ci < cin; ++ci) {
        const Index grp = ci / cg;
        for (Index o = grp * (cout / groups); o < (grp + 1) * (cout / groups); ++o) {
          for (Index ky = 0; ky < ks; ++ky) {
            for (Index kx = 0; kx < ks; ++kx) {
              const Index ny = iy + pad - ky, nx = ix + pad - kx;
              if (ny < 0 || nx < 0 || ny % stride || nx % stride) continue;
              const Index oy = ny / stride, ox = nx / stride;
              if (oy >= ho || ox >= wo) continue;
              out(oy, ox, o) += k[((o * ks + ky) * ks + kx) * cg + ci % cg] * x(iy, ix, ci);
            }
          }
        }
      }
    }
  }
  return out;
}

// out[2y + a, 2x + b, o] = bias[o] + sum_c in[y, x, c] K[c, a, b, o]
Tensor naive_transpose(const Tensor& x, const Tensor& k, const Tensor& b) {
  const Index h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = k.dim(3);
  Tensor out({2 * h, 2 * w, cout});
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx)
      for (Index a = 0; a < 2; ++a)
        for (Index bb = 0; bb < 2; ++bb)
          for (Index o = 0; o < cout; ++o) {
            double acc = b[o];
            for (Index c = 0; c < cin; ++c) acc += x(y, xx, c) * k[((c * 2 + a) * 2 + bb) * cout + o];
            out(2 * y + a, 2 * xx + bb, o) = acc;
          }
  return out;
}

struct ConvCase {
  Index h, w, cin, cout, k, stride, pad, groups;
};

}  // namespace

TEST_CASE("conv2d matches the scatter oracle") {
  const ConvCase cases[] = {{5, 7, 3, 4, 3, 1, 1, 1}, {8, 8, 2, 6, 4, 2, 1, 1}, {6, 6, 6, 6, 3, 1, 1, 6},
                            {4, 5, 4, 8, 1, 1, 0, 1}, {7, 5, 4, 6, 3, 2, 0, 2}, {3, 3, 1, 1, 3, 1, 1, 1}};
  std::uint64_t seed = 100;
  for (const ConvCase& c : cases) {
    CAPTURE(c.h);
    CAPTURE(c.groups);
    const Tensor x = random_tensor({c.h, c.w, c.cin}, seed++);
    const Tensor k = random_tensor({c.cout, c.k, c.k, c.cin / c.groups}, seed++);
    const Tensor b = random_tensor({c.cout}, seed++);
    CHECK(max_abs_diff(ad::conv2d(x, k, b, {c.stride, c.pad, c.groups}), scatter_conv(x, k, b, c.stride, c.pad, c.groups)) < 1e-12);
  }
}

TEST_CASE("transposed conv doubles the extent and matches its oracle") {
  const Tensor x = random_tensor({3, 4, 5}, 1), k = random_tensor({5, 2, 2, 3}, 2), b = random_tensor({3}, 3);
  ad::Graph g;
  const Tensor got = ad::conv_transpose2x2(g.constant(x), g.constant(k), g.constant(b)).value();
  CHECK(got.shape() == Shape{6, 8, 3});
  CHECK(max_abs_diff(got, naive_transpose(x, k, b)) < 1e-12);
}

TEST_CASE("conv gradients match central differences") {
  const ConvCase cases[] = {{5, 4, 3, 2, 3, 1, 1, 1}, {6, 6, 2, 3, 4, 2, 1, 1}, {4, 4, 4, 4, 3, 1, 1, 4},
                            {4, 4, 4, 6, 1, 1, 0, 2}};
  std::uint64_t seed = 200;
  for (const ConvCase& c : cases) {
    Tensor x = random_tensor({c.h, c.w, c.cin}, seed++);
    Tensor k = random_tensor({c.cout, c.k, c.k, c.cin / c.groups}, seed++);
    Tensor b = random_tensor({c.cout}, seed++);
    const ad::Conv2dOptions opt{c.stride, c.pad, c.groups};
    const Tensor probe = random_tensor(ad::conv2d(x, k, b, opt).shape(), seed++);
    auto f = [&] { return dot(ad::conv2d(x, k, b, opt), probe); };
    ad::Graph g;
    const ad::Var vx = g.leaf(x), vk = g.leaf(k), vb = g.leaf(b);
    g.backward(ad::sum(ad::mul(ad::conv2d(vx, vk, vb, opt), g.constant(probe))));
    for (auto [var, t] : {std::pair{vx, &x}, std::pair{vk, &k}, std::pair{vb, &b}}) {
      const Tensor analytic = g.grad(var);
      for (Index i = 0; i < t->size(); ++i) {
        REQUIRE(analytic[i] == doctest::Approx(testing::central_difference(f, *t, i)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("transposed conv gradients") {
  Tensor x = random_tensor({2, 3, 3}, 5), k = random_tensor({3, 2, 2, 2}, 6), b = random_tensor({2}, 7);
  const Tensor probe = random_tensor({4, 6, 2}, 8);
  auto f = [&] {
    ad::Graph g;
    return dot(ad::conv_transpose2x2(g.constant(x), g.constant(k), g.constant(b)).value(), probe);
  };
  ad::Graph g;
  const ad::Var vx = g.leaf(x), vk = g.leaf(k), vb = g.leaf(b);
  g.backward(ad::sum(ad::mul(ad::conv_transpose2x2(vx, vk, vb), g.constant(probe))));
  for (auto [var, t] : {std::pair{vx, &x}, std::pair{vk, &k}, std::pair{vb, &b}}) {
    const Tensor analytic = g.grad(var);
    for (Index i = 0; i < t->size(); ++i) {
      REQUIRE(analytic[i] == doctest::Approx(testing::central_difference(f, *t, i)).epsilon(1e-6));
    }
  }
}

TEST_CASE("conv geometry errors") {
  const Tensor x({4, 4, 3});
  CHECK_THROWS_AS(ad::conv2d(x, Tensor({2, 3, 3, 2}), Tensor({2}), {1, 1, 1}), InvalidShape);
  CHECK_THROWS_AS(ad::conv2d(x, Tensor({4, 3, 3, 1}), Tensor({4}), {1, 1, 2}), InvalidShape);
  CHECK_THROWS_AS(ad::conv2d(x, Tensor({2, 3, 3, 3}), Tensor({3}), {1, 1, 1}), InvalidShape);
}
