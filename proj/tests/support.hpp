#pragma once

#include <doctest.h>

#include "dernn/cassi.hpp"
#include "dernn/rng.hpp"
#include "dernn/tensor.hpp"

namespace testing {

using dernn::Index;
using dernn::Shape;
using dernn::Tensor;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  dernn::Rng rng = dernn::make_rng(seed, dernn::Stream::kTest);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = dernn::uniform(rng, lo, hi);
  return t;
}

// Shifted mask with continuous values inside each band's support.
inline dernn::SensingOp random_operator(Index h, Index w, Index bands, Index step, std::uint64_t seed) {
  dernn::Rng rng = dernn::make_rng(seed, dernn::Stream::kTest);
  Tensor shifted({h, w + step * (bands - 1), bands});
  for (Index r = 0; r < h; ++r) {
    for (Index n = 0; n < bands; ++n) {
      for (Index c = 0; c < w; ++c) shifted(r, c + step * n, n) = dernn::uniform(rng, 0.0, 1.5);
    }
  }
  return dernn::SensingOp::from_shifted(shifted, step);
}

// Central difference of a scalar function with respect to one tensor entry.
template <typename F>
double central_difference(F&& f, Tensor& t, Index i, double h = 1e-6) {
  const double keep = t[i];
  t[i] = keep + h;
  const double up = f();
  t[i] = keep - h;
  const double down = f();
  t[i] = keep;
  return (up - down) / (2 * h);
}

}  // namespace testing
