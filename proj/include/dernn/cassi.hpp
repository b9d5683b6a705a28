#pragma once

// CASSI sensing model: mask modulation, per-band dispersion shift and sensor
// integration, expressed through the shifted-mask form of the sensing matrix.
//
//   shifted_mask[h, w + d_n, n] = mask[h, w],   d_n = step * n   (0-based band n)
//   y[h, j] = sum_n shifted_mask[h, j, n] * shift(x)[h, j, n]
//
// Phi is block diagonal: measurement pixel (h, j) only touches the Nλ entries
// of the shifted cube at (h, j, :), so Phi Phi^T is diagonal with entries
// sum_n shifted_mask[h, j, n]^2.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>

#include "dernn/rng.hpp"
#include "dernn/tensor.hpp"

namespace dernn {

template <typename Scalar>
class SensingOperator {
 public:
  using TensorT = BasicTensor<Scalar>;

  SensingOperator() = default;

  // mask: [H, W] or [H, W, 1] with entries in [0, 1+]; replicated into every band.
  static SensingOperator from_mask(const TensorT& mask, Index bands, Index step) {
    if (mask.rank() == 3 && mask.dim(2) == 1) return from_mask(mask.reshaped({mask.dim(0), mask.dim(1)}), bands, step);
    require_rank(mask.shape(), 2, "mask");
    if (bands < 1) throw InvalidShape("operator needs at least one band");
    if (step < 0) throw InvalidParameter("dispersion step must be non-negative");
    const Index h = mask.dim(0), w = mask.dim(1);
    if (h < 1 || w < 1) throw InvalidShape("mask must be non-empty");
    const Index ws = w + step * (bands - 1);
    TensorT shifted({h, ws, bands});
    for (Index r = 0; r < h; ++r) {
      for (Index n = 0; n < bands; ++n) {
        for (Index c = 0; c < w; ++c) shifted(r, c + step * n, n) = mask(r, c);
      }
    }
    return from_shifted(std::move(shifted), step);
  }

  // Validates finiteness, non-negativity and the dispersion support of every band plane.
  static SensingOperator from_shifted(TensorT shifted, Index step) {
    require_rank(shifted.shape(), 3, "shifted mask");
    if (step < 0) throw InvalidParameter("dispersion step must be non-negative");
    const Index h = shifted.dim(0), ws = shifted.dim(1), bands = shifted.dim(2);
    if (bands < 1 || h < 1) throw InvalidShape("shifted mask must be non-empty");
    const Index w = ws - step * (bands - 1);
    if (w < 1) {
      throw InvalidShape("shifted width " + std::to_string(ws) + " too small for " + std::to_string(bands) +
                         " bands at step " + std::to_string(step));
    }
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < ws; ++c) {
        for (Index n = 0; n < bands; ++n) {
          const Scalar v = shifted(r, c, n);
          if (!std::isfinite(static_cast<double>(v))) throw InvalidOperator("shifted mask holds non-finite values");
          if (v < Scalar(0)) throw InvalidOperator("mask values must be non-negative");
          const Index d = step * n;
          if ((c < d || c >= d + w) && v != Scalar(0)) {
            throw InvalidOperator("band " + std::to_string(n) + " has support outside columns [" + std::to_string(d) +
                                  ", " + std::to_string(d + w) + ")");
          }
        }
      }
    }
    SensingOperator op;
    op.shifted_ = std::move(shifted);
    op.step_ = step;
    op.width_ = w;
    return op;
  }

  Index height() const { return shifted_.dim(0); }
  Index width() const { return width_; }
  Index shifted_width() const { return shifted_.dim(1); }
  Index bands() const { return shifted_.dim(2); }
  Index step() const { return step_; }
  Index offset(Index band) const { return step_ * band; }
  const TensorT& shifted_mask() const { return shifted_; }

  // 1 inside each band's valid dispersion columns, 0 elsewhere.
  TensorT support() const {
    TensorT s(shifted_.shape());
    for (Index r = 0; r < height(); ++r) {
      for (Index n = 0; n < bands(); ++n) {
        for (Index c = 0; c < width_; ++c) s(r, c + offset(n), n) = Scalar(1);
      }
    }
    return s;
  }

 private:
  TensorT shifted_;
  Index step_ = 0;
  Index width_ = 0;
};

using SensingOp = SensingOperator<double>;

template <typename Scalar>
BasicTensor<Scalar> shift_cube(const BasicTensor<Scalar>& x, Index step) {
  require_rank(x.shape(), 3, "shift_cube input");
  if (step < 0) throw InvalidParameter("dispersion step must be non-negative");
  const Index h = x.dim(0), w = x.dim(1), bands = x.dim(2);
  if (bands < 1) throw InvalidShape("cube needs at least one band");
  BasicTensor<Scalar> out({h, w + step * (bands - 1), bands});
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (Index n = 0; n < bands; ++n) out(r, c + step * n, n) = x(r, c, n);
    }
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> unshift_cube(const BasicTensor<Scalar>& xs, Index step) {
  require_rank(xs.shape(), 3, "unshift_cube input");
  if (step < 0) throw InvalidParameter("dispersion step must be non-negative");
  const Index h = xs.dim(0), ws = xs.dim(1), bands = xs.dim(2);
  if (bands < 1) throw InvalidShape("cube needs at least one band");
  const Index w = ws - step * (bands - 1);
  if (w < 1) throw InvalidShape("unshift_cube: width " + std::to_string(ws) + " too small for step and bands");
  BasicTensor<Scalar> out({h, w, bands});
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (Index n = 0; n < bands; ++n) out(r, c, n) = xs(r, c + step * n, n);
    }
  }
  return out;
}

namespace detail {
template <typename Scalar>
void require_cube_matches(const BasicTensor<Scalar>& x, const SensingOperator<Scalar>& op, const char* what) {
  if (x.shape() != Shape{op.height(), op.width(), op.bands()}) {
    throw InvalidShape(std::string(what) + ": cube " + shape_string(x.shape()) + " does not match operator [" +
                       std::to_string(op.height()) + "x" + std::to_string(op.width()) + "x" +
                       std::to_string(op.bands()) + "]");
  }
}

template <typename Scalar>
void require_measurement_matches(const BasicTensor<Scalar>& y, const SensingOperator<Scalar>& op, const char* what) {
  if (y.shape() != Shape{op.height(), op.shifted_width()}) {
    throw InvalidShape(std::string(what) + ": measurement " + shape_string(y.shape()) + " does not match operator [" +
                       std::to_string(op.height()) + "x" + std::to_string(op.shifted_width()) + "]");
  }
}
}  // namespace detail

// Noiseless y = Phi x: [H, W, N] -> [H, W'].
template <typename Scalar>
BasicTensor<Scalar> forward_measure(const BasicTensor<Scalar>& x, const SensingOperator<Scalar>& op) {
  detail::require_cube_matches(x, op, "forward_measure");
  const auto& m = op.shifted_mask();
  BasicTensor<Scalar> y({op.height(), op.shifted_width()});
  for (Index r = 0; r < op.height(); ++r) {
    for (Index n = 0; n < op.bands(); ++n) {
      const Index d = op.offset(n);
      for (Index c = 0; c < op.width(); ++c) y(r, c + d) += m(r, c + d, n) * x(r, c, n);
    }
  }
  return y;
}

// Phi^T y = unshift(shifted_mask ⊙ y broadcast over bands): [H, W'] -> [H, W, N].
template <typename Scalar>
BasicTensor<Scalar> adjoint_apply(const BasicTensor<Scalar>& y, const SensingOperator<Scalar>& op) {
  detail::require_measurement_matches(y, op, "adjoint_apply");
  const auto& m = op.shifted_mask();
  BasicTensor<Scalar> x({op.height(), op.width(), op.bands()});
  for (Index r = 0; r < op.height(); ++r) {
    for (Index c = 0; c < op.width(); ++c) {
      for (Index n = 0; n < op.bands(); ++n) {
        const Index j = c + op.offset(n);
        x(r, c, n) = m(r, j, n) * y(r, j);
      }
    }
  }
  return x;
}

// diag(Phi Phi^T) as an [H, W'] plane.
template <typename Scalar>
BasicTensor<Scalar> phi_gram_diag(const SensingOperator<Scalar>& op) {
  const auto& m = op.shifted_mask();
  BasicTensor<Scalar> d({op.height(), op.shifted_width()});
  for (Index r = 0; r < op.height(); ++r) {
    for (Index j = 0; j < op.shifted_width(); ++j) {
      Scalar s(0);
      for (Index n = 0; n < op.bands(); ++n) s += m(r, j, n) * m(r, j, n);
      d(r, j) = s;
    }
  }
  return d;
}

inline constexpr Index kDenseOracleCap = 50000;

// Dense Phi of shape [H W', H W' N] acting on the row-major flattening of
// shift(x). Oracle use only; refuses when H W' N exceeds `cap`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> materialize_dense(const SensingOperator<Scalar>& op,
                                                                        Index cap = kDenseOracleCap) {
  const Index rows = op.height() * op.shifted_width();
  const Index cols = rows * op.bands();
  if (cols > cap) {
    throw InvalidParameter("materialize_dense: " + std::to_string(cols) + " columns exceed the oracle cap of " +
                           std::to_string(cap));
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> phi =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(rows, cols);
  const auto& m = op.shifted_mask();
  for (Index i = 0; i < rows; ++i) {
    for (Index n = 0; n < op.bands(); ++n) phi(i, i * op.bands() + n) = m[i * op.bands() + n];
  }
  return phi;
}

enum class NoiseKind { kNone, kShot };

struct NoiseConfig {
  NoiseKind kind = NoiseKind::kNone;
  int bits = 11;
  std::uint64_t seed = 0;
};

// Shot noise at `bits` bits: the clean measurement is normalized by its maximum,
// scaled to 2^bits photon counts, Poisson-sampled per pixel and mapped back.
// Pixels are drawn in row-major order from stream kShotNoise of `seed`.
template <typename Scalar>
BasicTensor<Scalar> add_shot_noise(const BasicTensor<Scalar>& clean, const NoiseConfig& noise) {
  if (noise.bits < 1) throw InvalidParameter("noise bits must be >= 1");
  if (noise.kind == NoiseKind::kNone) return clean;
  BasicTensor<Scalar> y = clean;
  const double peak = clean.size() ? static_cast<double>(clean.vec().maxCoeff()) : 0.0;
  if (!(peak > 0.0)) return y;
  const double levels = std::ldexp(1.0, noise.bits);
  Rng rng = make_rng(noise.seed, Stream::kShotNoise);
  for (Index i = 0; i < y.size(); ++i) {
    const double lambda = std::max(0.0, static_cast<double>(clean[i])) / peak * levels;
    double count = 0.0;
    if (lambda > 0.0) count = static_cast<double>(std::poisson_distribution<long long>(lambda)(rng));
    y[i] = static_cast<Scalar>(count / levels * peak);
  }
  return y;
}

template <typename Scalar>
BasicTensor<Scalar> forward_measure(const BasicTensor<Scalar>& x, const SensingOperator<Scalar>& op,
                                    const NoiseConfig& noise) {
  return add_shot_noise(forward_measure(x, op), noise);
}

// Seeded uniform-random binary {0, 1} mask.
template <typename Scalar = double>
BasicTensor<Scalar> random_binary_mask(Index h, Index w, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::kMask);
  BasicTensor<Scalar> m({h, w});
  for (Index i = 0; i < m.size(); ++i) m[i] = uniform01(rng) < 0.5 ? Scalar(0) : Scalar(1);
  return m;
}

}  // namespace dernn
