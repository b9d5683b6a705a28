#include "dernn/cassi_graph.hpp"

namespace dernn::ad {

Var shift_cube(const Var& x, Index step) {
  const Shape& s = x.value().shape();
  require_rank(s, 3, "shift_cube input");
  if (step < 0) throw InvalidParameter("dispersion step must be non-negative");
  const Index h = s[0], w = s[1], bands = s[2];
  const Index ws = w + step * (bands - 1);
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(h * ws * bands), -1);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (Index n = 0; n < bands; ++n) {
        (*index)[static_cast<std::size_t>((r * ws + c + step * n) * bands + n)] = (r * w + c) * bands + n;
      }
    }
  }
  return gather(x, std::move(index), {h, ws, bands});
}

Var unshift_cube(const Var& xs, Index step) {
  const Shape& s = xs.value().shape();
  require_rank(s, 3, "unshift_cube input");
  if (step < 0) throw InvalidParameter("dispersion step must be non-negative");
  const Index h = s[0], ws = s[1], bands = s[2];
  const Index w = ws - step * (bands - 1);
  if (w < 1) throw InvalidShape("unshift_cube: width too small for step and bands");
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(h * w * bands));
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (Index n = 0; n < bands; ++n) {
        (*index)[static_cast<std::size_t>((r * w + c) * bands + n)] = (r * ws + c + step * n) * bands + n;
      }
    }
  }
  return gather(xs, std::move(index), {h, w, bands});
}

Var data_step(const Var& z, const Var& y, const Var& phi_hat, const Var& mu, Index step) {
  const Shape& ps = phi_hat.value().shape();
  require_rank(ps, 3, "data_step phi_hat");
  Var y3 = y.value().shape().size() == 2 ? reshape(y, {ps[0], ps[1], 1}) : y;
  if (y3.value().shape() != Shape{ps[0], ps[1], 1}) throw InvalidShape("data_step: measurement shape mismatch");
  if (mu.value().size() != 1) throw InvalidShape("data_step: mu must be a single value");
  if (!(mu.value()[0] > 0.0)) throw NumericalError("data_step: mu must be positive");
  Var zs = shift_cube(z, step);
  if (zs.value().shape() != ps) throw InvalidShape("data_step: estimate does not match operator");
  Var residual = sub(y3, sum_lastdim(mul(phi_hat, zs)));
  Var denom = add(sum_lastdim(square(phi_hat)), reshape(mu, {1}));
  Var ratio = div(residual, denom);
  return add(z, unshift_cube(mul(phi_hat, ratio), step));
}

}  // namespace dernn::ad
