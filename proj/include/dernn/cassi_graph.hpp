#pragma once

// Differentiable counterparts of the CASSI operations, recorded on a graph so
// the recurrence can be trained end to end. Each matches its value-level twin
// in cassi.hpp / hqs.hpp exactly.

#include "dernn/autograd.hpp"

namespace dernn::ad {

Var shift_cube(const Var& x, Index step);
Var unshift_cube(const Var& xs, Index step);

// y: [H, W'] or [H, W', 1]; phi_hat: shifted mask [H, W', N]; mu: one element.
// x = z + unshift(phi_hat ⊙ ((y - sum_n phi_hat ⊙ shift(z)) / (mu + sum_n phi_hat^2)))
Var data_step(const Var& z, const Var& y, const Var& phi_hat, const Var& mu, Index step);

}  // namespace dernn::ad
