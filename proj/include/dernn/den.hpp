#pragma once

// Degradation estimation network.
//
// From the previous estimate and the sensing operator it predicts a residual
// Phi^R on the shifted-mask grid, the corrected operator Phi_hat = Phi + Phi^R
// and the two positive scalars (mu, eta) of the next recurrence stage:
//
//   in      = concat(shift(z_prev), shifted_mask)            [H, W', 2N]
//   f       = Conv1x1(in) -> DLCB x blocks                    [H, W', 2N]
//   Phi^R   = support ⊙ Conv1x1(f)                            [H, W', N]
//   Phi_hat = clamp(Phi + Phi^R, 0, phi_max)
//   mu, eta = softplus(FC2(GELU(FC1(GAP(Phi^R)))))
//
// Masking by the dispersion support keeps Phi_hat in shifted-mask form, which
// is what makes Phi_hat Phi_hat^T diagonal in the closed-form data step.

#include <string>

#include "dernn/autograd.hpp"
#include "dernn/cassi.hpp"

namespace dernn {

struct DenConfig {
  Index bands = 0;
  Index blocks = 3;
  double phi_max = 1.5;
};

void init_den_params(ParamStore& store, const DenConfig& cfg, Rng& rng);
DenConfig den_config_from(const ParamStore& store);

namespace ad {

// output = x + Conv3x3(ReLU(Conv3x3(x)))
Var dlcb_forward(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, int tag = 0);

struct MuEta {
  Var mu;   // [1]
  Var eta;  // [1]
};

MuEta gap_mlp(Graph& g, const ParamStore& store, const Var& residual, int tag = 0);

struct DenOutput {
  Var phi_residual;  // [H, W', N]
  Var phi_hat;       // [H, W', N]
  Var mu;
  Var eta;
};

DenOutput den_forward(Graph& g, const ParamStore& store, const Var& z_prev, const SensingOp& phi,
                      const DenConfig& cfg, int tag = 0);

}  // namespace ad

struct DegradationEstimate {
  Tensor phi_residual;
  SensingOp phi_hat;
  double mu = 0.0;
  double eta = 0.0;
};

// Value-level evaluation of den_forward. Phi_hat is rebuilt through
// SensingOp::from_shifted, so a support violation raises InvalidOperator.
DegradationEstimate den_estimate(const Tensor& z_prev, const SensingOp& phi, const ParamStore& store,
                                 const DenConfig& cfg);

}  // namespace dernn
