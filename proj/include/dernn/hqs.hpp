#pragma once

// Half-quadratic-splitting recurrence for CASSI reconstruction.
//
// Each stage k alternates
//   x_k = z_{k-1} + Phi_k^T [(y - Phi_k z_{k-1}) ./ (mu_k + diag(Phi_k Phi_k^T))]
//   z_k = Denoiser(x_k, eta_k),   eta_k = mu_k / lambda_k
// where (Phi_k, mu_k, eta_k) come from the degradation estimator when enabled,
// and from (Phi, mu_1 rho^{k-1}, mu_k / lambda) otherwise. One parameter store
// serves every stage.

#include <optional>
#include <string>
#include <vector>

#include "dernn/cassi.hpp"
#include "dernn/den.hpp"
#include "dernn/lnlt.hpp"

namespace dernn {

// Closed-form minimizer of ‖y − Phi x‖² + mu ‖x − z‖².
template <typename Scalar>
BasicTensor<Scalar> data_step(const BasicTensor<Scalar>& z, const BasicTensor<Scalar>& y,
                              const SensingOperator<Scalar>& phi, Scalar mu) {
  if (!(mu > Scalar(0))) throw NumericalError("data_step: mu must be positive");
  BasicTensor<Scalar> residual = forward_measure(z, phi);
  residual.vec() = y.vec() - residual.vec();
  const BasicTensor<Scalar> gram = phi_gram_diag(phi);
  for (Index i = 0; i < residual.size(); ++i) {
    const Scalar denom = mu + gram[i];
    if (!(denom > Scalar(0))) throw NumericalError("data_step: non-positive denominator");
    residual[i] /= denom;
  }
  BasicTensor<Scalar> x = adjoint_apply(residual, phi);
  x.vec() += z.vec();
  return x;
}

enum class InitMode { kAdjoint, kNormalizedAdjoint };

// Adjoint: Phi^T y. Normalized adjoint: Phi^T [y ./ (eps + diag(Phi Phi^T))].
template <typename Scalar>
BasicTensor<Scalar> init_estimate(const BasicTensor<Scalar>& y, const SensingOperator<Scalar>& phi, InitMode mode,
                                  Scalar eps = Scalar(1e-8)) {
  if (mode == InitMode::kAdjoint) return adjoint_apply(y, phi);
  detail::require_measurement_matches(y, phi, "init_estimate");
  BasicTensor<Scalar> scaled = y;
  const BasicTensor<Scalar> gram = phi_gram_diag(phi);
  scaled.vec() = (y.vec().array() / (gram.vec().array() + eps)).matrix();
  return adjoint_apply(scaled, phi);
}

// ½‖y − Phi x‖²
template <typename Scalar>
Scalar data_fidelity(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y, const SensingOperator<Scalar>& phi) {
  detail::require_measurement_matches(y, phi, "data_fidelity");
  return Scalar(0.5) * (y.vec() - forward_measure(x, phi).vec()).squaredNorm();
}

enum class DenoiserKind { kIdentity, kTv, kLnlt };

struct ReconConfig {
  int stages = 9;
  DenoiserKind denoiser = DenoiserKind::kTv;
  bool use_den = false;
  InitMode init = InitMode::kNormalizedAdjoint;
  double init_eps = 1e-8;
  // Scalar schedule when the estimator is off: mu_k = mu1 * mu_growth^(k-1), eta_k = mu_k / lambda.
  double mu1 = 1e-4;
  double mu_growth = 3.0;
  double lambda = 1e-4;
  int tv_iters = 20;
};

struct StageState {
  int stage = 0;  // 1-based
  Tensor x;
  Tensor z;
  SensingOp phi_hat;
  double mu = 0.0;
  double eta = 0.0;
  double residual_norm = 0.0;  // ‖y − Phi_k z_k‖
  std::optional<double> psnr;  // vs truth, when supplied
  const ParamStore* params = nullptr;
};

struct HqsResult {
  Tensor init;
  Tensor estimate;
  double initial_residual_norm = 0.0;  // ‖y − Phi z_0‖
  std::optional<double> initial_psnr;
  std::vector<StageState> trace;
};

// `params` may be null unless use_den or the LNLT denoiser is selected
// (MissingDependency otherwise). `truth` adds per-stage PSNR to the trace.
HqsResult run_hqs(const Tensor& y, const SensingOp& phi, const ReconConfig& cfg, const ParamStore* params = nullptr,
                  const Tensor* truth = nullptr, AttentionRecorder* rec = nullptr);

// Trace CSV: stage,mu,eta,residual_norm,psnr_vs_truth. Stage 0 is the
// initialization and leaves mu/eta empty; psnr is empty without truth.
std::string trace_csv(const HqsResult& result);

namespace ad {

// The learned recurrence (estimator + LNLT) on one graph, K stages sharing
// `store`. Returns z_K. `tags` > 0 gives stage k parameters the tag k
// (untied copies) for gradient bookkeeping checks.
Var unrolled_forward(Graph& g, const ParamStore& store, const Tensor& y, const SensingOp& phi, int stages,
                     InitMode init = InitMode::kNormalizedAdjoint, bool untied = false);

}  // namespace ad

// Fresh DEN + LNLT parameters for a model of `bands` bands, seeded through stream kParamInit.
ParamStore init_dernn_params(const DenConfig& den, const LnltConfig& lnlt, std::uint64_t seed);

}  // namespace dernn
