#include "dernn/hqs.hpp"

#include <cmath>
#include <cstdio>

#include "dernn/cassi_graph.hpp"
#include "dernn/metrics.hpp"
#include "dernn/priors.hpp"

namespace dernn {

namespace {

double residual_norm(const Tensor& z, const Tensor& y, const SensingOp& phi) {
  return (y.vec() - forward_measure(z, phi).vec()).norm();
}

Tensor denoise(const Tensor& x, double eta, const ReconConfig& cfg, const ParamStore* params,
               AttentionRecorder* rec) {
  switch (cfg.denoiser) {
    case DenoiserKind::kIdentity:
      return x;
    case DenoiserKind::kTv:
      return tv_denoise(x, {1.0 / eta, cfg.tv_iters});
    case DenoiserKind::kLnlt:
      return lnlt_apply(x, eta, *params, lnlt_config_from(*params), rec);
  }
  return x;
}

}  // namespace

HqsResult run_hqs(const Tensor& y, const SensingOp& phi, const ReconConfig& cfg, const ParamStore* params,
                  const Tensor* truth, AttentionRecorder* rec) {
  if (cfg.stages < 0) throw InvalidConfig("stages must be >= 0");
  const bool needs_params = cfg.use_den || cfg.denoiser == DenoiserKind::kLnlt;
  if (needs_params && params == nullptr) throw MissingDependency("learned components require a parameter store");
  if (!cfg.use_den && (!(cfg.mu1 > 0.0) || !(cfg.mu_growth > 0.0) || !(cfg.lambda > 0.0))) {
    throw InvalidConfig("mu1, mu_growth and lambda must be positive");
  }
  detail::require_measurement_matches(y, phi, "run_hqs");
  if (truth) detail::require_cube_matches(*truth, phi, "run_hqs truth");

  HqsResult result;
  result.init = init_estimate(y, phi, cfg.init, cfg.init_eps);
  result.initial_residual_norm = residual_norm(result.init, y, phi);
  if (truth) result.initial_psnr = psnr(result.init, *truth);

  DenConfig den_cfg;
  if (cfg.use_den) den_cfg = den_config_from(*params);

  Tensor z = result.init;
  for (int k = 1; k <= cfg.stages; ++k) {
    try {
      StageState st;
      st.stage = k;
      st.params = params;
      if (cfg.use_den) {
        DegradationEstimate est = den_estimate(z, phi, *params, den_cfg);
        st.phi_hat = std::move(est.phi_hat);
        st.mu = est.mu;
        st.eta = est.eta;
      } else {
        st.phi_hat = phi;
        st.mu = cfg.mu1 * std::pow(cfg.mu_growth, k - 1);
        st.eta = st.mu / cfg.lambda;
      }
      st.x = data_step(z, y, st.phi_hat, st.mu);
      st.z = denoise(st.x, st.eta, cfg, params, rec);
      if (!st.z.all_finite()) throw NumericalError("non-finite estimate");
      st.residual_norm = residual_norm(st.z, y, st.phi_hat);
      if (!std::isfinite(st.residual_norm)) throw NumericalError("non-finite residual");
      if (truth) st.psnr = psnr(st.z, *truth);
      z = st.z;
      result.trace.push_back(std::move(st));
    } catch (const NumericalError& e) {
      throw NumericalError("stage " + std::to_string(k) + ": " + e.what(), k);
    }
  }
  result.estimate = std::move(z);
  return result;
}

std::string trace_csv(const HqsResult& result) {
  std::string out = "stage,mu,eta,residual_norm,psnr_vs_truth\n";
  char buf[160];
  auto fmt_psnr = [](const std::optional<double>& p) {
    if (!p) return std::string();
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", *p);
    return std::string(b);
  };
  std::snprintf(buf, sizeof buf, "0,,,%.17g,", result.initial_residual_norm);
  out += buf + fmt_psnr(result.initial_psnr) + "\n";
  for (const StageState& st : result.trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,", st.stage, st.mu, st.eta, st.residual_norm);
    out += buf + fmt_psnr(st.psnr) + "\n";
  }
  return out;
}

namespace ad {

Var unrolled_forward(Graph& g, const ParamStore& store, const Tensor& y, const SensingOp& phi, int stages,
                     InitMode init, bool untied) {
  if (stages < 0) throw InvalidConfig("stages must be >= 0");
  const DenConfig den_cfg = den_config_from(store);
  const LnltConfig lnlt_cfg = lnlt_config_from(store);
  Var yv = g.constant(y);
  Var z = g.constant(init_estimate(y, phi, init));
  for (int k = 1; k <= stages; ++k) {
    const int tag = untied ? k : 0;
    DenOutput den = den_forward(g, store, z, phi, den_cfg, tag);
    Var x = data_step(z, yv, den.phi_hat, den.mu, phi.step());
    z = lnlt_denoise(g, store, x, den.eta, lnlt_cfg, tag);
  }
  return z;
}

}  // namespace ad

ParamStore init_dernn_params(const DenConfig& den, const LnltConfig& lnlt, std::uint64_t seed) {
  if (den.bands != lnlt.bands) throw InvalidConfig("den and lnlt band counts differ");
  ParamStore store;
  Rng rng = make_rng(seed, Stream::kParamInit);
  init_den_params(store, den, rng);
  init_lnlt_params(store, lnlt, rng);
  return store;
}

}  // namespace dernn
