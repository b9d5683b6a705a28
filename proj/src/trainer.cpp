#include "dernn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace dernn {

void adam_step(ParamStore& params, const GradientMap& grads, AdamState& state, double lr, const AdamOptions& opt) {
  ++state.t;
  const double c1 = 1.0 - std::pow(opt.beta1, state.t);
  const double c2 = 1.0 - std::pow(opt.beta2, state.t);
  for (auto& [name, p] : params) {
    if (!ParamStore::is_trainable(name)) continue;
    auto git = grads.find(name);
    if (git != grads.end() && git->second.shape() != p.shape()) {
      throw InvalidShape("adam_step: gradient shape mismatch for '" + name + "'");
    }
    auto [mit, m_new] = state.m.try_emplace(name, Tensor(p.shape()));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor(p.shape()));
    auto& m = mit->second.vec();
    auto& v = vit->second.vec();
    if (git != grads.end()) {
      const auto& g = git->second.vec();
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseAbs2();
    } else {
      m *= opt.beta1;
      v *= opt.beta2;
    }
    const Eigen::ArrayXd step = lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
    if (!step.allFinite()) throw NumericalError("adam_step: non-finite update for '" + name + "'");
    p.vec().array() -= step;
  }
}

double scheduled_lr(const TrainConfig& cfg, int step) {
  if (step < 0) throw InvalidParameter("scheduled_lr: step must be >= 0");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  const int warm = std::max(cfg.warmup_steps, 0);
  const int span = std::max(cfg.steps - warm, 1);
  const double progress = static_cast<double>(step - warm) / static_cast<double>(span);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double global_norm(const GradientMap& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads) s += g.vec().squaredNorm();
  return std::sqrt(s);
}

TrainResult train_overfit(const Tensor& truth, const SensingOp& phi, ParamStore& params, const TrainConfig& cfg) {
  if (cfg.steps < 1) throw InvalidConfig("train: steps must be >= 1");
  if (!(cfg.lr >= 0.0)) throw InvalidConfig("train: lr must be >= 0");
  if (cfg.stages < 1) throw InvalidConfig("train: stages must be >= 1");
  detail::require_cube_matches(truth, phi, "train truth");
  lnlt_config_from(params).validate_extent(truth.dim(0), truth.dim(1));

  const Tensor y = forward_measure(truth, phi, cfg.noise);
  AdamState state;
  TrainResult result;
  result.curve.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = scheduled_lr(cfg, step);
    double loss = 0.0;
    GradientMap grads;
    try {
      ad::Graph g;
      ad::Var z = ad::unrolled_forward(g, params, y, phi, cfg.stages, cfg.init);
      ad::Var l = ad::charbonnier(z, g.constant(truth), cfg.charbonnier_eps);
      loss = l.value()[0];
      grads = g.backward(l);
    } catch (const NumericalError& e) {
      throw TrainingDiverged(std::string("training diverged: ") + e.what(), step);
    }
    if (!std::isfinite(loss)) throw TrainingDiverged("training diverged: non-finite loss", step);
    if (cfg.clip_norm > 0.0) {
      const double n = global_norm(grads);
      if (n > cfg.clip_norm) {
        for (auto& [_, gr] : grads) gr.vec() *= cfg.clip_norm / n;
      }
    }
    try {
      adam_step(params, grads, state, lr, cfg.adam);
    } catch (const NumericalError& e) {
      throw TrainingDiverged(std::string("training diverged: ") + e.what(), step);
    }
    result.curve.push_back({step, lr, loss});
  }
  for (auto& [_, t] : params) t = t.cast<float>().cast<double>();
  return result;
}

std::string loss_curve_csv(const TrainResult& result) {
  std::string out = "step,lr,loss\n";
  char buf[128];
  for (const LossPoint& p : result.curve) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", p.step, p.lr, p.loss);
    out += buf;
  }
  return out;
}

}  // namespace dernn
