#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dernn/cassi.hpp"
#include "dernn/hqs.hpp"

namespace dernn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  int t = 0;
};

// One bias-corrected Adam update over every trainable entry of `params`.
// Entries missing from `grads` count as zero gradients.
void adam_step(ParamStore& params, const GradientMap& grads, AdamState& state, double lr,
               const AdamOptions& opt = {});

struct TrainConfig {
  int steps = 500;
  double lr = 4e-4;
  int warmup_steps = 20;
  AdamOptions adam;
  int stages = 3;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
  double charbonnier_eps = 1e-3;
  NoiseConfig noise;       // applied once to the simulated measurement
  InitMode init = InitMode::kNormalizedAdjoint;
};

// Linear warm-up to `lr` over warmup_steps (step t gets lr (t+1)/warmup), then
// cosine decay to zero across the remaining steps.
double scheduled_lr(const TrainConfig& cfg, int step);

struct LossPoint {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;  // before this step's update
};

struct TrainResult {
  std::vector<LossPoint> curve;
};

// Single-patch overfit: y = Phi truth (+ optional noise), K-stage learned
// recurrence, Charbonnier loss against truth, Adam on the shared store.
// A non-finite loss or gradient raises TrainingDiverged with the step index.
// Parameters are rounded to float32 on return so checkpoints reload exactly.
TrainResult train_overfit(const Tensor& truth, const SensingOp& phi, ParamStore& params, const TrainConfig& cfg);

// CSV: step,lr,loss
std::string loss_curve_csv(const TrainResult& result);

// Global L2 norm over all gradients.
double global_norm(const GradientMap& grads);

}  // namespace dernn
