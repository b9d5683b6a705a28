#include "dernn/phantom.hpp"
#include "dernn/trainer.hpp"
#include "support.hpp"

using namespace dernn;

namespace {

ParamStore toy_params(Index bands, std::uint64_t seed) {
  DenConfig den;
  den.bands = bands;
  den.blocks = 1;
  LnltConfig lnlt;
  lnlt.bands = bands;
  lnlt.base_channels = 4;
  lnlt.window_size = 2;
  lnlt.window_count = 2;
  return init_dernn_params(den, lnlt, seed);
}

}  // namespace

TEST_CASE("adam matches hand-computed updates") {
  ParamStore p;
  p.add("w", Tensor::from_values({2}, {1.0, -2.0}));
  set_meta(p, "cfg", {7});
  AdamState st;
  GradientMap g;
  g["w"] = Tensor::from_values({2}, {0.5, -1.0});
  adam_step(p, g, st, 0.1);
  // First step: m̂ = g, v̂ = g², update = lr g / (|g| + eps) ≈ lr sign(g).
  CHECK(p.at("w")[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p.at("w")[1] == doctest::Approx(-2.0 + 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-14));
  g["w"] = Tensor::from_values({2}, {-0.5, 2.0});
  adam_step(p, g, st, 0.1);
  const double m0 = 0.9 * 0.05 + 0.1 * -0.5, v0 = 0.999 * 0.001 * 0.25 + 0.001 * 0.25;
  const double m1 = 0.9 * -0.1 + 0.1 * 2.0, v1 = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
  const double c1 = 1 - 0.81, c2 = 1 - 0.999 * 0.999;
  CHECK(p.at("w")[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * (m0 / c1) / (std::sqrt(v0 / c2) + 1e-8)).epsilon(1e-12));
  CHECK(p.at("w")[1] == doctest::Approx(-2.0 + 0.1 / (1.0 + 1e-8) - 0.1 * (m1 / c1) / (std::sqrt(v1 / c2) + 1e-8)).epsilon(1e-12));
  CHECK(get_meta(p, "cfg") == std::vector<Index>{7});
  CHECK(st.t == 2);
  g["w"] = Tensor({3});
  CHECK_THROWS_AS(adam_step(p, g, st, 0.1), InvalidShape);
}

TEST_CASE("learning-rate schedule: linear warm-up then cosine to zero") {
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.steps = 110;
  cfg.warmup_steps = 10;
  CHECK(scheduled_lr(cfg, 0) == doctest::Approx(0.1));
  CHECK(scheduled_lr(cfg, 9) == doctest::Approx(1.0));
  CHECK(scheduled_lr(cfg, 10) == doctest::Approx(1.0));
  CHECK(scheduled_lr(cfg, 60) == doctest::Approx(0.5));
  CHECK(scheduled_lr(cfg, 110) == doctest::Approx(0.0));
  for (int s = 10; s < 109; ++s) REQUIRE(scheduled_lr(cfg, s + 1) <= scheduled_lr(cfg, s));
}

TEST_CASE("global norm") {
  GradientMap g;
  g["a"] = Tensor::from_values({2}, {3, 0});
  g["b"] = Tensor::from_values({1}, {4});
  CHECK(global_norm(g) == doctest::Approx(5.0));
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const Tensor truth = make_phantom(8, 8, 2, 1);
  const SensingOp op = SensingOp::from_mask(random_binary_mask(8, 8, 1), 2, 2);
  ParamStore p = toy_params(2, 1);
  const ParamStore before = p;
  TrainConfig cfg;
  cfg.steps = 1;
  cfg.lr = 0.0;
  cfg.stages = 2;
  train_overfit(truth, op, p, cfg);
  CHECK(p == before);
}

TEST_CASE("training is reproducible and lowers the loss") {
  const Tensor truth = make_phantom(8, 8, 2, 2);
  const SensingOp op = SensingOp::from_mask(random_binary_mask(8, 8, 2), 2, 2);
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.lr = 2e-3;
  cfg.warmup_steps = 5;
  cfg.stages = 2;
  ParamStore a = toy_params(2, 3), b = toy_params(2, 3);
  const TrainResult ra = train_overfit(truth, op, a, cfg), rb = train_overfit(truth, op, b, cfg);
  CHECK(loss_curve_csv(ra) == loss_curve_csv(rb));
  CHECK(a == b);
  CHECK(ra.curve.back().loss < ra.curve.front().loss);
  CHECK(loss_curve_csv(ra).rfind("step,lr,loss\n0,", 0) == 0);
  for (const auto& [_, t] : a) REQUIRE(t.cast<float>().cast<double>() == t);
}

TEST_CASE("training rejects bad configs and reports divergence") {
  const Tensor truth = make_phantom(8, 8, 2, 3);
  const SensingOp op = SensingOp::from_mask(random_binary_mask(8, 8, 3), 2, 2);
  ParamStore p = toy_params(2, 4);
  TrainConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(train_overfit(truth, op, p, cfg), InvalidConfig);
  cfg.steps = 3;
  cfg.lr = 1e200;  // first update blows parameters up; the next forward is non-finite
  cfg.warmup_steps = 0;
  cfg.clip_norm = 0.0;
  try {
    train_overfit(truth, op, p, cfg);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() >= 1);
  }
}
