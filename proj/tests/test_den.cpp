#include "dernn/cassi_graph.hpp"
#include "dernn/den.hpp"
#include "dernn/gradcheck.hpp"
#include "support.hpp"

using namespace dernn;
using testing::random_tensor;

namespace {

ParamStore den_params(Index bands, std::uint64_t seed) {
  ParamStore s;
  Rng rng = make_rng(seed, Stream::kParamInit);
  DenConfig cfg;
  cfg.bands = bands;
  init_den_params(s, cfg, rng);
  return s;
}

void zero_prefix(ParamStore& s, const std::string& prefix) {
  for (auto& [name, t] : s) {
    if (name.rfind(prefix, 0) == 0) t.vec().setZero();
  }
}

}  // namespace

TEST_CASE("den parameter layout") {
  const ParamStore s = den_params(4, 1);
  CHECK(s.at("den.entry.w").shape() == Shape{8, 1, 1, 8});
  CHECK(s.at("den.dlcb2.conv2.w").shape() == Shape{8, 3, 3, 8});
  CHECK(s.at("den.exit.w").shape() == Shape{4, 1, 1, 8});
  CHECK(s.at("den.mlp.fc1.w").shape() == Shape{4, 4});
  CHECK(s.at("den.mlp.fc2.w").shape() == Shape{2, 4});
  CHECK_FALSE(s.contains("den.dlcb3.conv1.w"));
  const DenConfig cfg = den_config_from(s);
  CHECK(cfg.bands == 4);
  CHECK(cfg.blocks == 3);
}

TEST_CASE("dlcb with zero weights passes its input through") {
  ParamStore s = den_params(2, 2);
  zero_prefix(s, "den.dlcb0");
  ad::Graph g;
  const Tensor x = random_tensor({5, 6, 4}, 3);
  CHECK(ad::dlcb_forward(g, s, "den.dlcb0", g.constant(x)).value() == x);
}

TEST_CASE("gap head sees per-channel means") {
  ParamStore s = den_params(3, 4);
  ad::Graph g;
  const Tensor residual = Tensor::constant({4, 6, 3}, 0.25);
  const ad::MuEta me = ad::gap_mlp(g, s, g.constant(residual));
  // Rebuild the head by hand from the pooled vector (0.25, 0.25, 0.25).
  const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> w1(s.at("den.mlp.fc1.w").data());
  const Eigen::Map<const Eigen::Matrix<double, 2, 3, Eigen::RowMajor>> w2(s.at("den.mlp.fc2.w").data());
  Eigen::Vector3d hidden = w1 * Eigen::Vector3d::Constant(0.25) + s.at("den.mlp.fc1.b").vec();
  for (int i = 0; i < 3; ++i) {
    const double v = hidden[i];
    hidden[i] = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
  }
  const Eigen::Vector2d out = w2 * hidden + s.at("den.mlp.fc2.b").vec();
  CHECK(me.mu.value()[0] == doctest::Approx(std::log1p(std::exp(out[0]))).epsilon(1e-12));
  CHECK(me.eta.value()[0] == doctest::Approx(std::log1p(std::exp(out[1]))).epsilon(1e-12));
}

TEST_CASE("zero residual weights give back the nominal operator exactly") {
  ParamStore s = den_params(3, 5);
  zero_prefix(s, "den.exit");
  const SensingOp op = SensingOp::from_mask(random_binary_mask(6, 6, 5), 3, 2);
  const DegradationEstimate est = den_estimate(random_tensor({6, 6, 3}, 6, 0, 1), op, s, den_config_from(s));
  CHECK(est.phi_hat.shifted_mask() == op.shifted_mask());
  CHECK(est.phi_residual.vec().isZero(0.0));
  CHECK(est.mu > 0.0);
  CHECK(est.eta > 0.0);
}

TEST_CASE("estimated operator never leaves the dispersion support") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    ParamStore s = den_params(4, seed);
    s.at("den.exit.w").vec() *= 50.0;
    s.at("den.exit.b").vec().setConstant(3.0);
    s.at("den.mlp.fc2.b").vec().setConstant(-30.0);
    const SensingOp op = SensingOp::from_mask(random_binary_mask(5, 7, seed), 4, 1 + seed % 2);
    const DegradationEstimate est = den_estimate(random_tensor({5, 7, 4}, seed, 0, 1), op, s, den_config_from(s));
    const Tensor support = op.support();
    const Tensor& phi = est.phi_hat.shifted_mask();
    for (Index i = 0; i < phi.size(); ++i) {
      if (support[i] == 0.0) REQUIRE(phi[i] == 0.0);
      REQUIRE(phi[i] >= 0.0);
      REQUIRE(phi[i] <= 1.5);
    }
    CHECK(est.mu > 0.0);
    CHECK(est.eta > 0.0);
  }
}

TEST_CASE("den rejects a band mismatch") {
  const ParamStore s = den_params(3, 7);
  const SensingOp op = SensingOp::from_mask(random_binary_mask(4, 4, 7), 2, 1);
  CHECK_THROWS_AS(den_estimate(Tensor({4, 4, 2}), op, s, den_config_from(s)), InvalidShape);
}

TEST_CASE("den gradients through the data step") {
  ParamStore s = den_params(2, 8);
  const SensingOp op = SensingOp::from_mask(random_binary_mask(5, 5, 8), 2, 2);
  const Tensor z = random_tensor({5, 5, 2}, 9, 0, 1);
  const Tensor y = forward_measure(random_tensor({5, 5, 2}, 10, 0, 1), op);
  const Tensor probe = random_tensor({5, 5, 2}, 11);
  auto f = [&](ad::Graph& g) {
    const ad::Var zv = g.constant(z);
    const ad::DenOutput out = ad::den_forward(g, s, zv, op, den_config_from(s));
    const ad::Var x = ad::data_step(zv, g.constant(y), out.phi_hat, out.mu, 2);
    return ad::add(ad::sum(ad::mul(x, g.constant(probe))), ad::scale(ad::sum(out.eta), 0.5));
  };
  GradcheckOptions opt;
  opt.samples = 60;
  opt.seed = 3;
  const GradcheckReport r = fd_gradcheck(f, s, opt);
  CHECK(r.probes.size() == 60);
  CHECK(r.max_rel_error < 1e-3);
}
