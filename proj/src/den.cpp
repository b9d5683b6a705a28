#include "dernn/den.hpp"

#include "dernn/cassi_graph.hpp"

namespace dernn {

namespace {

void add_conv(ParamStore& store, const std::string& name, Index cout, Index k, Index cin, Rng& rng) {
  store.add(name + ".w", init_uniform_fan_in({cout, k, k, cin}, k * k * cin, rng));
  store.add(name + ".b", Tensor({cout}));
}

void add_linear(ParamStore& store, const std::string& name, Index out, Index in, Rng& rng) {
  store.add(name + ".w", init_uniform_fan_in({out, in}, in, rng));
  store.add(name + ".b", Tensor({out}));
}

}  // namespace

void init_den_params(ParamStore& store, const DenConfig& cfg, Rng& rng) {
  if (cfg.bands < 1 || cfg.blocks < 0) throw InvalidConfig("den: bands must be >= 1 and blocks >= 0");
  const Index n = cfg.bands, width = 2 * cfg.bands;
  add_conv(store, "den.entry", width, 1, width, rng);
  for (Index b = 0; b < cfg.blocks; ++b) {
    const std::string p = "den.dlcb" + std::to_string(b);
    add_conv(store, p + ".conv1", width, 3, width, rng);
    add_conv(store, p + ".conv2", width, 3, width, rng);
  }
  add_conv(store, "den.exit", n, 1, width, rng);
  add_linear(store, "den.mlp.fc1", n, n, rng);
  add_linear(store, "den.mlp.fc2", 2, n, rng);
  set_meta(store, "den", {cfg.bands, cfg.blocks});
}

DenConfig den_config_from(const ParamStore& store) {
  const auto v = get_meta(store, "den");
  if (v.size() != 2) throw FormatError("meta.den must hold 2 values");
  DenConfig cfg;
  cfg.bands = v[0];
  cfg.blocks = v[1];
  return cfg;
}

namespace ad {

namespace {
Var conv(Graph& g, const ParamStore& s, const std::string& name, const Var& x, int tag, Conv2dOptions opt = {}) {
  return conv2d(x, g.param(s, name + ".w", tag), g.param(s, name + ".b", tag), opt);
}
}  // namespace

Var dlcb_forward(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, int tag) {
  Var h = relu(conv(g, store, prefix + ".conv1", x, tag, {1, 1, 1}));
  return add(x, conv(g, store, prefix + ".conv2", h, tag, {1, 1, 1}));
}

MuEta gap_mlp(Graph& g, const ParamStore& store, const Var& residual, int tag) {
  Var pooled = mean_leading(residual);
  Var hidden = gelu(linear(pooled, g.param(store, "den.mlp.fc1.w", tag), g.param(store, "den.mlp.fc1.b", tag)));
  Var out = softplus(linear(hidden, g.param(store, "den.mlp.fc2.w", tag), g.param(store, "den.mlp.fc2.b", tag)));
  if (out.value().size() != 2) throw InvalidShape("gap_mlp: head must produce 2 values");
  return {slice_lastdim(out, 0, 1), slice_lastdim(out, 1, 1)};
}

DenOutput den_forward(Graph& g, const ParamStore& store, const Var& z_prev, const SensingOp& phi,
                      const DenConfig& cfg, int tag) {
  if (cfg.bands != phi.bands()) {
    throw InvalidShape("den: configured for " + std::to_string(cfg.bands) + " bands, operator has " +
                       std::to_string(phi.bands()));
  }
  Var mask = g.constant(phi.shifted_mask());
  Var zs = shift_cube(z_prev, phi.step());
  if (zs.value().shape() != phi.shifted_mask().shape()) throw InvalidShape("den: estimate does not match operator");
  Var h = conv(g, store, "den.entry", concat_lastdim({zs, mask}), tag);
  for (Index b = 0; b < cfg.blocks; ++b) h = dlcb_forward(g, store, "den.dlcb" + std::to_string(b), h, tag);
  Var residual = mul(conv(g, store, "den.exit", h, tag), g.constant(phi.support()));
  Var phi_hat = clamp(add(mask, residual), 0.0, cfg.phi_max);
  MuEta me = gap_mlp(g, store, residual, tag);
  return {residual, phi_hat, me.mu, me.eta};
}

}  // namespace ad

DegradationEstimate den_estimate(const Tensor& z_prev, const SensingOp& phi, const ParamStore& store,
                                 const DenConfig& cfg) {
  ad::Graph g;
  ad::DenOutput out = ad::den_forward(g, store, g.constant(z_prev), phi, cfg);
  DegradationEstimate est;
  est.phi_residual = out.phi_residual.value();
  est.phi_hat = SensingOp::from_shifted(out.phi_hat.value(), phi.step());
  est.mu = out.mu.value()[0];
  est.eta = out.eta.value()[0];
  if (!(est.mu > 0.0) || !(est.eta > 0.0)) throw NumericalError("den: mu/eta underflowed to zero");
  return est;
}

}  // namespace dernn
