#include "dernn/gradcheck.hpp"
#include "dernn/hqs.hpp"
#include "dernn/lnlt.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dernn;
using testing::random_tensor;

namespace {

ParamStore block(Index c, Index heads, Index m, Index n, std::uint64_t seed, bool randomize = true) {
  LnltConfig cfg;
  cfg.window_size = m;
  cfg.window_count = n;
  Rng rng = make_rng(seed, Stream::kParamInit);
  ParamStore s;
  init_lnlb_params(s, "b", c, heads, cfg, rng);
  if (randomize) {
    Rng r2 = make_rng(seed, Stream::kTest);
    for (auto& [name, t] : s) {
      if (name.ends_with(".pos") || name.ends_with(".b")) {
        for (Index i = 0; i < t.size(); ++i) t[i] = uniform(r2, -0.5, 0.5);
      }
    }
  }
  return s;
}

LnltConfig toy_config(Index bands) {
  LnltConfig cfg;
  cfg.bands = bands;
  cfg.base_channels = 4;
  cfg.window_size = 2;
  cfg.window_count = 2;
  return cfg;
}

}  // namespace

TEST_CASE("local and non-local attention match the per-token oracle") {
  struct Case {
    Index h, w, c, heads, m, n;
  };
  const Case cases[] = {{8, 8, 4, 1, 4, 2},  {16, 16, 8, 1, 8, 4}, {16, 16, 8, 2, 4, 2},
                        {16, 16, 8, 4, 8, 2}, {8, 16, 8, 4, 4, 4}, {16, 16, 8, 2, 8, 4}};
  std::uint64_t seed = 1;
  for (const Case& cs : cases) {
    CAPTURE(cs.heads);
    CAPTURE(cs.m);
    const ParamStore s = block(cs.c, cs.heads, cs.m, cs.n, seed++);
    const Tensor x = random_tensor({cs.h, cs.w, cs.c}, seed++);
    ad::Graph g;
    const Tensor local = ad::local_attention(g, s, "b.local", g.constant(x), cs.m, cs.heads).value();
    CHECK(max_abs_diff(local, testing::attention_oracle(s, "b.local", x, cs.heads, cs.m, true)) < 1e-10);
    const Tensor nonlocal = ad::nonlocal_attention(g, s, "b.nonlocal", g.constant(x), cs.n, cs.heads).value();
    CHECK(max_abs_diff(nonlocal, testing::attention_oracle(s, "b.nonlocal", x, cs.heads, cs.n, false)) < 1e-10);
    const Tensor with_skip = ad::local_msa(g, s, "b.local", g.constant(x), cs.m, cs.heads).value();
    Tensor expected = local;
    expected.vec() += x.vec();
    CHECK(max_abs_diff(with_skip, expected) < 1e-12);
  }
}

TEST_CASE("zero query weights give uniform attention: window means of V") {
  ParamStore s = block(4, 2, 2, 2, 9, false);
  for (const char* p : {"b.local.q", "b.nonlocal.q"}) {
    s.at(std::string(p) + ".pw.w").vec().setZero();
  }
  const Tensor x = random_tensor({4, 4, 4}, 10);
  AttentionRecorder rec;
  ad::Graph g;
  const Tensor local = ad::local_attention(g, s, "b.local", g.constant(x), 2, 2, 0, &rec).value();
  const Tensor nonlocal = ad::nonlocal_attention(g, s, "b.nonlocal", g.constant(x), 2, 2, 0, &rec).value();
  REQUIRE(rec.maps.size() == 2);
  CHECK(rec.maps[0].second.shape() == Shape{4, 2, 4, 4});
  CHECK(rec.maps[1].second.shape() == Shape{2, 4, 4});
  for (const auto& [label, map] : rec.maps) {
    for (Index i = 0; i < map.size(); ++i) REQUIRE(std::abs(map[i] - 0.25) <= 1e-6);
  }
  // Local: each pixel receives the mean of V over its 2x2 window.
  const Tensor v = testing::qkv(s, "b.local.v", x);
  Tensor mean_v({4, 4, 4});
  for (Index y = 0; y < 4; ++y)
    for (Index xx = 0; xx < 4; ++xx)
      for (Index ch = 0; ch < 4; ++ch) {
        double acc = 0;
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) acc += v((y / 2) * 2 + dy, (xx / 2) * 2 + dx, ch);
        mean_v(y, xx, ch) = acc / 4;
      }
  CHECK(max_abs_diff(local, ad::conv2d(mean_v, s.at("b.local.proj.w"), s.at("b.local.proj.b"))) <= 1e-6);
  // Non-local: each window position receives the mean over the four windows.
  const Tensor vn = testing::qkv(s, "b.nonlocal.v", x);
  Tensor mean_w({4, 4, 4});
  for (Index y = 0; y < 4; ++y)
    for (Index xx = 0; xx < 4; ++xx)
      for (Index ch = 0; ch < 4; ++ch) {
        double acc = 0;
        for (Index wy = 0; wy < 2; ++wy)
          for (Index wx = 0; wx < 2; ++wx) acc += vn(wy * 2 + y % 2, wx * 2 + xx % 2, ch);
        mean_w(y, xx, ch) = acc / 4;
      }
  CHECK(max_abs_diff(nonlocal, ad::conv2d(mean_w, s.at("b.nonlocal.proj.w"), s.at("b.nonlocal.proj.b"))) <= 1e-6);
}

TEST_CASE("attention rejects indivisible extents") {
  const ParamStore s = block(4, 2, 4, 3, 11);
  ad::Graph g;
  const ad::Var x = g.constant(Tensor({6, 8, 4}));
  CHECK_THROWS_AS(ad::local_attention(g, s, "b.local", x, 4, 2), InvalidConfig);
  CHECK_THROWS_AS(ad::nonlocal_attention(g, s, "b.nonlocal", g.constant(Tensor({8, 8, 4})), 3, 2), InvalidConfig);
  CHECK_THROWS_AS(ad::local_attention(g, s, "b.local", g.constant(Tensor({8, 8, 4})), 4, 3), InvalidConfig);
}

TEST_CASE("closed gate in the feed-forward passes the input") {
  ParamStore s = block(4, 1, 2, 2, 12, false);
  s.at("b.ffn.b1.pw.w").vec().setZero();
  s.at("b.ffn.b1.pw.b").vec().setZero();
  s.at("b.ffn.b1.dw.b").vec().setZero();
  ad::Graph g;
  const Tensor x = random_tensor({4, 4, 4}, 13);
  CHECK(max_abs_diff(ad::gdfn(g, s, "b.ffn", g.constant(x)).value(), x) == 0.0);
}

TEST_CASE("lnlb gradients match central differences") {
  ParamStore s = block(4, 2, 2, 2, 14);
  LnltConfig cfg;
  cfg.window_size = 2;
  cfg.window_count = 2;
  const Tensor x = random_tensor({4, 4, 4}, 15), probe = random_tensor({4, 4, 4}, 16);
  auto f = [&](ad::Graph& g) {
    return ad::sum(ad::mul(ad::lnlb_forward(g, s, "b", g.constant(x), cfg, 2), g.constant(probe)));
  };
  GradcheckOptions opt;
  opt.samples = 80;
  opt.seed = 5;
  CHECK(fd_gradcheck(f, s, opt).max_rel_error < 1e-3);
}

TEST_CASE("denoiser shape, residual design and config validation") {
  const LnltConfig cfg = toy_config(3);
  Rng rng = make_rng(17, Stream::kParamInit);
  ParamStore s;
  init_lnlt_params(s, cfg, rng);
  CHECK(lnlt_config_from(s).base_channels == 4);
  const Tensor x = random_tensor({8, 8, 3}, 18, -10, 10);
  const Tensor z = lnlt_apply(x, 0.5, s, cfg);
  CHECK(z.shape() == x.shape());
  CHECK(z.all_finite());
  s.at("lnlt.out.w").vec().setZero();
  s.at("lnlt.out.b").vec().setZero();
  CHECK(lnlt_apply(x, 0.5, s, cfg) == x);
  CHECK_THROWS_AS(lnlt_apply(Tensor({6, 8, 3}), 0.5, s, cfg), InvalidConfig);
  CHECK_THROWS_AS(lnlt_apply(Tensor({8, 8, 2}), 0.5, s, cfg), InvalidShape);
  LnltConfig bad = cfg;
  bad.heads = {3, 2, 4};
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
}

TEST_CASE("position tables start at zero") {
  const LnltConfig cfg = toy_config(2);
  Rng rng = make_rng(19, Stream::kParamInit);
  ParamStore s;
  init_lnlt_params(s, cfg, rng);
  int tables = 0;
  for (const auto& [name, t] : s) {
    if (name.ends_with(".pos")) {
      ++tables;
      CHECK(t.vec().isZero(0.0));
    }
  }
  CHECK(tables == 10);
}

TEST_CASE("denoiser gradients, eta included") {
  LnltConfig cfg = toy_config(2);
  Rng rng = make_rng(20, Stream::kParamInit);
  ParamStore s;
  init_lnlt_params(s, cfg, rng);
  s.add("eta", Tensor::constant({1}, 0.7));
  const Tensor x = random_tensor({8, 8, 2}, 21), probe = random_tensor({8, 8, 2}, 22);
  auto f = [&](ad::Graph& g) {
    return ad::sum(ad::mul(ad::lnlt_denoise(g, s, g.constant(x), g.param(s, "eta"), cfg), g.constant(probe)));
  };
  GradcheckOptions opt;
  opt.samples = 60;
  opt.seed = 6;
  CHECK(fd_gradcheck(f, s, opt).max_rel_error < 1e-3);
}

TEST_CASE("shared weights collect the sum of per-stage gradients") {
  DenConfig den;
  den.bands = 2;
  den.blocks = 1;
  const LnltConfig lnlt = toy_config(2);
  const ParamStore s = init_dernn_params(den, lnlt, 23);
  const SensingOp op = SensingOp::from_mask(random_binary_mask(8, 8, 23), 2, 2);
  const Tensor y = forward_measure(random_tensor({8, 8, 2}, 24, 0, 1), op);
  const Tensor probe = random_tensor({8, 8, 2}, 25);

  ad::Graph tied;
  const GradientMap shared =
      tied.backward(ad::sum(ad::mul(ad::unrolled_forward(tied, s, y, op, 3), tied.constant(probe))));
  ad::Graph untied;
  const ad::Var out = ad::unrolled_forward(untied, s, y, op, 3, InitMode::kNormalizedAdjoint, true);
  CHECK(max_abs_diff(out.value(), ad::unrolled_forward(tied, s, y, op, 3).value()) == 0.0);
  untied.backward(ad::sum(ad::mul(out, untied.constant(probe))));
  for (const auto& [name, g] : shared) {
    Tensor summed(g.shape());
    for (int k = 1; k <= 3; ++k) summed.vec() += untied.grad(untied.param(s, name, k)).vec();
    REQUIRE(max_abs_diff(summed, g) <= 1e-10 * std::max(1.0, g.vec().cwiseAbs().maxCoeff()));
  }
  CHECK(shared.size() == static_cast<std::size_t>(s.count() - 2));
}
