#include "dernn/lnlt.hpp"

#include <cmath>

namespace dernn {

void LnltConfig::validate() const {
  if (bands < 1) throw InvalidConfig("lnlt: bands must be >= 1");
  if (base_channels < 1) throw InvalidConfig("lnlt: base_channels must be >= 1");
  if (blocks_per_level < 0) throw InvalidConfig("lnlt: blocks_per_level must be >= 0");
  if (window_size < 1 || window_count < 1) throw InvalidConfig("lnlt: window size and count must be >= 1");
  if (ffn_expansion < 1) throw InvalidConfig("lnlt: ffn_expansion must be >= 1");
  for (int l = 0; l < 3; ++l) {
    const Index width = base_channels << l;
    if (heads[static_cast<std::size_t>(l)] < 1 || width % heads[static_cast<std::size_t>(l)] != 0) {
      throw InvalidConfig("lnlt: level " + std::to_string(l) + " width " + std::to_string(width) +
                          " not divisible by heads " + std::to_string(heads[static_cast<std::size_t>(l)]));
    }
  }
}

void LnltConfig::validate_extent(Index h, Index w) const {
  if (h % 4 != 0 || w % 4 != 0) {
    throw InvalidConfig("lnlt: input " + std::to_string(h) + "x" + std::to_string(w) + " must divide by 4");
  }
  for (int l = 0; l < 3; ++l) {
    const Index eh = h >> l, ew = w >> l;
    if (eh % window_size || ew % window_size || eh % window_count || ew % window_count) {
      throw InvalidConfig("lnlt: level " + std::to_string(l) + " extent " + std::to_string(eh) + "x" +
                          std::to_string(ew) + " not divisible by M=" + std::to_string(window_size) +
                          " and N=" + std::to_string(window_count));
    }
  }
}

namespace {

void add_conv(ParamStore& store, const std::string& name, Index cout, Index k, Index cin_per_group, Rng& rng) {
  store.add(name + ".w", init_uniform_fan_in({cout, k, k, cin_per_group}, k * k * cin_per_group, rng));
  store.add(name + ".b", Tensor({cout}));
}

void add_layer_norm(ParamStore& store, const std::string& name, Index c) {
  store.add(name + ".g", Tensor::constant({c}, 1.0));
  store.add(name + ".b", Tensor({c}));
}

void add_attention(ParamStore& store, const std::string& p, Index c, Index heads, Index tokens, Rng& rng) {
  for (const char* which : {".q", ".k", ".v"}) {
    add_conv(store, p + which + ".pw", c, 1, c, rng);
    add_conv(store, p + which + ".dw", c, 3, 1, rng);
  }
  add_conv(store, p + ".proj", c, 1, c, rng);
  store.add(p + ".pos", Tensor({heads, tokens, tokens}));
}

}  // namespace

void init_lnlb_params(ParamStore& store, const std::string& prefix, Index channels, Index heads,
                      const LnltConfig& cfg, Rng& rng) {
  const Index hidden = cfg.ffn_expansion * channels;
  add_layer_norm(store, prefix + ".ln1", channels);
  add_attention(store, prefix + ".local", channels, heads, cfg.window_size * cfg.window_size, rng);
  add_layer_norm(store, prefix + ".ln2", channels);
  add_attention(store, prefix + ".nonlocal", channels, heads, cfg.window_count * cfg.window_count, rng);
  add_layer_norm(store, prefix + ".ln3", channels);
  for (const char* branch : {".ffn.b1", ".ffn.b2"}) {
    add_conv(store, prefix + branch + ".pw", hidden, 1, channels, rng);
    add_conv(store, prefix + branch + ".dw", hidden, 3, 1, rng);
  }
  add_conv(store, prefix + ".ffn.proj", channels, 1, hidden, rng);
}

void init_lnlt_params(ParamStore& store, const LnltConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index c = cfg.base_channels;
  auto level = [&](const std::string& name, Index width, Index heads) {
    for (Index b = 0; b < cfg.blocks_per_level; ++b) {
      init_lnlb_params(store, "lnlt." + name + ".block" + std::to_string(b), width, heads, cfg, rng);
    }
  };
  add_conv(store, "lnlt.embed", c, 3, cfg.bands + 1, rng);
  level("enc0", c, cfg.heads[0]);
  add_conv(store, "lnlt.down0", 2 * c, 4, c, rng);
  level("enc1", 2 * c, cfg.heads[1]);
  add_conv(store, "lnlt.down1", 4 * c, 4, 2 * c, rng);
  level("mid", 4 * c, cfg.heads[2]);
  store.add("lnlt.up1.w", init_uniform_fan_in({4 * c, 2, 2, 2 * c}, 4 * c, rng));
  store.add("lnlt.up1.b", Tensor({2 * c}));
  add_conv(store, "lnlt.fuse1", 2 * c, 1, 4 * c, rng);
  level("dec1", 2 * c, cfg.heads[1]);
  store.add("lnlt.up0.w", init_uniform_fan_in({2 * c, 2, 2, c}, 2 * c, rng));
  store.add("lnlt.up0.b", Tensor({c}));
  add_conv(store, "lnlt.fuse0", c, 1, 2 * c, rng);
  level("dec0", c, cfg.heads[0]);
  add_conv(store, "lnlt.out", cfg.bands, 3, c, rng);
  set_meta(store, "lnlt",
           {cfg.bands, cfg.base_channels, cfg.blocks_per_level, cfg.heads[0], cfg.heads[1], cfg.heads[2],
            cfg.window_size, cfg.window_count, cfg.ffn_expansion});
}

LnltConfig lnlt_config_from(const ParamStore& store) {
  const auto v = get_meta(store, "lnlt");
  if (v.size() != 9) throw FormatError("meta.lnlt must hold 9 values");
  LnltConfig cfg;
  cfg.bands = v[0];
  cfg.base_channels = v[1];
  cfg.blocks_per_level = v[2];
  cfg.heads = {v[3], v[4], v[5]};
  cfg.window_size = v[6];
  cfg.window_count = v[7];
  cfg.ffn_expansion = v[8];
  cfg.validate();
  return cfg;
}

namespace ad {

namespace {

Var conv(Graph& g, const ParamStore& s, const std::string& name, const Var& x, int tag, Conv2dOptions opt = {}) {
  return conv2d(x, g.param(s, name + ".w", tag), g.param(s, name + ".b", tag), opt);
}

Var depthwise3x3(Graph& g, const ParamStore& s, const std::string& name, const Var& x, int tag) {
  const Index c = x.value().dim(2);
  return conv(g, s, name, x, tag, {1, 1, c});
}

Var norm(Graph& g, const ParamStore& s, const std::string& name, const Var& x, double eps, int tag) {
  return layer_norm(x, g.param(s, name + ".g", tag), g.param(s, name + ".b", tag), eps);
}

// Bijection between an [H, W, C] map and a window/head token layout.
// `head_major` false: [grid windows, heads, pixels, d]   (local)
// `head_major` true:  [heads, grid windows, pixels * d]  (non-local)
struct Partition {
  std::shared_ptr<std::vector<Index>> forward;  // token layout -> map
  std::shared_ptr<std::vector<Index>> inverse;  // map -> token layout
  Shape shape;
};

Partition make_partition(Index h, Index w, Index c, Index grid_y, Index grid_x, Index heads, bool head_major) {
  const Index sy = h / grid_y, sx = w / grid_x, d = c / heads;
  const Index windows = grid_y * grid_x, pixels = sy * sx;
  Partition p;
  p.forward = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(h * w * c));
  p.inverse = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(h * w * c));
  p.shape = head_major ? Shape{heads, windows, pixels * d} : Shape{windows, heads, pixels, d};
  for (Index win = 0; win < windows; ++win) {
    const Index wy = win / grid_x, wx = win % grid_x;
    for (Index hd = 0; hd < heads; ++hd) {
      for (Index px = 0; px < pixels; ++px) {
        const Index y = wy * sy + px / sx, x = wx * sx + px % sx;
        for (Index j = 0; j < d; ++j) {
          const Index token = head_major ? ((hd * windows + win) * pixels + px) * d + j
                                         : ((win * heads + hd) * pixels + px) * d + j;
          const Index src = (y * w + x) * c + hd * d + j;
          (*p.forward)[static_cast<std::size_t>(token)] = src;
          (*p.inverse)[static_cast<std::size_t>(src)] = token;
        }
      }
    }
  }
  return p;
}

Var attend(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, const Partition& part,
           double scale_factor, int tag, AttentionRecorder* rec) {
  const Qkv qkv = qkv_project(g, store, prefix, x, tag);
  Var q = gather(qkv.q, part.forward, part.shape);
  Var k = gather(qkv.k, part.forward, part.shape);
  Var v = gather(qkv.v, part.forward, part.shape);
  Var scores = add(scale(matmul(q, k, true), scale_factor), g.param(store, prefix + ".pos", tag));
  Var attn = softmax_lastdim(scores);
  if (rec) rec->maps.emplace_back(prefix, attn.value());
  Var merged = gather(matmul(attn, v), part.inverse, x.value().shape());
  return conv(g, store, prefix + ".proj", merged, tag);
}

void require_map(const Var& x, const char* what) {
  require_rank(x.value().shape(), 3, what);
}

}  // namespace

Qkv qkv_project(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, int tag) {
  require_map(x, "qkv_project input");
  auto project = [&](const char* which) {
    const std::string p = prefix + which;
    return depthwise3x3(g, store, p + ".dw", conv(g, store, p + ".pw", x, tag), tag);
  };
  return {project(".q"), project(".k"), project(".v")};
}

Var local_attention(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, Index window_size,
                    Index heads, int tag, AttentionRecorder* rec) {
  require_map(x, "local_msa input");
  const Index h = x.value().dim(0), w = x.value().dim(1), c = x.value().dim(2);
  if (window_size < 1 || h % window_size || w % window_size) {
    throw InvalidConfig("local_msa: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by M=" +
                        std::to_string(window_size));
  }
  if (heads < 1 || c % heads) throw InvalidConfig("local_msa: channels not divisible by heads");
  const Partition part = make_partition(h, w, c, h / window_size, w / window_size, heads, false);
  const double d = static_cast<double>(c / heads);
  return attend(g, store, prefix, x, part, 1.0 / std::sqrt(d), tag, rec);
}

Var nonlocal_attention(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x,
                       Index window_count, Index heads, int tag, AttentionRecorder* rec) {
  require_map(x, "nonlocal_msa input");
  const Index h = x.value().dim(0), w = x.value().dim(1), c = x.value().dim(2);
  if (window_count < 1 || h % window_count || w % window_count) {
    throw InvalidConfig("nonlocal_msa: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by N=" +
                        std::to_string(window_count));
  }
  if (heads < 1 || c % heads) throw InvalidConfig("nonlocal_msa: channels not divisible by heads");
  const Partition part = make_partition(h, w, c, window_count, window_count, heads, true);
  const double d = static_cast<double>(h * w * c) / static_cast<double>(heads * window_count * window_count);
  return attend(g, store, prefix, x, part, 1.0 / std::sqrt(d), tag, rec);
}

Var local_msa(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, Index window_size,
              Index heads, int tag, AttentionRecorder* rec) {
  return add(local_attention(g, store, prefix, x, window_size, heads, tag, rec), x);
}

Var nonlocal_msa(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, Index window_count,
                 Index heads, int tag, AttentionRecorder* rec) {
  return add(nonlocal_attention(g, store, prefix, x, window_count, heads, tag, rec), x);
}

namespace {
Var gdfn_core(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, int tag) {
  auto branch = [&](const char* which) {
    const std::string p = prefix + which;
    return depthwise3x3(g, store, p + ".dw", conv(g, store, p + ".pw", x, tag), tag);
  };
  Var gate = gelu(branch(".b1"));
  Var value = branch(".b2");
  return conv(g, store, prefix + ".proj", mul(gate, value), tag);
}
}  // namespace

Var gdfn(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, int tag) {
  require_map(x, "gdfn input");
  return add(gdfn_core(g, store, prefix, x, tag), x);
}

Var lnlb_forward(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, const LnltConfig& cfg,
                 Index heads, int tag, AttentionRecorder* rec) {
  Var h = add(x, local_attention(g, store, prefix + ".local", norm(g, store, prefix + ".ln1", x, cfg.ln_eps, tag),
                                 cfg.window_size, heads, tag, rec));
  h = add(h, nonlocal_attention(g, store, prefix + ".nonlocal", norm(g, store, prefix + ".ln2", h, cfg.ln_eps, tag),
                                cfg.window_count, heads, tag, rec));
  return add(h, gdfn_core(g, store, prefix + ".ffn", norm(g, store, prefix + ".ln3", h, cfg.ln_eps, tag), tag));
}

Var lnlt_denoise(Graph& g, const ParamStore& store, const Var& x, const Var& eta, const LnltConfig& cfg, int tag,
                 AttentionRecorder* rec) {
  cfg.validate();
  const Shape& s = x.value().shape();
  require_rank(s, 3, "lnlt input");
  if (s[2] != cfg.bands) {
    throw InvalidShape("lnlt: expected " + std::to_string(cfg.bands) + " bands, got " + shape_string(s));
  }
  cfg.validate_extent(s[0], s[1]);
  if (eta.value().size() != 1) throw InvalidShape("lnlt: eta must be a single value");

  auto level = [&](const std::string& name, Var h, Index heads) {
    for (Index b = 0; b < cfg.blocks_per_level; ++b) {
      h = lnlb_forward(g, store, "lnlt." + name + ".block" + std::to_string(b), h, cfg, heads, tag, rec);
    }
    return h;
  };

  Var eta_plane = mul(g.constant(Tensor::constant({s[0], s[1], 1}, 1.0)), reshape(eta, {1}));
  Var x0 = conv(g, store, "lnlt.embed", concat_lastdim({x, eta_plane}), tag, {1, 1, 1});
  Var e0 = level("enc0", x0, cfg.heads[0]);
  Var e1 = level("enc1", conv(g, store, "lnlt.down0", e0, tag, {2, 1, 1}), cfg.heads[1]);
  Var mid = level("mid", conv(g, store, "lnlt.down1", e1, tag, {2, 1, 1}), cfg.heads[2]);
  Var u1 = conv_transpose2x2(mid, g.param(store, "lnlt.up1.w", tag), g.param(store, "lnlt.up1.b", tag));
  Var d1 = level("dec1", conv(g, store, "lnlt.fuse1", concat_lastdim({u1, e1}), tag), cfg.heads[1]);
  Var u0 = conv_transpose2x2(d1, g.param(store, "lnlt.up0.w", tag), g.param(store, "lnlt.up0.b", tag));
  Var d0 = level("dec0", conv(g, store, "lnlt.fuse0", concat_lastdim({u0, e0}), tag), cfg.heads[0]);
  Var residual = conv(g, store, "lnlt.out", d0, tag, {1, 1, 1});
  return add(x, residual);
}

}  // namespace ad

Tensor lnlt_apply(const Tensor& x, double eta, const ParamStore& store, const LnltConfig& cfg,
                  AttentionRecorder* rec) {
  ad::Graph g;
  ad::Var out = ad::lnlt_denoise(g, store, g.constant(x), g.constant(Tensor::constant({1}, eta)), cfg, 0, rec);
  return out.value();
}

}  // namespace dernn
