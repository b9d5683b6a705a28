#pragma once

// Local and Non-Local Transformer denoiser.
//
// Three-level U-shape over [H, W, C] feature maps with widths [C, 2C, 4C]:
//
//   X0 = Conv3x3(concat(x, eta-plane))
//   enc0 -> down -> enc1 -> down -> bottleneck -> up, fuse(enc1) -> dec1 -> up, fuse(enc0) -> dec0
//   z  = x + Conv3x3(dec0)
//
// Each level stacks `blocks_per_level` LNLBs:
//
//   X = X + LocalAttention(LN1(X))
//   X = X + NonLocalAttention(LN2(X))
//   X = X + GatedFeedForward(LN3(X))
//
// Both attentions project Q, K, V along channels (Conv1x1 then depthwise
// Conv3x3) and split heads over channel groups of width d = C / heads.
// Local: tokens are the M² pixels of each M x M window; per window and head
//   A = softmax(Q Kᵀ / sqrt(d) + P_L),  P_L in R^{M² x M²}.
// Non-local: the map is cut into an N x N grid of windows and each window is
//   one token of dimension (H W / N²) d, so A is N² x N² for any H, W:
//   A = softmax(Q Kᵀ / sqrt(H W d / N²) + P_NL).

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "dernn/autograd.hpp"

namespace dernn {

struct LnltConfig {
  Index bands = 0;              // input/output spectral channels
  Index base_channels = 32;     // C
  Index blocks_per_level = 1;
  std::array<Index, 3> heads{1, 2, 4};
  Index window_size = 8;        // M
  Index window_count = 8;       // N
  Index ffn_expansion = 2;      // GDFN hidden width = expansion * channels
  double ln_eps = 1e-5;

  // Throws InvalidConfig when channel/head arithmetic is inconsistent.
  void validate() const;
  // Throws InvalidConfig unless every level of an H x W input divides by M and N.
  void validate_extent(Index h, Index w) const;
};

void init_lnlt_params(ParamStore& store, const LnltConfig& cfg, Rng& rng);
LnltConfig lnlt_config_from(const ParamStore& store);

// Collects post-softmax attention maps when passed to the forward functions.
struct AttentionRecorder {
  // (label, map). Local maps are [windows, heads, M², M²]; non-local [heads, N², N²].
  std::vector<std::pair<std::string, Tensor>> maps;
};

namespace ad {

struct Qkv {
  Var q, k, v;
};

// Q = DConv3x3(Conv1x1(X)), likewise K and V. Parameters under `prefix`.{q,k,v}.
Qkv qkv_project(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, int tag = 0);

// W_p Concat(heads) without the residual term.
Var local_attention(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, Index window_size,
                    Index heads, int tag = 0, AttentionRecorder* rec = nullptr);
Var nonlocal_attention(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x,
                       Index window_count, Index heads, int tag = 0, AttentionRecorder* rec = nullptr);

// Attention plus the residual input: W_p Concat(heads) + X.
Var local_msa(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, Index window_size,
              Index heads, int tag = 0, AttentionRecorder* rec = nullptr);
Var nonlocal_msa(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, Index window_count,
                 Index heads, int tag = 0, AttentionRecorder* rec = nullptr);

// W_p(GELU(DConv(Conv1x1(X))) ⊙ DConv(Conv1x1(X))) + X
Var gdfn(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, int tag = 0);

Var lnlb_forward(Graph& g, const ParamStore& store, const std::string& prefix, const Var& x, const LnltConfig& cfg,
                 Index heads, int tag = 0, AttentionRecorder* rec = nullptr);

// x: [H, W, bands]; eta: one element.
Var lnlt_denoise(Graph& g, const ParamStore& store, const Var& x, const Var& eta, const LnltConfig& cfg, int tag = 0,
                 AttentionRecorder* rec = nullptr);

}  // namespace ad

// Parameter registration for one LNLB of the given width (used by tests on single blocks).
void init_lnlb_params(ParamStore& store, const std::string& prefix, Index channels, Index heads,
                      const LnltConfig& cfg, Rng& rng);

// Value-level denoiser call.
Tensor lnlt_apply(const Tensor& x, double eta, const ParamStore& store, const LnltConfig& cfg,
                  AttentionRecorder* rec = nullptr);

}  // namespace dernn
