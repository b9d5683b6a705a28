#include "dernn/autograd.hpp"

namespace dernn::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

struct ConvGeometry {
  Index h, w, cin, cout, k, ho, wo, cin_g, cout_g;
  Conv2dOptions opt;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, const Shape* bias, Conv2dOptions opt) {
  require_rank(in, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (opt.stride < 1 || opt.padding < 0 || opt.groups < 1) throw InvalidShape("conv2d: invalid stride/padding/groups");
  ConvGeometry g{};
  g.opt = opt;
  g.h = in[0];
  g.w = in[1];
  g.cin = in[2];
  g.cout = kernel[0];
  g.k = kernel[1];
  if (kernel[2] != g.k) throw InvalidShape("conv2d: kernel must be square " + shape_string(kernel));
  if (g.cin % opt.groups != 0 || g.cout % opt.groups != 0) {
    throw InvalidShape("conv2d: channels " + std::to_string(g.cin) + "->" + std::to_string(g.cout) +
                       " not divisible by groups " + std::to_string(opt.groups));
  }
  g.cin_g = g.cin / opt.groups;
  g.cout_g = g.cout / opt.groups;
  if (kernel[3] != g.cin_g) {
    throw InvalidShape("conv2d: kernel " + shape_string(kernel) + " inconsistent with input " + shape_string(in) +
                       " and groups " + std::to_string(opt.groups));
  }
  if (bias && *bias != Shape{g.cout}) throw InvalidShape("conv2d: bias must have shape [Cout]");
  const Index eh = g.h + 2 * opt.padding - g.k;
  const Index ew = g.w + 2 * opt.padding - g.k;
  if (eh < 0 || ew < 0) throw InvalidShape("conv2d: kernel larger than padded input");
  g.ho = eh / opt.stride + 1;
  g.wo = ew / opt.stride + 1;
  return g;
}

// Columns ordered (ky, kx, ci) to match a [Cout, k, k, Cin] kernel viewed as [Cout, k*k*Cin].
RowMatrix im2col(const ConvGeometry& g, const double* in) {
  const Index kk = g.k * g.k * g.cin;
  RowMatrix col = RowMatrix::Zero(g.ho * g.wo, kk);
  for (Index oy = 0; oy < g.ho; ++oy) {
    for (Index ox = 0; ox < g.wo; ++ox) {
      double* row = col.data() + (oy * g.wo + ox) * kk;
      for (Index ky = 0; ky < g.k; ++ky) {
        const Index iy = oy * g.opt.stride - g.opt.padding + ky;
        if (iy < 0 || iy >= g.h) continue;
        for (Index kx = 0; kx < g.k; ++kx) {
          const Index ix = ox * g.opt.stride - g.opt.padding + kx;
          if (ix < 0 || ix >= g.w) continue;
          const double* src = in + (iy * g.w + ix) * g.cin;
          std::copy(src, src + g.cin, row + (ky * g.k + kx) * g.cin);
        }
      }
    }
  }
  return col;
}

void col2im_add(const ConvGeometry& g, const RowMatrix& col, double* in_grad) {
  const Index kk = g.k * g.k * g.cin;
  for (Index oy = 0; oy < g.ho; ++oy) {
    for (Index ox = 0; ox < g.wo; ++ox) {
      const double* row = col.data() + (oy * g.wo + ox) * kk;
      for (Index ky = 0; ky < g.k; ++ky) {
        const Index iy = oy * g.opt.stride - g.opt.padding + ky;
        if (iy < 0 || iy >= g.h) continue;
        for (Index kx = 0; kx < g.k; ++kx) {
          const Index ix = ox * g.opt.stride - g.opt.padding + kx;
          if (ix < 0 || ix >= g.w) continue;
          double* dst = in_grad + (iy * g.w + ix) * g.cin;
          const double* src = row + (ky * g.k + kx) * g.cin;
          for (Index c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.opt.stride == 1 && g.opt.padding == 0; }

void conv_forward(const ConvGeometry& g, const double* in, const double* ker, const double* bias, double* out) {
  if (g.opt.groups == 1) {
    const Index kk = g.k * g.k * g.cin;
    ConstMatMap W(ker, g.cout, kk);
    MatMap O(out, g.ho * g.wo, g.cout);
    if (is_pointwise(g)) {
      O.noalias() = ConstMatMap(in, g.h * g.w, g.cin) * W.transpose();
    } else {
      O.noalias() = im2col(g, in) * W.transpose();
    }
    if (bias) O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias, g.cout);
    return;
  }
  for (Index oy = 0; oy < g.ho; ++oy) {
    for (Index ox = 0; ox < g.wo; ++ox) {
      double* o = out + (oy * g.wo + ox) * g.cout;
      for (Index co = 0; co < g.cout; ++co) {
        const Index base = (co / g.cout_g) * g.cin_g;
        double acc = bias ? bias[co] : 0.0;
        for (Index ky = 0; ky < g.k; ++ky) {
          const Index iy = oy * g.opt.stride - g.opt.padding + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (Index kx = 0; kx < g.k; ++kx) {
            const Index ix = ox * g.opt.stride - g.opt.padding + kx;
            if (ix < 0 || ix >= g.w) continue;
            const double* src = in + (iy * g.w + ix) * g.cin + base;
            const double* kw = ker + ((co * g.k + ky) * g.k + kx) * g.cin_g;
            for (Index j = 0; j < g.cin_g; ++j) acc += src[j] * kw[j];
          }
        }
        o[co] = acc;
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions opt) {
  const bool has_bias = bias.size() != 0;
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), has_bias ? &bias.shape() : nullptr, opt);
  Tensor out({g.ho, g.wo, g.cout});
  conv_forward(g, input.data(), kernel.data(), has_bias ? bias.data() : nullptr, out.data());
  return out;
}

Var conv2d(const Var& input, const Var& kernel, const Var& bias, Conv2dOptions opt) {
  Graph& gr = input.graph();
  gr.check(kernel);
  if (bias.valid()) gr.check(bias);
  const Tensor& in = input.value();
  const Tensor& ker = kernel.value();
  const ConvGeometry g = conv_geometry(in.shape(), ker.shape(), bias.valid() ? &bias.value().shape() : nullptr, opt);
  Tensor out({g.ho, g.wo, g.cout});
  conv_forward(g, in.data(), ker.data(), bias.valid() ? bias.value().data() : nullptr, out.data());
  return gr.record("conv2d", std::move(out), {input, kernel, bias}, [g](Graph& G, int self) {
    const Tensor& go = G.out_grad(self);
    const int pi = G.parent(self, 0), pk = G.parent(self, 1), pb = G.parent(self, 2);
    const double* in = G.value_of(pi).data();
    const double* ker = G.value_of(pk).data();
    if (pb >= 0 && G.requires_grad(pb)) {
      Tensor& gb = G.accumulate(pb);
      MatMap(gb.data(), 1, g.cout) += ConstMatMap(go.data(), g.ho * g.wo, g.cout).colwise().sum();
    }
    const bool need_in = G.requires_grad(pi), need_k = G.requires_grad(pk);
    if (g.opt.groups == 1) {
      const Index kk = g.k * g.k * g.cin;
      ConstMatMap Go(go.data(), g.ho * g.wo, g.cout);
      ConstMatMap W(ker, g.cout, kk);
      if (is_pointwise(g)) {
        ConstMatMap X(in, g.h * g.w, g.cin);
        if (need_k) MatMap(G.accumulate(pk).data(), g.cout, kk).noalias() += Go.transpose() * X;
        if (need_in) MatMap(G.accumulate(pi).data(), g.h * g.w, g.cin).noalias() += Go * W;
        return;
      }
      if (need_k) {
        const RowMatrix col = im2col(g, in);
        MatMap(G.accumulate(pk).data(), g.cout, kk).noalias() += Go.transpose() * col;
      }
      if (need_in) {
        const RowMatrix dcol = Go * W;
        col2im_add(g, dcol, G.accumulate(pi).data());
      }
      return;
    }
    double* gi = need_in ? G.accumulate(pi).data() : nullptr;
    double* gk = need_k ? G.accumulate(pk).data() : nullptr;
    for (Index oy = 0; oy < g.ho; ++oy) {
      for (Index ox = 0; ox < g.wo; ++ox) {
        const double* o = go.data() + (oy * g.wo + ox) * g.cout;
        for (Index co = 0; co < g.cout; ++co) {
          const double gval = o[co];
          if (gval == 0.0) continue;
          const Index base = (co / g.cout_g) * g.cin_g;
          for (Index ky = 0; ky < g.k; ++ky) {
            const Index iy = oy * g.opt.stride - g.opt.padding + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (Index kx = 0; kx < g.k; ++kx) {
              const Index ix = ox * g.opt.stride - g.opt.padding + kx;
              if (ix < 0 || ix >= g.w) continue;
              const Index in_off = (iy * g.w + ix) * g.cin + base;
              const Index k_off = ((co * g.k + ky) * g.k + kx) * g.cin_g;
              for (Index j = 0; j < g.cin_g; ++j) {
                if (gi) gi[in_off + j] += gval * ker[k_off + j];
                if (gk) gk[k_off + j] += gval * in[in_off + j];
              }
            }
          }
        }
      }
    }
  });
}

Var conv_transpose2x2(const Var& input, const Var& kernel, const Var& bias) {
  Graph& gr = input.graph();
  gr.check(kernel);
  const Tensor& in = input.value();
  const Tensor& ker = kernel.value();
  require_rank(in.shape(), 3, "conv_transpose2x2 input");
  require_rank(ker.shape(), 4, "conv_transpose2x2 kernel");
  const Index h = in.dim(0), w = in.dim(1), cin = in.dim(2);
  const Index cout = ker.dim(3);
  if (ker.dim(0) != cin || ker.dim(1) != 2 || ker.dim(2) != 2) {
    throw InvalidShape("conv_transpose2x2: kernel " + shape_string(ker.shape()) + " incompatible with input " +
                       shape_string(in.shape()));
  }
  if (bias.valid() && bias.value().shape() != Shape{cout}) throw InvalidShape("conv_transpose2x2: bias shape");
  // tmp[h*w, (a, b, co)] = in[h*w, ci] * K[ci, (a, b, co)]
  const RowMatrix tmp = ConstMatMap(in.data(), h * w, cin) * ConstMatMap(ker.data(), cin, 4 * cout);
  Tensor out({2 * h, 2 * w, cout});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index a = 0; a < 2; ++a) {
        for (Index b = 0; b < 2; ++b) {
          double* dst = out.data() + ((2 * y + a) * 2 * w + (2 * x + b)) * cout;
          const double* src = tmp.data() + (y * w + x) * 4 * cout + (a * 2 + b) * cout;
          for (Index c = 0; c < cout; ++c) dst[c] = src[c] + (bias.valid() ? bias.value()[c] : 0.0);
        }
      }
    }
  }
  return gr.record("conv_transpose2x2", std::move(out), {input, kernel, bias}, [h, w, cin, cout](Graph& G, int self) {
    const Tensor& go = G.out_grad(self);
    const int pi = G.parent(self, 0), pk = G.parent(self, 1), pb = G.parent(self, 2);
    RowMatrix dtmp(h * w, 4 * cout);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        for (Index a = 0; a < 2; ++a) {
          for (Index b = 0; b < 2; ++b) {
            const double* src = go.data() + ((2 * y + a) * 2 * w + (2 * x + b)) * cout;
            double* dst = dtmp.data() + (y * w + x) * 4 * cout + (a * 2 + b) * cout;
            std::copy(src, src + cout, dst);
          }
        }
      }
    }
    if (pb >= 0 && G.requires_grad(pb)) {
      Tensor& gb = G.accumulate(pb);
      MatMap(gb.data(), 1, cout) += ConstMatMap(go.data(), 4 * h * w, cout).colwise().sum();
    }
    if (G.requires_grad(pi)) {
      MatMap(G.accumulate(pi).data(), h * w, cin).noalias() +=
          dtmp * ConstMatMap(G.value_of(pk).data(), cin, 4 * cout).transpose();
    }
    if (G.requires_grad(pk)) {
      MatMap(G.accumulate(pk).data(), cin, 4 * cout).noalias() +=
          ConstMatMap(G.value_of(pi).data(), h * w, cin).transpose() * dtmp;
    }
  });
}

}  // namespace dernn::ad
