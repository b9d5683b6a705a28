#include <algorithm>
#include <cmath>
#include <numbers>

#include "dernn/autograd.hpp"

namespace dernn::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

Graph& joint_graph(const Var& a, const Var& b) {
  Graph& g = a.graph();
  g.check(a);
  g.check(b);
  return g;
}

// Maps each output element of a broadcast binary op to its operand elements.
class BroadcastPlan {
 public:
  BroadcastPlan(const Shape& a, const Shape& b, const char* op) {
    if (a == b) {
      out_ = a;
      mode_ = Mode::kSame;
      return;
    }
    if (shape_numel(b) == 1 && a.size() >= b.size()) {
      out_ = a;
      mode_ = Mode::kScalarB;
      return;
    }
    if (shape_numel(a) == 1 && b.size() >= a.size()) {
      out_ = b;
      mode_ = Mode::kScalarA;
      return;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    out_.resize(rank);
    for (std::size_t d = 0; d < rank; ++d) {
      if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
        throw InvalidShape(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " + shape_string(b));
      }
      out_[d] = std::max(pa[d], pb[d]);
    }
    mode_ = Mode::kGeneral;
    const Index n = shape_numel(out_);
    auto ia = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n));
    auto ib = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n));
    std::vector<Index> sa(rank), sb(rank);
    Index stride_a = 1, stride_b = 1;
    for (std::size_t d = rank; d-- > 0;) {
      sa[d] = pa[d] == 1 ? 0 : stride_a;
      sb[d] = pb[d] == 1 ? 0 : stride_b;
      stride_a *= pa[d];
      stride_b *= pb[d];
    }
    std::vector<Index> idx(rank, 0);
    Index offa = 0, offb = 0;
    for (Index i = 0; i < n; ++i) {
      (*ia)[static_cast<std::size_t>(i)] = offa;
      (*ib)[static_cast<std::size_t>(i)] = offb;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        offa += sa[d];
        offb += sb[d];
        if (idx[d] < out_[d]) break;
        offa -= sa[d] * idx[d];
        offb -= sb[d] * idx[d];
        idx[d] = 0;
      }
    }
    ia_ = std::move(ia);
    ib_ = std::move(ib);
  }

  const Shape& out() const { return out_; }

  Index a(Index i) const {
    switch (mode_) {
      case Mode::kSame:
      case Mode::kScalarB:
        return i;
      case Mode::kScalarA:
        return 0;
      default:
        return (*ia_)[static_cast<std::size_t>(i)];
    }
  }
  Index b(Index i) const {
    switch (mode_) {
      case Mode::kSame:
      case Mode::kScalarA:
        return i;
      case Mode::kScalarB:
        return 0;
      default:
        return (*ib_)[static_cast<std::size_t>(i)];
    }
  }

 private:
  enum class Mode { kSame, kScalarA, kScalarB, kGeneral };
  Mode mode_ = Mode::kSame;
  Shape out_;
  std::shared_ptr<const std::vector<Index>> ia_, ib_;
};

// f(x, y) forward; da(x, y, out) and db(x, y, out) are partial derivatives.
template <typename F, typename DA, typename DB>
Var binary(const char* op, const Var& a, const Var& b, F f, DA da, DB db) {
  Graph& g = joint_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto plan = std::make_shared<BroadcastPlan>(av.shape(), bv.shape(), op);
  Tensor out(plan->out());
  for (Index i = 0; i < out.size(); ++i) out[i] = f(av[plan->a(i)], bv[plan->b(i)]);
  return g.record(op, std::move(out), {a, b}, [plan, da, db](Graph& gr, int self) {
    const Tensor& go = gr.out_grad(self);
    const int pa = gr.parent(self, 0), pb = gr.parent(self, 1);
    const Tensor& x = gr.value_of(pa);
    const Tensor& y = gr.value_of(pb);
    const Tensor& o = gr.value_of(self);
    if (gr.requires_grad(pa)) {
      Tensor& ga = gr.accumulate(pa);
      for (Index i = 0; i < go.size(); ++i) {
        const Index ia = plan->a(i), ib = plan->b(i);
        ga[ia] += go[i] * da(x[ia], y[ib], o[i]);
      }
    }
    if (gr.requires_grad(pb)) {
      Tensor& gb = gr.accumulate(pb);
      for (Index i = 0; i < go.size(); ++i) {
        const Index ia = plan->a(i), ib = plan->b(i);
        gb[ib] += go[i] * db(x[ia], y[ib], o[i]);
      }
    }
  });
}

// f(x) forward; df(x, out) derivative.
template <typename F, typename DF>
Var unary(const char* op, const Var& a, F f, DF df) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (Index i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return g.record(op, std::move(out), {a}, [df](Graph& gr, int self) {
    const int p = gr.parent(self, 0);
    if (!gr.requires_grad(p)) return;
    const Tensor& go = gr.out_grad(self);
    const Tensor& x = gr.value_of(p);
    const Tensor& o = gr.value_of(self);
    Tensor& gx = gr.accumulate(p);
    for (Index i = 0; i < go.size(); ++i) gx[i] += go[i] * df(x[i], o[i]);
  });
}

Index last_extent(const Shape& s, const char* op) {
  if (s.empty()) throw InvalidShape(std::string(op) + ": rank-0 tensor");
  return s.back();
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var scale(const Var& a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  for (double v : a.value().values()) {
    if (v < 0.0) throw NumericalError("sqrt: negative input");
  }
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double o) { return 0.5 / o; });
}

Var relu(const Var& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
      });
}

Var softplus(const Var& a) {
  return unary(
      "softplus", a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidParameter("clamp: lo must not exceed hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
  Graph& g = a.graph();
  Tensor out = Tensor::constant({1}, a.value().vec().sum());
  return g.record("sum", std::move(out), {a}, [](Graph& gr, int self) {
    const int p = gr.parent(self, 0);
    if (!gr.requires_grad(p)) return;
    gr.accumulate(p).vec().array() += gr.out_grad(self)[0];
  });
}

Var mean(const Var& a) {
  const Index n = a.value().size();
  if (n == 0) throw InvalidShape("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_lastdim(const Var& a) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Index c = last_extent(av.shape(), "sum_lastdim");
  Shape os = av.shape();
  os.back() = 1;
  Tensor out(os);
  const Index rows = c == 0 ? 0 : av.size() / c;
  for (Index r = 0; r < rows; ++r) out[r] = av.vec().segment(r * c, c).sum();
  return g.record("sum_lastdim", std::move(out), {a}, [c, rows](Graph& gr, int self) {
    const int p = gr.parent(self, 0);
    if (!gr.requires_grad(p)) return;
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.accumulate(p);
    for (Index r = 0; r < rows; ++r) gx.vec().segment(r * c, c).array() += go[r];
  });
}

Var mean_leading(const Var& a) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Index c = last_extent(av.shape(), "mean_leading");
  const Index rows = c == 0 ? 0 : av.size() / c;
  if (rows == 0) throw InvalidShape("mean_leading: empty tensor");
  Tensor out({c});
  for (Index r = 0; r < rows; ++r) out.vec() += av.vec().segment(r * c, c);
  out.vec() /= static_cast<double>(rows);
  return g.record("mean_leading", std::move(out), {a}, [c, rows](Graph& gr, int self) {
    const int p = gr.parent(self, 0);
    if (!gr.requires_grad(p)) return;
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.accumulate(p);
    const double inv = 1.0 / static_cast<double>(rows);
    for (Index r = 0; r < rows; ++r) gx.vec().segment(r * c, c) += inv * go.vec();
  });
}

Var reshape(const Var& a, Shape shape) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  if (shape_numel(shape) != av.size()) {
    throw InvalidShape("reshape: " + shape_string(av.shape()) + " to " + shape_string(shape));
  }
  return g.record("reshape", Tensor(std::move(shape), av.vec()), {a}, [](Graph& gr, int self) {
    const int p = gr.parent(self, 0);
    if (!gr.requires_grad(p)) return;
    gr.accumulate(p).vec() += gr.out_grad(self).vec();
  });
}

Var gather(const Var& a, std::shared_ptr<const std::vector<Index>> index, Shape out_shape) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  if (static_cast<Index>(index->size()) != shape_numel(out_shape)) {
    throw InvalidShape("gather: index length does not match output shape " + shape_string(out_shape));
  }
  Tensor out(std::move(out_shape));
  for (Index i = 0; i < out.size(); ++i) {
    const Index src = (*index)[static_cast<std::size_t>(i)];
    if (src >= av.size()) throw InvalidShape("gather: index out of range");
    out[i] = src < 0 ? 0.0 : av[src];
  }
  return g.record("gather", std::move(out), {a}, [index](Graph& gr, int self) {
    const int p = gr.parent(self, 0);
    if (!gr.requires_grad(p)) return;
    const Tensor& go = gr.out_grad(self);
    Tensor& gx = gr.accumulate(p);
    for (Index i = 0; i < go.size(); ++i) {
      const Index src = (*index)[static_cast<std::size_t>(i)];
      if (src >= 0) gx[src] += go[i];
    }
  });
}

Var concat_lastdim(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidShape("concat_lastdim: no inputs");
  Graph& g = parts.front().graph();
  Shape lead = parts.front().value().shape();
  last_extent(lead, "concat_lastdim");
  lead.pop_back();
  std::vector<Index> widths;
  Index total = 0;
  for (const Var& p : parts) {
    g.check(p);
    Shape s = p.value().shape();
    const Index c = last_extent(s, "concat_lastdim");
    s.pop_back();
    if (s != lead) throw InvalidShape("concat_lastdim: leading shapes differ");
    widths.push_back(c);
    total += c;
  }
  Shape os = lead;
  os.push_back(total);
  Tensor out(os);
  const Index rows = shape_numel(lead);
  Index off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    const Index c = widths[k];
    for (Index r = 0; r < rows; ++r) out.vec().segment(r * total + off, c) = pv.vec().segment(r * c, c);
    off += c;
  }
  return g.record("concat_lastdim", std::move(out), parts, [widths, rows, total](Graph& gr, int self) {
    const Tensor& go = gr.out_grad(self);
    Index off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const int p = gr.parent(self, k);
      const Index c = widths[k];
      if (gr.requires_grad(p)) {
        Tensor& gx = gr.accumulate(p);
        for (Index r = 0; r < rows; ++r) gx.vec().segment(r * c, c) += go.vec().segment(r * total + off, c);
      }
      off += c;
    }
  });
}

Var slice_lastdim(const Var& a, Index start, Index count) {
  const Shape& s = a.value().shape();
  const Index c = last_extent(s, "slice_lastdim");
  if (start < 0 || count < 0 || start + count > c) throw InvalidShape("slice_lastdim: range out of bounds");
  Shape os = s;
  os.back() = count;
  const Index rows = c == 0 ? 0 : a.value().size() / c;
  auto index = std::make_shared<std::vector<Index>>();
  index->reserve(static_cast<std::size_t>(rows * count));
  for (Index r = 0; r < rows; ++r) {
    for (Index j = 0; j < count; ++j) index->push_back(r * c + start + j);
  }
  return gather(a, std::move(index), std::move(os));
}

Var softmax_lastdim(const Var& a) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  if (av.size() == 0) throw InvalidShape("softmax_lastdim: empty tensor");
  const Index c = last_extent(av.shape(), "softmax_lastdim");
  if (c < 1) throw InvalidShape("softmax_lastdim: last axis must be >= 1");
  const Index rows = av.size() / c;
  Tensor out(av.shape());
  for (Index r = 0; r < rows; ++r) {
    auto x = av.vec().segment(r * c, c);
    auto y = out.vec().segment(r * c, c);
    const double m = x.maxCoeff();
    y = (x.array() - m).exp().matrix();
    y /= y.sum();
  }
  return g.record("softmax_lastdim", std::move(out), {a}, [c, rows](Graph& gr, int self) {
    const int p = gr.parent(self, 0);
    if (!gr.requires_grad(p)) return;
    const Tensor& go = gr.out_grad(self);
    const Tensor& y = gr.value_of(self);
    Tensor& gx = gr.accumulate(p);
    for (Index r = 0; r < rows; ++r) {
      auto yr = y.vec().segment(r * c, c);
      auto gr_ = go.vec().segment(r * c, c);
      const double s = yr.dot(gr_);
      gx.vec().segment(r * c, c).array() += yr.array() * (gr_.array() - s);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (!(eps > 0.0)) throw InvalidParameter("layer_norm: eps must be positive");
  Graph& g = x.graph();
  g.check(gamma);
  g.check(beta);
  const Tensor& xv = x.value();
  const Index c = last_extent(xv.shape(), "layer_norm");
  if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c}) {
    throw InvalidShape("layer_norm: gamma/beta must have shape [" + std::to_string(c) + "]");
  }
  const Index rows = c == 0 ? 0 : xv.size() / c;
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
  Tensor out(xv.shape());
  const auto& gv = gamma.value().vec();
  const auto& bv = beta.value().vec();
  for (Index r = 0; r < rows; ++r) {
    auto xr = xv.vec().segment(r * c, c);
    const double mu = xr.mean();
    const double var = (xr.array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    auto hr = xhat->vec().segment(r * c, c);
    hr = ((xr.array() - mu) * is).matrix();
    out.vec().segment(r * c, c) = (hr.array() * gv.array() + bv.array()).matrix();
  }
  return g.record("layer_norm", std::move(out), {x, gamma, beta}, [xhat, inv_std, c, rows](Graph& gr, int self) {
    const Tensor& go = gr.out_grad(self);
    const int px = gr.parent(self, 0), pg = gr.parent(self, 1), pb = gr.parent(self, 2);
    const auto& gv = gr.value_of(pg).vec();
    if (gr.requires_grad(pg)) {
      Tensor& gg = gr.accumulate(pg);
      for (Index r = 0; r < rows; ++r) {
        gg.vec().array() += go.vec().segment(r * c, c).array() * xhat->vec().segment(r * c, c).array();
      }
    }
    if (gr.requires_grad(pb)) {
      Tensor& gb = gr.accumulate(pb);
      for (Index r = 0; r < rows; ++r) gb.vec() += go.vec().segment(r * c, c);
    }
    if (gr.requires_grad(px)) {
      Tensor& gx = gr.accumulate(px);
      for (Index r = 0; r < rows; ++r) {
        Eigen::ArrayXd dh = go.vec().segment(r * c, c).array() * gv.array();
        auto hr = xhat->vec().segment(r * c, c).array();
        const double m1 = dh.mean();
        const double m2 = (dh * hr).mean();
        gx.vec().segment(r * c, c).array() += (*inv_std)[r] * (dh - m1 - hr * m2);
      }
    }
  });
}

Var matmul(const Var& a, const Var& b, bool transpose_b) {
  Graph& g = joint_graph(a, b);
  const Shape& sa = a.value().shape();
  const Shape& sb = b.value().shape();
  if (sa.size() < 2 || sb.size() != sa.size()) throw InvalidShape("matmul: ranks must match and be >= 2");
  if (!std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
    throw InvalidShape("matmul: batch dims differ " + shape_string(sa) + " vs " + shape_string(sb));
  }
  const Index m = sa[sa.size() - 2], k = sa.back();
  const Index kb = transpose_b ? sb.back() : sb[sb.size() - 2];
  const Index n = transpose_b ? sb[sb.size() - 2] : sb.back();
  if (kb != k) throw InvalidShape("matmul: inner dims differ " + shape_string(sa) + " vs " + shape_string(sb));
  const Index batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape os(sa.begin(), sa.end() - 2);
  os.push_back(m);
  os.push_back(n);
  Tensor out(os);
  const double* ad = a.value().data();
  const double* bd = b.value().data();
  for (Index t = 0; t < batch; ++t) {
    ConstMatMap A(ad + t * m * k, m, k);
    MatMap C(out.data() + t * m * n, m, n);
    if (transpose_b) {
      ConstMatMap B(bd + t * n * k, n, k);
      C.noalias() = A * B.transpose();
    } else {
      ConstMatMap B(bd + t * k * n, k, n);
      C.noalias() = A * B;
    }
  }
  return g.record("matmul", std::move(out), {a, b}, [batch, m, k, n, transpose_b](Graph& gr, int self) {
    const Tensor& go = gr.out_grad(self);
    const int pa = gr.parent(self, 0), pb = gr.parent(self, 1);
    const double* ad = gr.value_of(pa).data();
    const double* bd = gr.value_of(pb).data();
    const bool need_a = gr.requires_grad(pa), need_b = gr.requires_grad(pb);
    double* ga = need_a ? gr.accumulate(pa).data() : nullptr;
    double* gb = need_b ? gr.accumulate(pb).data() : nullptr;
    for (Index t = 0; t < batch; ++t) {
      ConstMatMap G(go.data() + t * m * n, m, n);
      ConstMatMap A(ad + t * m * k, m, k);
      if (transpose_b) {
        ConstMatMap B(bd + t * n * k, n, k);
        if (need_a) MatMap(ga + t * m * k, m, k).noalias() += G * B;
        if (need_b) MatMap(gb + t * n * k, n, k).noalias() += G.transpose() * A;
      } else {
        ConstMatMap B(bd + t * k * n, k, n);
        if (need_a) MatMap(ga + t * m * k, m, k).noalias() += G * B.transpose();
        if (need_b) MatMap(gb + t * k * n, k, n).noalias() += A.transpose() * G;
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape& sx = x.value().shape();
  const Shape& sw = weight.value().shape();
  if (sx.size() != 1 || sw.size() != 2 || sw[1] != sx[0]) {
    throw InvalidShape("linear: x " + shape_string(sx) + " incompatible with weight " + shape_string(sw));
  }
  Var y = reshape(matmul(reshape(x, {1, sx[0]}), weight, true), {sw[0]});
  return bias.valid() ? add(y, bias) : y;
}

Var charbonnier(const Var& a, const Var& b, double eps) {
  if (!(eps > 0.0)) throw InvalidParameter("charbonnier: eps must be positive");
  return mean(sqrt(add_scalar(square(sub(a, b)), eps * eps)));
}

}  // namespace dernn::ad
