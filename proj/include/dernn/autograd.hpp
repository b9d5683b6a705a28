#pragma once

// Minimal reverse-mode differentiation over Tensor-valued nodes.
//
// A Graph records every operation as a node holding its value, its parent
// node ids and a backward closure. Node ids are assigned in creation order,
// so reverse id order is a valid topological order and backward() visits each
// node once. Values are immutable once recorded.
//
// Every op checks its output for NaN/Inf and throws NumericalError naming the
// op. A Graph must be confined to one thread.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dernn/param_store.hpp"
#include "dernn/tensor.hpp"

namespace dernn::ad {

class Graph;

class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  int id() const { return id_; }
  Graph& graph() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* g, int id, std::uint64_t generation) : graph_(g), id_(id), generation_(generation) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
  std::uint64_t generation_ = 0;
};

class Graph {
 public:
  // Propagates the node's output gradient into its parents via accumulate().
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Leaf bound to a store entry. The same (name, tag) returns the same node,
  // so a parameter used by several stages accumulates one summed gradient.
  // Distinct tags give distinct leaves over the same values (untied copies).
  Var param(const ParamStore& store, const std::string& name, int tag = 0);

  Var record(const char* op, Tensor value, std::vector<Var> parents, BackwardFn fn);

  const Tensor& value(const Var& v) const;
  const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  int parent(int self, std::size_t k) const { return nodes_[static_cast<std::size_t>(self)].parents[k]; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Tensor& out_grad(int self) const { return grads_[static_cast<std::size_t>(self)]; }
  // Zero-initialized gradient buffer of node `id`; backward closures add into it.
  Tensor& accumulate(int id);

  // Reverse sweep seeded with `seed` (same shape as output). Returns gradients
  // summed per parameter name for every param leaf in the graph; leaves the
  // output does not depend on get zero gradients.
  GradientMap backward(const Var& output, const Tensor& seed);
  GradientMap backward(const Var& output);

  // Gradient of any node after backward(); zeros if none flowed.
  Tensor grad(const Var& v) const;

  // Drops every node. Outstanding Vars become detached and raise StateError.
  void clear();

  std::size_t node_count() const { return nodes_.size(); }
  void check(const Var& v) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
    const char* op = "";
    std::string param_name;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // deque: references to recorded values stay valid
  std::vector<Tensor> grads_;
  std::map<std::pair<std::string, int>, int> params_;
  std::uint64_t generation_;
};

// ---- elementwise (numpy-style broadcasting over aligned trailing axes) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var sqrt(const Var& a);
Var relu(const Var& a);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Var gelu(const Var& a);
Var softplus(const Var& a);
// Gradient is passed where lo < x < hi, zero elsewhere.
Var clamp(const Var& a, double lo, double hi);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
// [..., C] -> [..., 1]
Var sum_lastdim(const Var& a);
// [..., C] -> [C], mean over every leading position
Var mean_leading(const Var& a);

// ---- shape ----
Var reshape(const Var& a, Shape shape);
// out[i] = index[i] < 0 ? 0 : a[index[i]]; backward scatter-adds.
Var gather(const Var& a, std::shared_ptr<const std::vector<Index>> index, Shape out_shape);
Var concat_lastdim(const std::vector<Var>& parts);
Var slice_lastdim(const Var& a, Index start, Index count);

// ---- normalization / attention primitives ----
Var softmax_lastdim(const Var& a);
// Normalizes over the last axis; gamma/beta have shape [C].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
// a: [B..., m, k]; b: [B..., k, n] (or [B..., n, k] with transpose_b). Leading dims must match.
Var matmul(const Var& a, const Var& b, bool transpose_b = false);
// x: [n], weight: [m, n], bias: [m] -> [m]
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- convolution ----
struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

// input [H, W, Cin], kernel [Cout, k, k, Cin/groups], bias [Cout] (may be an invalid Var).
Var conv2d(const Var& input, const Var& kernel, const Var& bias, Conv2dOptions opt = {});
// Stride-2, 2x2 transposed convolution: input [H, W, Cin], kernel [Cin, 2, 2, Cout] -> [2H, 2W, Cout].
Var conv_transpose2x2(const Var& input, const Var& kernel, const Var& bias);

// Value-only convolution for callers outside a graph.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv2dOptions opt = {});

// Charbonnier loss: mean(sqrt((a - b)^2 + eps^2)).
Var charbonnier(const Var& a, const Var& b, double eps);

}  // namespace dernn::ad
