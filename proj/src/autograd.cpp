#include "dernn/autograd.hpp"

#include <atomic>

namespace dernn::ad {

namespace {
std::atomic<std::uint64_t> g_next_generation{1};
}

Graph& Var::graph() const {
  if (!graph_) throw StateError("variable is not attached to a graph");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(*this); }

Graph::Graph() : generation_(g_next_generation++) {}

void Graph::check(const Var& v) const {
  if (v.graph_ != this) throw StateError("variable belongs to a different graph");
  if (v.generation_ != generation_ || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw StateError("variable refers to a detached graph");
  }
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1), generation_);
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("constant: non-finite input");
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Graph::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericalError("leaf: non-finite input");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op = "leaf";
  return push(std::move(n));
}

Var Graph::param(const ParamStore& store, const std::string& name, int tag) {
  auto key = std::make_pair(name, tag);
  if (auto it = params_.find(key); it != params_.end()) return Var(this, it->second, generation_);
  Node n;
  n.value = store.at(name);
  n.requires_grad = ParamStore::is_trainable(name);
  n.op = "param";
  n.param_name = name;
  Var v = push(std::move(n));
  params_.emplace(std::move(key), v.id());
  return v;
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> parents, BackwardFn fn) {
  if (!value.all_finite()) throw NumericalError(std::string(op) + ": produced non-finite output");
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (!p.valid()) {
      n.parents.push_back(-1);
      continue;
    }
    check(p);
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p.id())].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Tensor& Graph::value(const Var& v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id())].value;
}

Tensor& Graph::accumulate(int id) {
  Tensor& g = grads_[static_cast<std::size_t>(id)];
  if (g.size() == 0) g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape());
  return g;
}

GradientMap Graph::backward(const Var& output, const Tensor& seed) {
  check(output);
  const auto out = static_cast<std::size_t>(output.id());
  if (seed.shape() != nodes_[out].value.shape()) {
    throw InvalidShape("backward: seed shape " + shape_string(seed.shape()) + " does not match output " +
                       shape_string(nodes_[out].value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grads_[out] = seed;
  for (std::size_t i = out + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || grads_[i].size() == 0) continue;
    n.backward(*this, static_cast<int>(i));
  }

  GradientMap result;
  for (const auto& [key, id] : params_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) continue;
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    auto [it, inserted] = result.try_emplace(key.first, Tensor(n.value.shape()));
    if (g.size() != 0) it->second.vec() += g.vec();
  }
  for (auto& [name, g] : result) {
    if (!g.all_finite()) throw NumericalError("backward: non-finite gradient for '" + name + "'");
  }
  return result;
}

GradientMap Graph::backward(const Var& output) {
  check(output);
  if (output.value().size() != 1) throw InvalidShape("backward without seed requires a scalar output");
  return backward(output, Tensor::constant(output.value().shape(), 1.0));
}

Tensor Graph::grad(const Var& v) const {
  check(v);
  const auto i = static_cast<std::size_t>(v.id());
  if (i < grads_.size() && grads_[i].size() != 0) return grads_[i];
  return Tensor(nodes_[i].value.shape());
}

void Graph::clear() {
  nodes_.clear();
  grads_.clear();
  params_.clear();
  generation_ = g_next_generation++;
}

}  // namespace dernn::ad
