#include "dernn/param_store.hpp"

#include <cmath>

namespace dernn {

void ParamStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw InvalidParameter("parameter name must be non-empty");
  if (!value.all_finite()) throw NumericalError("parameter '" + name + "' holds non-finite values");
  auto [it, inserted] = entries_.emplace(name, std::move(value));
  if (!inserted) throw InvalidParameter("duplicate parameter name '" + name + "'");
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw MissingDependency("parameter '" + name + "' not found");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw MissingDependency("parameter '" + name + "' not found");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

Index ParamStore::total_size() const {
  Index n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

Index ParamStore::trainable_size() const {
  Index n = 0;
  for (const auto& [name, t] : entries_) {
    if (is_trainable(name)) n += t.size();
  }
  return n;
}

Tensor init_uniform_fan_in(const Shape& shape, Index fan_in, Rng& rng) {
  if (fan_in <= 0) throw InvalidParameter("fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(static_cast<float>(uniform(rng, -bound, bound)));
  }
  return t;
}

void set_meta(ParamStore& store, const std::string& key, const std::vector<Index>& values) {
  Tensor t({static_cast<Index>(values.size())});
  for (std::size_t i = 0; i < values.size(); ++i) t[static_cast<Index>(i)] = static_cast<double>(values[i]);
  const std::string name = "meta." + key;
  if (store.contains(name)) {
    store.at(name) = std::move(t);
  } else {
    store.add(name, std::move(t));
  }
}

std::vector<Index> get_meta(const ParamStore& store, const std::string& key) {
  const Tensor& t = store.at("meta." + key);
  std::vector<Index> out(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<Index>(std::llround(t[i]));
  return out;
}

}  // namespace dernn
