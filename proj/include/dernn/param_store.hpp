#pragma once

#include <map>
#include <string>
#include <vector>

#include "dernn/rng.hpp"
#include "dernn/tensor.hpp"

namespace dernn {

// Named, shaped parameter collection. One store holds the DEN and denoiser
// weights shared by every stage of the recurrence. Entries are stored in a
// std::map so references stay valid across insertions and iteration order is
// the lexicographic name order (which is also the serialization order).
//
// Names starting with "meta." hold integer configuration and are never trained.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t count() const { return entries_.size(); }
  Index total_size() const;
  // Number of trainable scalars (excludes meta entries).
  Index trainable_size() const;

  static bool is_trainable(const std::string& name) { return name.rfind("meta.", 0) != 0; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  bool operator==(const ParamStore& other) const { return entries_ == other.entries_; }

 private:
  std::map<std::string, Tensor> entries_;
};

using GradientMap = std::map<std::string, Tensor>;

// Fan-in-scaled uniform initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
// Values are rounded to float so checkpoints reload bit-exactly.
Tensor init_uniform_fan_in(const Shape& shape, Index fan_in, Rng& rng);

// Writes (or overwrites) an integer configuration record "meta.<key>".
void set_meta(ParamStore& store, const std::string& key, const std::vector<Index>& values);
std::vector<Index> get_meta(const ParamStore& store, const std::string& key);

}  // namespace dernn
