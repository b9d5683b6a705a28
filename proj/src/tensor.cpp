#include "dernn/tensor.hpp"

namespace dernn {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

void require_rank(const Shape& shape, int rank, const char* what) {
  if (static_cast<int>(shape.size()) != rank) {
    throw InvalidShape(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                       shape_string(shape));
  }
}

}  // namespace dernn
