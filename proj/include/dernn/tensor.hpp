#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dernn/errors.hpp"

namespace dernn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);
Index shape_numel(const Shape& shape);

// Dense row-major tensor: the last axis is innermost. Cubes are [H, W, C].
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    validate_extents();
    data_ = Vector::Zero(shape_numel(shape_));
  }

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_extents();
    if (data_.size() != shape_numel(shape_)) {
      throw InvalidShape("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor constant(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static BasicTensor from_values(Shape shape, std::initializer_list<Scalar> values) {
    Vector v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar s : values) v[i++] = s;
    return BasicTensor(std::move(shape), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  // Negative axes count from the back.
  Index dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw InvalidShape("axis out of range for shape " + shape_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
  }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  Scalar& operator()(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  Scalar operator()(Index i, Index j, Index k) const { return data_[(i * shape_[1] + j) * shape_[2] + k]; }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

  bool operator==(const BasicTensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void validate_extents() const {
    for (Index e : shape_) {
      if (e < 0) throw InvalidShape("negative extent in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <typename Scalar>
Scalar dot(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.size() != b.size()) throw InvalidShape("dot: size mismatch");
  return a.vec().dot(b.vec());
}

template <typename Scalar>
Scalar norm(const BasicTensor<Scalar>& a) {
  return a.vec().norm();
}

template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw InvalidShape("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  if (a.size() == 0) return Scalar(0);
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

// ‖a − b‖ / max(‖b‖, tiny)
template <typename Scalar>
Scalar relative_error(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw InvalidShape("relative_error: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const Scalar denom = std::max(b.vec().norm(), Scalar(1e-300));
  return (a.vec() - b.vec()).norm() / denom;
}

void require_rank(const Shape& shape, int rank, const char* what);

}  // namespace dernn
