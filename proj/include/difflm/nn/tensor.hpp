#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace difflm::nn {

using Shape = std::vector<size_t>;

inline std::string shape_to_string(const Shape& shape) {
  std::string out = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

inline size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. The shape is fixed at construction.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument("tensor data of size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_.at(i); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D views; a rank-1 tensor is treated as a single row.
  size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](size_t i) { return data_[i]; }
  Real operator[](size_t i) const { return data_[i]; }
  Real& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  Real at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, std::vector<To>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace difflm::nn
