#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "longclip/errors.hpp"

namespace longclip::numerics {

// Dimension sizes, outermost first. An empty shape is a scalar.
using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// Row-major dense array with value semantics.
template <typename T = double>
class DenseArray {
  static_assert(std::is_floating_point_v<T>, "DenseArray holds real values");

 public:
  using value_type = T;

  DenseArray() : data_(1, T{0}) {}

  explicit DenseArray(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_dims();
    data_.assign(element_count(shape_), fill);
  }

  DenseArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != element_count(shape_)) {
      throw UsageError("DenseArray: shape " + to_string(shape_) + " needs " +
                       std::to_string(element_count(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static DenseArray scalar(T value) { return DenseArray(Shape{}, std::vector<T>{value}); }

  static DenseArray matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return DenseArray({rows, cols}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Element access for rank-2 arrays.
  T& operator()(std::size_t row, std::size_t col) { return data_[row * shape_.back() + col]; }
  const T& operator()(std::size_t row, std::size_t col) const { return data_[row * shape_.back() + col]; }

  T item() const {
    if (data_.size() != 1) throw UsageError("DenseArray::item on array of shape " + to_string(shape_));
    return data_.front();
  }

  // Same data viewed under a new shape with the same element count.
  DenseArray reshaped(Shape shape) const { return DenseArray(std::move(shape), data_); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  DenseArray<U> cast() const {
    return DenseArray<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw UsageError("DenseArray: zero-sized dimension in shape " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace longclip::numerics
