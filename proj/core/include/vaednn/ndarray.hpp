#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vaednn/error.hpp"

namespace vaednn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major n-dimensional array with value semantics.
template <class T>
class NdArray {
 public:
  using value_type = T;

  NdArray() = default;
  explicit NdArray(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  NdArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw Error(ErrorKind::shape_mismatch, "data length does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& operator()(std::size_t t, std::size_t i, std::size_t j) { return data_[(t * shape_[1] + i) * shape_[2] + j]; }
  const T& operator()(std::size_t t, std::size_t i, std::size_t j) const {
    return data_[(t * shape_[1] + i) * shape_[2] + j];
  }

  /// Contiguous view of the i-th slice along the leading axis.
  std::span<T> slice(std::size_t i) {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<T>(data_).subspan(i * stride, stride);
  }
  std::span<const T> slice(std::size_t i) const {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<const T>(data_).subspan(i * stride, stride);
  }

  template <class U>
  NdArray<U> cast() const {
    return NdArray<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const NdArray&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Spatial parameter field (n_x1, n_x2); inactive cells hold -1.
using Field2D = NdArray<double>;
/// Head field (n_x1, n_x2) in meters.
using HeadField = NdArray<double>;
/// Time-stacked head snapshots (N_t, n_x1, n_x2).
using StateField = NdArray<double>;

inline constexpr double kInactiveSentinel = -1.0;

}  // namespace vaednn
