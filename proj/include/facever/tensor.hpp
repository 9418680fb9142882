#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "facever/error.hpp"

namespace facever {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocation. Eigen's vectorized loops peel according to
/// the data address, so a fixed base alignment keeps results bitwise stable
/// from one allocation to the next.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), alignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense row-major array. Image batches use [batch, height, width, channels].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::initializer_list<T> data)
      : Tensor(std::move(shape), AlignedVector<T>(data)) {}
  Tensor(Shape shape, const std::vector<T>& data)
      : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}
  Tensor(Shape shape, AlignedVector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  AlignedVector<T>& storage() noexcept { return data_; }
  const AlignedVector<T>& storage() const noexcept { return data_; }
  std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NHWC element access.
  T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }
  const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
  }

  Tensor reshaped(Shape shape) const& {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    }
    return Tensor(std::move(shape), std::move(data_));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

}  // namespace facever
