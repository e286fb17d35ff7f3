#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pruneforge {

/// Base error type for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor. `float` is the training type; `double` exists for
/// gradient checking.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T value) { return BasicTensor(std::move(shape), value); }
  static BasicTensor from(Shape shape, std::initializer_list<T> values) {
    return BasicTensor(std::move(shape), std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  /// Same data, new shape with equal element count.
  BasicTensor reshaped(Shape shape) const;

  /// Rows [begin, end) along the leading axis.
  BasicTensor slice_leading(std::size_t begin, std::size_t end) const;

  /// Gather rows along the leading axis in the given order.
  BasicTensor gather_leading(std::span<const std::size_t> rows) const;

  bool all_finite() const noexcept;
  /// Throws Error naming `context` when any element is NaN or infinite.
  void require_finite(const std::string& context) const;

  bool operator==(const BasicTensor& other) const = default;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

/// Bitwise equality, distinguishing -0 from +0 and comparing NaN payloads.
bool bit_equal(const Tensor& a, const Tensor& b);

/// Largest absolute elementwise difference; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace pruneforge
