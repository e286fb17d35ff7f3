#include "pruneforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

namespace pruneforge {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto extent : shape_) {
    if (extent == 0) throw Error("tensor extents must be positive, got " + shape_to_string(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto extent : shape_) {
    if (extent == 0) throw Error("tensor extents must be positive, got " + shape_to_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw Error("tensor shape " + shape_to_string(shape_) + " does not match " +
                std::to_string(data_.size()) + " values");
  }
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
std::size_t BasicTensor<T>::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw Error("index rank does not match tensor rank");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw Error("index out of range for shape " + shape_to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(index)];
}

template <typename T>
const T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw Error("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::slice_leading(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) throw Error("invalid leading slice");
  const std::size_t row = data_.size() / shape_[0];
  Shape shape = shape_;
  shape[0] = end - begin;
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                     data_.begin() + static_cast<std::ptrdiff_t>(end * row));
  return BasicTensor(std::move(shape), std::move(out));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::gather_leading(std::span<const std::size_t> rows) const {
  if (shape_.empty() || rows.empty()) throw Error("invalid leading gather");
  const std::size_t row = data_.size() / shape_[0];
  Shape shape = shape_;
  shape[0] = rows.size();
  std::vector<T> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shape_[0]) throw Error("gather row out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return BasicTensor(std::move(shape), std::move(out));
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void BasicTensor<T>::require_finite(const std::string& context) const {
  if (!all_finite()) throw Error(context + ": non-finite value");
}

template class BasicTensor<float>;
template class BasicTensor<double>;

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("max_abs_diff shape mismatch " + shape_to_string(a.shape()) + " vs " +
                shape_to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

}  // namespace pruneforge
