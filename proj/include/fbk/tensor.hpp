#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fbk/errors.hpp"
#include "fbk/mac_counter.hpp"

namespace fbk {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

/// Dense n-dimensional array with a contiguous row-major buffer. Value
/// semantics throughout; operations return fresh tensors unless their name
/// ends in _inplace. Element type is fixed per tensor (float or double).
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds IEEE floats");

 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw dimension_error("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str(shape_));
    }
  }

  /// Rank-2 construction from nested braces, for tests and small fixtures.
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw dimension_error("ragged rows in from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  T operator[](std::size_t flat) const { return data_[flat]; }

  T& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  T operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  T operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Pointer to row i of a rank-2 tensor.
  T* row(std::size_t i) { return data_.data() + i * shape_[1]; }
  const T* row(std::size_t i) const { return data_.data() + i * shape_[1]; }

  Tensor reshape(Shape new_shape) const& {
    check_reshape(new_shape);
    return Tensor(std::move(new_shape), data_);
  }
  Tensor reshape(Shape new_shape) && {
    check_reshape(new_shape);
    return Tensor(std::move(new_shape), std::move(data_));
  }

  /// Rank-2 transpose.
  Tensor transposed() const {
    if (rank() != 2) {
      throw dimension_error("transpose expects rank 2, got " + shape_str(shape_));
    }
    Tensor out({shape_[1], shape_[0]});
    for (std::size_t i = 0; i < shape_[0]; ++i)
      for (std::size_t j = 0; j < shape_[1]; ++j) out(j, i) = (*this)(i, j);
    return out;
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  void add_inplace(const Tensor& other) {
    require_same_shape(other, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  }

  void scale_inplace(T s) {
    for (T& v : data_) v *= s;
  }

  /// this += s * other
  void axpy_inplace(T s, const Tensor& other) {
    require_same_shape(other, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  T max_abs() const {
    T m = 0;
    for (T v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void check_reshape(const Shape& new_shape) const {
    if (shape_numel(new_shape) != data_.size()) {
      throw dimension_error("cannot reshape " + shape_str(shape_) + " to " +
                            shape_str(new_shape));
    }
  }

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_) {
      throw dimension_error(std::string(op) + ": shape mismatch " +
                            shape_str(shape_) + " vs " + shape_str(other.shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Row-major matrix product; accumulation happens in T. Single-threaded and
/// bitwise deterministic: the reduction order over the inner dimension is
/// fixed ascending for every output element.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, MacCounter* macs = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw dimension_error("matmul: incompatible shapes " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0), p = a.extent(1), q = b.extent(1);
  Tensor<T> out({m, q});
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.row(i);
    T* orow = out.row(i);
    for (std::size_t kk = 0; kk < p; ++kk) {
      const T aik = arow[kk];
      const T* brow = b.row(kk);
      for (std::size_t j = 0; j < q; ++j) orow[j] += aik * brow[j];
    }
  }
  if (macs) macs->linear += static_cast<std::uint64_t>(m) * p * q;
  return out;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace fbk
