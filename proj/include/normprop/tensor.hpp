// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_TENSOR_HPP
#define NORMPROP_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "normprop/errors.hpp"

namespace normprop {

#ifdef NORMPROP_USE_FLOAT32
using real = float;
#else
using real = double;
#endif

/// Dense row-major numeric array. Invariant: product(shape) == data.size().
/// Values are immutable once returned from a kernel and safe to share across
/// threads; mutation happens only through explicit owners (layers, optimizer).
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), real(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor full(std::vector<std::size_t> shape, real value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  real& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  real operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  real& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  real operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  real& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  real operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Same data, new shape; element count must match.
  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (checked_size(new_shape) != data_.size()) {
      throw DimensionError("reshape from " + shape_string(shape_) + " to " +
                           shape_string(new_shape) + " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (real v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << 'x';
      os << s[i];
    }
    os << ']';
    return os.str();
  }

private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("zero extent in shape " + shape_string(shape));
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<real> data_;
};

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff shapes differ: " + a.shape_str() + " vs " + b.shape_str());
  }
  real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    real d = std::fabs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

}  // namespace normprop

#endif
