// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfl {

using Dims = std::vector<std::size_t>;

/// Raised when operand shapes disagree with a layer's declared shape.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on API misuse (e.g. backward without a recorded forward).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a loss or gradient becomes NaN/inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(const Dims& dims);
std::size_t product(const Dims& dims);

/// Dense row-major tensor of 64-bit floats with up to four axes.
///
/// A default-constructed tensor is "unset": no dims and no data. Every
/// constructed tensor satisfies product(dims) == data.size() with all dims
/// positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  const Dims& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return dims_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }

  void fill(double value);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double scale);

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  /// Dims equal and every element has the identical bit pattern.
  bool bitwise_equal(const Tensor& other) const;
  bool all_finite() const;

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// Copies rows [begin, begin + count) along axis 0.
Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t count);
/// Gathers the given indices along axis 0.
Tensor gather_batch(const Tensor& t, std::span<const std::size_t> indices);

}  // namespace sfl
