// SPDX-License-Identifier: Apache-2.0
#include "sfl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace sfl {

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << ']';
  return os.str();
}

std::size_t product(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {
void check_dims(const Dims& dims) {
  if (dims.empty() || dims.size() > 4)
    throw ShapeError("tensor rank must be in [1, 4], got dims " + to_string(dims));
  for (auto d : dims)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + to_string(dims));
}
}  // namespace

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(product(dims_), fill);
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (product(dims_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                     to_string(dims_));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other))
    throw ShapeError("add: " + to_string(dims_) + " vs " + to_string(other.dims_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return dims_ == other.dims_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t count) {
  if (t.empty() || begin + count > t.dim(0) || count == 0)
    throw ShapeError("slice_batch out of range on " + to_string(t.dims()));
  Dims dims = t.dims();
  dims[0] = count;
  const std::size_t stride = t.numel() / t.dim(0);
  std::vector<double> out(t.data().begin() + begin * stride, t.data().begin() + (begin + count) * stride);
  return Tensor(std::move(dims), std::move(out));
}

Tensor gather_batch(const Tensor& t, std::span<const std::size_t> indices) {
  if (t.empty() || indices.empty()) throw ShapeError("gather_batch on empty input");
  Dims dims = t.dims();
  dims[0] = indices.size();
  const std::size_t stride = t.numel() / t.dim(0);
  Tensor out(dims);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.dim(0)) throw ShapeError("gather_batch index out of range");
    std::copy_n(t.data().begin() + indices[i] * stride, stride, out.data().begin() + i * stride);
  }
  return out;
}

}  // namespace sfl
