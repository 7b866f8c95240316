// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sara {

using Shape = std::vector<std::size_t>;

/// Element type used for storage accounting. Values are always held as
/// doubles; f32 tensors are rounded to single precision at op boundaries.
enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

inline std::size_t elem_size(DType dtype) { return dtype == DType::f64 ? 8 : 4; }

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when a NaN or Inf crosses an op boundary.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);
  explicit Tensor(Shape shape);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(double value) { return Tensor({}, {value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D views; a 1-D tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * stride() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * stride() + c]; }

  double item() const;
  std::size_t bytes(DType dtype) const { return size() * elem_size(dtype); }

  Tensor transposed() const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t stride() const { return shape_.size() == 2 ? shape_[1] : cols(); }

  Shape shape_;
  std::vector<double> data_;
};

double frobenius_norm(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);

}  // namespace sara
