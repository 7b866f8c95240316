// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "sara/tensor.hpp"

namespace sara {

/// Trainable positions of one parameter matrix. Stored as a bitset plus the
/// ascending row-major index list so gather/scatter cost O(popcount).
class MatrixMask {
 public:
  MatrixMask() = default;
  MatrixMask(Shape shape, std::vector<bool> bits);

  static MatrixMask from_indices(Shape shape, std::vector<std::uint32_t> indices);
  static MatrixMask all(Shape shape, bool value);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return bits_.size(); }
  std::size_t popcount() const { return indices_.size(); }
  bool test(std::size_t i) const { return bits_[i]; }
  const std::vector<bool>& bits() const { return bits_; }
  const std::vector<std::uint32_t>& indices() const { return indices_; }

  bool is_subset_of(const MatrixMask& other) const;

  friend bool operator==(const MatrixMask& a, const MatrixMask& b) {
    return a.shape_ == b.shape_ && a.bits_ == b.bits_;
  }

 private:
  Shape shape_;
  std::vector<bool> bits_;
  std::vector<std::uint32_t> indices_;
};

/// Values of `p` at the mask's true positions, row-major order.
Tensor gather(const Tensor& p, const MatrixMask& mask);

/// Copy of `frozen` with the masked positions overwritten by `values`.
Tensor scatter(const Tensor& frozen, std::span<const double> values, const MatrixMask& mask);

}  // namespace sara
