// SPDX-License-Identifier: Apache-2.0
#include "sara/mask.hpp"

#include <algorithm>

namespace sara {

MatrixMask::MatrixMask(Shape shape, std::vector<bool> bits) : shape_(std::move(shape)), bits_(std::move(bits)) {
  if (shape_numel(shape_) != bits_.size()) {
    throw ShapeError("mask shape " + shape_string(shape_) + " does not match " +
                     std::to_string(bits_.size()) + " bits");
  }
  for (std::size_t i = 0; i < bits_.size(); ++i)
    if (bits_[i]) indices_.push_back(static_cast<std::uint32_t>(i));
}

MatrixMask MatrixMask::from_indices(Shape shape, std::vector<std::uint32_t> indices) {
  std::vector<bool> bits(shape_numel(shape), false);
  for (auto i : indices) {
    if (i >= bits.size()) throw ShapeError("mask index out of range");
    bits[i] = true;
  }
  return MatrixMask(std::move(shape), std::move(bits));
}

MatrixMask MatrixMask::all(Shape shape, bool value) {
  const std::size_t n = shape_numel(shape);
  return MatrixMask(std::move(shape), std::vector<bool>(n, value));
}

bool MatrixMask::is_subset_of(const MatrixMask& other) const {
  if (shape_ != other.shape_) return false;
  return std::all_of(indices_.begin(), indices_.end(), [&](auto i) { return other.bits_[i]; });
}

Tensor gather(const Tensor& p, const MatrixMask& mask) {
  if (p.shape() != mask.shape()) {
    throw ShapeError("gather: parameter shape " + shape_string(p.shape()) + " vs mask shape " +
                     shape_string(mask.shape()));
  }
  std::vector<double> out;
  out.reserve(mask.popcount());
  for (auto i : mask.indices()) out.push_back(p[i]);
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

Tensor scatter(const Tensor& frozen, std::span<const double> values, const MatrixMask& mask) {
  if (frozen.shape() != mask.shape()) {
    throw ShapeError("scatter: parameter shape " + shape_string(frozen.shape()) + " vs mask shape " +
                     shape_string(mask.shape()));
  }
  if (values.size() != mask.popcount()) {
    throw ShapeError("scatter: " + std::to_string(values.size()) + " values for mask with popcount " +
                     std::to_string(mask.popcount()));
  }
  Tensor out = frozen;
  const auto& idx = mask.indices();
  for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = values[k];
  return out;
}

}  // namespace sara
