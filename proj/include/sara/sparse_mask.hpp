// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sara/mask.hpp"
#include "sara/param_store.hpp"

namespace sara {

enum class SelectionMode { absolute_threshold, global_budget };

/// One MatrixMask per eligible parameter matrix, in ParamStore order.
class SparseMask {
 public:
  using Entry = std::pair<std::string, std::shared_ptr<const MatrixMask>>;

  SparseMask() = default;
  SparseMask(std::vector<Entry> entries, double threshold, SelectionMode mode);

  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Null when `name` is not a masked matrix.
  std::shared_ptr<const MatrixMask> find(const std::string& name) const;
  const MatrixMask& at(const std::string& name) const;

  /// θ_t. In budget mode this is the implied threshold: the smallest |p|
  /// left unselected.
  double threshold() const { return threshold_; }
  SelectionMode mode() const { return mode_; }

  std::size_t popcount() const;
  std::size_t total() const;
  double fraction() const;

  bool is_subset_of(const SparseMask& other) const;

  friend bool operator==(const SparseMask& a, const SparseMask& b);

 private:
  std::vector<Entry> entries_;
  double threshold_ = 0.0;
  SelectionMode mode_ = SelectionMode::absolute_threshold;
};

/// M[i] = |P0[i]| < θ (strict) for every eligible matrix.
SparseMask compute_mask(const ParamStore& p0, double threshold);

/// The k smallest |P0| entries over all eligible matrices, ties broken by
/// (matrix name, row-major index).
SparseMask compute_mask_by_budget(const ParamStore& p0, std::size_t k);

/// Ablation selections: the k largest |P0| entries, or k uniformly random ones.
SparseMask select_largest(const ParamStore& p0, std::size_t k);
SparseMask select_random(const ParamStore& p0, std::size_t k, std::uint64_t seed);

/// Mask with every eligible entry selected (full fine-tuning).
SparseMask full_mask(const ParamStore& p0);

}  // namespace sara
