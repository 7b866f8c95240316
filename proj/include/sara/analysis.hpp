// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sara/param_store.hpp"
#include "sara/sparse_mask.hpp"
#include "sara/tensor.hpp"

namespace sara {

using EvalFn = std::function<double(const ParamStore&)>;

struct ZeroSweepRow {
  double threshold = 0.0;
  double eval_loss = 0.0;
  double frac_zeroed = 0.0;  // over eligible entries
};

/// Copy of `params` with the masked entries set to zero.
ParamStore zero_masked(const ParamStore& params, const SparseMask& mask);

/// For each threshold θ (ascending) zero every eligible |p| < θ and
/// evaluate. θ = 0 leaves the model untouched.
std::vector<ZeroSweepRow> zero_sweep(const ParamStore& p0, const std::vector<double>& thresholds, const EvalFn& eval);

enum class ZeroStrategy { smallest, random, largest };
std::string to_string(ZeroStrategy s);

/// (loss(zeroed) − loss(p0)) / loss(p0) after zeroing `fraction` of the
/// eligible entries chosen by `strategy`.
double zeroing_degradation(const ParamStore& p0, double fraction, ZeroStrategy strategy, std::uint64_t seed,
                           const EvalFn& eval);

/// Fractions are over all eligible entries N.
struct DynamicsRecord {
  std::size_t step = 0;
  double frac_below_from_m0 = 0.0;          // i ∈ M⁰ with |P[i]| < θ
  double frac_below_from_complement = 0.0;  // i ∉ M⁰ with |P[i]| < θ
  double threshold = 0.0;
};

DynamicsRecord dynamics_snapshot(const ParamStore& params, const SparseMask& initial_mask, double threshold,
                                 std::size_t step);

/// Fraction of M⁰ (relative to popcount(M⁰)) still below θ.
double fraction_still_below(const ParamStore& params, const SparseMask& initial_mask, double threshold);

/// Records a DynamicsRecord every `every` steps of a training run.
class DynamicsTracker {
 public:
  DynamicsTracker(SparseMask initial_mask, double threshold, std::size_t every)
      : m0_(std::move(initial_mask)), threshold_(threshold), every_(every ? every : 1) {}

  void observe(std::size_t step, const ParamStore& params);
  const std::vector<DynamicsRecord>& records() const { return records_; }

 private:
  SparseMask m0_;
  double threshold_;
  std::size_t every_;
  std::vector<DynamicsRecord> records_;
};

/// φ = ‖U₁[:, :rᵢ]ᵀ·U₂[:, :rⱼ]‖²_F / min(rᵢ, rⱼ) over left singular vectors.
double subspace_similarity(const Tensor& p1, const Tensor& p2, std::size_t r_i, std::size_t r_j);

struct Amplification {
  double projection_norm = 0.0;  // ‖U_rᵀ·P·V_r‖_F with U_r, V_r from ΔP
  double factor = 0.0;           // ‖ΔP‖_F / projection_norm
  bool unbounded = false;        // projection_norm < 1e-12, factor is +∞
};

Amplification projection_norm_and_amplification(const Tensor& delta, const Tensor& p, std::size_t r);

struct MethodMetrics {
  std::string method;
  double low_better = 0.0;   // FID-like
  double high_better = 0.0;  // CLIP-like
};

/// Min-max normalized sum of both metrics, each term in [0, 1]. A metric
/// with no spread contributes 0.5 to every method.
std::vector<double> vlhi(const std::vector<MethodMetrics>& group);

struct MemoryRow {
  std::string method;
  std::size_t trainable = 0;
  std::size_t param_grad_bytes = 0;
  std::size_t activation_bytes = 0;  // saved for backward
  std::size_t adapter_bytes = 0;     // adapter intermediates among them
  std::size_t peak_bytes = 0;
  double wall_ms = 0.0;
};

}  // namespace sara
