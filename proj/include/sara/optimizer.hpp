// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sara {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double lr = 1e-3;
  AdamWConfig hp;

  OptimizerState() = default;
  OptimizerState(std::size_t n, AdamWConfig config) : m(n, 0.0), v(n, 0.0), hp(config) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One decoupled-weight-decay Adam update of `params` in place:
///   m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
///   p ← p − lr·(m̂/(√v̂ + ε) + wd·p)
/// with bias-corrected m̂, v̂ and the step counter advanced first.
void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grad);

/// 1e-3·exp(−350·θ): smaller thresholds select fewer parameters and take a
/// larger step size.
double adaptive_lr(double threshold);

/// Cosine decay from `base` at step 0 towards 0 at `total`.
double cosine_lr(double base, std::size_t step, std::size_t total);

}  // namespace sara
