// SPDX-License-Identifier: Apache-2.0
#include "sara/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "sara/tensor.hpp"

namespace sara {

void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adamw_step: params " + std::to_string(params.size()) + ", grad " +
                     std::to_string(grad.size()) + ", moments " + std::to_string(state.m.size()));
  }
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient");

  const auto& hp = state.hp;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= state.lr * (m_hat / (std::sqrt(v_hat) + hp.eps) + hp.weight_decay * params[i]);
  }
}

double adaptive_lr(double threshold) {
  if (threshold < 0.0) throw std::invalid_argument("adaptive_lr: threshold must be non-negative");
  return 1e-3 * std::exp(-350.0 * threshold);
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double frac = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace sara
