// SPDX-License-Identifier: Apache-2.0
#include "sara/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sara/lowrank.hpp"

namespace sara {

ParamStore zero_masked(const ParamStore& params, const SparseMask& mask) {
  ParamStore out;
  for (const auto& [name, value] : params) {
    Tensor t = value;
    if (auto m = mask.find(name))
      for (auto i : m->indices()) t[i] = 0.0;
    out.add(name, std::move(t));
  }
  return out;
}

std::vector<ZeroSweepRow> zero_sweep(const ParamStore& p0, const std::vector<double>& thresholds, const EvalFn& eval) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw std::invalid_argument("zero_sweep: thresholds must be ascending");
  }
  const double total = static_cast<double>(p0.eligible_count());
  std::vector<ZeroSweepRow> rows;
  for (double theta : thresholds) {
    ParamStore p = p0;
    std::size_t zeroed = 0;
    for (const auto& name : p0.eligible_names()) {
      Tensor& t = p.at(name);
      for (double& v : t.data())
        if (std::abs(v) < theta) {
          v = 0.0;
          ++zeroed;
        }
    }
    rows.push_back({theta, eval(p), static_cast<double>(zeroed) / total});
  }
  return rows;
}

std::string to_string(ZeroStrategy s) {
  switch (s) {
    case ZeroStrategy::smallest: return "smallest";
    case ZeroStrategy::random: return "random";
    case ZeroStrategy::largest: return "largest";
  }
  return "?";
}

double zeroing_degradation(const ParamStore& p0, double fraction, ZeroStrategy strategy, std::uint64_t seed,
                           const EvalFn& eval) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(p0.eligible_count())));
  SparseMask mask;
  switch (strategy) {
    case ZeroStrategy::smallest: mask = compute_mask_by_budget(p0, k); break;
    case ZeroStrategy::random: mask = select_random(p0, k, seed); break;
    case ZeroStrategy::largest: mask = select_largest(p0, k); break;
  }
  const double base = eval(p0);
  return (eval(zero_masked(p0, mask)) - base) / base;
}

DynamicsRecord dynamics_snapshot(const ParamStore& params, const SparseMask& initial_mask, double threshold,
                                 std::size_t step) {
  std::size_t from_m0 = 0, from_rest = 0;
  for (const auto& [name, mask] : initial_mask) {
    const Tensor& p = params.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!(std::abs(p[i]) < threshold)) continue;
      if (mask->test(i)) ++from_m0;
      else ++from_rest;
    }
  }
  const double n = static_cast<double>(initial_mask.total());
  return {step, static_cast<double>(from_m0) / n, static_cast<double>(from_rest) / n, threshold};
}

double fraction_still_below(const ParamStore& params, const SparseMask& initial_mask, double threshold) {
  std::size_t below = 0;
  for (const auto& [name, mask] : initial_mask) {
    const Tensor& p = params.at(name);
    for (auto i : mask->indices())
      if (std::abs(p[i]) < threshold) ++below;
  }
  const std::size_t n = initial_mask.popcount();
  return n == 0 ? 0.0 : static_cast<double>(below) / static_cast<double>(n);
}

void DynamicsTracker::observe(std::size_t step, const ParamStore& params) {
  if (step % every_ == 0) records_.push_back(dynamics_snapshot(params, m0_, threshold_, step));
}

double subspace_similarity(const Tensor& p1, const Tensor& p2, std::size_t r_i, std::size_t r_j) {
  if (p1.shape() != p2.shape()) {
    throw ShapeError("subspace_similarity: " + shape_string(p1.shape()) + " vs " + shape_string(p2.shape()));
  }
  const std::size_t rmax = std::min(p1.rows(), p1.cols());
  if (r_i < 1 || r_j < 1 || r_i > rmax || r_j > rmax) {
    throw std::invalid_argument("subspace_similarity: ranks (" + std::to_string(r_i) + ", " + std::to_string(r_j) +
                                ") exceed matrix dimensions " + shape_string(p1.shape()));
  }
  const SvdResult a = svd(p1);
  const SvdResult b = svd(p2);
  const std::size_t m = p1.rows();
  double s = 0.0;
  for (std::size_t x = 0; x < r_i; ++x)
    for (std::size_t y = 0; y < r_j; ++y) {
      double d = 0.0;
      for (std::size_t k = 0; k < m; ++k) d += a.U(k, x) * b.U(k, y);
      s += d * d;
    }
  return s / static_cast<double>(std::min(r_i, r_j));
}

Amplification projection_norm_and_amplification(const Tensor& delta, const Tensor& p, std::size_t r) {
  if (delta.shape() != p.shape()) {
    throw ShapeError("amplification: " + shape_string(delta.shape()) + " vs " + shape_string(p.shape()));
  }
  if (r < 1 || r > std::min(p.rows(), p.cols())) {
    throw std::invalid_argument("amplification: rank " + std::to_string(r) + " exceeds matrix dimensions " +
                                shape_string(p.shape()));
  }
  const double dnorm = frobenius_norm(delta);
  if (dnorm == 0.0) throw std::invalid_argument("amplification: ΔP is zero");
  const SvdResult s = svd(delta);
  const std::size_t m = p.rows(), n = p.cols();
  // ‖U_rᵀ P V_r‖²_F = Σ_{a,b} (u_aᵀ P v_b)²
  double sq = 0.0;
  for (std::size_t a = 0; a < r; ++a) {
    std::vector<double> up(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double u = s.U(i, a);
      for (std::size_t j = 0; j < n; ++j) up[j] += u * p(i, j);
    }
    for (std::size_t b = 0; b < r; ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < n; ++j) d += up[j] * s.V(j, b);
      sq += d * d;
    }
  }
  Amplification out;
  out.projection_norm = std::sqrt(sq);
  if (out.projection_norm < 1e-12) {
    out.unbounded = true;
    out.factor = std::numeric_limits<double>::infinity();
  } else {
    out.factor = dnorm / out.projection_norm;
  }
  return out;
}

std::vector<double> vlhi(const std::vector<MethodMetrics>& group) {
  if (group.size() < 2) throw std::invalid_argument(">=2 methods required for VLHI");
  auto [lo_min, lo_max] = std::minmax_element(group.begin(), group.end(), [](const auto& a, const auto& b) {
    return a.low_better < b.low_better;
  });
  auto [hi_min, hi_max] = std::minmax_element(group.begin(), group.end(), [](const auto& a, const auto& b) {
    return a.high_better < b.high_better;
  });
  const double lmin = lo_min->low_better, lmax = lo_max->low_better;
  const double hmin = hi_min->high_better, hmax = hi_max->high_better;
  std::vector<double> out;
  for (const auto& g : group) {
    const double low = lmax == lmin ? 0.5 : (lmax - g.low_better) / (lmax - lmin);
    const double high = hmax == hmin ? 0.5 : (g.high_better - hmin) / (hmax - hmin);
    out.push_back(low + high);
  }
  return out;
}

}  // namespace sara
