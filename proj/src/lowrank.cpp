// SPDX-License-Identifier: Apache-2.0
#include "sara/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sara {
namespace {

using Column = std::vector<double>;

double dot(const Column& a, const Column& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

void rotate(Column& a, Column& b, double c, double s) {
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a[k], y = b[k];
    a[k] = c * x - s * y;
    b[k] = s * x + c * y;
  }
}

// Extends the orthonormal columns in `basis` with `count` more unit vectors,
// each time taking the standard basis vector with the largest residual.
std::vector<Column> complete_basis(std::vector<Column> basis, std::size_t count, std::size_t m) {
  std::vector<Column> res(m, Column(m, 0.0));
  for (std::size_t e = 0; e < m; ++e) {
    res[e][e] = 1.0;
    for (const auto& b : basis) {
      const double p = b[e];
      for (std::size_t k = 0; k < m; ++k) res[e][k] -= p * b[k];
    }
  }
  std::vector<Column> added;
  while (added.size() < count) {
    std::size_t best = 0;
    double best_n = -1.0;
    for (std::size_t e = 0; e < m; ++e) {
      const double n2 = dot(res[e], res[e]);
      if (n2 > best_n) {
        best_n = n2;
        best = e;
      }
    }
    if (best_n < 1e-12) throw std::logic_error("svd: cannot complete orthonormal basis");
    Column u = res[best];
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        const double p = dot(u, b);
        for (std::size_t k = 0; k < m; ++k) u[k] -= p * b[k];
      }
      const double nrm = std::sqrt(dot(u, u));
      for (double& x : u) x /= nrm;
    }
    for (auto& r : res) {
      const double p = dot(r, u);
      for (std::size_t k = 0; k < m; ++k) r[k] -= p * u[k];
    }
    basis.push_back(u);
    added.push_back(std::move(u));
  }
  return added;
}

SvdResult svd_tall(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<Column> w(n, Column(m)), v(n, Column(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) w[j][i] = a(i, j);
    v[j][j] = 1.0;
  }

  const double eps = std::numeric_limits<double>::epsilon();
  const double tol = eps * std::sqrt(static_cast<double>(m));
  // Pairs below the rounding level of the whole matrix count as orthogonal.
  double frob2 = 0.0;
  for (const auto& col : w) frob2 += dot(col, col);
  const double floor = eps * eps * frob2;
  constexpr int kMaxSweeps = 100;
  std::vector<double> norm2(n);
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t j = 0; j < n; ++j) {
      norm2[j] = dot(w[j], w[j]);
      // Flush columns at rounding level.
      if (norm2[j] != 0.0 && norm2[j] <= floor) {
        std::fill(w[j].begin(), w[j].end(), 0.0);
        norm2[j] = 0.0;
      }
    }
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double alpha = norm2[i];
        const double beta = norm2[j];
        if (alpha == 0.0 || beta == 0.0) continue;
        const double gamma = dot(w[i], w[j]);
        if (std::abs(gamma) <= std::max(tol * std::sqrt(alpha * beta), floor)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(w[i], w[j], c, s);
        rotate(v[i], v[j], c, s);
        norm2[i] = std::max(alpha - t * gamma, 0.0);
        norm2[j] = beta + t * gamma;
      }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(w[j], w[j]));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double smax = n ? sigma[order[0]] : 0.0;
  const double zero_cut = smax * std::numeric_limits<double>::epsilon();
  std::vector<Column> ucols;
  std::vector<bool> missing(n, false);
  ucols.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    if (sigma[j] > zero_cut && sigma[j] > 0.0) {
      Column u = w[j];
      for (double& x : u) x /= sigma[j];
      ucols.push_back(std::move(u));
    } else {
      missing[k] = true;
      ucols.emplace_back();
    }
  }
  std::vector<Column> basis;
  std::size_t n_missing = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (missing[k]) ++n_missing;
    else basis.push_back(ucols[k]);
  }
  if (n_missing > 0) {
    auto extra = complete_basis(std::move(basis), n_missing, m);
    std::size_t q = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (missing[k]) ucols[k] = std::move(extra[q++]);
  }

  SvdResult out{Tensor({m, n}), std::vector<double>(n), Tensor({n, n})};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.S[k] = missing[k] ? 0.0 : sigma[j];
    for (std::size_t i = 0; i < m; ++i) out.U(i, k) = ucols[k][i];
    for (std::size_t i = 0; i < n; ++i) out.V(i, k) = v[j][i];
  }
  return out;
}

}  // namespace

SvdResult svd(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("svd: expected a matrix, got " + shape_string(a.shape()));
  if (a.empty()) throw ShapeError("svd: empty matrix");
  if (!a.all_finite()) throw NumericError("svd: non-finite input");
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(a.transposed());
  std::swap(t.U, t.V);
  return t;
}

double nuclear_norm(const Tensor& a) {
  const auto s = svd(a);
  return std::accumulate(s.S.begin(), s.S.end(), 0.0);
}

Tensor nuclear_norm_subgrad(const SvdResult& s, std::size_t rows, std::size_t cols) {
  Tensor out({rows, cols});
  if (s.S.empty() || s.S[0] == 0.0) return out;
  const double cut = 1e-10 * s.S[0];
  for (std::size_t k = 0; k < s.S.size(); ++k) {
    if (!(s.S[k] > cut)) break;
    for (std::size_t i = 0; i < rows; ++i) {
      const double u = s.U(i, k);
      for (std::size_t j = 0; j < cols; ++j) out(i, j) += u * s.V(j, k);
    }
  }
  return out;
}

Tensor nuclear_norm_subgrad(const Tensor& a) { return nuclear_norm_subgrad(svd(a), a.rows(), a.cols()); }

std::size_t effective_rank(const Tensor& a, double rel_cut) {
  const auto s = svd(a);
  if (s.S.empty() || s.S[0] == 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(s.S.begin(), s.S.end(), [&](double x) { return x > rel_cut * s.S[0]; }));
}

RankOperand rank_operand_from_string(const std::string& s) {
  if (s == "delta") return RankOperand::delta;
  if (s == "masked_live") return RankOperand::masked_live;
  throw std::invalid_argument("unknown rank_loss_operand '" + s + "'");
}

std::string to_string(RankOperand op) { return op == RankOperand::delta ? "delta" : "masked_live"; }

Tensor rank_operand(const Tensor& live, const Tensor& pretrained, const MatrixMask& initial_mask, RankOperand op) {
  if (live.shape() != initial_mask.shape() || pretrained.shape() != live.shape()) {
    throw ShapeError("rank operand: shapes " + shape_string(live.shape()) + ", " + shape_string(pretrained.shape()) +
                     ", mask " + shape_string(initial_mask.shape()));
  }
  Tensor out(live.shape());
  for (auto i : initial_mask.indices()) out[i] = op == RankOperand::delta ? live[i] - pretrained[i] : live[i];
  return out;
}

NodeId rank_loss(Graph& g, const ParamNodes& nodes, const ParamStore& pretrained, const SparseMask& initial_mask,
                 RankOperand op) {
  std::vector<NodeId> inputs;
  std::vector<Tensor> subgrads;
  double total = 0.0;
  std::size_t saved = 0;
  for (const auto& [name, mask] : initial_mask) {
    if (mask->popcount() == 0) continue;
    const NodeId id = nodes.at(name);
    const Tensor operand = rank_operand(g.value(id), pretrained.at(name), *mask, op);
    const SvdResult s = svd(operand);
    total += std::accumulate(s.S.begin(), s.S.end(), 0.0);
    // d‖ΔP‖_*/dP = subgrad on M⁰, zero elsewhere.
    Tensor sub = nuclear_norm_subgrad(s, operand.rows(), operand.cols());
    Tensor masked(sub.shape());
    for (auto i : mask->indices()) masked[i] = sub[i];
    saved += masked.bytes(g.dtype());
    inputs.push_back(id);
    subgrads.push_back(std::move(masked));
  }
  TagScope scope(g, "rank_loss");
  return g.custom(
      "rank_loss", inputs, Tensor::scalar(total),
      [subgrads = std::move(subgrads)](const Tensor& grad_out) {
        std::vector<Tensor> out;
        out.reserve(subgrads.size());
        const double c = grad_out.item();
        for (const auto& s : subgrads) {
          Tensor t = s;
          for (double& x : t.data()) x *= c;
          out.push_back(std::move(t));
        }
        return out;
      },
      saved);
}

}  // namespace sara
