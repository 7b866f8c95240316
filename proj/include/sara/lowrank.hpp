// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "sara/autodiff.hpp"
#include "sara/param_store.hpp"
#include "sara/sparse_mask.hpp"
#include "sara/tensor.hpp"

namespace sara {

/// Thin SVD: A (m×n) = U·diag(S)·Vᵀ with U m×r, V n×r, r = min(m, n) and S
/// descending.
struct SvdResult {
  Tensor U;
  std::vector<double> S;
  Tensor V;
};

/// One-sided (Hestenes) Jacobi SVD. Left singular vectors of zero singular
/// values are completed to an orthonormal set.
SvdResult svd(const Tensor& a);

/// ‖A‖_* = Σσᵢ
double nuclear_norm(const Tensor& a);

/// Minimal-norm subgradient U₊V₊ᵀ of the nuclear norm, where U₊, V₊ span
/// the singular values above 1e-10·σ₁. Zero for the zero matrix.
Tensor nuclear_norm_subgrad(const Tensor& a);
Tensor nuclear_norm_subgrad(const SvdResult& s, std::size_t rows, std::size_t cols);

/// Effective rank: number of σᵢ > rel_cut·σ₁.
std::size_t effective_rank(const Tensor& a, double rel_cut = 1e-3);

enum class RankOperand {
  delta,        // (P − P₀)⊙M⁰
  masked_live,  // P⊙M⁰
};

RankOperand rank_operand_from_string(const std::string& s);
std::string to_string(RankOperand op);

/// The rank-loss operand for one matrix, outside the graph.
Tensor rank_operand(const Tensor& live, const Tensor& pretrained, const MatrixMask& initial_mask, RankOperand op);

/// Σ over masked matrices of ‖operand‖_* as a graph node (unweighted). Its
/// custom backward deposits subgrad⊙M⁰ on each weight node, which the
/// unstructural mapping then narrows to the trainable vector.
NodeId rank_loss(Graph& g, const ParamNodes& nodes, const ParamStore& pretrained, const SparseMask& initial_mask,
                 RankOperand op);

}  // namespace sara
