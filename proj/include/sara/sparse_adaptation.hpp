// SPDX-License-Identifier: Apache-2.0
//
// Sparse adaptation of the smallest-magnitude pretrained parameters.
//
// A session owns the frozen pretrained snapshot P₀, the live parameters P,
// the initial mask M⁰, the current mask M ⊆ M⁰ and the trainable vector
// p_learn = P[M] with its optimizer moments. Each step rebuilds the weight
// matrices with the unstructural mapping so that only p_learn is a graph
// leaf and gradient storage scales with popcount(M).
#pragma once

#include <functional>
#include <vector>

#include "sara/autodiff.hpp"
#include "sara/lowrank.hpp"
#include "sara/optimizer.hpp"
#include "sara/param_store.hpp"
#include "sara/sparse_mask.hpp"

namespace sara {

struct MetricsRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double task_loss = 0.0;
  double rank_loss = 0.0;
  double grad_norm = 0.0;
  std::size_t grad_bytes = 0;  // retained parameter-gradient bytes
  GradReport report;
};

/// Builds the task loss on a graph given one node per parameter.
using TaskLoss = std::function<NodeId(Graph&, const ParamNodes&)>;

struct SessionConfig {
  double lambda_rank = 0.0;
  RankOperand rank_operand = RankOperand::delta;
  std::size_t rank_loss_interval = 1;
  bool progressive = true;
  // Step after which the mask is reselected; 0 means total_iterations / 2.
  std::size_t progressive_iteration = 0;
  std::size_t readjust_events = 1;
  std::size_t total_iterations = 0;
  AdamWConfig adamw;
  DType dtype = DType::f64;
};

class SaraSession {
 public:
  SaraSession(ParamStore pretrained, SparseMask mask, SessionConfig config);

  /// Resumes a session from checkpointed state.
  SaraSession(ParamStore pretrained, ParamStore live, SparseMask initial_mask, SparseMask mask,
              OptimizerState optimizer, std::size_t step, SessionConfig config);

  const ParamStore& pretrained() const { return p0_; }
  const ParamStore& params() const { return p_; }
  const SparseMask& initial_mask() const { return m0_; }
  const SparseMask& mask() const { return m_; }
  const std::vector<double>& trainable() const { return p_learn_; }
  const OptimizerState& optimizer() const { return opt_; }
  const SessionConfig& config() const { return config_; }
  std::size_t step() const { return step_; }

  /// Steps after which progressive_readjust fires.
  std::vector<std::size_t> readjust_steps() const;

  /// Per-matrix slice of p_learn for the current mask.
  std::span<const double> trainable_slice(const std::string& name) const;

  /// Applies one AdamW update to p_learn from its gradient (laid out like
  /// p_learn), writes p_learn back into P and advances the step counter.
  void apply_gradient(std::span<const double> grad, double lr);

  /// Whether the rank loss is evaluated on the upcoming step.
  bool rank_loss_due() const;

 private:
  friend const SparseMask& progressive_readjust(SaraSession& session);

  void rebuild_offsets();

  ParamStore p0_;
  ParamStore p_;
  SparseMask m0_;
  SparseMask m_;
  std::vector<double> p_learn_;
  std::vector<std::size_t> offsets_;  // start of each mask entry in p_learn_
  OptimizerState opt_;
  SessionConfig config_;
  std::size_t step_ = 0;
};

/// Weight nodes for a SaRA step: masked matrices become unstructural maps
/// over a per-matrix p_learn leaf, everything else is a frozen parameter.
/// Returns the leaves in mask order.
std::vector<NodeId> bind_unstructural(Graph& g, const SaraSession& session, ParamNodes& nodes);

/// Adds λ·rank_loss to `task` when due; returns the total loss node and the
/// unweighted rank-loss value through `rank_value`.
NodeId add_rank_term(Graph& g, const SaraSession& session, const ParamNodes& nodes, NodeId task,
                     double& rank_value);

/// One SaRA update through the unstructural mapping. Fires
/// progressive_readjust when the session reaches a readjustment step.
MetricsRecord sara_step(SaraSession& session, const TaskLoss& task_loss, double lr);

/// Reselects M' = {i ∈ M⁰ : |P[i]| < θ}. p_learn and the moments are
/// re-indexed; survivors keep their moments, dropped entries are discarded.
/// An empty M' leaves the mask unchanged and logs a warning.
const SparseMask& progressive_readjust(SaraSession& session);

}  // namespace sara
