// SPDX-License-Identifier: Apache-2.0
//
// Comparison fine-tuning strategies: LoRA reparameterization, naive
// selective tuning (full-matrix gradients masked after backward) and full
// fine-tuning of every eligible matrix.
#pragma once

#include <vector>

#include "sara/layers.hpp"
#include "sara/optimizer.hpp"
#include "sara/rng.hpp"
#include "sara/sparse_adaptation.hpp"

namespace sara {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 4.0;
};

/// Low-rank update B·A for one target matrix (m×n): A is r×n, B is m×r.
struct LoraAdapter {
  std::string target;
  Tensor A;
  Tensor B;
  std::size_t rank = 0;
  double scale = 1.0;  // α / r

  Tensor delta() const;  // scale·B·A
};

/// Adapters for every eligible matrix. A ~ N(0, 1/r), B = 0; the rank is
/// clamped to min(m, n).
std::vector<LoraAdapter> attach_lora(const ParamStore& params, const LoraConfig& config, Rng& rng);

struct LoraNodes {
  NodeId A;
  NodeId B;
  double scale;
};

/// y = x·Pᵀ + b + scale·(x·Aᵀ)·Bᵀ. The intermediate x·Aᵀ is materialized
/// and kept for backward; nodes of the adapter branch are tagged "adapter".
NodeId lora_forward(Graph& g, NodeId x, NodeId weight, NodeId bias, const LoraNodes& adapter);

/// Builds the task loss from a LinearFn (LoRA needs layer-level control).
using ModelLoss = std::function<NodeId(Graph&, const LinearFn&)>;

class LoraSession {
 public:
  LoraSession(ParamStore pretrained, std::vector<LoraAdapter> adapters, AdamWConfig adamw, DType dtype = DType::f64);

  const ParamStore& pretrained() const { return p0_; }
  const std::vector<LoraAdapter>& adapters() const { return adapters_; }
  const OptimizerState& optimizer() const { return opt_; }
  std::size_t step() const { return step_; }
  std::size_t trainable_count() const;
  DType dtype() const { return dtype_; }

  /// P₀ + scale·B·A for adapted matrices.
  ParamStore merged() const;

  void apply_gradient(std::span<const double> grad, double lr);

 private:
  ParamStore p0_;
  std::vector<LoraAdapter> adapters_;
  OptimizerState opt_;
  DType dtype_;
  std::size_t step_ = 0;
};

MetricsRecord lora_step(LoraSession& session, const ModelLoss& loss, double lr);

/// Weight matrices as full leaves, ∇P masked by M after backward, then the
/// same AdamW update on P[M] as sara_step.
MetricsRecord naive_selective_step(SaraSession& session, const TaskLoss& task_loss, double lr);

/// Session over every eligible matrix with no rank loss or readjustment.
SaraSession make_full_session(const ParamStore& pretrained, SessionConfig config);

/// naive_selective_step on a full session.
MetricsRecord full_finetune_step(SaraSession& session, const TaskLoss& task_loss, double lr);

}  // namespace sara
