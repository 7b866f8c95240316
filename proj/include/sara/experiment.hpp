// SPDX-License-Identifier: Apache-2.0
//
// Pretrain and fine-tune drivers for the toy diffusion workload.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sara/analysis.hpp"
#include "sara/baselines.hpp"
#include "sara/checkpoint.hpp"
#include "sara/config.hpp"
#include "sara/sparse_adaptation.hpp"
#include "sara/workload.hpp"

namespace sara {

/// Training data and fixed evaluation batches derived from the config seed.
struct Workload {
  DiffusionSchedule schedule;
  DenoiserSpec spec;
  MixtureDataset source;
  MixtureDataset target;
  Tensor source_train;
  Tensor target_train;
  Batch source_eval;
  Batch target_eval;
};

Workload make_workload(const RunConfig& c);

/// ε-prediction MSE on a fixed batch.
double eval_loss(const ParamStore& params, const Batch& batch);

struct LogRow {
  std::size_t step = 0;
  double task_loss = 0.0;
  double rank_loss = 0.0;
  double source_eval = 0.0;
  double target_eval = 0.0;
  std::size_t grad_bytes = 0;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,task_loss,rank_loss,source_eval,target_eval,grad_bytes,wall_ms";
std::string metrics_csv(const std::vector<LogRow>& rows);
std::string dynamics_csv(const std::vector<DynamicsRecord>& rows);
/// "x,y" header then one point per row.
std::string points_csv(const Tensor& points);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

/// Called after every logged step with the current parameters.
using LogHook = std::function<void(const LogRow&, const ParamStore&)>;

struct PretrainResult {
  ParamStore params;
  std::vector<LogRow> log;
};

PretrainResult pretrain(const RunConfig& c, const Workload& w, const LogHook& hook = {});

struct FinetuneResult {
  Method method = Method::sara;
  ParamStore pretrained;
  ParamStore params;                 // live or merged weights
  SparseMask initial_mask;           // θ-mask of P₀ used for dynamics
  std::optional<SparseMask> trained_initial_mask;  // M⁰ of selective methods
  std::optional<SparseMask> mask;    // current M of selective methods
  std::optional<OptimizerState> optimizer;
  std::vector<LoraAdapter> adapters;
  std::size_t step = 0;
  double threshold = 0.0;
  double lr = 0.0;
  std::size_t trainable = 0;
  std::vector<LogRow> log;
  std::vector<DynamicsRecord> dynamics;
  GradReport last_report;
};

/// Resolves θ: the configured threshold or the implied budget threshold.
double resolve_threshold(const RunConfig& c, const ParamStore& p0);

/// Mask a selective method trains, or nullopt for LoRA.
std::optional<SparseMask> method_mask(const RunConfig& c, const ParamStore& p0);

FinetuneResult finetune(const RunConfig& c, const Workload& w, const ParamStore& p0, const LogHook& hook = {});

/// One instrumented training step of `method` at the config's batch size.
MemoryRow measure_memory(RunConfig c, Method method, const Workload& w, const ParamStore& p0);
std::string memory_csv(const std::vector<MemoryRow>& rows);

Checkpoint pretrain_checkpoint(const RunConfig& c, const PretrainResult& r);
Checkpoint finetune_checkpoint(const RunConfig& c, const FinetuneResult& r);

}  // namespace sara
