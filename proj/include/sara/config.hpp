// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "sara/baselines.hpp"
#include "sara/lowrank.hpp"
#include "sara/optimizer.hpp"
#include "sara/workload.hpp"

namespace sara {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Method { sara, sara_no_ppa, sara_no_rank, lora, naive_select, full, largest, random };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
const std::vector<Method>& all_methods();

enum class LrSchedule { constant, cosine };

struct ScheduleConfig {
  std::size_t steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct RunConfig {
  Method method = Method::sara;
  std::optional<double> threshold;
  std::optional<std::size_t> budget;
  double lambda_rank = 0.0;
  RankOperand rank_operand = RankOperand::delta;
  std::size_t rank_loss_interval = 1;
  std::size_t progressive_iteration = 0;
  std::size_t readjust_events = 1;
  std::size_t total_iterations = 2000;
  std::size_t pretrain_iterations = 5000;
  std::optional<double> lr;  // empty = "auto"
  double pretrain_lr = 3e-3;
  LrSchedule lr_schedule = LrSchedule::cosine;
  std::uint64_t seed = 0;
  std::size_t batch_size = 128;
  std::size_t log_every = 50;
  DType dtype = DType::f64;
  bool timing = false;
  ScheduleConfig schedule;
  DatasetConfig dataset;
  DenoiserSpec model;
  LoraConfig lora;
  AdamWConfig adamw;
  std::vector<double> sweep_thresholds{0.0, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1, 1e9};
  std::vector<std::size_t> analysis_ranks{1, 2, 4, 8};
};

/// Validates keys, types and cross-field rules. Unknown keys are rejected.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Every field with defaults filled in; object keys sorted.
nlohmann::json to_json(const RunConfig& c);
std::string canonical_config(const RunConfig& c);
std::string config_hash(const RunConfig& c);

inline constexpr double kFullFinetuneThreshold = 1e-2;

/// Initial learning rate: the configured value or adaptive_lr(θ).
double base_lr(const RunConfig& c, double threshold);

}  // namespace sara
