// SPDX-License-Identifier: Apache-2.0
#include "sara/config.hpp"

#include <fstream>
#include <set>

#include "sara/hash.hpp"

namespace sara {
namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + where + k + "'");
}

template <class T>
T read(const json& j, const std::string& key, T fallback, const std::string& where = "") {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

std::size_t read_count(const json& j, const std::string& key, std::size_t fallback, const std::string& where = "") {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError("config key '" + where + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::sara: return "sara";
    case Method::sara_no_ppa: return "sara_no_ppa";
    case Method::sara_no_rank: return "sara_no_rank";
    case Method::lora: return "lora";
    case Method::naive_select: return "naive_select";
    case Method::full: return "full";
    case Method::largest: return "largest";
    case Method::random: return "random";
  }
  return "?";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> all{Method::sara, Method::sara_no_ppa, Method::sara_no_rank, Method::lora,
                                       Method::naive_select, Method::full, Method::largest, Method::random};
  return all;
}

Method method_from_string(const std::string& s) {
  for (Method m : all_methods())
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

RunConfig parse_config(const json& j) {
  reject_unknown(j,
                 {"method", "threshold", "budget", "lambda_rank", "rank_loss_operand", "rank_loss_interval",
                  "progressive_iteration", "readjust_events", "total_iterations", "pretrain_iterations", "lr",
                  "pretrain_lr", "lr_schedule", "seed", "batch_size", "log_every", "dtype", "timing", "schedule",
                  "dataset", "model", "lora", "adamw", "sweep_thresholds", "analysis_ranks", "out_dir"},
                 "");
  RunConfig c;
  c.method = method_from_string(read<std::string>(j, "method", "sara"));

  if (j.contains("threshold") && !j["threshold"].is_null()) c.threshold = read<double>(j, "threshold", 0.0);
  if (j.contains("budget") && !j["budget"].is_null()) c.budget = read_count(j, "budget", 0);
  if (c.threshold.has_value() == c.budget.has_value()) {
    throw ConfigError("exactly one of 'threshold' and 'budget' must be set");
  }
  if (c.threshold && !(*c.threshold > 0.0)) throw ConfigError("'threshold' must be positive");
  if (c.budget && *c.budget == 0) throw ConfigError("'budget' must be positive");

  c.lambda_rank = read<double>(j, "lambda_rank", c.lambda_rank);
  if (c.lambda_rank < 0.0) throw ConfigError("'lambda_rank' must be non-negative");
  try {
    c.rank_operand = rank_operand_from_string(read<std::string>(j, "rank_loss_operand", "delta"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.rank_loss_interval = read_count(j, "rank_loss_interval", c.rank_loss_interval);
  if (c.rank_loss_interval == 0) throw ConfigError("'rank_loss_interval' must be >= 1");
  c.total_iterations = read_count(j, "total_iterations", c.total_iterations);
  if (c.total_iterations == 0) throw ConfigError("'total_iterations' must be >= 1");
  c.progressive_iteration = read_count(j, "progressive_iteration", c.total_iterations / 2);
  if (c.progressive_iteration >= c.total_iterations) {
    throw ConfigError("'progressive_iteration' must be smaller than 'total_iterations'");
  }
  c.readjust_events = read_count(j, "readjust_events", c.readjust_events);
  c.pretrain_iterations = read_count(j, "pretrain_iterations", c.pretrain_iterations);

  if (j.contains("lr") && !j["lr"].is_null()) {
    const auto& v = j["lr"];
    if (v.is_string()) {
      if (v.get<std::string>() != "auto") throw ConfigError("'lr' must be a number or \"auto\"");
    } else if (v.is_number()) {
      c.lr = v.get<double>();
      if (!(*c.lr >= 0.0)) throw ConfigError("'lr' must be non-negative");
    } else {
      throw ConfigError("'lr' must be a number or \"auto\"");
    }
  }
  c.pretrain_lr = read<double>(j, "pretrain_lr", c.pretrain_lr);
  const auto sched = read<std::string>(j, "lr_schedule", "cosine");
  if (sched == "cosine") c.lr_schedule = LrSchedule::cosine;
  else if (sched == "constant") c.lr_schedule = LrSchedule::constant;
  else throw ConfigError("'lr_schedule' must be \"cosine\" or \"constant\"");

  if (!j.contains("seed") || j["seed"].is_null()) throw ConfigError("'seed' is required");
  c.seed = read<std::uint64_t>(j, "seed", 0);
  c.batch_size = read_count(j, "batch_size", c.batch_size);
  if (c.batch_size == 0) throw ConfigError("'batch_size' must be >= 1");
  c.log_every = read_count(j, "log_every", c.log_every);
  if (c.log_every == 0) throw ConfigError("'log_every' must be >= 1");
  try {
    c.dtype = dtype_from_string(read<std::string>(j, "dtype", "f64"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.timing = read<bool>(j, "timing", c.timing);

  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    reject_unknown(s, {"steps", "beta_start", "beta_end"}, "schedule.");
    c.schedule.steps = read_count(s, "steps", c.schedule.steps, "schedule.");
    c.schedule.beta_start = read<double>(s, "beta_start", c.schedule.beta_start, "schedule.");
    c.schedule.beta_end = read<double>(s, "beta_end", c.schedule.beta_end, "schedule.");
  }
  try {
    DiffusionSchedule check(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    reject_unknown(d, {"samples", "eval_samples", "rotation_deg", "translation"}, "dataset.");
    c.dataset.samples = read_count(d, "samples", c.dataset.samples, "dataset.");
    c.dataset.eval_samples = read_count(d, "eval_samples", c.dataset.eval_samples, "dataset.");
    c.dataset.rotation_deg = read<double>(d, "rotation_deg", c.dataset.rotation_deg, "dataset.");
    c.dataset.translation = read<std::array<double, 2>>(d, "translation", c.dataset.translation, "dataset.");
  }
  if (c.dataset.samples == 0 || c.dataset.eval_samples == 0) throw ConfigError("dataset sizes must be >= 1");
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"hidden", "time_dim"}, "model.");
    c.model.hidden = read_count(m, "hidden", c.model.hidden, "model.");
    c.model.time_dim = read_count(m, "time_dim", c.model.time_dim, "model.");
  }
  if (c.model.hidden == 0 || c.model.time_dim == 0 || c.model.time_dim % 2 != 0) {
    throw ConfigError("model.hidden must be >= 1 and model.time_dim a positive even number");
  }
  if (j.contains("lora")) {
    const auto& l = j["lora"];
    reject_unknown(l, {"rank", "alpha"}, "lora.");
    c.lora.rank = read_count(l, "rank", c.lora.rank, "lora.");
    c.lora.alpha = read<double>(l, "alpha", c.lora.alpha, "lora.");
  }
  if (c.lora.rank == 0) throw ConfigError("'lora.rank' must be >= 1");
  if (j.contains("adamw")) {
    const auto& a = j["adamw"];
    reject_unknown(a, {"beta1", "beta2", "eps", "weight_decay"}, "adamw.");
    c.adamw.beta1 = read<double>(a, "beta1", c.adamw.beta1, "adamw.");
    c.adamw.beta2 = read<double>(a, "beta2", c.adamw.beta2, "adamw.");
    c.adamw.eps = read<double>(a, "eps", c.adamw.eps, "adamw.");
    c.adamw.weight_decay = read<double>(a, "weight_decay", c.adamw.weight_decay, "adamw.");
  }
  if (!(c.adamw.beta1 >= 0 && c.adamw.beta1 < 1 && c.adamw.beta2 >= 0 && c.adamw.beta2 < 1 && c.adamw.eps > 0)) {
    throw ConfigError("adamw betas must lie in [0, 1) and eps must be positive");
  }
  c.sweep_thresholds = read<std::vector<double>>(j, "sweep_thresholds", c.sweep_thresholds);
  if (!std::is_sorted(c.sweep_thresholds.begin(), c.sweep_thresholds.end())) {
    throw ConfigError("'sweep_thresholds' must be ascending");
  }
  c.analysis_ranks = read<std::vector<std::size_t>>(j, "analysis_ranks", c.analysis_ranks);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::ios_base::failure("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["method"] = to_string(c.method);
  j["threshold"] = c.threshold ? json(*c.threshold) : json(nullptr);
  j["budget"] = c.budget ? json(*c.budget) : json(nullptr);
  j["lambda_rank"] = c.lambda_rank;
  j["rank_loss_operand"] = to_string(c.rank_operand);
  j["rank_loss_interval"] = c.rank_loss_interval;
  j["progressive_iteration"] = c.progressive_iteration;
  j["readjust_events"] = c.readjust_events;
  j["total_iterations"] = c.total_iterations;
  j["pretrain_iterations"] = c.pretrain_iterations;
  j["lr"] = c.lr ? json(*c.lr) : json("auto");
  j["pretrain_lr"] = c.pretrain_lr;
  j["lr_schedule"] = c.lr_schedule == LrSchedule::cosine ? "cosine" : "constant";
  j["seed"] = c.seed;
  j["batch_size"] = c.batch_size;
  j["log_every"] = c.log_every;
  j["dtype"] = to_string(c.dtype);
  j["timing"] = c.timing;
  j["schedule"] = {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}};
  j["dataset"] = {{"samples", c.dataset.samples},
                  {"eval_samples", c.dataset.eval_samples},
                  {"rotation_deg", c.dataset.rotation_deg},
                  {"translation", c.dataset.translation}};
  j["model"] = {{"hidden", c.model.hidden}, {"time_dim", c.model.time_dim}};
  j["lora"] = {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}};
  j["adamw"] = {{"beta1", c.adamw.beta1},
                {"beta2", c.adamw.beta2},
                {"eps", c.adamw.eps},
                {"weight_decay", c.adamw.weight_decay}};
  j["sweep_thresholds"] = c.sweep_thresholds;
  j["analysis_ranks"] = c.analysis_ranks;
  return j;
}

std::string canonical_config(const RunConfig& c) { return to_json(c).dump(); }

std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_config(c)); }

double base_lr(const RunConfig& c, double threshold) {
  if (c.lr) return *c.lr;
  // Full fine-tuning takes the rate of the largest threshold the adaptive
  // rule covers.
  if (c.method == Method::full) return adaptive_lr(kFullFinetuneThreshold);
  return adaptive_lr(threshold);
}

}  // namespace sara
