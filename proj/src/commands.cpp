// SPDX-License-Identifier: Apache-2.0
#include "sara/commands.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include "sara/analysis.hpp"
#include "sara/checkpoint.hpp"
#include "sara/experiment.hpp"
#include "sara/hash.hpp"

namespace sara {
namespace {

using json = nlohmann::json;

constexpr std::size_t kSamplePoints = 512;
constexpr std::size_t kZeroingSeeds = 5;
constexpr double kZeroingFraction = 0.1;

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::ios_base::failure("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::ios_base::failure("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void prepare_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::ios_base::failure("cannot create " + out.string() + ": " + ec.message());
}

std::string meta_value(const Checkpoint& ck, const std::string& key) {
  const auto s = ck.suffixes("meta/" + key + "/");
  if (s.size() != 1) throw CheckpointError("checkpoint lacks meta/" + key);
  return s.front();
}

bool is_finetune(const Checkpoint& ck) { return ck.contains("meta/threshold"); }

/// The model a checkpoint started from: P0/ for fine-tuned runs, else P/.
ParamStore base_params(const Checkpoint& ck) { return ck.params(is_finetune(ck) ? "P0/" : "P/"); }

std::string label(std::size_t i) { return "ck" + std::to_string(i); }

void analyze_zero_sweep(const RunConfig& c, const std::vector<Checkpoint>& cks, const fs::path& out) {
  const ParamStore p = base_params(cks.front());
  const Workload w = make_workload(c);
  const EvalFn eval = [&](const ParamStore& q) { return eval_loss(q, w.source_eval); };
  std::ostringstream os;
  os << "threshold,eval_loss,frac_zeroed\n";
  for (const auto& row : zero_sweep(p, c.sweep_thresholds, eval)) {
    os << format_double(row.threshold) << ',' << format_double(row.eval_loss) << ','
       << format_double(row.frac_zeroed) << '\n';
  }
  write_file(out / "zero_sweep.csv", os.str());

  std::ostringstream st;
  st << "seed,fraction,smallest,random,largest\n";
  for (std::size_t i = 0; i < kZeroingSeeds; ++i) {
    RunConfig ci = c;
    ci.seed = c.seed + i;
    const Workload wi = make_workload(ci);
    const EvalFn ev = [&](const ParamStore& q) { return eval_loss(q, wi.source_eval); };
    st << ci.seed << ',' << format_double(kZeroingFraction);
    for (auto s : {ZeroStrategy::smallest, ZeroStrategy::random, ZeroStrategy::largest})
      st << ',' << format_double(zeroing_degradation(p, kZeroingFraction, s, ci.seed, ev));
    st << '\n';
  }
  write_file(out / "zero_sweep_strategies.csv", st.str());
}

void analyze_dynamics(const std::vector<Checkpoint>& cks, const fs::path& out) {
  std::ostringstream os;
  os << "checkpoint,method,step,frac_below_from_m0,frac_below_from_complement,threshold\n";
  for (std::size_t i = 0; i < cks.size(); ++i) {
    const auto& ck = cks[i];
    if (!is_finetune(ck)) throw std::invalid_argument(label(i) + " is not a fine-tune checkpoint");
    const double theta = ck.tensor("meta/threshold")[0];
    const SparseMask m0 = ck.masks("D0/", theta, SelectionMode::absolute_threshold);
    const auto step = static_cast<std::size_t>(ck.tensor("meta/step")[0]);
    const auto rec = dynamics_snapshot(ck.params("P/"), m0, theta, step);
    os << label(i) << ',' << meta_value(ck, "method") << ',' << rec.step << ','
       << format_double(rec.frac_below_from_m0) << ',' << format_double(rec.frac_below_from_complement) << ','
       << format_double(rec.threshold) << '\n';
  }
  write_file(out / "dynamics.csv", os.str());
}

ParamStore delta_params(const Checkpoint& ck) {
  const ParamStore p0 = ck.params("P0/");
  const ParamStore p = ck.params("P/");
  ParamStore d;
  for (const auto& name : p0.eligible_names()) d.add(name, subtract(p.at(name), p0.at(name)));
  return d;
}

void analyze_subspace(const RunConfig& c, const std::vector<Checkpoint>& cks, const fs::path& out) {
  std::ostringstream os;
  os << "left,right,matrix,r,phi\n";
  // Frobenius-combined φ: Σ‖U₁ᵀU₂‖²_F / Σ min(rᵢ, rⱼ) over matrices.
  auto emit = [&](const std::string& l, const std::string& r, const ParamStore& a, const ParamStore& b) {
    for (std::size_t rank : c.analysis_ranks) {
      double num = 0.0, den = 0.0;
      for (const auto& name : a.eligible_names()) {
        const Tensor& x = a.at(name);
        if (rank > std::min(x.rows(), x.cols())) continue;
        if (frobenius_norm(x) == 0.0 || frobenius_norm(b.at(name)) == 0.0) continue;
        const double phi = subspace_similarity(x, b.at(name), rank, rank);
        os << l << ',' << r << ',' << name << ',' << rank << ',' << format_double(phi) << '\n';
        num += phi * static_cast<double>(rank);
        den += static_cast<double>(rank);
      }
      if (den > 0) os << l << ',' << r << ",all," << rank << ',' << format_double(num / den) << '\n';
    }
  };
  std::vector<std::pair<std::string, ParamStore>> deltas;
  for (std::size_t i = 0; i < cks.size(); ++i) {
    const auto& ck = cks[i];
    const ParamStore base = base_params(ck);
    emit(label(i) + ":P0", label(i) + ":P0", base, base);
    if (!is_finetune(ck)) continue;
    emit(label(i) + ":P", label(i) + ":P0", ck.params("P/"), base);
    deltas.emplace_back(label(i) + ":dP", delta_params(ck));
  }
  for (std::size_t i = 0; i < deltas.size(); ++i)
    for (std::size_t j = i + 1; j < deltas.size(); ++j)
      emit(deltas[i].first, deltas[j].first, deltas[i].second, deltas[j].second);
  write_file(out / "subspace.csv", os.str());
}

void analyze_amplification(const RunConfig& c, const std::vector<Checkpoint>& cks, const fs::path& out) {
  std::ostringstream os;
  os << "checkpoint,method,matrix,r,delta_norm,projection_norm,amplification,unbounded\n";
  for (std::size_t i = 0; i < cks.size(); ++i) {
    const auto& ck = cks[i];
    if (!is_finetune(ck)) throw std::invalid_argument(label(i) + " is not a fine-tune checkpoint");
    const ParamStore p0 = ck.params("P0/");
    const ParamStore d = delta_params(ck);
    const std::string method = meta_value(ck, "method");
    for (std::size_t rank : c.analysis_ranks) {
      double dsq = 0.0, psq = 0.0;
      for (const auto& name : d.eligible_names()) {
        const Tensor& dp = d.at(name);
        if (rank > std::min(dp.rows(), dp.cols()) || frobenius_norm(dp) == 0.0) continue;
        const auto a = projection_norm_and_amplification(dp, p0.at(name), rank);
        const double dn = frobenius_norm(dp);
        os << label(i) << ',' << method << ',' << name << ',' << rank << ',' << format_double(dn) << ','
           << format_double(a.projection_norm) << ',' << format_double(a.factor) << ',' << a.unbounded << '\n';
        dsq += dn * dn;
        psq += a.projection_norm * a.projection_norm;
      }
      if (dsq == 0.0) continue;
      const bool unbounded = std::sqrt(psq) < 1e-12;
      os << label(i) << ',' << method << ",all," << rank << ',' << format_double(std::sqrt(dsq)) << ','
         << format_double(std::sqrt(psq)) << ','
         << format_double(unbounded ? std::numeric_limits<double>::infinity() : std::sqrt(dsq) / std::sqrt(psq))
         << ',' << unbounded << '\n';
    }
  }
  write_file(out / "amplification.csv", os.str());
}

void analyze_vlhi(const RunConfig& c, const std::vector<Checkpoint>& cks, const fs::path& out) {
  if (cks.size() < 2) throw ConfigError(">=2 methods required for VLHI");
  const Workload w = make_workload(c);
  std::vector<MethodMetrics> group;
  for (std::size_t i = 0; i < cks.size(); ++i) {
    const ParamStore p = cks[i].params("P/");
    // Target loss is the lower-better metric; the negated source loss
    // plays the higher-better prior-preservation role.
    group.push_back({label(i) + ":" + meta_value(cks[i], "method"), eval_loss(p, w.target_eval),
                     -eval_loss(p, w.source_eval)});
  }
  const auto scores = vlhi(group);
  std::ostringstream os;
  os << "checkpoint,target_eval,source_eval,vlhi\n";
  for (std::size_t i = 0; i < group.size(); ++i) {
    os << group[i].method << ',' << format_double(group[i].low_better) << ','
       << format_double(-group[i].high_better) << ',' << format_double(scores[i]) << '\n';
  }
  write_file(out / "vlhi.csv", os.str());
}

void analyze_memory(const RunConfig& c, const std::vector<Checkpoint>& cks, const fs::path& out) {
  const ParamStore p0 = base_params(cks.front());
  const Workload w = make_workload(c);
  std::vector<MemoryRow> rows;
  for (Method m : all_methods()) rows.push_back(measure_memory(c, m, w, p0));
  write_file(out / "memory.csv", memory_csv(rows));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

}  // namespace

void cmd_pretrain(const RunConfig& c, const fs::path& out) {
  prepare_dir(out);
  const Workload w = make_workload(c);
  const PretrainResult r = pretrain(c, w);
  save_checkpoint(pretrain_checkpoint(c, r), out / "checkpoint.sara");
  write_file(out / "metrics.csv", metrics_csv(r.log));
  write_file(out / "config.json", to_json(c).dump(2) + "\n");
  write_file(out / "source.csv", points_csv(w.source_train));
  write_file(out / "target.csv", points_csv(w.target_train));
  write_file(out / "samples.csv", points_csv(sample(r.params, w.schedule, kSamplePoints, c.seed, w.spec.time_dim)));
}

void cmd_finetune(const RunConfig& c, const fs::path& pretrained, const fs::path& out) {
  const Checkpoint src = load_checkpoint(pretrained);
  const ParamStore p0 = src.params("P/");
  if (p0.size() == 0) throw CheckpointError(pretrained.string() + " holds no P/ weights");
  prepare_dir(out);
  const Workload w = make_workload(c);
  const FinetuneResult r = finetune(c, w, p0);
  save_checkpoint(finetune_checkpoint(c, r), out / "checkpoint.sara");
  write_file(out / "metrics.csv", metrics_csv(r.log));
  write_file(out / "dynamics.csv", dynamics_csv(r.dynamics));
  write_file(out / "config.json", to_json(c).dump(2) + "\n");
  write_file(out / "samples.csv", points_csv(sample(r.params, w.schedule, kSamplePoints, c.seed, w.spec.time_dim)));
}

void cmd_analyze(const RunConfig& c, const std::vector<fs::path>& checkpoints, const std::string& which,
                 const fs::path& out) {
  if (std::find(analyze_kinds().begin(), analyze_kinds().end(), which) == analyze_kinds().end()) {
    throw ConfigError("unknown analysis '" + which + "'");
  }
  if (checkpoints.empty()) throw ConfigError("analyze needs at least one --checkpoint");
  std::vector<Checkpoint> cks;
  for (const auto& p : checkpoints) cks.push_back(load_checkpoint(p));
  prepare_dir(out);
  if (which == "zero_sweep") analyze_zero_sweep(c, cks, out);
  else if (which == "dynamics") analyze_dynamics(cks, out);
  else if (which == "subspace") analyze_subspace(c, cks, out);
  else if (which == "amplification") analyze_amplification(c, cks, out);
  else if (which == "vlhi") analyze_vlhi(c, cks, out);
  else analyze_memory(c, cks, out);
}

void cmd_report(const fs::path& run_dir) {
  std::vector<std::string> missing;
  for (const char* f : {"config.json", "metrics.csv", "checkpoint.sara"})
    if (!fs::is_regular_file(run_dir / f)) missing.emplace_back(f);
  if (!missing.empty()) {
    std::string msg = "missing artifacts in " + run_dir.string() + ":";
    for (const auto& m : missing) msg += " " + m;
    throw MissingArtifacts(msg);
  }

  json config_json;
  try {
    config_json = json::parse(read_file(run_dir / "config.json"));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config.json is not valid JSON: ") + e.what());
  }
  const RunConfig c = parse_config(config_json);
  const Checkpoint ck = load_checkpoint(run_dir / "checkpoint.sara");

  json summary;
  summary["config_hash"] = config_hash(c);
  summary["seed"] = c.seed;
  summary["method"] = meta_value(ck, "method");
  summary["checkpoint"]["step"] = ck.tensor("meta/step")[0];
  summary["checkpoint"]["config_hash_matches"] = meta_value(ck, "config_hash") == config_hash(c);
  if (ck.contains("meta/threshold")) summary["checkpoint"]["threshold"] = ck.tensor("meta/threshold")[0];

  if (!ck.suffixes("M0/").empty()) {
    const ParamStore p0 = ck.params("P0/");
    const ParamStore p = ck.params("P/");
    bool intact = true;
    std::size_t trained = 0;
    for (const auto& [name, value] : p0) {
      const Tensor& live = p.at(name);
      const std::string key = "M0/" + name;
      const bool masked = ck.contains(key);
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (masked && ck.mask(key).test(i)) continue;
        if (std::bit_cast<std::uint64_t>(value[i]) != std::bit_cast<std::uint64_t>(live[i])) intact = false;
      }
      if (masked) trained += ck.mask(key).popcount();
    }
    summary["checkpoint"]["frozen_intact"] = intact;
    summary["checkpoint"]["initial_mask_popcount"] = trained;
  }

  std::istringstream metrics(read_file(run_dir / "metrics.csv"));
  std::string line;
  std::getline(metrics, line);
  if (line != kMetricsHeader) throw ConfigError("metrics.csv has an unexpected header");
  const auto header = split(line, ',');
  std::vector<std::string> last;
  std::size_t rows = 0;
  double best_target = std::numeric_limits<double>::infinity();
  while (std::getline(metrics, line)) {
    if (line.empty()) continue;
    last = split(line, ',');
    if (last.size() != header.size()) throw ConfigError("metrics.csv row has the wrong column count");
    best_target = std::min(best_target, std::stod(last[4]));
    ++rows;
  }
  json m;
  m["rows"] = rows;
  if (rows > 0) {
    for (std::size_t k = 0; k < header.size(); ++k) m["final_" + header[k]] = std::stod(last[k]);
    m["best_target_eval"] = best_target;
  }
  summary["metrics"] = m;

  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(run_dir))
    if (e.is_regular_file() && e.path().filename() != "summary.json") files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  json artifacts = json::object();
  for (const auto& f : files) artifacts[f] = sha256_hex(read_file(run_dir / f));
  summary["artifacts"] = artifacts;

  write_file(run_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace sara
