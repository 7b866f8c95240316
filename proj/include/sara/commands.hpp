// SPDX-License-Identifier: Apache-2.0
//
// File-producing commands behind the command-line tool.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sara/config.hpp"

namespace sara {

namespace fs = std::filesystem;

/// Writes checkpoint.sara, metrics.csv, config.json, samples.csv and the
/// source/target dataset dumps to `out`.
void cmd_pretrain(const RunConfig& c, const fs::path& out);

/// Fine-tunes the "P/" weights of `pretrained`. Writes checkpoint.sara,
/// metrics.csv, dynamics.csv, config.json and samples.csv.
void cmd_finetune(const RunConfig& c, const fs::path& pretrained, const fs::path& out);

inline const std::vector<std::string>& analyze_kinds() {
  static const std::vector<std::string> kinds{"zero_sweep", "dynamics", "subspace", "amplification", "vlhi", "memory"};
  return kinds;
}

/// Writes <which>.csv to `out`.
void cmd_analyze(const RunConfig& c, const std::vector<fs::path>& checkpoints, const std::string& which,
                 const fs::path& out);

class MissingArtifacts : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Summarizes a run directory into summary.json.
void cmd_report(const fs::path& run_dir);

}  // namespace sara
