// SPDX-License-Identifier: Apache-2.0
//
// sara: pretrain, fine-tune, analyze and report on the toy diffusion task.
//
// Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "sara/checkpoint.hpp"
#include "sara/commands.hpp"
#include "sara/config.hpp"
#include "sara/tensor.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericError = 3;
constexpr int kIoError = 4;

sara::RunConfig resolve(const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::size_t> log_every) {
  sara::RunConfig c = sara::load_config(path);
  if (seed) c.seed = *seed;
  if (log_every) {
    if (*log_every == 0) throw sara::ConfigError("--log-every must be >= 1");
    c.log_every = *log_every;
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse fine-tuning experiments on a toy diffusion model"};
  app.require_subcommand(1);

  std::string config, out, which;
  std::vector<std::string> checkpoints;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> log_every;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "run configuration (JSON)")->required();
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--log-every", log_every, "override the logging interval");
  };

  auto* pre = app.add_subcommand("pretrain", "train the denoiser on the source mixture");
  add_common(pre);

  auto* fine = app.add_subcommand("finetune", "adapt a pretrained checkpoint to the target mixture");
  add_common(fine);
  fine->add_option("--checkpoint", checkpoints, "pretrained checkpoint")->required()->expected(1);

  auto* ana = app.add_subcommand("analyze", "run an analysis over checkpoints");
  add_common(ana);
  ana->add_option("--checkpoint", checkpoints, "checkpoint (repeatable)")->required();
  ana->add_option("--which", which, "analysis kind")->required()->check(CLI::IsMember(sara::analyze_kinds()));

  auto* rep = app.add_subcommand("report", "summarize a run directory into summary.json");
  rep->add_option("--out", out, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*pre) {
      sara::cmd_pretrain(resolve(config, seed, log_every), out);
    } else if (*fine) {
      sara::cmd_finetune(resolve(config, seed, log_every), checkpoints.front(), out);
    } else if (*ana) {
      std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
      sara::cmd_analyze(resolve(config, seed, log_every), paths, which, out);
    } else {
      sara::cmd_report(out);
    }
  } catch (const sara::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const sara::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const sara::CheckpointError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const sara::MissingArtifacts& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
