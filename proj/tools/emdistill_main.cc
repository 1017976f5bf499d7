// Copyright 2026 The emdistill Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// emdistill train-teacher | distill | ablate | export-matrices
//     --config <path> [--seed <u64>] [--out <dir>]
//
// Exit status: 0 success, 1 other failure, 2 configuration error,
// 3 non-finite loss, 4 teacher accuracy floor unmet.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "emdistill/config.hpp"
#include "emdistill/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;
constexpr int kNumericError = 3;
constexpr int kAccuracyFloor = 4;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Options& opts) {
  cmd->add_option("--config", opts.config, "run configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "run seed; overrides `seed` in the config");
  cmd->add_option("--out", opts.out, "output directory; overrides `output_dir`");
}

emdistill::DistillConfig resolve(const Options& opts) {
  emdistill::DistillConfig config = emdistill::load_config(opts.config);
  if (opts.seed) config.seed = *opts.seed;
  if (!opts.out.empty()) config.output_dir = opts.out;
  if (config.output_dir.empty()) {
    throw emdistill::ConfigError("no output directory: pass --out or set output_dir");
  }
  config.finalize();
  return config;
}

int run(const std::string& command, const Options& opts) {
  using namespace emdistill;
  const DistillConfig config = resolve(opts);
  if (command == "train-teacher") {
    const TeacherReport r = train_teacher(config);
    std::printf("teacher eval accuracy %.4f after %zu epochs -> %s\n",
                r.final_eval_accuracy, r.eval_accuracy.size(),
                r.checkpoint.string().c_str());
  } else if (command == "distill") {
    const RunReport r = distill(config);
    const EpochRecord& last = r.epochs.back();
    std::printf("%s: epoch %d train loss %.6f eval accuracy %.4f (teacher %.4f)\n",
                std::string(mode_name(r.mode)).c_str(), last.epoch, last.train.total,
                last.eval_accuracy, r.teacher_eval_accuracy);
  } else if (command == "ablate") {
    const AblationReport r = ablate(config);
    for (const AblationRow& row : r.rows) {
      std::printf("%-12s eval accuracy %.4f\n",
                  std::string(mode_name(row.mode)).c_str(), row.final_eval_accuracy);
    }
    for (const auto& [claim, holds] : r.orderings) {
      std::printf("  %s: %s\n", claim.c_str(), holds ? "holds" : "does not hold");
    }
  } else if (command == "export-matrices") {
    const auto files = export_matrices(config);
    std::printf("wrote %zu matrix files under %s\n", files.size(),
                config.output_dir.c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Many-to-many layer distillation with Earth Mover's Distance"};
  app.require_subcommand(1);
  Options opts;
  std::string command;
  for (const char* name : {"train-teacher", "distill", "ablate", "export-matrices"}) {
    CLI::App* cmd = app.add_subcommand(name);
    add_common(cmd, opts);
    cmd->callback([&command, name] { command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    return run(command, opts);
  } catch (const emdistill::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const emdistill::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumericError;
  } catch (const emdistill::AccuracyFloorError& e) {
    std::fprintf(stderr, "accuracy floor unmet: %s\n", e.what());
    return kAccuracyFloor;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
}
