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

// Experiment engine: teacher training, distillation runs, ablations and
// matrix export. Every run is sequential and fully determined by its config.
//
// Files written under config.output_dir:
//
//   teacher.ckpt, teacher_metrics.jsonl         train_teacher
//   metrics.jsonl                               one record per (epoch, split)
//   matrices.json                               per-epoch mean flow and cost
//   matrices/epoch<k>_{attn|hidden}_{flow|cost}.csv
//   student.ckpt, report.json                   distill
//   last_good/                                  on numeric failure
//   <mode>/..., ablation.json, ablation.txt     ablate

#ifndef EMDISTILL_HARNESS_HPP_
#define EMDISTILL_HARNESS_HPP_

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "emdistill/config.hpp"
#include "emdistill/distill.hpp"
#include "emdistill/model.hpp"
#include "emdistill/task.hpp"

namespace emdistill {

/// A loss became NaN or infinite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Teacher training ended below the configured accuracy floor.
class AccuracyFloorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double accuracy(const Transformer& model, std::span<const Example> examples);

struct TeacherReport {
  std::filesystem::path checkpoint;
  std::vector<double> eval_accuracy;  // per epoch run
  double final_eval_accuracy = 0;
};

/// Trains config.teacher from scratch with cross-entropy, stopping at the
/// first epoch whose eval accuracy reaches the floor. The checkpoint is
/// written either way; AccuracyFloorError if the floor was never reached.
TeacherReport train_teacher(const DistillConfig& config);

struct LossMeans {
  double total = 0, emb = 0, pred = 0, attn = 0, hidden = 0;
};

struct EpochRecord {
  int epoch = 0;
  long step = 0;  // optimizer steps so far
  LossMeans train, eval;
  double train_accuracy = 0, eval_accuracy = 0;
  LayerWeights weights;  // weights after the epoch's last batch
};

/// Per-epoch means of the per-batch plans and distances, teacher x student.
struct EpochMatrices {
  int epoch = 0;
  Eigen::MatrixXd attn_flow, attn_cost, hidden_flow, hidden_cost;
};

struct RunReport {
  DistillMode mode = DistillMode::kFull;
  std::vector<EpochRecord> epochs;
  std::vector<EpochMatrices> matrices;
  double teacher_eval_accuracy = 0;
  std::vector<std::filesystem::path> exports;  // relative to output_dir
};

/// Distills config.student from the teacher checkpoint. Throws ConfigError
/// on a missing or mismatched checkpoint and NumericError (after dumping
/// last_good/) on a non-finite loss.
RunReport distill(const DistillConfig& config);
RunReport distill(const DistillConfig& config, const Transformer& teacher);

struct AblationRow {
  DistillMode mode = DistillMode::kFull;
  double final_eval_accuracy = 0;
  double final_eval_loss = 0;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> eval_accuracy;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // full, no_emd, no_ca, one_to_one
  // Expected directions: full >= no_ca, no_ca >= no_emd, full >= one_to_one
  // on final eval accuracy. Recorded, not enforced.
  std::vector<std::pair<std::string, bool>> orderings;
};

/// Runs all four modes with identical seeds, each under <output_dir>/<mode>.
/// Trains the teacher first if its checkpoint does not exist.
AblationReport ablate(const DistillConfig& config);

/// Writes the CSV files for every epoch in matrices.json; runs distill
/// first when that file is missing. Returns paths relative to output_dir.
std::vector<std::filesystem::path> export_matrices(const DistillConfig& config);

/// Matrix CSV: header row "student/teacher,1,..,M", then one row per student
/// layer j starting with j. `matrix` is teacher x student.
void write_matrix_csv(const std::filesystem::path& path,
                      const Eigen::MatrixXd& matrix);
/// Inverse of write_matrix_csv; returns the teacher x student matrix.
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);

}  // namespace emdistill

#endif  // EMDISTILL_HARNESS_HPP_
