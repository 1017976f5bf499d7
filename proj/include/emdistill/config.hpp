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

// Run configuration as flat key=value text with dotted keys:
//
//   # comment
//   teacher.num_layers = 4
//   task.kind = majority-token
//   mode = full
//
// Keys under teacher.* and student.* set TransformerConfig fields except
// vocab_size, max_seq_len and num_classes, which come from task.*. Unknown
// or repeated keys are errors. One file fully determines a run.

#ifndef EMDISTILL_CONFIG_HPP_
#define EMDISTILL_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "emdistill/distill.hpp"
#include "emdistill/model.hpp"
#include "emdistill/task.hpp"

namespace emdistill {

struct TeacherTraining {
  double learning_rate = 0.01;
  int epochs = 20;
  int batch_size = 16;
  double accuracy_floor = 0.95;
  bool operator==(const TeacherTraining&) const = default;
};

struct DistillConfig {
  TransformerConfig teacher;
  TransformerConfig student;
  SyntheticTaskSpec task;
  TeacherTraining teacher_training;
  DistillParams distill;  // beta, temperature, tau, mode
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 1;   // batch order and projection init
  std::string output_dir;   // overridden by --out
  std::string teacher_checkpoint;  // default: <output_dir>/teacher.ckpt

  // Copies the task sizes into both model configs and checks every
  // invariant. Throws ConfigError.
  void finalize();
  std::filesystem::path teacher_checkpoint_path() const;
};

DistillConfig parse_config(std::istream& in);
DistillConfig load_config(const std::filesystem::path& path);

/// Every key in canonical order; parse_config(write_config(c)) == c.
void write_config(std::ostream& out, const DistillConfig& config);

}  // namespace emdistill

#endif  // EMDISTILL_CONFIG_HPP_
