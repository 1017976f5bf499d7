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

// Synthetic sequence-classification tasks.
//
// Every sequence starts with token 0, the classification token, followed by
// seq_len - 1 content tokens. Kinds:
//
//   majority-token        classes c = 0..C-1 map to tokens 1..C; the label is
//                         the class whose token occurs strictly most often.
//   contains-subsequence  two classes; label 1 iff tokens 1, 2, 3 occur in
//                         that order (not necessarily adjacent).
//   balanced-parentheses  two classes; token 1 opens and token 2 closes;
//                         label 1 iff the content is a balanced string.

#ifndef EMDISTILL_TASK_HPP_
#define EMDISTILL_TASK_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace emdistill {

/// Invalid task or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { kMajorityToken, kContainsSubsequence, kBalancedParentheses };

TaskKind parse_task_kind(std::string_view name);
std::string_view task_kind_name(TaskKind kind);

struct SyntheticTaskSpec {
  TaskKind kind = TaskKind::kMajorityToken;
  int vocab_size = 8;
  int seq_len = 12;  // including the classification token
  int num_classes = 2;
  int train_size = 1000;
  int eval_size = 200;
  std::uint64_t seed = 1;

  // Throws ConfigError when the sizes cannot express the pattern.
  void validate() const;
  bool operator==(const SyntheticTaskSpec&) const = default;
};

struct Example {
  std::vector<int> tokens;
  int label = 0;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> eval;
};

/// Deterministic in spec. Train and eval draw from separate seed streams.
/// Within each split the class counts differ by at most one.
Dataset generate_task(const SyntheticTaskSpec& spec);

/// Label by rule, independent of the generator; -1 if no class applies
/// (for example a tie under majority-token).
int reference_label(TaskKind kind, int num_classes, std::span<const int> tokens);

}  // namespace emdistill

#endif  // EMDISTILL_TASK_HPP_
