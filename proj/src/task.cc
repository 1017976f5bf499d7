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

#include "emdistill/task.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace emdistill {
namespace {

constexpr int kOpen = 1;
constexpr int kClose = 2;
constexpr int kPattern[] = {1, 2, 3};

using Rng = std::mt19937_64;

Rng split_rng(std::uint64_t seed, std::uint32_t split) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32), split};
  return Rng(seq);
}

int uniform(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::vector<int> random_content(Rng& rng, int length, int vocab) {
  std::vector<int> out(length);
  for (int& t : out) t = uniform(rng, 1, vocab - 1);
  return out;
}

// Positions p1 < p2 < p3 of a greedy match of the pattern, or empty.
std::vector<std::size_t> pattern_match(std::span<const int> content) {
  std::vector<std::size_t> at;
  for (std::size_t i = 0; i < content.size() && at.size() < 3; ++i) {
    if (content[i] == kPattern[at.size()]) at.push_back(i);
  }
  if (at.size() < 3) at.clear();
  return at;
}

std::vector<int> majority_content(Rng& rng, const SyntheticTaskSpec& spec,
                                  int label) {
  const int n = spec.seq_len - 1;
  const int target = label + 1;
  std::bernoulli_distribution pick_target(0.5);
  std::vector<int> content(n);
  for (int& t : content) {
    t = pick_target(rng) ? target : uniform(rng, 1, spec.vocab_size - 1);
  }
  for (;;) {
    std::vector<int> count(spec.num_classes + 1, 0);
    for (int t : content) {
      if (t <= spec.num_classes) ++count[t];
    }
    int rival = 0;
    for (int c = 1; c <= spec.num_classes; ++c) {
      if (c != target) rival = std::max(rival, count[c]);
    }
    if (count[target] > rival) break;
    std::vector<int> others;
    for (int i = 0; i < n; ++i) {
      if (content[i] != target) others.push_back(i);
    }
    content[others[uniform(rng, 0, static_cast<int>(others.size()) - 1)]] = target;
  }
  return content;
}

std::vector<int> subsequence_content(Rng& rng, const SyntheticTaskSpec& spec,
                                     int label) {
  const int n = spec.seq_len - 1;
  std::vector<int> content = random_content(rng, n, spec.vocab_size);
  if (label == 1) {
    std::vector<int> slots(n);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::sort(slots.begin(), slots.begin() + 3);
    for (int k = 0; k < 3; ++k) content[slots[k]] = kPattern[k];
    return content;
  }
  for (auto at = pattern_match(content); !at.empty(); at = pattern_match(content)) {
    content[at[2]] = uniform(rng, 4, spec.vocab_size - 1);
  }
  return content;
}

std::vector<int> dyck_word(Rng& rng, int n) {
  std::vector<int> out;
  int depth = 0;
  for (int remaining = n; remaining > 0; --remaining) {
    const bool can_open = depth + 1 <= remaining - 1;
    const bool can_close = depth > 0;
    const bool open = can_open && (!can_close || uniform(rng, 0, 1) == 0);
    out.push_back(open ? kOpen : kClose);
    depth += open ? 1 : -1;
  }
  return out;
}

std::vector<int> parentheses_content(Rng& rng, const SyntheticTaskSpec& spec,
                                     int label) {
  const int n = spec.seq_len - 1;
  std::vector<int> content = dyck_word(rng, n);
  if (label == 1) return content;
  // Either flip one token or turn a top-level "()" into ")(".
  std::vector<int> top_level;
  int depth = 0;
  for (int i = 0; i + 1 < n; ++i) {
    if (depth == 0 && content[i] == kOpen && content[i + 1] == kClose) {
      top_level.push_back(i);
    }
    depth += content[i] == kOpen ? 1 : -1;
  }
  if (top_level.empty() || uniform(rng, 0, 1) == 0) {
    int& t = content[uniform(rng, 0, n - 1)];
    t = t == kOpen ? kClose : kOpen;
  } else {
    const int i = top_level[uniform(rng, 0, static_cast<int>(top_level.size()) - 1)];
    std::swap(content[i], content[i + 1]);
  }
  return content;
}

std::vector<Example> generate_split(const SyntheticTaskSpec& spec, int size,
                                    std::uint32_t split) {
  Rng rng = split_rng(spec.seed, split);
  std::vector<int> labels(size);
  for (int i = 0; i < size; ++i) labels[i] = i % spec.num_classes;
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<Example> out;
  out.reserve(size);
  for (int label : labels) {
    std::vector<int> content;
    switch (spec.kind) {
      case TaskKind::kMajorityToken:
        content = majority_content(rng, spec, label);
        break;
      case TaskKind::kContainsSubsequence:
        content = subsequence_content(rng, spec, label);
        break;
      case TaskKind::kBalancedParentheses:
        content = parentheses_content(rng, spec, label);
        break;
    }
    Example ex;
    ex.tokens.reserve(spec.seq_len);
    ex.tokens.push_back(0);
    ex.tokens.insert(ex.tokens.end(), content.begin(), content.end());
    ex.label = label;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TaskKind parse_task_kind(std::string_view name) {
  if (name == "majority-token") return TaskKind::kMajorityToken;
  if (name == "contains-subsequence") return TaskKind::kContainsSubsequence;
  if (name == "balanced-parentheses") return TaskKind::kBalancedParentheses;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

std::string_view task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kMajorityToken:
      return "majority-token";
    case TaskKind::kContainsSubsequence:
      return "contains-subsequence";
    case TaskKind::kBalancedParentheses:
      return "balanced-parentheses";
  }
  return "unknown";
}

void SyntheticTaskSpec::validate() const {
  const std::string kind_name(task_kind_name(kind));
  const int n = seq_len - 1;
  if (train_size < 1 || eval_size < 1) {
    throw ConfigError("task: train_size and eval_size must be positive");
  }
  if (num_classes < 2) throw ConfigError("task: num_classes must be at least 2");
  switch (kind) {
    case TaskKind::kMajorityToken:
      if (vocab_size < num_classes + 1) {
        throw ConfigError(kind_name + ": vocab_size " + std::to_string(vocab_size) +
                          " too small for " + std::to_string(num_classes) +
                          " classes (need num_classes + 1)");
      }
      if (n < 1) throw ConfigError(kind_name + ": seq_len must be at least 2");
      break;
    case TaskKind::kContainsSubsequence:
      if (num_classes != 2) throw ConfigError(kind_name + ": num_classes must be 2");
      if (vocab_size < 5) {
        throw ConfigError(kind_name + ": vocab_size must be at least 5");
      }
      if (n < 3) throw ConfigError(kind_name + ": seq_len must be at least 4");
      break;
    case TaskKind::kBalancedParentheses:
      if (num_classes != 2) throw ConfigError(kind_name + ": num_classes must be 2");
      if (vocab_size < 3) {
        throw ConfigError(kind_name + ": vocab_size must be at least 3");
      }
      if (n < 2 || n % 2 != 0) {
        throw ConfigError(kind_name + ": seq_len - 1 must be even and positive");
      }
      break;
  }
}

Dataset generate_task(const SyntheticTaskSpec& spec) {
  spec.validate();
  return Dataset{generate_split(spec, spec.train_size, 0),
                 generate_split(spec, spec.eval_size, 1)};
}

int reference_label(TaskKind kind, int num_classes, std::span<const int> tokens) {
  if (tokens.empty() || tokens.front() != 0) return -1;
  const std::span<const int> content = tokens.subspan(1);
  switch (kind) {
    case TaskKind::kMajorityToken: {
      std::vector<int> count(num_classes, 0);
      for (int t : content) {
        if (t >= 1 && t <= num_classes) ++count[t - 1];
      }
      const auto best = std::max_element(count.begin(), count.end());
      if (std::count(count.begin(), count.end(), *best) != 1) return -1;
      return static_cast<int>(best - count.begin());
    }
    case TaskKind::kContainsSubsequence: {
      auto it = content.begin();
      for (int t : kPattern) {
        it = std::find(it, content.end(), t);
        if (it == content.end()) return 0;
        ++it;
      }
      return 1;
    }
    case TaskKind::kBalancedParentheses: {
      int depth = 0;
      for (int t : content) {
        if (t == kOpen) {
          ++depth;
        } else if (t == kClose) {
          if (--depth < 0) return 0;
        } else {
          return 0;
        }
      }
      return depth == 0 ? 1 : 0;
    }
  }
  return -1;
}

}  // namespace emdistill
