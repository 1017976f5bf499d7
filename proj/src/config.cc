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

#include "emdistill/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <string_view>
#include <vector>

namespace emdistill {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw ConfigError("config: bad value '" + std::string(text) + "' for " +
                      std::string(key));
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) {
      throw ConfigError("config: non-finite value for " + std::string(key));
    }
  }
  return value;
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return std::string(buf, end);
}

struct Field {
  std::string key;
  std::function<void(DistillConfig&, std::string_view)> set;
  std::function<std::string(const DistillConfig&)> get;
};

template <typename T>
Field number_field(std::string key, std::function<T&(DistillConfig&)> ref) {
  return Field{
      key,
      [key, ref](DistillConfig& c, std::string_view v) {
        ref(c) = parse_number<T>(key, v);
      },
      [ref](const DistillConfig& c) {
        return format_number(ref(const_cast<DistillConfig&>(c)));
      }};
}

void add_model_fields(std::vector<Field>& fields, const std::string& prefix,
                      TransformerConfig DistillConfig::*member) {
  fields.push_back(number_field<int>(
      prefix + ".num_layers",
      [member](DistillConfig& c) -> int& { return (c.*member).num_layers; }));
  fields.push_back(number_field<int>(
      prefix + ".num_heads",
      [member](DistillConfig& c) -> int& { return (c.*member).num_heads; }));
  fields.push_back(number_field<int>(
      prefix + ".hidden_size",
      [member](DistillConfig& c) -> int& { return (c.*member).hidden_size; }));
  fields.push_back(number_field<int>(
      prefix + ".ff_size",
      [member](DistillConfig& c) -> int& { return (c.*member).ff_size; }));
  fields.push_back(number_field<std::uint64_t>(
      prefix + ".seed",
      [member](DistillConfig& c) -> std::uint64_t& { return (c.*member).seed; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    add_model_fields(f, "teacher", &DistillConfig::teacher);
    add_model_fields(f, "student", &DistillConfig::student);
    f.push_back(Field{
        "task.kind",
        [](DistillConfig& c, std::string_view v) {
          c.task.kind = parse_task_kind(v);
        },
        [](const DistillConfig& c) {
          return std::string(task_kind_name(c.task.kind));
        }});
    f.push_back(number_field<int>(
        "task.vocab_size", [](DistillConfig& c) -> int& { return c.task.vocab_size; }));
    f.push_back(number_field<int>(
        "task.seq_len", [](DistillConfig& c) -> int& { return c.task.seq_len; }));
    f.push_back(number_field<int>(
        "task.num_classes",
        [](DistillConfig& c) -> int& { return c.task.num_classes; }));
    f.push_back(number_field<int>(
        "task.train_size", [](DistillConfig& c) -> int& { return c.task.train_size; }));
    f.push_back(number_field<int>(
        "task.eval_size", [](DistillConfig& c) -> int& { return c.task.eval_size; }));
    f.push_back(number_field<std::uint64_t>(
        "task.seed", [](DistillConfig& c) -> std::uint64_t& { return c.task.seed; }));
    f.push_back(number_field<double>(
        "teacher_training.learning_rate",
        [](DistillConfig& c) -> double& { return c.teacher_training.learning_rate; }));
    f.push_back(number_field<int>(
        "teacher_training.epochs",
        [](DistillConfig& c) -> int& { return c.teacher_training.epochs; }));
    f.push_back(number_field<int>(
        "teacher_training.batch_size",
        [](DistillConfig& c) -> int& { return c.teacher_training.batch_size; }));
    f.push_back(number_field<double>(
        "teacher_training.accuracy_floor",
        [](DistillConfig& c) -> double& { return c.teacher_training.accuracy_floor; }));
    f.push_back(number_field<double>(
        "beta", [](DistillConfig& c) -> double& { return c.distill.beta; }));
    f.push_back(number_field<double>(
        "temperature", [](DistillConfig& c) -> double& { return c.distill.temperature; }));
    f.push_back(number_field<double>(
        "tau", [](DistillConfig& c) -> double& { return c.distill.tau; }));
    f.push_back(Field{
        "mode",
        [](DistillConfig& c, std::string_view v) {
          try {
            c.distill.mode = parse_mode(v);
          } catch (const UsageError& e) {
            throw ConfigError(e.what());
          }
        },
        [](const DistillConfig& c) { return std::string(mode_name(c.distill.mode)); }});
    f.push_back(number_field<double>(
        "learning_rate", [](DistillConfig& c) -> double& { return c.learning_rate; }));
    f.push_back(number_field<int>(
        "batch_size", [](DistillConfig& c) -> int& { return c.batch_size; }));
    f.push_back(number_field<int>(
        "epochs", [](DistillConfig& c) -> int& { return c.epochs; }));
    f.push_back(number_field<std::uint64_t>(
        "seed", [](DistillConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(Field{
        "output_dir",
        [](DistillConfig& c, std::string_view v) { c.output_dir = std::string(v); },
        [](const DistillConfig& c) { return c.output_dir; }});
    f.push_back(Field{
        "teacher_checkpoint",
        [](DistillConfig& c, std::string_view v) {
          c.teacher_checkpoint = std::string(v);
        },
        [](const DistillConfig& c) { return c.teacher_checkpoint; }});
    return f;
  }();
  return table;
}

}  // namespace

void DistillConfig::finalize() {
  task.validate();
  for (TransformerConfig* m : {&teacher, &student}) {
    m->vocab_size = task.vocab_size;
    m->max_seq_len = task.seq_len;
    m->num_classes = task.num_classes;
  }
  try {
    teacher.validate();
    student.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (teacher.num_layers < student.num_layers) {
    throw ConfigError("config: teacher.num_layers must be >= student.num_layers");
  }
  if (batch_size < 1 || teacher_training.batch_size < 1) {
    throw ConfigError("config: batch sizes must be at least 1");
  }
  if (epochs < 1 || teacher_training.epochs < 1) {
    throw ConfigError("config: epochs must be at least 1");
  }
  if (learning_rate < 0 || teacher_training.learning_rate < 0) {
    throw ConfigError("config: learning rates must be non-negative");
  }
  if (distill.beta < 0) throw ConfigError("config: beta must be non-negative");
  if (distill.temperature <= 0 || distill.tau <= 0) {
    throw ConfigError("config: temperature and tau must be positive");
  }
  if (teacher_training.accuracy_floor < 0 || teacher_training.accuracy_floor > 1) {
    throw ConfigError("config: teacher_training.accuracy_floor must be in [0, 1]");
  }
  if (distill.mode == DistillMode::kOneToOne &&
      teacher.num_layers % student.num_layers != 0) {
    throw ConfigError("config: one_to_one needs teacher layers divisible by student layers");
  }
}

std::filesystem::path DistillConfig::teacher_checkpoint_path() const {
  if (!teacher_checkpoint.empty()) return teacher_checkpoint;
  return std::filesystem::path(output_dir) / "teacher.ckpt";
}

DistillConfig parse_config(std::istream& in) {
  DistillConfig config;
  std::set<std::string, std::less<>> seen;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    std::string_view text = line;
    if (const auto hash = text.find('#'); hash != std::string_view::npos) {
      text = text.substr(0, hash);
    }
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string_view key = trim(text.substr(0, eq));
    const std::string_view value = trim(text.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const Field& f) { return f.key == key; });
    if (it == table.end()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" +
                        std::string(key) + "'");
    }
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": repeated key '" +
                        std::string(key) + "'");
    }
    it->set(config, value);
  }
  return config;
}

DistillConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const DistillConfig& config) {
  for (const Field& f : fields()) out << f.key << " = " << f.get(config) << '\n';
}

}  // namespace emdistill
