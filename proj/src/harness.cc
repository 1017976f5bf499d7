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

#include "emdistill/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "emdistill/checkpoint.hpp"
#include "json.hpp"

namespace emdistill {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Independent random streams derived from one seed.
enum class Stream : std::uint32_t { kTeacherOrder = 1, kStudentOrder = 2, kProjection = 3 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::uint64_t stream_seed(std::uint64_t seed, Stream stream) {
  return stream_rng(seed, stream)();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_json(const fs::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows == 0 ? 0 : static_cast<Index>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j[i].size()) != cols) {
      throw std::runtime_error("ragged matrix in matrices.json");
    }
    for (Index j2 = 0; j2 < cols; ++j2) m(i, j2) = j[i][j2].get<double>();
  }
  return m;
}

Json metrics_record(const EpochRecord& r, bool train) {
  const LossMeans& l = train ? r.train : r.eval;
  Json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["split"] = train ? "train" : "eval";
  j["loss_total"] = l.total;
  j["loss_emb"] = l.emb;
  j["loss_pred"] = l.pred;
  j["loss_attn"] = l.attn;
  j["loss_hidden"] = l.hidden;
  j["eval_acc"] = train ? r.train_accuracy : r.eval_accuracy;
  j["weights_attn_teacher"] = vector_json(r.weights.attn_teacher);
  j["weights_hidden_teacher"] = vector_json(r.weights.hidden_teacher);
  j["weights_attn_student"] = vector_json(r.weights.attn_student);
  j["weights_hidden_student"] = vector_json(r.weights.hidden_student);
  return j;
}

std::string config_text(const DistillConfig& config) {
  std::ostringstream out;
  write_config(out, config);
  return out.str();
}

std::string epoch_csv_name(int epoch, const char* target, const char* kind) {
  return "epoch" + std::to_string(epoch) + "_" + target + "_" + kind + ".csv";
}

std::vector<fs::path> write_epoch_csvs(const fs::path& root, const EpochMatrices& m) {
  const fs::path dir = root / "matrices";
  fs::create_directories(dir);
  const std::pair<const char*, const char*> names[] = {
      {"attn", "flow"}, {"attn", "cost"}, {"hidden", "flow"}, {"hidden", "cost"}};
  const Eigen::MatrixXd* mats[] = {&m.attn_flow, &m.attn_cost, &m.hidden_flow,
                                   &m.hidden_cost};
  std::vector<fs::path> out;
  for (int k = 0; k < 4; ++k) {
    const fs::path rel =
        fs::path("matrices") / epoch_csv_name(m.epoch, names[k].first, names[k].second);
    write_matrix_csv(root / rel, *mats[k]);
    out.push_back(rel);
  }
  return out;
}

Json matrices_json(const RunReport& report, Index m, Index n) {
  Json j;
  j["mode"] = std::string(mode_name(report.mode));
  j["teacher_layers"] = m;
  j["student_layers"] = n;
  j["layout"] = "rows are teacher layers, columns are student layers";
  Json epochs = Json::array();
  for (const EpochMatrices& e : report.matrices) {
    Json rec;
    rec["epoch"] = e.epoch;
    rec["attn_flow"] = matrix_json(e.attn_flow);
    rec["attn_cost"] = matrix_json(e.attn_cost);
    rec["hidden_flow"] = matrix_json(e.hidden_flow);
    rec["hidden_cost"] = matrix_json(e.hidden_cost);
    epochs.push_back(std::move(rec));
  }
  j["epochs"] = std::move(epochs);
  return j;
}

Json loss_json(const LossMeans& l) {
  Json j;
  j["total"] = l.total;
  j["emb"] = l.emb;
  j["pred"] = l.pred;
  j["attn"] = l.attn;
  j["hidden"] = l.hidden;
  return j;
}

Json report_json(const RunReport& report, const DistillConfig& config) {
  Json j;
  j["mode"] = std::string(mode_name(report.mode));
  j["config"] = config_text(config);
  Json epochs = Json::array();
  for (const EpochRecord& r : report.epochs) {
    Json rec;
    rec["epoch"] = r.epoch;
    rec["step"] = r.step;
    rec["train"] = loss_json(r.train);
    rec["eval"] = loss_json(r.eval);
    rec["train_accuracy"] = r.train_accuracy;
    rec["eval_accuracy"] = r.eval_accuracy;
    rec["weights_attn_teacher"] = vector_json(r.weights.attn_teacher);
    rec["weights_hidden_teacher"] = vector_json(r.weights.hidden_teacher);
    rec["weights_attn_student"] = vector_json(r.weights.attn_student);
    rec["weights_hidden_student"] = vector_json(r.weights.hidden_student);
    epochs.push_back(std::move(rec));
  }
  j["epochs"] = std::move(epochs);
  Json summary;
  summary["teacher_eval_accuracy"] = report.teacher_eval_accuracy;
  summary["final_eval_accuracy"] =
      report.epochs.empty() ? 0.0 : report.epochs.back().eval_accuracy;
  summary["first_train_loss"] =
      report.epochs.empty() ? 0.0 : report.epochs.front().train.total;
  summary["final_train_loss"] =
      report.epochs.empty() ? 0.0 : report.epochs.back().train.total;
  j["summary"] = std::move(summary);
  Json exports = Json::array();
  for (const fs::path& p : report.exports) exports.push_back(p.generic_string());
  j["exports"] = std::move(exports);
  return j;
}

struct Snapshot {
  std::vector<Vector> student;
  std::vector<Vector> projections;
  LayerWeights weights;
  int epoch = 0;
  long step = 0;
};

void dump_last_good(const fs::path& root, Transformer& student, const Snapshot& s) {
  const fs::path dir = root / "last_good";
  fs::create_directories(dir);
  auto& params = student.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k].tensor.mutable_data() = s.student[k];
  }
  save_checkpoint(dir / "student.ckpt", student);
  Json j;
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  j["projection_embedding"] = vector_json(s.projections[0]);
  j["projection_hidden"] = vector_json(s.projections[1]);
  j["weights_attn_teacher"] = vector_json(s.weights.attn_teacher);
  j["weights_hidden_teacher"] = vector_json(s.weights.hidden_teacher);
  j["weights_attn_student"] = vector_json(s.weights.attn_student);
  j["weights_hidden_student"] = vector_json(s.weights.hidden_student);
  write_json(dir / "state.json", j);
}

std::vector<ActivationTrace> traces_of(const Transformer& model,
                                       std::span<const Example> examples) {
  std::vector<ActivationTrace> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) out.push_back(model.forward(ex.tokens));
  return out;
}

void accumulate(LossMeans& acc, const DistillLossBreakdown& b) {
  acc.total += b.total;
  acc.emb += b.emb;
  acc.pred += b.pred;
  acc.attn += b.attn;
  acc.hidden += b.hidden;
}

void scale(LossMeans& acc, double count) {
  acc.total /= count;
  acc.emb /= count;
  acc.pred /= count;
  acc.attn /= count;
  acc.hidden /= count;
}

void set_trainable(Transformer& student, Projections& proj, bool value) {
  student.set_requires_grad(value);
  for (Parameter* p : proj.parameters()) p->tensor.set_requires_grad(value);
}

Transformer load_teacher(const DistillConfig& config) {
  const fs::path path = config.teacher_checkpoint_path();
  if (!fs::exists(path)) {
    throw ConfigError("teacher checkpoint not found: " + path.string());
  }
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw ConfigError("teacher checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace

double accuracy(const Transformer& model, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const Example& ex : examples) {
    if (predict(model, ex.tokens) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TeacherReport train_teacher(const DistillConfig& config) {
  const Dataset data = generate_task(config.task);
  const TeacherTraining& tt = config.teacher_training;
  const fs::path root(config.output_dir);
  fs::create_directories(root);

  Transformer teacher(config.teacher);
  SgdMomentum opt;
  std::mt19937_64 rng = stream_rng(config.seed, Stream::kTeacherOrder);
  std::ofstream metrics(root / "teacher_metrics.jsonl", std::ios::binary);
  TeacherReport report;
  long step = 0;
  for (int epoch = 1; epoch <= tt.epochs; ++epoch) {
    const auto order = shuffled_indices(data.train.size(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tt.batch_size) {
      const std::size_t end = std::min(order.size(), start + tt.batch_size);
      std::vector<std::vector<int>> batch;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(data.train[order[k]].tokens);
        labels.push_back(data.train[order[k]].label);
      }
      const double loss = train_step(teacher, opt, batch, labels, tt.learning_rate);
      if (!std::isfinite(loss)) {
        save_checkpoint(root / "teacher.ckpt", teacher);
        throw NumericError("teacher loss is not finite at epoch " +
                           std::to_string(epoch));
      }
      loss_sum += loss;
      ++batches;
      ++step;
    }
    const double acc = accuracy(teacher, data.eval);
    report.eval_accuracy.push_back(acc);
    Json rec;
    rec["epoch"] = epoch;
    rec["step"] = step;
    rec["split"] = "train";
    rec["loss"] = loss_sum / batches;
    rec["eval_acc"] = acc;
    metrics << rec.dump() << '\n' << std::flush;
    if (acc >= tt.accuracy_floor) break;
  }
  report.final_eval_accuracy = report.eval_accuracy.back();
  report.checkpoint = config.teacher_checkpoint_path();
  if (report.checkpoint.has_parent_path()) {
    fs::create_directories(report.checkpoint.parent_path());
  }
  save_checkpoint(report.checkpoint, teacher);
  if (report.final_eval_accuracy < tt.accuracy_floor) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "teacher eval accuracy %.4f below floor %.4f after %d epochs",
                  report.final_eval_accuracy, tt.accuracy_floor, tt.epochs);
    throw AccuracyFloorError(buf);
  }
  return report;
}

RunReport distill(const DistillConfig& config) {
  return distill(config, load_teacher(config));
}

RunReport distill(const DistillConfig& config, const Transformer& teacher) {
  if (!(teacher.config() == config.teacher)) {
    throw ConfigError("teacher checkpoint does not match teacher.* in config");
  }
  const Dataset data = generate_task(config.task);
  const fs::path root(config.output_dir);
  fs::create_directories(root);
  const Index m = config.teacher.num_layers;
  const Index n = config.student.num_layers;

  Transformer student(config.student);
  Projections proj =
      Projections::random(config.student.hidden_size, config.teacher.hidden_size,
                          stream_seed(config.seed, Stream::kProjection));
  std::vector<Parameter*> trainable;
  for (Parameter& p : student.parameters()) trainable.push_back(&p);
  for (Parameter* p : proj.parameters()) trainable.push_back(p);
  SgdMomentum opt;
  std::mt19937_64 rng = stream_rng(config.seed, Stream::kStudentOrder);

  const std::vector<ActivationTrace> teacher_train = traces_of(teacher, data.train);
  const std::vector<ActivationTrace> teacher_eval = traces_of(teacher, data.eval);

  RunReport report;
  report.mode = config.distill.mode;
  report.teacher_eval_accuracy = accuracy(teacher, data.eval);
  LayerWeights weights = LayerWeights::uniform(static_cast<int>(m), static_cast<int>(n));
  std::ofstream metrics(root / "metrics.jsonl", std::ios::binary);
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  long step = 0;
  Snapshot good;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    EpochMatrices mats{epoch, Eigen::MatrixXd::Zero(m, n), Eigen::MatrixXd::Zero(m, n),
                       Eigen::MatrixXd::Zero(m, n), Eigen::MatrixXd::Zero(m, n)};
    const auto order = shuffled_indices(data.train.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      good.student.clear();
      for (const Parameter& p : student.parameters()) good.student.push_back(p.tensor.data());
      good.projections = {proj.embedding.tensor.data(), proj.hidden.tensor.data()};
      good.weights = weights;
      good.epoch = epoch;
      good.step = step;

      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<ActivationTrace> s, t;
      for (std::size_t k = start; k < end; ++k) {
        s.push_back(student.forward(data.train[order[k]].tokens));
        t.push_back(teacher_train[order[k]]);
      }
      const auto fail = [&] {
        dump_last_good(root, student, good);
        return NumericError("distillation loss is not finite at epoch " +
                            std::to_string(epoch) + ", step " + std::to_string(step));
      };
      DistillLossBreakdown out;
      try {
        out = total_loss(s, t, proj, weights, config.distill);
      } catch (const TransportError&) {
        // Distances are MSEs, so only NaN or infinity reach here.
        throw fail();
      }
      if (!std::isfinite(out.total)) throw fail();
      out.total_tensor.backward();
      opt.step(std::span<Parameter* const>(trainable), config.learning_rate);
      weights = out.next_weights;
      ++step;

      accumulate(rec.train, out);
      mats.attn_flow += out.attn_flow.flow;
      mats.attn_cost += out.attn_cost;
      mats.hidden_flow += out.hidden_flow.flow;
      mats.hidden_cost += out.hidden_cost;
    }
    const double batches = static_cast<double>((order.size() + bs - 1) / bs);
    scale(rec.train, batches);
    mats.attn_flow /= batches;
    mats.attn_cost /= batches;
    mats.hidden_flow /= batches;
    mats.hidden_cost /= batches;
    rec.step = step;
    rec.weights = weights;

    set_trainable(student, proj, false);
    const std::size_t eval_batches = (data.eval.size() + bs - 1) / bs;
    for (std::size_t start = 0; start < data.eval.size(); start += bs) {
      const std::size_t end = std::min(data.eval.size(), start + bs);
      std::vector<ActivationTrace> s, t;
      for (std::size_t k = start; k < end; ++k) {
        s.push_back(student.forward(data.eval[k].tokens));
        t.push_back(teacher_eval[k]);
      }
      accumulate(rec.eval, total_loss(s, t, proj, weights, config.distill));
    }
    scale(rec.eval, static_cast<double>(eval_batches));
    rec.train_accuracy = accuracy(student, data.train);
    rec.eval_accuracy = accuracy(student, data.eval);
    set_trainable(student, proj, true);

    metrics << metrics_record(rec, true).dump() << '\n'
            << metrics_record(rec, false).dump() << '\n'
            << std::flush;
    const auto csvs = write_epoch_csvs(root, mats);
    report.exports.insert(report.exports.end(), csvs.begin(), csvs.end());
    report.epochs.push_back(std::move(rec));
    report.matrices.push_back(std::move(mats));
  }

  save_checkpoint(root / "student.ckpt", student);
  write_json(root / "matrices.json", matrices_json(report, m, n));
  report.exports.insert(report.exports.end(),
                        {"metrics.jsonl", "matrices.json", "student.ckpt"});
  write_json(root / "report.json", report_json(report, config));
  return report;
}

AblationReport ablate(const DistillConfig& config) {
  const fs::path root(config.output_dir);
  fs::create_directories(root);
  DistillConfig base = config;
  base.teacher_checkpoint = config.teacher_checkpoint_path().string();
  if (!fs::exists(base.teacher_checkpoint)) train_teacher(base);
  const Transformer teacher = load_teacher(base);

  AblationReport report;
  for (DistillMode mode : {DistillMode::kFull, DistillMode::kNoEmd,
                           DistillMode::kNoCa, DistillMode::kOneToOne}) {
    DistillConfig c = base;
    c.distill.mode = mode;
    c.output_dir = (root / std::string(mode_name(mode))).string();
    c.finalize();
    const RunReport run = distill(c, teacher);
    AblationRow row;
    row.mode = mode;
    row.final_eval_accuracy = run.epochs.back().eval_accuracy;
    row.final_eval_loss = run.epochs.back().eval.total;
    for (const EpochRecord& r : run.epochs) {
      row.train_loss.push_back(r.train.total);
      row.eval_accuracy.push_back(r.eval_accuracy);
    }
    report.rows.push_back(std::move(row));
  }
  const auto acc = [&](DistillMode mode) {
    return report.rows[static_cast<std::size_t>(mode)].final_eval_accuracy;
  };
  report.orderings = {
      {"full >= no_ca", acc(DistillMode::kFull) >= acc(DistillMode::kNoCa)},
      {"no_ca >= no_emd", acc(DistillMode::kNoCa) >= acc(DistillMode::kNoEmd)},
      {"full >= one_to_one", acc(DistillMode::kFull) >= acc(DistillMode::kOneToOne)},
  };

  Json j;
  j["config"] = config_text(base);
  Json rows = Json::array();
  std::ostringstream table;
  table << "mode         final_eval_acc  final_eval_loss  epoch1_train_loss  "
           "final_train_loss\n";
  for (const AblationRow& row : report.rows) {
    Json r;
    r["mode"] = std::string(mode_name(row.mode));
    r["final_eval_accuracy"] = row.final_eval_accuracy;
    r["final_eval_loss"] = row.final_eval_loss;
    r["train_loss"] = row.train_loss;
    r["eval_accuracy"] = row.eval_accuracy;
    rows.push_back(std::move(r));
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %14.4f  %15.6f  %17.6f  %16.6f\n",
                  std::string(mode_name(row.mode)).c_str(), row.final_eval_accuracy,
                  row.final_eval_loss, row.train_loss.front(), row.train_loss.back());
    table << line;
  }
  j["rows"] = std::move(rows);
  Json orderings;
  table << "\nexpected ordering on final eval accuracy:\n";
  for (const auto& [claim, holds] : report.orderings) {
    orderings[claim] = holds;
    table << "  " << claim << ": " << (holds ? "holds" : "does not hold") << '\n';
  }
  j["orderings"] = std::move(orderings);
  write_json(root / "ablation.json", j);
  write_text(root / "ablation.txt", table.str());
  return report;
}

std::vector<fs::path> export_matrices(const DistillConfig& config) {
  const fs::path root(config.output_dir);
  const fs::path source = root / "matrices.json";
  if (!fs::exists(source)) distill(config);
  std::ifstream in(source);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::runtime_error("cannot parse " + source.string() + ": " + e.what());
  }
  std::vector<fs::path> out;
  for (const Json& e : j.at("epochs")) {
    EpochMatrices m;
    m.epoch = e.at("epoch").get<int>();
    m.attn_flow = matrix_from_json(e.at("attn_flow"));
    m.attn_cost = matrix_from_json(e.at("attn_cost"));
    m.hidden_flow = matrix_from_json(e.at("hidden_flow"));
    m.hidden_cost = matrix_from_json(e.at("hidden_cost"));
    const auto csvs = write_epoch_csvs(root, m);
    out.insert(out.end(), csvs.begin(), csvs.end());
  }
  return out;
}

void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& matrix) {
  std::string text = "student/teacher";
  char buf[40];
  for (Index i = 0; i < matrix.rows(); ++i) text += "," + std::to_string(i + 1);
  text += '\n';
  for (Index j = 0; j < matrix.cols(); ++j) {
    text += std::to_string(j + 1);
    for (Index i = 0; i < matrix.rows(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", matrix(i, j));
      text += buf;
    }
    text += '\n';
  }
  write_text(path, text);
}

Eigen::MatrixXd read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const Index m = static_cast<Index>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');  // student index
    std::vector<double> row;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<Index>(row.size()) != m) {
      throw std::runtime_error("ragged row in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd out(m, static_cast<Index>(rows.size()));
  for (Index j = 0; j < out.cols(); ++j) {
    for (Index i = 0; i < m; ++i) out(i, j) = rows[j][i];
  }
  return out;
}

}  // namespace emdistill
