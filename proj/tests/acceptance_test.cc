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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.
//
//   acceptance_test <smoke.conf> <work dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "emdistill/config.hpp"
#include "emdistill/distill.hpp"
#include "emdistill/harness.hpp"
#include "emdistill/transport.hpp"
#include "gradient_suite.hpp"
#include "json.hpp"
#include "transport_fixtures.hpp"
#include "transport_oracle.hpp"

namespace {

namespace fs = std::filesystem;
using namespace emdistill;
using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// Tolerances.
constexpr double kOptimalityRelTol = 1e-9;
constexpr double kOptimalitySeconds = 5.0;
constexpr double kFeasibilityTol = 1e-12;
constexpr double kHandInstanceTol = 1e-12;
constexpr double kGradientTol = 1e-4;
constexpr double kLn2Tol = 1e-12;
constexpr double kWorkedExampleTol = 1e-4;
constexpr double kWeightSumTol = 1e-9;
constexpr double kTeacherFloor = 0.95;
constexpr int kTeacherMaxEpochs = 20;
constexpr double kStudentFloor = 0.85;
constexpr double kPipelineSeconds = 600.0;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<Json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  std::vector<Json> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(Json::parse(line));
  return out;
}

DistillConfig smoke_config(const fs::path& conf, const fs::path& out) {
  DistillConfig c = load_config(conf);
  c.output_dir = out.string();
  c.teacher_checkpoint.clear();
  c.finalize();
  return c;
}

Outcome transport_optimality() {
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  const auto start = Clock::now();
  for (int trial = 0; trial < 200; ++trial) {
    const TransportProblemd p = testing::random_problem(rng);
    const double got = solve(p).work;
    const double want = testing::oracle_solve(p).work;
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  }
  const double elapsed = seconds_since(start);
  return {worst <= kOptimalityRelTol && elapsed < kOptimalitySeconds,
          fmt("200 instances, max relative gap %.3g, %.3f s", worst, elapsed)};
}

Outcome transport_feasibility() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst = 0.0;
  int solves = 0, unbalanced = 0;
  auto check = [&](const TransportProblemd& p) {
    worst = std::max(worst, testing::feasibility_violation(solve(p), p));
    ++solves;
    if (std::abs(p.supplies.sum() - p.demands.sum()) > 1e-12) ++unbalanced;
  };
  std::mt19937_64 oracle_rng(20240601);
  for (int trial = 0; trial < 200; ++trial) check(testing::random_problem(oracle_rng));
  for (int trial = 0; trial < 300; ++trial) {
    TransportProblemd p;
    const int m = dim(rng), n = dim(rng);
    p.supplies = Eigen::VectorXd::NullaryExpr(m, [&] { return unit(rng); });
    p.demands = Eigen::VectorXd::NullaryExpr(n, [&] { return unit(rng); });
    if (trial % 3 != 0) {
      p.supplies /= p.supplies.sum();
      p.demands /= p.demands.sum();
    }
    p.cost = Eigen::MatrixXd::NullaryExpr(m, n, [&] { return 4.0 * unit(rng); });
    check(p);
  }
  return {worst <= kFeasibilityTol && unbalanced > 0,
          fmt("%d solves (%d unbalanced), max violation %.3g", solves, unbalanced,
              worst)};
}

Outcome hand_instance() {
  const double third = 1.0 / 3.0;
  const auto p = testing::make_problem({third, third, third}, {0.5, 0.5},
                                       {{1, 2}, {3, 4}, {5, 6}});
  const double got = emd(solve(p), p);
  const double oracle = testing::oracle_solve(p).work;
  return {std::abs(got - 3.5) <= kHandInstanceTol &&
              std::abs(oracle - 3.5) <= kHandInstanceTol,
          fmt("EMD %.17g, oracle %.17g", got, oracle)};
}

Outcome gradient_suite() {
  const double errs[] = {
      testing::embedding_loss_gradient_error(),
      testing::prediction_loss_gradient_error(),
      testing::attention_emd_gradient_error(),
      testing::hidden_emd_gradient_error(),
      testing::total_loss_gradient_error(),
  };
  double worst = 0.0;
  for (double e : errs) worst = std::max(worst, e);
  return {worst < kGradientTol,
          fmt("emb %.2g, pred %.2g, attn %.2g, hidden %.2g, total %.2g", errs[0],
              errs[1], errs[2], errs[3], errs[4])};
}

Outcome self_distillation() {
  TransformerConfig c;
  c.num_layers = 3;
  c.hidden_size = 8;
  c.vocab_size = 6;
  c.max_seq_len = 5;
  const Transformer model(c);
  std::vector<ActivationTrace> traces;
  for (const std::vector<int>& seq :
       {std::vector<int>{0, 1, 2, 3}, std::vector<int>{0, 5, 5, 1}}) {
    traces.push_back(model.forward(seq));
  }
  const auto out = total_loss(traces, traces, Projections::identity(8),
                              LayerWeights::uniform(3, 3), DistillParams{});
  const double pred = prediction_loss(traces, traces, 1.0).item();
  const bool model_ok = out.emb == 0.0 && out.attn == 0.0 && out.hidden == 0.0 &&
                        out.total == pred;

  std::mt19937_64 rng(22);
  ActivationTrace t = testing::random_trace(rng, 2, 2, 3, 4, 2);
  t.logits = Tensor::zeros({2});
  const std::vector<ActivationTrace> zero{t};
  const auto flat = total_loss(zero, zero, Projections::identity(4),
                               LayerWeights::uniform(2, 2), DistillParams{});
  const double gap = std::abs(flat.total - std::log(2.0));
  return {model_ok && flat.emb + flat.attn + flat.hidden == 0.0 && gap <= kLn2Tol,
          fmt("emb %g attn %g hidden %g, total - pred %g; zero logits |total - ln2| %.2g",
              out.emb, out.attn, out.hidden, out.total - pred, gap)};
}

FlowMatrixd flow_of(const Eigen::MatrixXd& f) {
  FlowMatrixd out;
  out.flow = f;
  out.total_flow = f.sum();
  return out;
}

Outcome cost_attention() {
  // Equal unit costs.
  const LayerWeights w42 = LayerWeights::uniform(4, 2);
  const Eigen::MatrixXd even_flow = Eigen::MatrixXd::Constant(4, 2, 0.125);
  const Eigen::MatrixXd even_cost = Eigen::MatrixXd::Constant(4, 2, 0.8);
  const LayerWeights eq = cost_attention_update(flow_of(even_flow), even_cost,
                                                flow_of(even_flow), even_cost, w42, 1.0);
  const bool uniform_ok = eq.attn_teacher == Eigen::VectorXd::Constant(4, 0.25) &&
                          eq.hidden_teacher == Eigen::VectorXd::Constant(4, 0.25) &&
                          eq.attn_student == Eigen::VectorXd::Constant(2, 0.5) &&
                          eq.hidden_student == Eigen::VectorXd::Constant(2, 0.5);

  // Worked example: unit costs [1, 3].
  Eigen::MatrixXd flow(2, 1), cost(2, 1);
  flow << 0.5, 0.5;
  cost << 1.0, 3.0;
  const LayerWeights ex = cost_attention_update(flow_of(flow), cost, flow_of(flow),
                                                cost, LayerWeights::uniform(2, 1), 1.0);
  const double ex_gap = std::max(std::abs(ex.attn_teacher[0] - 0.93503),
                                 std::abs(ex.attn_teacher[1] - 0.06497));

  // Sums after every update of a 500-batch chain.
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LayerWeights w = w42;
  double sum_gap = 0.0;
  for (int step = 0; step < 500; ++step) {
    const Eigen::MatrixXd da = Eigen::MatrixXd::NullaryExpr(4, 2, [&] { return 3 * unit(rng); });
    const Eigen::MatrixXd dh = Eigen::MatrixXd::NullaryExpr(4, 2, [&] { return 3 * unit(rng); });
    TransportProblemd pa{w.attn_teacher, w.attn_student, da};
    TransportProblemd ph{w.hidden_teacher, w.hidden_student, dh};
    w = cost_attention_update(solve(pa), da, solve(ph), dh, w, 0.05 + 2.0 * unit(rng));
    for (const Eigen::VectorXd* v : {&w.attn_teacher, &w.attn_student,
                                     &w.hidden_teacher, &w.hidden_student}) {
      sum_gap = std::max(sum_gap, std::abs(v->sum() - 1.0));
      if (v->minCoeff() <= 0.0) sum_gap = 1.0;
    }
  }

  // Lowering one layer's unit cost raises its weight.
  std::uniform_real_distribution<double> cost_dist(0.2, 2.0);
  std::uniform_int_distribution<int> layer(0, 3);
  int monotone = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd c = Eigen::MatrixXd::NullaryExpr(4, 2, [&] { return cost_dist(rng); });
    const double tau = 0.5 + 4.0 * unit(rng);
    const int k = layer(rng);
    Eigen::MatrixXd cheaper = c;
    cheaper.row(k) *= 0.5;
    const LayerWeights before =
        cost_attention_update(flow_of(even_flow), c, flow_of(even_flow), c, w42, tau);
    const LayerWeights after = cost_attention_update(flow_of(even_flow), cheaper,
                                                     flow_of(even_flow), cheaper, w42, tau);
    monotone += after.attn_teacher[k] > before.attn_teacher[k];
  }
  return {uniform_ok && ex_gap <= kWorkedExampleTol && sum_gap <= kWeightSumTol &&
              monotone == 100,
          fmt("uniform %s; example [%.5f, %.5f]; max |sum - 1| %.2g over 500 updates; "
              "monotone %d/100",
              uniform_ok ? "exact" : "inexact", ex.attn_teacher[0], ex.attn_teacher[1],
              sum_gap, monotone)};
}

Outcome smoke_run(const fs::path& conf, const fs::path& work) {
  const auto start = Clock::now();
  const DistillConfig c = smoke_config(conf, work / "smoke_a");
  fs::remove_all(c.output_dir);
  const bool shape_ok = c.teacher.num_layers == 4 && c.teacher.hidden_size == 32 &&
                        c.student.num_layers == 2 && c.student.hidden_size == 16 &&
                        c.task.kind == TaskKind::kMajorityToken && c.epochs >= 10 &&
                        c.teacher_training.epochs <= kTeacherMaxEpochs;
  double teacher_acc = 0.0;
  std::size_t teacher_epochs = 0;
  try {
    const TeacherReport t = train_teacher(c);
    teacher_acc = t.final_eval_accuracy;
    teacher_epochs = t.eval_accuracy.size();
  } catch (const AccuracyFloorError& e) {
    return {false, e.what()};
  }
  const RunReport r = distill(c);
  const double first = r.epochs.front().train.total;
  const double tenth = r.epochs.at(9).train.total;
  const double student_acc = r.epochs.back().eval_accuracy;
  const double elapsed = seconds_since(start);
  return {shape_ok && teacher_acc >= kTeacherFloor &&
              teacher_epochs <= static_cast<std::size_t>(kTeacherMaxEpochs) &&
              tenth < first && student_acc >= kStudentFloor &&
              elapsed < kPipelineSeconds,
          fmt("teacher %.4f after %zu epochs; student loss epoch 1 %.6f -> epoch 10 "
              "%.6f; student eval accuracy %.4f; %.1f s",
              teacher_acc, teacher_epochs, first, tenth, student_acc, elapsed)};
}

Outcome ablation(const fs::path& conf, const fs::path& work) {
  DistillConfig c = smoke_config(conf, work / "ablation");
  fs::remove_all(c.output_dir);
  const fs::path root(c.output_dir);
  const AblationReport r = ablate(c);
  const int m = c.teacher.num_layers, n = c.student.num_layers;

  const char* modes[] = {"full", "no_emd", "no_ca", "one_to_one"};
  bool rows_ok = r.rows.size() == 4;
  for (std::size_t k = 0; rows_ok && k < 4; ++k) {
    rows_ok = mode_name(r.rows[k].mode) == modes[k];
  }

  // Every arm runs the same configuration apart from mode and directory.
  bool configs_ok = true;
  std::string reference;
  for (const char* mode : modes) {
    std::istringstream text(
        Json::parse(slurp(root / mode / "report.json"))["config"].get<std::string>());
    DistillConfig arm = parse_config(text);
    configs_ok &= mode_name(arm.distill.mode) == mode &&
                  fs::path(arm.output_dir) == root / mode;
    arm.distill.mode = DistillMode::kFull;
    arm.output_dir.clear();
    std::ostringstream canonical;
    write_config(canonical, arm);
    if (reference.empty()) reference = canonical.str();
    configs_ok &= canonical.str() == reference;
  }

  bool no_ca_ok = true;
  for (const Json& rec : read_jsonl(root / "no_ca" / "metrics.jsonl")) {
    for (const char* key : {"weights_attn_teacher", "weights_hidden_teacher"}) {
      for (const Json& x : rec[key]) no_ca_ok &= x.get<double>() == 1.0 / m;
    }
    for (const char* key : {"weights_attn_student", "weights_hidden_student"}) {
      for (const Json& x : rec[key]) no_ca_ok &= x.get<double>() == 1.0 / n;
    }
  }

  const std::vector<int> skip = skip_mapping(m, n);
  Eigen::MatrixXd plan = Eigen::MatrixXd::Zero(m, n);
  std::string skip_text;
  for (int j = 0; j < n; ++j) {
    plan(skip[j], j) = 1.0 / n;
    skip_text += (j ? "," : "") + std::to_string(skip[j] + 1);
  }
  bool skip_ok = true;
  for (int j = 0; j < n; ++j) skip_ok &= skip[j] + 1 == (j + 1) * m / n;
  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    for (const char* target : {"attn", "hidden"}) {
      const fs::path csv = root / "one_to_one" / "matrices" /
                           ("epoch" + std::to_string(epoch) + "_" + target + "_flow.csv");
      skip_ok &= read_matrix_csv(csv) == plan;
    }
  }

  const Json j = Json::parse(slurp(root / "ablation.json"));
  const bool recorded = j["orderings"].size() == 3 && fs::exists(root / "ablation.txt");
  std::string orderings;
  for (const auto& [claim, holds] : r.orderings) {
    orderings += "; " + claim + (holds ? " holds" : " does not hold");
  }
  return {rows_ok && configs_ok && no_ca_ok && skip_ok && recorded,
          fmt("4 modes %s; configs %s; no_ca weights uniform %s; one_to_one teacher "
              "layers {%s}%s",
              rows_ok ? "ok" : "missing", configs_ok ? "match" : "DIFFER",
              no_ca_ok ? "every epoch" : "NOT uniform",
              skip_text.c_str(), orderings.c_str())};
}

Outcome determinism(const fs::path& conf, const fs::path& work) {
  const DistillConfig c = smoke_config(conf, work / "smoke_b");
  fs::remove_all(c.output_dir);
  train_teacher(c);
  distill(c);
  const fs::path a = work / "smoke_a", b = work / "smoke_b";
  if (!fs::exists(a / "metrics.jsonl")) return {false, "first smoke run missing"};
  const bool metrics = slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl");
  const bool teacher =
      slurp(a / "teacher_metrics.jsonl") == slurp(b / "teacher_metrics.jsonl");
  return {metrics && teacher,
          fmt("metrics.jsonl %s, teacher_metrics.jsonl %s",
              metrics ? "identical" : "DIFFER", teacher ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: %s <smoke.conf> <work dir>\n", argv[0]);
    return 2;
  }
  const fs::path conf = argv[1];
  const fs::path work = argv[2];
  fs::create_directories(work);

  report("transport optimality", transport_optimality);
  report("transport feasibility", transport_feasibility);
  report("hand-checkable 3x2 instance", hand_instance);
  report("gradient suite", gradient_suite);
  report("self-distillation fixed point", self_distillation);
  report("cost-attention properties", cost_attention);
  report("end-to-end smoke", [&] { return smoke_run(conf, work); });
  report("ablation harness", [&] { return ablation(conf, work); });
  report("determinism", [&] { return determinism(conf, work); });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
