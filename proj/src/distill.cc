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

#include "emdistill/distill.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "emdistill/ops.hpp"

namespace emdistill {
namespace {

// Floor on unit transfer costs before taking the inverse ratio.
constexpr double kMinUnitCost = 1e-12;
// Floor on updated layer weights so every layer keeps a positive share.
constexpr double kMinWeight = 1e-12;

void require_batch(std::span<const ActivationTrace> student,
                   std::span<const ActivationTrace> teacher) {
  if (student.empty() || student.size() != teacher.size()) {
    throw InputError("need equally many non-zero student and teacher traces, "
                     "got " + std::to_string(student.size()) + " and " +
                     std::to_string(teacher.size()));
  }
}

// Plain mean of per-example scalar losses.
Tensor batch_mean(std::span<const Tensor> terms) {
  const std::vector<double> w(terms.size(),
                              1.0 / static_cast<double>(terms.size()));
  return weighted_sum(terms, w);
}

Tensor detach(const Tensor& t) { return Tensor(t.shape(), t.data()); }

Eigen::VectorXd softmax(const Eigen::VectorXd& x, double tau) {
  const Eigen::ArrayXd z = (x.array() - x.maxCoeff()) / tau;
  const Eigen::ArrayXd e = z.exp();
  return (e / e.sum()).matrix();
}

// Inverse-ratio scores of unit costs, normalized by softmax(. / tau).
Eigen::VectorXd inverse_ratio_weights(Eigen::VectorXd unit_cost, double tau) {
  unit_cost = unit_cost.cwiseMax(kMinUnitCost);
  const double total = unit_cost.sum();
  const Eigen::VectorXd score = total * unit_cost.cwiseInverse();
  return softmax(score, tau);
}

Eigen::VectorXd floor_and_normalize(Eigen::VectorXd w) {
  if (w.minCoeff() >= kMinWeight) return w;
  w = w.cwiseMax(kMinWeight);
  return w / w.sum();
}

void check_sequence_lengths(const Tensor& s, const Tensor& t,
                            const char* what) {
  if (s.dim(0) != t.dim(0)) {
    throw InputError(std::string(what) + ": sequence length mismatch, student " +
                     to_string(s.shape()) + " vs teacher " +
                     to_string(t.shape()));
  }
}

void check_projection(const Tensor& student, const Tensor& teacher,
                      const Parameter& proj, const char* what) {
  if (proj.tensor.ndim() != 2 || proj.tensor.dim(0) != student.dim(1) ||
      proj.tensor.dim(1) != teacher.dim(1)) {
    throw InputError(std::string(what) + ": projection " +
                     to_string(proj.tensor.shape()) + " cannot map student " +
                     to_string(student.shape()) + " onto teacher " +
                     to_string(teacher.shape()));
  }
}

}  // namespace

DistillMode parse_mode(std::string_view name) {
  if (name == "full") return DistillMode::kFull;
  if (name == "no_emd") return DistillMode::kNoEmd;
  if (name == "no_ca") return DistillMode::kNoCa;
  if (name == "one_to_one") return DistillMode::kOneToOne;
  throw UsageError("unknown distillation mode '" + std::string(name) +
                   "' (expected full, no_emd, no_ca or one_to_one)");
}

std::string_view mode_name(DistillMode mode) {
  switch (mode) {
    case DistillMode::kFull: return "full";
    case DistillMode::kNoEmd: return "no_emd";
    case DistillMode::kNoCa: return "no_ca";
    case DistillMode::kOneToOne: return "one_to_one";
  }
  throw UsageError("unknown distillation mode");
}

LayerWeights LayerWeights::uniform(int teacher_layers, int student_layers) {
  if (teacher_layers <= 0 || student_layers <= 0) {
    throw std::invalid_argument("layer counts must be positive");
  }
  LayerWeights w;
  w.attn_teacher = Eigen::VectorXd::Constant(teacher_layers, 1.0 / teacher_layers);
  w.hidden_teacher = w.attn_teacher;
  w.attn_student = Eigen::VectorXd::Constant(student_layers, 1.0 / student_layers);
  w.hidden_student = w.attn_student;
  return w;
}

void LayerWeights::validate(double tol) const {
  auto check = [tol](const Eigen::VectorXd& v, const char* name) {
    if (v.size() == 0 || !(v.minCoeff() > 0.0) ||
        !(std::abs(v.sum() - 1.0) <= tol)) {
      throw std::invalid_argument(std::string("layer weights ") + name +
                                  " are not a positive probability vector");
    }
  };
  check(attn_teacher, "attn_teacher");
  check(attn_student, "attn_student");
  check(hidden_teacher, "hidden_teacher");
  check(hidden_student, "hidden_student");
}

Projections Projections::random(int student_hidden, int teacher_hidden,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 0.02);
  auto make = [&](const char* name) {
    Vector data(static_cast<Index>(student_hidden) * teacher_hidden);
    for (Index i = 0; i < data.size(); ++i) data[i] = init(rng);
    return Parameter{name, Tensor({student_hidden, teacher_hidden},
                                  std::move(data), true)};
  };
  Projections p;
  p.embedding = make("projection.embedding");
  p.hidden = make("projection.hidden");
  return p;
}

Projections Projections::identity(int hidden) {
  const RowMatrix eye = RowMatrix::Identity(hidden, hidden);
  return {{"projection.embedding", Tensor::matrix(eye, true)},
          {"projection.hidden", Tensor::matrix(eye, true)}};
}

std::vector<Parameter*> Projections::parameters() {
  return {&embedding, &hidden};
}

DistanceMatrix::DistanceMatrix(Index rows, Index cols)
    : rows_(rows), cols_(cols), cells_(static_cast<std::size_t>(rows * cols)) {}

Eigen::MatrixXd DistanceMatrix::values() const {
  Eigen::MatrixXd out(rows_, cols_);
  for (Index i = 0; i < rows_; ++i) {
    for (Index j = 0; j < cols_; ++j) out(i, j) = (*this)(i, j).item();
  }
  return out;
}

Tensor embedding_loss(const ActivationTrace& student,
                      const ActivationTrace& teacher, const Projections& proj) {
  check_sequence_lengths(student.embeddings, teacher.embeddings,
                         "embedding_loss");
  check_projection(student.embeddings, teacher.embeddings, proj.embedding,
                   "embedding_loss");
  return mse(matmul(student.embeddings, proj.embedding.tensor),
             teacher.embeddings);
}

Tensor embedding_loss(std::span<const ActivationTrace> student,
                      std::span<const ActivationTrace> teacher,
                      const Projections& proj) {
  require_batch(student, teacher);
  std::vector<Tensor> terms;
  for (std::size_t b = 0; b < student.size(); ++b) {
    terms.push_back(embedding_loss(student[b], teacher[b], proj));
  }
  return batch_mean(terms);
}

Tensor prediction_loss(const Tensor& student_logits,
                       const Tensor& teacher_logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw ParameterError("prediction temperature must be positive, got " +
                         std::to_string(temperature));
  }
  if (student_logits.shape() != teacher_logits.shape()) {
    throw InputError("prediction_loss: class count mismatch " +
                     to_string(student_logits.shape()) + " vs " +
                     to_string(teacher_logits.shape()));
  }
  const Tensor target = softmax_rows(detach(teacher_logits));
  return scale(sum(mul(target, log_softmax_rows(student_logits, temperature))),
               -1.0);
}

Tensor prediction_loss(std::span<const ActivationTrace> student,
                       std::span<const ActivationTrace> teacher,
                       double temperature) {
  require_batch(student, teacher);
  std::vector<Tensor> terms;
  for (std::size_t b = 0; b < student.size(); ++b) {
    terms.push_back(
        prediction_loss(student[b].logits, teacher[b].logits, temperature));
  }
  return batch_mean(terms);
}

DistanceMatrix attention_distance_matrix(
    std::span<const ActivationTrace> student,
    std::span<const ActivationTrace> teacher) {
  require_batch(student, teacher);
  const Index m = static_cast<Index>(teacher.front().attention_scores.size());
  const Index n = static_cast<Index>(student.front().attention_scores.size());
  DistanceMatrix d(m, n);
  const double inv = 1.0 / static_cast<double>(student.size());
  const std::vector<double> w(student.size(), inv);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      std::vector<Tensor> terms;
      for (std::size_t b = 0; b < student.size(); ++b) {
        const Tensor& t = teacher[b].attention_scores[i];
        const Tensor& s = student[b].attention_scores[j];
        if (t.dim(0) != s.dim(0)) {
          throw InputError("attention_distance_matrix: teacher has " +
                           std::to_string(t.dim(0)) + " heads, student " +
                           std::to_string(s.dim(0)));
        }
        if (t.shape() != s.shape()) {
          throw InputError("attention_distance_matrix: sequence length "
                           "mismatch " + to_string(s.shape()) + " vs " +
                           to_string(t.shape()));
        }
        terms.push_back(mse(t, s));
      }
      d(i, j) = weighted_sum(terms, w);
    }
  }
  return d;
}

DistanceMatrix attention_distance_matrix(const ActivationTrace& student,
                                         const ActivationTrace& teacher) {
  return attention_distance_matrix(std::span(&student, 1),
                                   std::span(&teacher, 1));
}

DistanceMatrix hidden_distance_matrix(std::span<const ActivationTrace> student,
                                      std::span<const ActivationTrace> teacher,
                                      const Projections& proj) {
  require_batch(student, teacher);
  const Index m = static_cast<Index>(teacher.front().hidden_states.size());
  const Index n = static_cast<Index>(student.front().hidden_states.size());
  const std::vector<double> w(student.size(),
                              1.0 / static_cast<double>(student.size()));
  // Project each student layer once per example.
  std::vector<std::vector<Tensor>> projected(student.size());
  for (std::size_t b = 0; b < student.size(); ++b) {
    for (Index j = 0; j < n; ++j) {
      const Tensor& s = student[b].hidden_states[j];
      const Tensor& t = teacher[b].hidden_states.front();
      check_projection(s, t, proj.hidden, "hidden_distance_matrix");
      check_sequence_lengths(s, t, "hidden_distance_matrix");
      projected[b].push_back(matmul(s, proj.hidden.tensor));
    }
  }
  DistanceMatrix d(m, n);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      std::vector<Tensor> terms;
      for (std::size_t b = 0; b < student.size(); ++b) {
        const Tensor& t = teacher[b].hidden_states[i];
        if (t.shape() != projected[b][j].shape()) {
          throw InputError("hidden_distance_matrix: projected student " +
                           to_string(projected[b][j].shape()) +
                           " vs teacher " + to_string(t.shape()));
        }
        terms.push_back(mse(projected[b][j], t));
      }
      d(i, j) = weighted_sum(terms, w);
    }
  }
  return d;
}

DistanceMatrix hidden_distance_matrix(const ActivationTrace& student,
                                      const ActivationTrace& teacher,
                                      const Projections& proj) {
  return hidden_distance_matrix(std::span(&student, 1), std::span(&teacher, 1),
                                proj);
}

LayerLoss emd_layer_loss(const DistanceMatrix& distances,
                         const Eigen::VectorXd& teacher_weights,
                         const Eigen::VectorXd& student_weights) {
  if (teacher_weights.size() != distances.rows() ||
      student_weights.size() != distances.cols()) {
    throw InputError("emd_layer_loss: weights of length " +
                     std::to_string(teacher_weights.size()) + " and " +
                     std::to_string(student_weights.size()) + " for a " +
                     std::to_string(distances.rows()) + "x" +
                     std::to_string(distances.cols()) + " distance matrix");
  }
  TransportProblemd problem;
  problem.supplies = teacher_weights;
  problem.demands = student_weights;
  problem.cost = distances.values();
  LayerLoss out;
  out.flow = solve(problem);
  out.cost = problem.cost;

  const double total = out.flow.total_flow;
  if (!(total > 0.0)) throw std::domain_error("EMD undefined: zero total flow");
  std::vector<double> coeff;
  coeff.reserve(static_cast<std::size_t>(distances.rows() * distances.cols()));
  for (Index i = 0; i < distances.rows(); ++i) {
    for (Index j = 0; j < distances.cols(); ++j) {
      coeff.push_back(out.flow.flow(i, j) / total);
    }
  }
  out.loss = weighted_sum(distances.cells(), coeff);
  return out;
}

LayerWeights cost_attention_update(const FlowMatrixd& attn_flow,
                                   const Eigen::MatrixXd& attn_cost,
                                   const FlowMatrixd& hidden_flow,
                                   const Eigen::MatrixXd& hidden_cost,
                                   const LayerWeights& weights, double tau) {
  if (!(tau > 0.0)) {
    throw ParameterError("cost-attention temperature must be positive, got " +
                         std::to_string(tau));
  }
  const Index m = weights.attn_teacher.size(), n = weights.attn_student.size();
  auto check = [m, n](const Eigen::MatrixXd& a, const char* what) {
    if (a.rows() != m || a.cols() != n) {
      throw InputError(std::string("cost_attention_update: ") + what +
                       " is " + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + ", expected " +
                       std::to_string(m) + "x" + std::to_string(n));
    }
  };
  check(attn_flow.flow, "attention flow");
  check(attn_cost, "attention cost");
  check(hidden_flow.flow, "hidden flow");
  check(hidden_cost, "hidden cost");

  const Eigen::MatrixXd attn_work = attn_cost.cwiseProduct(attn_flow.flow);
  const Eigen::MatrixXd hidden_work =
      hidden_cost.cwiseProduct(hidden_flow.flow);

  const Eigen::VectorXd teacher_attn = inverse_ratio_weights(
      attn_work.rowwise().sum().cwiseQuotient(weights.attn_teacher), tau);
  const Eigen::VectorXd teacher_hidden = inverse_ratio_weights(
      hidden_work.rowwise().sum().cwiseQuotient(weights.hidden_teacher), tau);
  const Eigen::VectorXd student_attn = inverse_ratio_weights(
      attn_work.colwise().sum().transpose().cwiseQuotient(
          weights.attn_student),
      tau);
  const Eigen::VectorXd student_hidden = inverse_ratio_weights(
      hidden_work.colwise().sum().transpose().cwiseQuotient(
          weights.hidden_student),
      tau);

  LayerWeights next;
  next.attn_teacher = floor_and_normalize(0.5 * (teacher_attn + teacher_hidden));
  next.hidden_teacher = next.attn_teacher;
  next.attn_student = floor_and_normalize(0.5 * (student_attn + student_hidden));
  next.hidden_student = next.attn_student;
  return next;
}

std::vector<int> skip_mapping(int teacher_layers, int student_layers) {
  if (student_layers <= 0 || teacher_layers <= 0 ||
      teacher_layers % student_layers != 0) {
    throw InputError("one-to-one mapping needs the teacher layer count (" +
                     std::to_string(teacher_layers) +
                     ") to be a multiple of the student layer count (" +
                     std::to_string(student_layers) + ")");
  }
  const int stride = teacher_layers / student_layers;
  std::vector<int> map;
  for (int j = 1; j <= student_layers; ++j) map.push_back(j * stride - 1);
  return map;
}

Tensor one_to_one_baseline_loss(std::span<const ActivationTrace> student,
                                std::span<const ActivationTrace> teacher,
                                const Projections& proj) {
  require_batch(student, teacher);
  const int m = static_cast<int>(teacher.front().hidden_states.size());
  const int n = static_cast<int>(student.front().hidden_states.size());
  const std::vector<int> map = skip_mapping(m, n);
  const DistanceMatrix attn = attention_distance_matrix(student, teacher);
  const DistanceMatrix hidden = hidden_distance_matrix(student, teacher, proj);
  std::vector<Tensor> terms;
  for (int j = 0; j < n; ++j) {
    terms.push_back(attn(map[j], j));
    terms.push_back(hidden(map[j], j));
  }
  const std::vector<double> w(terms.size(), 1.0 / n);
  return weighted_sum(terms, w);
}

DistillLossBreakdown total_loss(std::span<const ActivationTrace> student,
                                std::span<const ActivationTrace> teacher,
                                const Projections& proj,
                                const LayerWeights& weights,
                                const DistillParams& params) {
  require_batch(student, teacher);
  const Tensor emb = embedding_loss(student, teacher, proj);
  const Tensor pred = prediction_loss(student, teacher, params.temperature);
  const DistanceMatrix attn_d = attention_distance_matrix(student, teacher);
  const DistanceMatrix hidden_d =
      hidden_distance_matrix(student, teacher, proj);
  const Index m = attn_d.rows(), n = attn_d.cols();

  DistillLossBreakdown out;
  out.attn_cost = attn_d.values();
  out.hidden_cost = hidden_d.values();
  out.next_weights = weights;
  Tensor attn, hidden;

  // Loss as a fixed plan over the distance cells.
  auto plan_loss = [](const DistanceMatrix& d, const Eigen::MatrixXd& plan) {
    std::vector<double> coeff;
    for (Index i = 0; i < d.rows(); ++i) {
      for (Index j = 0; j < d.cols(); ++j) coeff.push_back(plan(i, j));
    }
    return weighted_sum(d.cells(), coeff);
  };
  auto fixed_flow = [](const Eigen::MatrixXd& plan,
                       const Eigen::MatrixXd& cost) {
    FlowMatrixd f;
    f.flow = plan;
    f.work = plan.cwiseProduct(cost).sum();
    f.total_flow = plan.sum();
    return f;
  };

  switch (params.mode) {
    case DistillMode::kFull:
    case DistillMode::kNoCa: {
      weights.validate();
      LayerLoss a = emd_layer_loss(attn_d, weights.attn_teacher,
                                   weights.attn_student);
      LayerLoss h = emd_layer_loss(hidden_d, weights.hidden_teacher,
                                   weights.hidden_student);
      attn = a.loss;
      hidden = h.loss;
      out.attn_flow = std::move(a.flow);
      out.hidden_flow = std::move(h.flow);
      if (params.mode == DistillMode::kFull) {
        out.next_weights =
            cost_attention_update(out.attn_flow, out.attn_cost,
                                  out.hidden_flow, out.hidden_cost, weights,
                                  params.tau);
      }
      break;
    }
    case DistillMode::kNoEmd: {
      const Eigen::MatrixXd plan =
          Eigen::MatrixXd::Constant(m, n, 1.0 / static_cast<double>(m * n));
      attn = plan_loss(attn_d, plan);
      hidden = plan_loss(hidden_d, plan);
      out.attn_flow = fixed_flow(plan, out.attn_cost);
      out.hidden_flow = fixed_flow(plan, out.hidden_cost);
      break;
    }
    case DistillMode::kOneToOne: {
      const std::vector<int> map =
          skip_mapping(static_cast<int>(m), static_cast<int>(n));
      Eigen::MatrixXd plan = Eigen::MatrixXd::Zero(m, n);
      for (Index j = 0; j < n; ++j) plan(map[j], j) = 1.0 / static_cast<double>(n);
      attn = plan_loss(attn_d, plan);
      hidden = plan_loss(hidden_d, plan);
      out.attn_flow = fixed_flow(plan, out.attn_cost);
      out.hidden_flow = fixed_flow(plan, out.hidden_cost);
      break;
    }
  }

  const std::vector<Tensor> terms{emb, attn, hidden, pred};
  const std::vector<double> coeff{params.beta, params.beta, params.beta, 1.0};
  out.total_tensor = weighted_sum(terms, coeff);
  out.emb = emb.item();
  out.pred = pred.item();
  out.attn = attn.item();
  out.hidden = hidden.item();
  out.total = out.total_tensor.item();
  return out;
}

}  // namespace emdistill
