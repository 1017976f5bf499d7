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

// Teacher-to-student distillation objectives.
//
// Intermediate layers are matched many-to-many: the M teacher layers and N
// student layers are treated as two weighted distributions, the per-pair
// MSE between their activations is the ground distance, and the loss is the
// Earth Mover's Distance of the optimal transport plan. Cost attention then
// re-weights the layers for the next batch in inverse proportion to the
// cost each layer incurred.
//
// Index convention for every M x N matrix here: row i is teacher layer i,
// column j is student layer j.

#ifndef EMDISTILL_DISTILL_HPP_
#define EMDISTILL_DISTILL_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "emdistill/model.hpp"
#include "emdistill/tensor.hpp"
#include "emdistill/transport.hpp"

namespace emdistill {

/// Unknown mode names and similar caller mistakes.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DistillMode {
  kFull,      // EMD mapping with cost attention
  kNoEmd,     // many-to-many mean of all pairwise MSEs
  kNoCa,      // EMD mapping, weights frozen at uniform
  kOneToOne,  // skip mapping: student j <- teacher j * M / N
};

DistillMode parse_mode(std::string_view name);
std::string_view mode_name(DistillMode mode);

/// Layer weights used as transport supplies (teacher) and demands
/// (student). Each vector is a probability vector with positive entries.
struct LayerWeights {
  Eigen::VectorXd attn_teacher;
  Eigen::VectorXd attn_student;
  Eigen::VectorXd hidden_teacher;
  Eigen::VectorXd hidden_student;

  static LayerWeights uniform(int teacher_layers, int student_layers);
  // Throws std::invalid_argument if an entry is non-positive or a vector
  // does not sum to one within tol.
  void validate(double tol = 1e-9) const;
};

/// Learned maps from the student hidden size d to the teacher size d'.
/// One matrix for the embeddings and one shared by every hidden layer pair.
struct Projections {
  Parameter embedding;  // [d x d']
  Parameter hidden;     // [d x d']

  static Projections random(int student_hidden, int teacher_hidden,
                            std::uint64_t seed);
  static Projections identity(int hidden);
  std::vector<Parameter*> parameters();
};

/// M x N matrix of differentiable scalar distances.
class DistanceMatrix {
 public:
  DistanceMatrix(Index rows, Index cols);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  const Tensor& operator()(Index i, Index j) const { return cells_[i * cols_ + j]; }
  Tensor& operator()(Index i, Index j) { return cells_[i * cols_ + j]; }
  std::span<const Tensor> cells() const { return cells_; }
  Eigen::MatrixXd values() const;

 private:
  Index rows_, cols_;
  std::vector<Tensor> cells_;
};

/// MSE(E^S W_e, E^T), averaged over the batch.
Tensor embedding_loss(const ActivationTrace& student,
                      const ActivationTrace& teacher, const Projections& proj);
Tensor embedding_loss(std::span<const ActivationTrace> student,
                      std::span<const ActivationTrace> teacher,
                      const Projections& proj);

/// -softmax(z^T) . log_softmax(z^S / t). The temperature divides the
/// student logits only; the teacher side carries no gradient.
Tensor prediction_loss(const Tensor& student_logits,
                       const Tensor& teacher_logits, double temperature);
Tensor prediction_loss(std::span<const ActivationTrace> student,
                       std::span<const ActivationTrace> teacher,
                       double temperature);

/// d_ij = MSE(A^T_i, A^S_j) over heads x l x l, batch-averaged.
DistanceMatrix attention_distance_matrix(
    std::span<const ActivationTrace> student,
    std::span<const ActivationTrace> teacher);
DistanceMatrix attention_distance_matrix(const ActivationTrace& student,
                                         const ActivationTrace& teacher);

/// d_ij = MSE(H^S_j W_h, H^T_i), batch-averaged.
DistanceMatrix hidden_distance_matrix(std::span<const ActivationTrace> student,
                                      std::span<const ActivationTrace> teacher,
                                      const Projections& proj);
DistanceMatrix hidden_distance_matrix(const ActivationTrace& student,
                                      const ActivationTrace& teacher,
                                      const Projections& proj);

struct LayerLoss {
  Tensor loss;        // EMD as a differentiable scalar
  FlowMatrixd flow;   // optimal plan, treated as a constant
  Eigen::MatrixXd cost;
};

/// Solves the transport problem on the distances (teacher weights are
/// supplies, student weights demands) and returns sum_ij f_ij d_ij / sum f.
/// Gradients flow through d_ij only.
LayerLoss emd_layer_loss(const DistanceMatrix& distances,
                         const Eigen::VectorXd& teacher_weights,
                         const Eigen::VectorXd& student_weights);

/// Cost attention. For each teacher layer i the unit cost is
/// C_i = sum_j d_ij f_ij / w_i; the layer score is (sum_k C_k) / C_i and
/// the new weight is the mean of softmax(score / tau) over the attention
/// and hidden problems. Student layers use column sums symmetrically. The
/// averaged weight is returned for both the attention and hidden vectors.
LayerWeights cost_attention_update(const FlowMatrixd& attn_flow,
                                   const Eigen::MatrixXd& attn_cost,
                                   const FlowMatrixd& hidden_flow,
                                   const Eigen::MatrixXd& hidden_cost,
                                   const LayerWeights& weights, double tau);

/// Teacher layer (0-based) assigned to each student layer by the skip
/// mapping: student j (1-based) learns from teacher j * M / N.
std::vector<int> skip_mapping(int teacher_layers, int student_layers);

/// Mean over student layers of the attention MSE plus the projected hidden
/// MSE against the skip-mapped teacher layer.
Tensor one_to_one_baseline_loss(std::span<const ActivationTrace> student,
                                std::span<const ActivationTrace> teacher,
                                const Projections& proj);

struct DistillParams {
  double beta = 0.01;        // weight of emb + attn + hidden
  double temperature = 1.0;  // prediction-layer temperature t
  double tau = 1.0;          // cost-attention temperature
  DistillMode mode = DistillMode::kFull;
};

struct DistillLossBreakdown {
  double emb = 0, pred = 0, attn = 0, hidden = 0, total = 0;
  FlowMatrixd attn_flow, hidden_flow;
  Eigen::MatrixXd attn_cost, hidden_cost;
  Tensor total_tensor;        // differentiable total
  LayerWeights next_weights;  // weights for the next batch
};

/// total = beta * (emb + attn + hidden) + pred over one batch of paired
/// traces, with the intermediate terms chosen by params.mode.
DistillLossBreakdown total_loss(std::span<const ActivationTrace> student,
                                std::span<const ActivationTrace> teacher,
                                const Projections& proj,
                                const LayerWeights& weights,
                                const DistillParams& params);

}  // namespace emdistill

#endif  // EMDISTILL_DISTILL_HPP_
