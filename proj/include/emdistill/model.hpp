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

// A small post-layer-norm transformer encoder with a first-token
// classification head. Teacher and student are both instances of
// Transformer and differ only in their TransformerConfig.

#ifndef EMDISTILL_MODEL_HPP_
#define EMDISTILL_MODEL_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "emdistill/tensor.hpp"

namespace emdistill {

/// Invalid model input (bad token id, empty sequence, bad label).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TransformerConfig {
  int num_layers = 2;
  int num_heads = 2;
  int hidden_size = 16;
  int ff_size = 32;
  int vocab_size = 8;
  int max_seq_len = 16;
  int num_classes = 2;
  std::uint64_t seed = 1;

  int head_size() const { return hidden_size / num_heads; }
  // Throws std::invalid_argument on non-positive sizes or when
  // hidden_size is not divisible by num_heads.
  void validate() const;
  bool operator==(const TransformerConfig&) const = default;
};

/// Activations recorded by one forward pass over a single sequence of
/// length l.
struct ActivationTrace {
  Tensor embeddings;                     // [l x d], after embedding norm
  std::vector<Tensor> attention_scores;  // per layer [h x l x l], pre-softmax
  std::vector<Tensor> hidden_states;     // per layer [l x d], layer outputs
  Tensor logits;                         // [num_classes]
};

class Transformer {
 public:
  explicit Transformer(const TransformerConfig& config);

  Transformer(Transformer&&) = default;
  Transformer& operator=(Transformer&&) = default;
  Transformer(const Transformer&) = delete;
  Transformer& operator=(const Transformer&) = delete;

  const TransformerConfig& config() const { return config_; }

  // Parameters in a fixed order; names are unique.
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);

  // Total number of scalar weights:
  //   V*d + L*d + 2d + layers * (4d^2 + 2*d*f + 9d + f) + d*C + C
  // with V vocab, L max length, d hidden, f feed-forward, C classes.
  static Index parameter_count(const TransformerConfig& config);
  Index parameter_count() const;

  ActivationTrace forward(std::span<const int> tokens) const;

  void set_requires_grad(bool value);
  void zero_grad();

 private:
  struct Layer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gain, ln2_bias;
  };

  TransformerConfig config_;
  std::vector<Parameter> params_;
  Tensor token_embedding_, position_embedding_, emb_ln_gain_, emb_ln_bias_;
  std::vector<Layer> layers_;
  Tensor classifier_w_, classifier_b_;
};

/// SGD with momentum: v <- mu * v + g, p <- p - lr * v.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  // Applies one update from the accumulated gradients, then clears them.
  void step(std::span<Parameter> params, double learning_rate);
  void step(std::span<Parameter* const> params, double learning_rate);

 private:
  void update(Parameter& p, std::size_t slot, double learning_rate);

  double momentum_;
  std::vector<Vector> velocity_;
};

/// -log softmax(logits)[label] as a differentiable scalar.
Tensor cross_entropy(const Tensor& logits, int label);

/// One optimizer step on the mean cross-entropy of the batch. Returns the
/// loss measured before the update.
double train_step(Transformer& model, SgdMomentum& optimizer,
                  std::span<const std::vector<int>> batch,
                  std::span<const int> labels, double learning_rate);

/// Index of the largest logit (lowest index on ties).
int predict(const Transformer& model, std::span<const int> tokens);

}  // namespace emdistill

#endif  // EMDISTILL_MODEL_HPP_
