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

#include "emdistill/model.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "emdistill/ops.hpp"

namespace emdistill {

void TransformerConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) {
      throw std::invalid_argument(std::string(what) + " must be positive, got " +
                                  std::to_string(v));
    }
  };
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(hidden_size, "hidden_size");
  positive(ff_size, "ff_size");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  positive(num_classes, "num_classes");
  if (hidden_size % num_heads != 0) {
    throw std::invalid_argument("hidden_size " + std::to_string(hidden_size) +
                                " is not divisible by num_heads " +
                                std::to_string(num_heads));
  }
}

Transformer::Transformer(const TransformerConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> init(0.0, 0.02);
  const Index d = config_.hidden_size, f = config_.ff_size;

  // Initialization order is fixed so a seed always yields the same weights.
  auto make = [&](const std::string& name, Shape shape, bool random,
                  double fill = 0.0) {
    Vector data(numel(shape));
    for (Index i = 0; i < data.size(); ++i) {
      data[i] = random ? init(rng) : fill;
    }
    Tensor t(std::move(shape), std::move(data), true);
    params_.push_back({name, t});
    return t;
  };

  token_embedding_ = make("embeddings.token", {config_.vocab_size, d}, true);
  position_embedding_ =
      make("embeddings.position", {config_.max_seq_len, d}, true);
  emb_ln_gain_ = make("embeddings.norm.gain", {d}, false, 1.0);
  emb_ln_bias_ = make("embeddings.norm.bias", {d}, false);
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer layer;
    layer.wq = make(p + "attention.query.weight", {d, d}, true);
    layer.bq = make(p + "attention.query.bias", {d}, false);
    layer.wk = make(p + "attention.key.weight", {d, d}, true);
    layer.bk = make(p + "attention.key.bias", {d}, false);
    layer.wv = make(p + "attention.value.weight", {d, d}, true);
    layer.bv = make(p + "attention.value.bias", {d}, false);
    layer.wo = make(p + "attention.output.weight", {d, d}, true);
    layer.bo = make(p + "attention.output.bias", {d}, false);
    layer.ln1_gain = make(p + "attention.norm.gain", {d}, false, 1.0);
    layer.ln1_bias = make(p + "attention.norm.bias", {d}, false);
    layer.w1 = make(p + "ffn.in.weight", {d, f}, true);
    layer.b1 = make(p + "ffn.in.bias", {f}, false);
    layer.w2 = make(p + "ffn.out.weight", {f, d}, true);
    layer.b2 = make(p + "ffn.out.bias", {d}, false);
    layer.ln2_gain = make(p + "ffn.norm.gain", {d}, false, 1.0);
    layer.ln2_bias = make(p + "ffn.norm.bias", {d}, false);
    layers_.push_back(std::move(layer));
  }
  classifier_w_ = make("classifier.weight", {d, config_.num_classes}, true);
  classifier_b_ = make("classifier.bias", {config_.num_classes}, false);
}

Parameter& Transformer::parameter(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

Index Transformer::parameter_count(const TransformerConfig& c) {
  const Index v = c.vocab_size, len = c.max_seq_len, d = c.hidden_size,
              f = c.ff_size, k = c.num_classes, layers = c.num_layers;
  return v * d + len * d + 2 * d +
         layers * (4 * d * d + 2 * d * f + 9 * d + f) + d * k + k;
}

Index Transformer::parameter_count() const {
  Index n = 0;
  for (const Parameter& p : params_) n += p.tensor.size();
  return n;
}

ActivationTrace Transformer::forward(std::span<const int> tokens) const {
  const Index len = static_cast<Index>(tokens.size());
  if (len == 0) throw InputError("empty token sequence");
  if (len > config_.max_seq_len) {
    throw InputError("sequence length " + std::to_string(len) +
                     " exceeds max_seq_len " +
                     std::to_string(config_.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size) {
      throw InputError("token id " + std::to_string(t) + " outside [0, " +
                       std::to_string(config_.vocab_size) + ")");
    }
  }
  std::vector<int> positions(static_cast<std::size_t>(len));
  for (Index i = 0; i < len; ++i) positions[i] = static_cast<int>(i);

  ActivationTrace trace;
  Tensor x = layer_norm(embedding(token_embedding_, tokens) +
                            embedding(position_embedding_, positions),
                        emb_ln_gain_, emb_ln_bias_);
  trace.embeddings = x;

  const int heads = config_.num_heads;
  const Index dh = config_.head_size();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const Layer& layer : layers_) {
    const Tensor q = add_bias(matmul(x, layer.wq), layer.bq);
    const Tensor k = add_bias(matmul(x, layer.wk), layer.bk);
    const Tensor v = add_bias(matmul(x, layer.wv), layer.bv);
    std::vector<Tensor> scores, contexts;
    for (int h = 0; h < heads; ++h) {
      const Tensor qh = slice_cols(q, h * dh, dh);
      const Tensor kh = slice_cols(k, h * dh, dh);
      const Tensor vh = slice_cols(v, h * dh, dh);
      Tensor s = scale(matmul(qh, transpose(kh)), inv_sqrt);
      contexts.push_back(matmul(softmax_rows(s), vh));
      scores.push_back(std::move(s));
    }
    trace.attention_scores.push_back(stack(scores));
    const Tensor attended =
        add_bias(matmul(concat_cols(contexts), layer.wo), layer.bo);
    const Tensor x1 = layer_norm(x + attended, layer.ln1_gain, layer.ln1_bias);
    const Tensor ff = add_bias(
        matmul(gelu(add_bias(matmul(x1, layer.w1), layer.b1)), layer.w2),
        layer.b2);
    x = layer_norm(x1 + ff, layer.ln2_gain, layer.ln2_bias);
    trace.hidden_states.push_back(x);
  }
  const Tensor pooled = reshape(row(x, 0), {1, config_.hidden_size});
  trace.logits =
      reshape(add_bias(matmul(pooled, classifier_w_), classifier_b_),
              {config_.num_classes});
  return trace;
}

void Transformer::set_requires_grad(bool value) {
  for (Parameter& p : params_) p.tensor.set_requires_grad(value);
}

void Transformer::zero_grad() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

void SgdMomentum::update(Parameter& p, std::size_t slot,
                         double learning_rate) {
  if (velocity_.size() <= slot) velocity_.resize(slot + 1);
  Vector& v = velocity_[slot];
  if (v.size() != p.tensor.size()) v = Vector::Zero(p.tensor.size());
  v = momentum_ * v + p.tensor.grad();
  p.tensor.mutable_data() -= learning_rate * v;
  p.tensor.zero_grad();
}

void SgdMomentum::step(std::span<Parameter> params, double learning_rate) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    update(params[k], k, learning_rate);
  }
}

void SgdMomentum::step(std::span<Parameter* const> params,
                       double learning_rate) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    update(*params[k], k, learning_rate);
  }
}

Tensor cross_entropy(const Tensor& logits, int label) {
  const Index classes = logits.size();
  if (label < 0 || label >= classes) {
    throw InputError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(classes) + ")");
  }
  Vector onehot = Vector::Zero(classes);
  onehot[label] = -1.0;
  return sum(mul(log_softmax_rows(logits), Tensor(logits.shape(), onehot)));
}

double train_step(Transformer& model, SgdMomentum& optimizer,
                  std::span<const std::vector<int>> batch,
                  std::span<const int> labels, double learning_rate) {
  if (batch.empty()) throw InputError("empty batch");
  if (batch.size() != labels.size()) {
    throw InputError("batch has " + std::to_string(batch.size()) +
                     " sequences but " + std::to_string(labels.size()) +
                     " labels");
  }
  for (int label : labels) {
    if (label < 0 || label >= model.config().num_classes) {
      throw InputError("label " + std::to_string(label) + " outside [0, " +
                       std::to_string(model.config().num_classes) + ")");
    }
  }
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    losses.push_back(cross_entropy(model.forward(batch[b]).logits, labels[b]));
  }
  const std::vector<double> weights(losses.size(),
                                    1.0 / static_cast<double>(losses.size()));
  Tensor loss = weighted_sum(losses, weights);
  loss.backward();
  optimizer.step(model.parameters(), learning_rate);
  return loss.item();
}

int predict(const Transformer& model, std::span<const int> tokens) {
  const ActivationTrace trace = model.forward(tokens);
  const Vector& z = trace.logits.data();
  Index best = 0;
  for (Index k = 1; k < z.size(); ++k) {
    if (z[k] > z[best]) best = k;
  }
  return static_cast<int>(best);
}

}  // namespace emdistill
