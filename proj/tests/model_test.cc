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

#include <set>
#include <sstream>
#include <vector>

#include "emdistill/checkpoint.hpp"
#include "emdistill/ops.hpp"
#include "gradcheck.hpp"
#include "gtest/gtest.h"

namespace emdistill {
namespace {

TransformerConfig small_config(int layers = 2, int heads = 2, int hidden = 8) {
  TransformerConfig c;
  c.num_layers = layers;
  c.num_heads = heads;
  c.hidden_size = hidden;
  c.ff_size = 12;
  c.vocab_size = 7;
  c.max_seq_len = 6;
  c.num_classes = 3;
  c.seed = 42;
  return c;
}

TEST(TransformerConfigTest, RejectsIndivisibleHeads) {
  EXPECT_THROW(Transformer(small_config(2, 3, 8)), std::invalid_argument);
  TransformerConfig c = small_config();
  c.num_layers = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TransformerTest, TraceShapes) {
  const Transformer model(small_config());
  const std::vector<int> tokens{0, 3, 1, 6, 2};
  const ActivationTrace trace = model.forward(tokens);
  EXPECT_EQ(trace.embeddings.shape(), (Shape{5, 8}));
  ASSERT_EQ(trace.attention_scores.size(), 2u);
  ASSERT_EQ(trace.hidden_states.size(), 2u);
  for (int l = 0; l < 2; ++l) {
    EXPECT_EQ(trace.attention_scores[l].shape(), (Shape{2, 5, 5}));
    EXPECT_EQ(trace.hidden_states[l].shape(), (Shape{5, 8}));
  }
  EXPECT_EQ(trace.logits.shape(), (Shape{3}));
}

TEST(TransformerTest, AttentionScoresSoftmaxToDistributions) {
  Transformer model(small_config());
  // Larger weights so the scores are far from uniform.
  for (Parameter& p : model.parameters()) p.tensor.mutable_data() *= 20.0;
  const std::vector<int> tokens{1, 2, 3, 4};
  const ActivationTrace trace = model.forward(tokens);
  for (const Tensor& scores : trace.attention_scores) {
    const Tensor probs = softmax_rows(scores);
    ConstMatrixMap rows(probs.data().data(), 2 * 4, 4);
    for (Index r = 0; r < rows.rows(); ++r) {
      EXPECT_NEAR(rows.row(r).sum(), 1.0, 1e-12);
    }
  }
}

TEST(TransformerTest, EmbeddingNormIsStandardized) {
  const Transformer model(small_config());
  const std::vector<int> tokens{5, 0, 2};
  const ConstMatrixMap e = model.forward(tokens).embeddings.matrix();
  for (Index r = 0; r < e.rows(); ++r) {
    const double mu = e.row(r).mean();
    EXPECT_NEAR(mu, 0.0, 1e-8);
    EXPECT_NEAR((e.row(r).array() - mu).square().mean(), 1.0, 1e-8);
  }
}

TEST(TransformerTest, ParameterCountMatchesClosedForm) {
  for (int layers : {1, 2, 4}) {
    for (int hidden : {8, 16}) {
      const TransformerConfig c = small_config(layers, 2, hidden);
      const Transformer model(c);
      EXPECT_EQ(model.parameter_count(), Transformer::parameter_count(c));
    }
  }
  // 7*8 + 6*8 + 16 + 2*(256 + 192 + 72 + 12) + 24 + 3
  EXPECT_EQ(Transformer::parameter_count(small_config()), 1211);
}

TEST(TransformerTest, ParameterNamesAreUnique) {
  const Transformer model(small_config(3));
  std::set<std::string> names;
  for (const Parameter& p : model.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
  }
}

TEST(TransformerTest, InputErrors) {
  const Transformer model(small_config());
  EXPECT_THROW(model.forward(std::vector<int>{}), InputError);
  EXPECT_THROW(model.forward(std::vector<int>{1, 7}), InputError);
  EXPECT_THROW(model.forward(std::vector<int>{-1}), InputError);
  EXPECT_THROW(model.forward(std::vector<int>(7, 1)), InputError);
}

TEST(TransformerTest, SameSeedSameLogits) {
  const Transformer a(small_config()), b(small_config());
  const std::vector<int> tokens{0, 1, 2, 3, 4, 5};
  EXPECT_EQ(a.forward(tokens).logits.data(), b.forward(tokens).logits.data());
  TransformerConfig other = small_config();
  other.seed = 43;
  EXPECT_NE(a.forward(tokens).logits.data(),
            Transformer(other).forward(tokens).logits.data());
}

TEST(TrainStepTest, ZeroLearningRateLeavesParametersUnchanged) {
  Transformer model(small_config());
  std::vector<Vector> before;
  for (const Parameter& p : model.parameters()) before.push_back(p.tensor.data());
  SgdMomentum opt;
  const std::vector<std::vector<int>> batch{{0, 1, 2}, {0, 2, 1}};
  const std::vector<int> labels{0, 2};
  for (int step = 0; step < 3; ++step) {
    train_step(model, opt, batch, labels, 0.0);
  }
  for (std::size_t k = 0; k < before.size(); ++k) {
    EXPECT_EQ(model.parameters()[k].tensor.data(), before[k])
        << model.parameters()[k].name;
  }
}

TEST(TrainStepTest, RepeatedExampleLossIsNonIncreasing) {
  TransformerConfig c = small_config(1, 2, 8);
  c.num_classes = 2;
  Transformer model(c);
  SgdMomentum opt;
  const std::vector<std::vector<int>> batch{{0, 4, 4, 1}};
  const std::vector<int> labels{1};
  double previous = train_step(model, opt, batch, labels, 0.05);
  for (int step = 1; step < 50; ++step) {
    const double loss = train_step(model, opt, batch, labels, 0.05);
    EXPECT_LE(loss, previous) << "step " << step;
    previous = loss;
  }
  EXPECT_LT(previous, 0.1);
}

TEST(TrainStepTest, LabelOutOfRangeThrows) {
  Transformer model(small_config());
  SgdMomentum opt;
  const std::vector<std::vector<int>> batch{{0, 1}};
  EXPECT_THROW(train_step(model, opt, batch, std::vector<int>{3}, 0.1),
               InputError);
  EXPECT_THROW(train_step(model, opt, {}, {}, 0.1), InputError);
}

TEST(TrainStepTest, CrossEntropyGradientMatchesFiniteDifferences) {
  TransformerConfig c = small_config(1, 2, 4);
  c.num_classes = 2;
  c.ff_size = 6;
  Transformer model(c);
  // Scale up the initialization so gradients are not vanishingly small.
  for (Parameter& p : model.parameters()) p.tensor.mutable_data() *= 15.0;
  std::vector<Tensor> inputs;
  for (const Parameter& p : model.parameters()) inputs.push_back(p.tensor);
  const std::vector<int> tokens{0, 3, 5, 1};
  const double err = testing::max_gradient_error(
      [&](const std::vector<Tensor>&) {
        return cross_entropy(model.forward(tokens).logits, 1);
      },
      inputs);
  EXPECT_LT(err, 1e-4);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  Transformer model(small_config());
  SgdMomentum opt;
  const std::vector<std::vector<int>> batch{{0, 1, 2}};
  train_step(model, opt, batch, std::vector<int>{1}, 0.3);
  std::stringstream buffer;
  write_checkpoint(buffer, model);
  const Transformer restored = read_checkpoint(buffer);
  EXPECT_EQ(restored.config(), model.config());
  ASSERT_EQ(restored.parameters().size(), model.parameters().size());
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    EXPECT_EQ(restored.parameters()[k].tensor.data(),
              model.parameters()[k].tensor.data());
  }
  const std::vector<int> tokens{3, 2, 1};
  EXPECT_EQ(restored.forward(tokens).logits.data(),
            model.forward(tokens).logits.data());
}

TEST(CheckpointTest, RejectsCorruptInput) {
  std::stringstream bad("not-a-checkpoint 1");
  EXPECT_THROW(read_checkpoint(bad), CheckpointError);

  std::stringstream buffer;
  write_checkpoint(buffer, Transformer(small_config()));
  std::string text = buffer.str();
  text.resize(text.size() / 2);
  std::stringstream truncated(text);
  EXPECT_THROW(read_checkpoint(truncated), CheckpointError);
}

}  // namespace
}  // namespace emdistill
