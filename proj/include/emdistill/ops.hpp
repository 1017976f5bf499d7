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

// Differentiable operations on Tensor. Every function records a backward
// closure when any input requires a gradient and is a plain value
// computation otherwise.

#ifndef EMDISTILL_OPS_HPP_
#define EMDISTILL_OPS_HPP_

#include <span>
#include <stdexcept>
#include <vector>

#include "emdistill/tensor.hpp"

namespace emdistill {

/// Raised for invalid scalar hyper-parameters such as a non-positive
/// temperature.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Element-wise arithmetic. Either operand of add/sub/mul may be a
// single-element tensor, which is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[m x n] + bias[n], bias repeated on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean of squared differences over all elements.
Tensor mse(const Tensor& a, const Tensor& b);
// sum_k weights[k] * terms[k] for scalar terms and constant weights.
Tensor weighted_sum(std::span<const Tensor> terms,
                    std::span<const double> weights);

// Last-axis softmax of x / temperature.
Tensor softmax_rows(const Tensor& x, double temperature = 1.0);
// Last-axis log-softmax of x / temperature, max-shifted.
Tensor log_softmax_rows(const Tensor& x, double temperature = 1.0);

// Per-row normalization over the last axis followed by gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-12);
// Exact (erf) GELU.
Tensor gelu(const Tensor& x);

// Rows of table[V x d] selected by ids -> [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Structural ops used by multi-head attention and pooling.
Tensor slice_cols(const Tensor& x, Index start, Index count);
Tensor concat_cols(std::span<const Tensor> parts);
// k tensors of identical shape S -> [k, S...].
Tensor stack(std::span<const Tensor> parts);
// Row r of a matrix as a rank-1 tensor.
Tensor row(const Tensor& x, Index r);

}  // namespace emdistill

#endif  // EMDISTILL_OPS_HPP_
