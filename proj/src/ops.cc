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

#include "emdistill/ops.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace emdistill {
namespace {

using detail::Node;

void require_rank(const Tensor& t, Index rank, const char* op) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_positive_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ParameterError("temperature must be positive and finite, got " +
                         std::to_string(t));
  }
}

Node& parent(Node& self, std::size_t k) { return *self.parents[k]; }

void push(Node& self, std::size_t k, const Eigen::Ref<const Vector>& g) {
  Node& p = parent(self, k);
  if (p.requires_grad) p.accumulate(g);
}

// Shape of an element-wise binary result with single-element broadcast.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.size() == 1) return b.shape();
  if (b.size() == 1) return a.shape();
  throw DimensionError(std::string(op) + ": shape mismatch " +
                       to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Reduces an upstream gradient to the operand's size (sums when the operand
// was broadcast).
Vector reduce_to(const Vector& g, Index operand_size) {
  if (operand_size == g.size()) return g;
  return Vector::Constant(1, g.sum());
}

Vector expand(const Vector& v, Index n) {
  return v.size() == n ? v : Vector::Constant(n, v[0]);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vector out(m * n);
  MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return Tensor::make_result({m, n}, std::move(out), {a, b},
                             [m, k, n](Node& self) {
    ConstMatrixMap g(self.grad.data(), m, n);
    ConstMatrixMap av(parent(self, 0).value.data(), m, k);
    ConstMatrixMap bv(parent(self, 1).value.data(), k, n);
    if (parent(self, 0).requires_grad) {
      Vector ga(m * k);
      MatrixMap(ga.data(), m, k).noalias() = g * bv.transpose();
      push(self, 0, ga);
    }
    if (parent(self, 1).requires_grad) {
      Vector gb(k * n);
      MatrixMap(gb.data(), k, n).noalias() = av.transpose() * g;
      push(self, 1, gb);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const Index m = a.dim(0), n = a.dim(1);
  Vector out(m * n);
  MatrixMap(out.data(), n, m) = a.matrix().transpose();
  return Tensor::make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    Vector g(m * n);
    MatrixMap(g.data(), m, n) =
        ConstMatrixMap(self.grad.data(), n, m).transpose();
    push(self, 0, g);
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) +
                         " as " + to_string(shape));
  }
  return Tensor::make_result(std::move(shape), a.data(), {a},
                             [](Node& self) { push(self, 0, self.grad); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape(a, b, "add");
  const Index n = numel(shape);
  Vector out = expand(a.data(), n) + expand(b.data(), n);
  const Index na = a.size(), nb = b.size();
  return Tensor::make_result(std::move(shape), std::move(out), {a, b},
                             [na, nb](Node& self) {
    push(self, 0, reduce_to(self.grad, na));
    push(self, 1, reduce_to(self.grad, nb));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape(a, b, "sub");
  const Index n = numel(shape);
  Vector out = expand(a.data(), n) - expand(b.data(), n);
  const Index na = a.size(), nb = b.size();
  return Tensor::make_result(std::move(shape), std::move(out), {a, b},
                             [na, nb](Node& self) {
    push(self, 0, reduce_to(self.grad, na));
    push(self, 1, reduce_to(-self.grad, nb));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape(a, b, "mul");
  const Index n = numel(shape);
  Vector out = expand(a.data(), n).cwiseProduct(expand(b.data(), n));
  const Index na = a.size(), nb = b.size();
  return Tensor::make_result(std::move(shape), std::move(out), {a, b},
                             [n, na, nb](Node& self) {
    const Vector av = expand(parent(self, 0).value, n);
    const Vector bv = expand(parent(self, 1).value, n);
    if (parent(self, 0).requires_grad) {
      push(self, 0, reduce_to(self.grad.cwiseProduct(bv), na));
    }
    if (parent(self, 1).requires_grad) {
      push(self, 1, reduce_to(self.grad.cwiseProduct(av), nb));
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return Tensor::make_result(a.shape(), a.data() * factor, {a},
                             [factor](Node& self) {
    push(self, 0, self.grad * factor);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const Index m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) +
                         " does not match " + to_string(x.shape()));
  }
  Vector out(m * n);
  MatrixMap(out.data(), m, n) =
      x.matrix().rowwise() + bias.data().transpose();
  return Tensor::make_result({m, n}, std::move(out), {x, bias},
                             [m, n](Node& self) {
    push(self, 0, self.grad);
    if (parent(self, 1).requires_grad) {
      Vector gb =
          ConstMatrixMap(self.grad.data(), m, n).colwise().sum().transpose();
      push(self, 1, gb);
    }
  });
}

Tensor sum(const Tensor& a) {
  const Index n = a.size();
  return Tensor::make_result({}, Vector::Constant(1, a.data().sum()), {a},
                             [n](Node& self) {
    push(self, 0, Vector::Constant(n, self.grad[0]));
  });
}

Tensor mean(const Tensor& a) {
  const Index n = a.size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return Tensor::make_result({}, Vector::Constant(1, a.data().mean()), {a},
                             [n](Node& self) {
    push(self, 0, Vector::Constant(n, self.grad[0] / static_cast<double>(n)));
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const Index n = a.size();
  if (n == 0) throw DimensionError("mse of empty tensors");
  Vector diff = a.data() - b.data();
  const double value = diff.squaredNorm() / static_cast<double>(n);
  return Tensor::make_result({}, Vector::Constant(1, value), {a, b},
                             [diff = std::move(diff), n](Node& self) {
    const Vector g = diff * (2.0 * self.grad[0] / static_cast<double>(n));
    push(self, 0, g);
    if (parent(self, 1).requires_grad) push(self, 1, -g);
  });
}

Tensor weighted_sum(std::span<const Tensor> terms,
                    std::span<const double> weights) {
  if (terms.size() != weights.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(terms.size()) +
                         " terms but " + std::to_string(weights.size()) +
                         " weights");
  }
  double value = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (terms[k].size() != 1) {
      throw DimensionError("weighted_sum: term " + std::to_string(k) +
                           " is not a scalar");
    }
    value += weights[k] * terms[k].item();
  }
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_result(
      {}, Vector::Constant(1, value),
      std::vector<Tensor>(terms.begin(), terms.end()),
      [w = std::move(w)](Node& self) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          push(self, k, Vector::Constant(1, w[k] * self.grad[0]));
        }
      });
}

Tensor softmax_rows(const Tensor& x, double temperature) {
  require_positive_temperature(temperature);
  if (x.ndim() < 1 || x.size() == 0) {
    throw DimensionError("softmax_rows: needs a non-empty last axis, got " +
                         to_string(x.shape()));
  }
  const Index n = x.dim(-1), rows = x.size() / n;
  Vector out(x.size());
  ConstMatrixMap in(x.data().data(), rows, n);
  MatrixMap y(out.data(), rows, n);
  for (Index r = 0; r < rows; ++r) {
    const double shift = in.row(r).maxCoeff();
    y.row(r) = ((in.row(r).array() - shift) / temperature).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Vector saved = out;
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [y = std::move(saved), rows, n, temperature](Node& self) {
        ConstMatrixMap yv(y.data(), rows, n);
        ConstMatrixMap g(self.grad.data(), rows, n);
        Vector gx(rows * n);
        MatrixMap gxm(gx.data(), rows, n);
        for (Index r = 0; r < rows; ++r) {
          const double dot = g.row(r).dot(yv.row(r));
          gxm.row(r) = yv.row(r).array() * (g.row(r).array() - dot) /
                       temperature;
        }
        push(self, 0, gx);
      });
}

Tensor log_softmax_rows(const Tensor& x, double temperature) {
  require_positive_temperature(temperature);
  if (x.ndim() < 1 || x.size() == 0) {
    throw DimensionError("log_softmax_rows: needs a non-empty last axis, got " +
                         to_string(x.shape()));
  }
  const Index n = x.dim(-1), rows = x.size() / n;
  Vector out(x.size());
  ConstMatrixMap in(x.data().data(), rows, n);
  MatrixMap y(out.data(), rows, n);
  for (Index r = 0; r < rows; ++r) {
    const double shift = in.row(r).maxCoeff();
    auto z = ((in.row(r).array() - shift) / temperature).eval();
    y.row(r) = (z - std::log(z.exp().sum())).matrix();
  }
  Vector saved = out;
  return Tensor::make_result(
      x.shape(), std::move(out), {x},
      [y = std::move(saved), rows, n, temperature](Node& self) {
        ConstMatrixMap yv(y.data(), rows, n);
        ConstMatrixMap g(self.grad.data(), rows, n);
        Vector gx(rows * n);
        MatrixMap gxm(gx.data(), rows, n);
        for (Index r = 0; r < rows; ++r) {
          const double total = g.row(r).sum();
          gxm.row(r) = (g.row(r).array() -
                        yv.row(r).array().exp() * total) /
                       temperature;
        }
        push(self, 0, gx);
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_rank(x, 2, "layer_norm");
  const Index rows = x.dim(0), n = x.dim(1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain/bias must be [" +
                         std::to_string(n) + "], got " +
                         to_string(gain.shape()) + " and " +
                         to_string(bias.shape()));
  }
  Vector normed(rows * n);
  Vector inv_std(rows);
  MatrixMap xhat(normed.data(), rows, n);
  ConstMatrixMap in = x.matrix();
  for (Index r = 0; r < rows; ++r) {
    const double mu = in.row(r).mean();
    const double var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Vector out(rows * n);
  MatrixMap(out.data(), rows, n) =
      (xhat.array().rowwise() * gain.data().transpose().array()).rowwise() +
      bias.data().transpose().array();
  return Tensor::make_result(
      {rows, n}, std::move(out), {x, gain, bias},
      [normed = std::move(normed), inv_std = std::move(inv_std), rows,
       n](Node& self) {
        ConstMatrixMap g(self.grad.data(), rows, n);
        ConstMatrixMap xh(normed.data(), rows, n);
        const Vector& gamma = parent(self, 1).value;
        if (parent(self, 0).requires_grad) {
          Vector gx(rows * n);
          MatrixMap gxm(gx.data(), rows, n);
          for (Index r = 0; r < rows; ++r) {
            const Eigen::ArrayXd dxhat =
                g.row(r).transpose().array() * gamma.array();
            const double m1 = dxhat.mean();
            const double m2 =
                (dxhat * xh.row(r).transpose().array()).mean();
            gxm.row(r) = (inv_std[r] * (dxhat - m1 -
                                        xh.row(r).transpose().array() * m2))
                             .matrix()
                             .transpose();
          }
          push(self, 0, gx);
        }
        if (parent(self, 1).requires_grad) {
          Vector gg = (g.array() * xh.array()).colwise().sum().transpose();
          push(self, 1, gg);
        }
        if (parent(self, 2).requires_grad) {
          Vector gb = g.colwise().sum().transpose();
          push(self, 2, gb);
        }
      });
}

Tensor gelu(const Tensor& x) {
  const Vector& v = x.data();
  Vector out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    out[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * std::numbers::sqrt2 / 2.0));
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    const Vector& in = parent(self, 0).value;
    Vector g(in.size());
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (Index i = 0; i < in.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(in[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * in[i] * in[i]);
      g[i] = self.grad[i] * (cdf + in[i] * pdf);
    }
    push(self, 0, g);
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const Index vocab = table.dim(0), d = table.dim(1);
  const Index l = static_cast<Index>(ids.size());
  std::vector<int> idx(ids.begin(), ids.end());
  Vector out(l * d);
  MatrixMap o(out.data(), l, d);
  ConstMatrixMap t = table.matrix();
  for (Index r = 0; r < l; ++r) {
    if (idx[r] < 0 || idx[r] >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(idx[r]) +
                              " outside [0, " + std::to_string(vocab) + ")");
    }
    o.row(r) = t.row(idx[r]);
  }
  return Tensor::make_result({l, d}, std::move(out), {table},
                             [idx = std::move(idx), vocab, l, d](Node& self) {
    Vector g = Vector::Zero(vocab * d);
    MatrixMap gm(g.data(), vocab, d);
    ConstMatrixMap up(self.grad.data(), l, d);
    for (Index r = 0; r < l; ++r) gm.row(idx[r]) += up.row(r);
    push(self, 0, g);
  });
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  require_rank(x, 2, "slice_cols");
  const Index m = x.dim(0), n = x.dim(1);
  if (start < 0 || count < 0 || start + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) +
                         ", " + std::to_string(start + count) +
                         ") outside " + to_string(x.shape()));
  }
  Vector out(m * count);
  MatrixMap(out.data(), m, count) = x.matrix().middleCols(start, count);
  return Tensor::make_result({m, count}, std::move(out), {x},
                             [m, n, start, count](Node& self) {
    Vector g = Vector::Zero(m * n);
    MatrixMap(g.data(), m, n).middleCols(start, count) =
        ConstMatrixMap(self.grad.data(), m, count);
    push(self, 0, g);
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index m = parts.front().dim(0);
  Index n = 0;
  std::vector<Index> widths;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row count mismatch " +
                           to_string(parts.front().shape()) + " vs " +
                           to_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  Vector out(m * n);
  MatrixMap o(out.data(), m, n);
  Index at = 0;
  for (const Tensor& p : parts) {
    o.middleCols(at, p.dim(1)) = p.matrix();
    at += p.dim(1);
  }
  return Tensor::make_result(
      {m, n}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
      [widths = std::move(widths), m, n](Node& self) {
        ConstMatrixMap g(self.grad.data(), m, n);
        Index at = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (parent(self, k).requires_grad) {
            Vector gk(m * widths[k]);
            MatrixMap(gk.data(), m, widths[k]) = g.middleCols(at, widths[k]);
            push(self, k, gk);
          }
          at += widths[k];
        }
      });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape& inner = parts.front().shape();
  const Index block = numel(inner);
  for (const Tensor& p : parts) require_same_shape(parts.front(), p, "stack");
  Shape shape{static_cast<Index>(parts.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Vector out(block * static_cast<Index>(parts.size()));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.segment(static_cast<Index>(k) * block, block) = parts[k].data();
  }
  return Tensor::make_result(
      std::move(shape), std::move(out),
      std::vector<Tensor>(parts.begin(), parts.end()), [block](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          push(self, k,
               self.grad.segment(static_cast<Index>(k) * block, block));
        }
      });
}

Tensor row(const Tensor& x, Index r) {
  require_rank(x, 2, "row");
  const Index m = x.dim(0), n = x.dim(1);
  if (r < 0 || r >= m) {
    throw DimensionError("row " + std::to_string(r) + " outside " +
                         to_string(x.shape()));
  }
  Vector out = x.matrix().row(r).transpose();
  return Tensor::make_result({n}, std::move(out), {x}, [m, n, r](Node& self) {
    Vector g = Vector::Zero(m * n);
    g.segment(r * n, n) = self.grad;
    push(self, 0, g);
  });
}

}  // namespace emdistill
