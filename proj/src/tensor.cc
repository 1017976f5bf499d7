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

#include "emdistill/tensor.hpp"

#include <unordered_set>
#include <utility>

namespace emdistill {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

namespace detail {

void Node::accumulate(const Eigen::Ref<const Vector>& g) {
  if (grad.size() != value.size()) grad = Vector::Zero(value.size());
  grad += g;
}

}  // namespace detail

Tensor::Tensor(Shape shape, Vector data, bool requires_grad) {
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in " + to_string(shape));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("shape " + to_string(shape) + " holds " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Vector::Zero(n), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Vector::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, Vector::Constant(1, value), requires_grad);
}

Tensor Tensor::matrix(const Eigen::Ref<const RowMatrix>& m,
                      bool requires_grad) {
  Vector data(m.size());
  MatrixMap(data.data(), m.rows(), m.cols()) = m;
  return Tensor({m.rows(), m.cols()}, std::move(data), requires_grad);
}

Tensor Tensor::matrix(
    std::initializer_list<std::initializer_list<double>> rows,
    bool requires_grad) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
  Vector data(r * c);
  Index k = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) {
      throw DimensionError("ragged matrix literal");
    }
    for (double v : row) data[k++] = v;
  }
  return Tensor({r, c}, std::move(data), requires_grad);
}

detail::Node& Tensor::node() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

Index Tensor::dim(Index axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<Index>(s.size());
  if (axis < 0 || axis >= static_cast<Index>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         to_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

ConstMatrixMap Tensor::matrix() const {
  const Shape& s = shape();
  if (s.size() == 2) return ConstMatrixMap(data().data(), s[0], s[1]);
  if (s.size() == 1) return ConstMatrixMap(data().data(), 1, s[0]);
  throw DimensionError("matrix view requires rank 1 or 2, got " + to_string(s));
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(shape()));
  }
  return data()[0];
}

void Tensor::set_requires_grad(bool value) { node().requires_grad = value; }

Vector Tensor::grad() const {
  if (has_grad()) return node().grad;
  return Vector::Zero(size());
}

void Tensor::zero_grad() { node().grad.resize(0); }

Tensor Tensor::make_result(Shape shape, Vector value,
                           std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (const Tensor& in : inputs) node->parents.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  detail::Node& root = node();
  if (root.value.size() != 1 || !root.shape.empty()) {
    throw std::logic_error("backward() requires a scalar loss, got shape " +
                           to_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.accumulate(Vector::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

}  // namespace emdistill
