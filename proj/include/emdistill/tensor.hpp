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

#ifndef EMDISTILL_TENSOR_HPP_
#define EMDISTILL_TENSOR_HPP_

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace emdistill {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Vector = Eigen::VectorXd;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
Index numel(const Shape& shape);

namespace detail {

// One vertex of the computation graph. Leaves have no backward function.
struct Node {
  Shape shape;
  Vector value;
  Vector grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Eigen::Ref<const Vector>& g);
};

}  // namespace detail

/// Dense row-major array of doubles with optional reverse-mode gradient
/// tracking. Copies share the underlying storage, like a handle.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Vector data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(const Eigen::Ref<const RowMatrix>& m,
                       bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Index dim(Index axis) const;
  Index ndim() const { return static_cast<Index>(shape().size()); }
  Index size() const { return node().value.size(); }

  const Vector& data() const { return node().value; }
  // Direct write access for optimizers and initializers. Only meaningful on
  // leaves; mutating an interior node does not re-run its consumers.
  Vector& mutable_data() { return node().value; }

  // Row-major 2-D view; rank-1 tensors are viewed as a single row.
  ConstMatrixMap matrix() const;
  double item() const;
  double operator[](Index flat) const { return node().value[flat]; }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value);
  bool has_grad() const { return node().grad.size() == size(); }
  // Zero-filled when no gradient has been accumulated.
  Vector grad() const;
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires a
  // gradient, then releases the interior of the graph.
  void backward() const;

  // Graph construction hook used by the op implementations.
  static Tensor make_result(Shape shape, Vector value,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;
};

/// A named trainable tensor.
struct Parameter {
  std::string name;
  Tensor tensor;
};

}  // namespace emdistill

#endif  // EMDISTILL_TENSOR_HPP_
