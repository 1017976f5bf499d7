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

// Exact transportation-problem solver.
//
// Given nonnegative supplies a (length M), demands b (length N) and a ground
// cost matrix D (M x N), find a flow F minimizing sum_ij f_ij d_ij subject to
//
//   f_ij >= 0,   sum_j f_ij <= a_i,   sum_i f_ij <= b_j,
//   sum_ij f_ij == min(sum a, sum b).
//
// Unbalanced instances are reduced to the balanced problem with a zero-cost
// dummy row or column. The balanced problem is solved with the
// transportation simplex (MODI / u-v method) started from Vogel's
// approximation. Degenerate bases are avoided by perturbing supplies with
// eps * (i + 1) while pivoting; the reported flow is recomputed from the
// final basis with the unperturbed quantities.

#ifndef EMDISTILL_TRANSPORT_HPP_
#define EMDISTILL_TRANSPORT_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace emdistill {

/// Invalid transportation input (negative or non-finite data, empty mass).
class TransportError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
struct TransportProblem {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Vector supplies;  // length M, rows
  Vector demands;   // length N, columns
  Matrix cost;      // M x N

  Eigen::Index rows() const { return supplies.size(); }
  Eigen::Index cols() const { return demands.size(); }
};

template <typename Scalar>
struct FlowMatrix {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Matrix flow;
  Scalar work = 0;
  Scalar total_flow = 0;
};

using TransportProblemd = TransportProblem<double>;
using FlowMatrixd = FlowMatrix<double>;

/// Throws TransportError unless the problem is well formed.
template <typename Scalar>
void validate(const TransportProblem<Scalar>& p) {
  const auto m = p.supplies.size(), n = p.demands.size();
  if (m == 0 || n == 0) throw TransportError("empty supply or demand vector");
  if (p.cost.rows() != m || p.cost.cols() != n) {
    throw TransportError("cost matrix is " + std::to_string(p.cost.rows()) +
                         "x" + std::to_string(p.cost.cols()) + ", expected " +
                         std::to_string(m) + "x" + std::to_string(n));
  }
  auto nonneg = [](Scalar v) { return std::isfinite(v) && v >= Scalar(0); };
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!nonneg(p.supplies[i])) {
      throw TransportError("supply " + std::to_string(i) +
                           " is negative or not finite");
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!nonneg(p.demands[j])) {
      throw TransportError("demand " + std::to_string(j) +
                           " is negative or not finite");
    }
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!nonneg(p.cost(i, j))) {
        throw TransportError("cost (" + std::to_string(i) + ", " +
                             std::to_string(j) +
                             ") is negative or not finite");
      }
    }
  }
  if (!(p.supplies.sum() > Scalar(0)) || !(p.demands.sum() > Scalar(0))) {
    throw TransportError("total supply and total demand must be positive");
  }
}

namespace detail {

// Balanced transportation simplex over an m x n dense cost matrix. Basic
// cells always form a spanning tree of the bipartite row/column graph.
template <typename Scalar>
class TransportationSimplex {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Cell = std::pair<int, int>;

  TransportationSimplex(Matrix cost, Vector supplies, Vector demands)
      : cost_(std::move(cost)),
        supplies_(std::move(supplies)),
        demands_(std::move(demands)),
        m_(static_cast<int>(cost_.rows())),
        n_(static_cast<int>(cost_.cols())) {}

  Matrix run() {
    perturb();
    vogel();
    const Scalar tol =
        Scalar(1e-12) * std::max(Scalar(1), cost_.cwiseAbs().maxCoeff());
    const int max_iterations = 1000 + 100 * m_ * n_;
    for (int it = 0; it < max_iterations; ++it) {
      if (!pivot(tol)) return reconstruct();
    }
    throw std::runtime_error("transportation simplex did not converge");
  }

 private:
  void perturb() {
    const Scalar total = std::max(supplies_.sum(), demands_.sum());
    const Scalar eps = Scalar(1e-12) * std::max(Scalar(1), total);
    a_ = supplies_;
    b_ = demands_;
    Scalar added = 0;
    for (int i = 0; i < m_; ++i) {
      a_[i] += eps * Scalar(i + 1);
      added += eps * Scalar(i + 1);
    }
    b_[n_ - 1] += added;
  }

  // Vogel's approximation. Each step crosses out exactly one line (both on
  // the last step), which yields m + n - 1 basic cells forming a tree.
  void vogel() {
    x_ = Matrix::Zero(m_, n_);
    basic_.assign(static_cast<std::size_t>(m_ * n_), false);
    Vector s = a_, d = b_;
    std::vector<bool> row_live(m_, true), col_live(n_, true);
    int rows_left = m_, cols_left = n_;
    constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();

    // Difference between the two smallest live costs along a line; a line
    // with a single live cell uses that cell's cost.
    auto penalty = [&](int line, bool is_row) {
      Scalar lo = kInf, lo2 = kInf;
      const int len = is_row ? n_ : m_;
      for (int k = 0; k < len; ++k) {
        if (is_row ? !col_live[k] : !row_live[k]) continue;
        const Scalar c = is_row ? cost_(line, k) : cost_(k, line);
        if (c < lo) {
          lo2 = lo;
          lo = c;
        } else if (c < lo2) {
          lo2 = c;
        }
      }
      return lo2 == kInf ? lo : lo2 - lo;
    };

    while (rows_left > 0 && cols_left > 0) {
      Scalar best = -kInf;
      int line = -1;
      bool line_is_row = true;
      for (int i = 0; i < m_; ++i) {
        if (!row_live[i]) continue;
        const Scalar pen = penalty(i, true);
        if (pen > best) {
          best = pen;
          line = i;
          line_is_row = true;
        }
      }
      for (int j = 0; j < n_; ++j) {
        if (!col_live[j]) continue;
        const Scalar pen = penalty(j, false);
        if (pen > best) {
          best = pen;
          line = j;
          line_is_row = false;
        }
      }

      int bi = -1, bj = -1;
      Scalar cmin = kInf;
      if (line_is_row) {
        bi = line;
        for (int j = 0; j < n_; ++j) {
          if (col_live[j] && cost_(bi, j) < cmin) {
            cmin = cost_(bi, j);
            bj = j;
          }
        }
      } else {
        bj = line;
        for (int i = 0; i < m_; ++i) {
          if (row_live[i] && cost_(i, bj) < cmin) {
            cmin = cost_(i, bj);
            bi = i;
          }
        }
      }

      const Scalar q = std::min(s[bi], d[bj]);
      x_(bi, bj) = q;
      basic_[index(bi, bj)] = true;
      s[bi] -= q;
      d[bj] -= q;

      if (rows_left == 1 && cols_left == 1) {
        row_live[bi] = false;
        col_live[bj] = false;
        --rows_left;
        --cols_left;
      } else if (cols_left == 1 || (rows_left > 1 && s[bi] <= d[bj])) {
        row_live[bi] = false;
        --rows_left;
      } else {
        col_live[bj] = false;
        --cols_left;
      }
    }
  }

  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i * n_ + j);
  }

  // Nodes 0..m-1 are rows, m..m+n-1 are columns.
  std::vector<std::vector<Cell>> adjacency() const {
    std::vector<std::vector<Cell>> adj(static_cast<std::size_t>(m_ + n_));
    for (int i = 0; i < m_; ++i) {
      for (int j = 0; j < n_; ++j) {
        if (basic_[index(i, j)]) {
          adj[i].emplace_back(i, j);
          adj[m_ + j].emplace_back(i, j);
        }
      }
    }
    return adj;
  }

  // Potentials with u_0 = 0 and u_i + v_j = c_ij on every basic cell.
  void potentials(const std::vector<std::vector<Cell>>& adj, Vector& u,
                  Vector& v) const {
    u = Vector::Zero(m_);
    v = Vector::Zero(n_);
    std::vector<bool> seen(static_cast<std::size_t>(m_ + n_), false);
    std::vector<int> queue{0};
    seen[0] = true;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const int node = queue[q];
      for (const auto& [i, j] : adj[node]) {
        const int other = node < m_ ? m_ + j : i;
        if (seen[other]) continue;
        seen[other] = true;
        if (node < m_) {
          v[j] = cost_(i, j) - u[i];
        } else {
          u[i] = cost_(i, j) - v[j];
        }
        queue.push_back(other);
      }
    }
  }

  // Cells on the tree path from column node j to row node i.
  std::vector<Cell> tree_path(const std::vector<std::vector<Cell>>& adj,
                              int i, int j) const {
    const int start = m_ + j, goal = i;
    std::vector<int> prev_node(static_cast<std::size_t>(m_ + n_), -1);
    std::vector<Cell> prev_cell(static_cast<std::size_t>(m_ + n_));
    std::vector<int> queue{start};
    prev_node[start] = start;
    for (std::size_t q = 0; q < queue.size() && prev_node[goal] < 0; ++q) {
      const int node = queue[q];
      for (const Cell& c : adj[node]) {
        const int other = node < m_ ? m_ + c.second : c.first;
        if (prev_node[other] >= 0) continue;
        prev_node[other] = node;
        prev_cell[other] = c;
        queue.push_back(other);
      }
    }
    std::vector<Cell> path;
    for (int node = goal; node != start; node = prev_node[node]) {
      path.push_back(prev_cell[node]);
    }
    std::reverse(path.begin(), path.end());
    return path;
  }

  // One MODI iteration; returns false at optimality.
  bool pivot(Scalar tol) {
    const auto adj = adjacency();
    Vector u, v;
    potentials(adj, u, v);

    int ei = -1, ej = -1;
    Scalar most_negative = -tol;
    for (int i = 0; i < m_; ++i) {
      for (int j = 0; j < n_; ++j) {
        if (basic_[index(i, j)]) continue;
        const Scalar reduced = cost_(i, j) - u[i] - v[j];
        if (reduced < most_negative) {
          most_negative = reduced;
          ei = i;
          ej = j;
        }
      }
    }
    if (ei < 0) return false;

    // Cycle: entering cell (+), then alternating (-, +, ...) along the path.
    const std::vector<Cell> path = tree_path(adj, ei, ej);
    Scalar theta = std::numeric_limits<Scalar>::infinity();
    Cell leaving{-1, -1};
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Cell& c = path[k];
      const Scalar val = x_(c.first, c.second);
      if (val < theta || (val == theta && c < leaving)) {
        theta = val;
        leaving = c;
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      const Cell& c = path[k];
      x_(c.first, c.second) += (k % 2 == 0) ? -theta : theta;
    }
    x_(ei, ej) = theta;
    x_(leaving.first, leaving.second) = 0;
    basic_[index(ei, ej)] = true;
    basic_[index(leaving.first, leaving.second)] = false;
    return true;
  }

  // Basic solution of the final tree for the unperturbed supplies/demands,
  // obtained by repeatedly settling a leaf of the tree.
  Matrix reconstruct() const {
    Matrix flow = Matrix::Zero(m_, n_);
    Vector s = supplies_, d = demands_;
    std::vector<std::vector<Cell>> adj = adjacency();
    std::vector<int> degree(static_cast<std::size_t>(m_ + n_));
    for (int k = 0; k < m_ + n_; ++k) degree[k] = static_cast<int>(adj[k].size());
    std::vector<bool> used(static_cast<std::size_t>(m_ * n_), false);
    int remaining = m_ + n_ - 1;
    while (remaining > 0) {
      int leaf = -1;
      for (int k = 0; k < m_ + n_; ++k) {
        if (degree[k] == 1) {
          leaf = k;
          break;
        }
      }
      if (leaf < 0) throw std::logic_error("transport basis is not a tree");
      Cell cell{-1, -1};
      for (const Cell& c : adj[leaf]) {
        if (!used[index(c.first, c.second)]) {
          cell = c;
          break;
        }
      }
      const auto [i, j] = cell;
      const Scalar q = leaf < m_ ? s[i] : d[j];
      flow(i, j) = std::max(q, Scalar(0));
      s[i] -= q;
      d[j] -= q;
      used[index(i, j)] = true;
      --degree[i];
      --degree[m_ + j];
      --remaining;
    }
    return flow;
  }

  Matrix cost_;
  Vector supplies_, demands_;  // unperturbed
  Vector a_, b_;               // perturbed
  int m_, n_;
  Matrix x_;
  std::vector<bool> basic_;
};

}  // namespace detail

/// Optimal flow for the (possibly unbalanced) transportation problem.
/// Deterministic for a fixed input.
template <typename Scalar>
FlowMatrix<Scalar> solve(const TransportProblem<Scalar>& p) {
  using Vector = typename TransportProblem<Scalar>::Vector;
  using Matrix = typename TransportProblem<Scalar>::Matrix;
  validate(p);
  const auto m = p.rows(), n = p.cols();
  const Scalar total_supply = p.supplies.sum();
  const Scalar total_demand = p.demands.sum();

  Matrix cost = p.cost;
  Vector supplies = p.supplies, demands = p.demands;
  if (total_supply > total_demand) {
    cost.conservativeResize(m, n + 1);
    cost.col(n).setZero();
    demands.conservativeResize(n + 1);
    demands[n] = total_supply - total_demand;
  } else if (total_demand > total_supply) {
    cost.conservativeResize(m + 1, n);
    cost.row(m).setZero();
    supplies.conservativeResize(m + 1);
    supplies[m] = total_demand - total_supply;
  }

  detail::TransportationSimplex<Scalar> simplex(std::move(cost),
                                                std::move(supplies),
                                                std::move(demands));
  const Matrix full = simplex.run();

  FlowMatrix<Scalar> out;
  out.flow = full.topLeftCorner(m, n);
  out.work = out.flow.cwiseProduct(p.cost).sum();
  out.total_flow = out.flow.sum();
  return out;
}

/// Work normalized by the total flow.
template <typename Scalar>
Scalar emd(const FlowMatrix<Scalar>& f, const TransportProblem<Scalar>& p) {
  if (f.flow.rows() != p.rows() || f.flow.cols() != p.cols()) {
    throw TransportError("flow does not match the problem dimensions");
  }
  if (!(f.total_flow > Scalar(0))) {
    throw std::domain_error("EMD undefined: total flow is zero");
  }
  return f.work / f.total_flow;
}

}  // namespace emdistill

#endif  // EMDISTILL_TRANSPORT_HPP_
