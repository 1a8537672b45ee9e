// Copyright 2026 The latscale Authors
//
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

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace latscale::nn {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// A dense 2-D array with an optional gradient of the same shape.
struct Tensor {
  Matrix value;
  Matrix grad;

  Tensor() = default;
  explicit Tensor(Matrix v) : value(std::move(v)) {}

  Index rows() const { return value.rows(); }
  Index cols() const { return value.cols(); }
  void zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records operations in execution order and replays their adjoints in
// reverse. A backward function receives the node's output gradient and
// value and accumulates into its parents via Tape::accumulate.
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf whose gradient is read back with grad() after backward().
  Var input(Matrix value);
  // Leaf whose gradient is added into *sink after backward().
  Var bind(const Matrix& value, Matrix* sink);

  // Adds a node. `requires_grad` should be true when any parent requires it.
  Var push(Matrix value, bool requires_grad, BackwardFn backward);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].value; }
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].grad; }
  bool requires_grad(Var v) const {
    return nodes_[static_cast<std::size_t>(v.id())].requires_grad;
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[static_cast<std::size_t>(v.id())];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  // Back-propagates from a 1x1 node.
  void backward(Var loss);
  // Back-propagates from any node with an explicit seed gradient.
  void backward(Var out, const Matrix& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Matrix* sink = nullptr;
  };

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Boolean mask; true marks an allowed position.
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Query i (of `queries`) sits at absolute position keys - queries + i and may
// attend to keys at positions <= its own.
Mask causal_mask(Index queries, Index keys);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_row(Var a, Var row);      // broadcasts a 1 x c row over a
Var scale_rows(Var a, Var col);   // a(i, j) * col(i, 0)
Var sigmoid(Var a);
Var tanh(Var a);
Var elu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var a);
Var softmax_rows(Var a, const Mask& allowed);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Index start, Index count);
Var slice_rows(Var a, Index start, Index count);
Var sum(Var a);
Var mean(Var a);
Var weighted_sum(Var a, const Matrix& weights);  // sum(a .* weights)
// Inverted dropout; identity when `training` is false or rate is 0.
Var dropout(Var a, double rate, std::mt19937_64& rng, bool training);

// Pinball loss averaged over rows (horizon steps) and summed over quantile
// columns. `target` is rows x 1.
Var pinball_loss(Var predictions, const Matrix& target, std::span<const double> quantiles);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// Scalar pinball loss max(q * e, (q - 1) * e) with e = y - yhat.
double quantile_loss(double y, double yhat, double q);

}  // namespace latscale::nn
