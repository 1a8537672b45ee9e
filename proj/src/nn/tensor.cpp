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

#include "latscale/nn/tensor.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "latscale/error.hpp"

namespace latscale::nn {

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::bind(const Matrix& value, Matrix* sink) {
  auto v = push(value, sink != nullptr, nullptr);
  nodes_.back().sink = sink;
  return v;
}

Var Tape::push(Matrix value, bool requires_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward), nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "backward() without a seed needs a 1x1 output");
  }
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
  accumulate(out, seed);
  for (auto i = static_cast<std::ptrdiff_t>(out.id()); i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, node.grad, node.value);
    if (node.sink != nullptr) {
      if (node.sink->size() == 0) {
        *node.sink = node.grad;
      } else {
        *node.sink += node.grad;
      }
    }
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

bool any_grad(Var a) { return a.tape()->requires_grad(a); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

}  // namespace

Mask causal_mask(Index queries, Index keys) {
  Mask m(queries, keys);
  const Index offset = keys - queries;
  for (Index i = 0; i < queries; ++i) {
    for (Index j = 0; j < keys; ++j) m(i, j) = j <= offset + i;
  }
  return m;
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape& t = *a.tape();
  return t.push(a.value() * b.value(), any_grad(a, b), [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  return t.push(a.value().transpose(), any_grad(a),
                [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g.transpose()); });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  Tape& t = *a.tape();
  return t.push(a.value() + b.value(), any_grad(a, b), [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shapes differ");
  Tape& t = *a.tape();
  return t.push(a.value() - b.value(), any_grad(a, b), [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shapes differ");
  Tape& t = *a.tape();
  return t.push(a.value().cwiseProduct(b.value()), any_grad(a, b),
                [a, b](Tape& t, const Matrix& g, const Matrix&) {
                  if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
                  if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
                });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.push(a.value() * s, any_grad(a),
                [a, s](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * s); });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row shape differs");
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), any_grad(a, row), [a, row](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var scale_rows(Var a, Var col) {
  require(col.cols() == 1 && col.rows() == a.rows(), "scale_rows: column shape differs");
  Tape& t = *a.tape();
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return t.push(std::move(out), any_grad(a, col), [a, col](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a)) {
      Matrix ga = g.array().colwise() * t.value(col).col(0).array();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(col)) {
      t.accumulate(col, g.cwiseProduct(t.value(a)).rowwise().sum());
    }
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return t.push(std::move(out), any_grad(a), [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().array().tanh().matrix();
  return t.push(std::move(out), any_grad(a), [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var elu(Var a) {
  Tape& t = *a.tape();
  const auto& x = a.value().array();
  Matrix out = (x > 0.0).select(x, x.exp() - 1.0).matrix();
  return t.push(std::move(out), any_grad(a), [a](Tape& t, const Matrix& g, const Matrix&) {
    const auto& x = t.value(a).array();
    t.accumulate(a, (g.array() * (x > 0.0).select(Eigen::ArrayXXd::Ones(x.rows(), x.cols()),
                                                   x.exp()))
                        .matrix());
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Index n = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
          "layer_norm: affine parameters must be 1 x features");
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  Eigen::VectorXd inv_sigma =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps)
          .sqrt()
          .inverse()
          .matrix();
  Matrix xhat = centered.array().colwise() * inv_sigma.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  const bool rg = any_grad(x) || any_grad(gamma) || any_grad(beta);
  return t.push(std::move(out), rg,
                [x, gamma, beta, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Tape& t, const Matrix& g, const Matrix&) {
                  if (t.requires_grad(gamma)) {
                    t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                  }
                  if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                  if (t.requires_grad(x)) {
                    Matrix dxhat = g.array().rowwise() * t.value(gamma).row(0).array();
                    Eigen::VectorXd m1 = dxhat.rowwise().mean();
                    Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                    Matrix dx = dxhat.colwise() - m1;
                    dx -= (xhat.array().colwise() * m2.array()).matrix();
                    dx = dx.array().colwise() * inv_sigma.array();
                    t.accumulate(x, dx);
                  }
                });
}

namespace {

Var softmax_impl(Var a, const Mask* allowed) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < x.cols(); ++j) {
      if (allowed == nullptr || (*allowed)(i, j)) hi = std::max(hi, x(i, j));
    }
    double total = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (allowed == nullptr || (*allowed)(i, j)) {
        out(i, j) = std::exp(x(i, j) - hi);
        total += out(i, j);
      }
    }
    if (total > 0.0) out.row(i) /= total;
  }
  return t.push(std::move(out), any_grad(a), [a](Tape& t, const Matrix& g, const Matrix& y) {
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = y.cwiseProduct(g.colwise() - dot);
    t.accumulate(a, dx);
  });
}

}  // namespace

Var softmax_rows(Var a) { return softmax_impl(a, nullptr); }

Var softmax_rows(Var a, const Mask& allowed) {
  require(allowed.rows() == a.rows() && allowed.cols() == a.cols(),
          "softmax_rows: mask shape differs");
  for (Index i = 0; i < allowed.rows(); ++i) {
    require(allowed.row(i).any(), "softmax_rows: a row has no allowed position");
  }
  return softmax_impl(a, &allowed);
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  Tape& t = *parts[0].tape();
  const Index rows = parts[0].rows();
  Index cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
    rg = rg || any_grad(p);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> list(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [list = std::move(list)](Tape& t, const Matrix& g, const Matrix&) {
    Index at = 0;
    for (const auto& p : list) {
      const Index c = t.value(p).cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(at, c));
      at += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  Tape& t = *parts[0].tape();
  const Index cols = parts[0].cols();
  Index rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
    rg = rg || any_grad(p);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> list(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [list = std::move(list)](Tape& t, const Matrix& g, const Matrix&) {
    Index at = 0;
    for (const auto& p : list) {
      const Index r = t.value(p).rows();
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(at, r));
      at += r;
    }
  });
}

Var slice_cols(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Tape& t = *a.tape();
  return t.push(a.value().middleCols(start, count), any_grad(a),
                [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
                  Matrix full = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
                  full.middleCols(start, count) = g;
                  t.accumulate(a, full);
                });
}

Var slice_rows(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Tape& t = *a.tape();
  return t.push(a.value().middleRows(start, count), any_grad(a),
                [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
                  Matrix full = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
                  full.middleRows(start, count) = g;
                  t.accumulate(a, full);
                });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), any_grad(a), [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var weighted_sum(Var a, const Matrix& weights) {
  require(weights.rows() == a.rows() && weights.cols() == a.cols(),
          "weighted_sum: shapes differ");
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return t.push(std::move(out), any_grad(a),
                [a, weights](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, weights * g(0, 0)); });
}

Var dropout(Var a, double rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  Tape& t = *a.tape();
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  const double inv = 1.0 / (1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
  Matrix out = a.value().cwiseProduct(mask);
  return t.push(std::move(out), any_grad(a), [a, mask = std::move(mask)](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

double quantile_loss(double y, double yhat, double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "quantile must lie in (0, 1)");
  }
  const double e = y - yhat;
  return std::max(q * e, (q - 1.0) * e);
}

Var pinball_loss(Var predictions, const Matrix& target, std::span<const double> quantiles) {
  require(target.cols() == 1 && target.rows() == predictions.rows(),
          "pinball_loss: target must be rows x 1");
  require(static_cast<Index>(quantiles.size()) == predictions.cols(),
          "pinball_loss: one prediction column per quantile");
  Tape& t = *predictions.tape();
  const Matrix& p = predictions.value();
  const double inv_rows = 1.0 / static_cast<double>(p.rows());
  Matrix grad(p.rows(), p.cols());
  double total = 0.0;
  for (Index c = 0; c < p.cols(); ++c) {
    const double q = quantiles[static_cast<std::size_t>(c)];
    for (Index r = 0; r < p.rows(); ++r) {
      const double e = target(r, 0) - p(r, c);
      total += quantile_loss(target(r, 0), p(r, c), q);
      grad(r, c) = (e > 0.0 ? -q : (e < 0.0 ? 1.0 - q : 0.0)) * inv_rows;
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total * inv_rows;
  return t.push(std::move(out), any_grad(predictions),
                [predictions, grad = std::move(grad)](Tape& t, const Matrix& g, const Matrix&) {
                  t.accumulate(predictions, grad * g(0, 0));
                });
}

}  // namespace latscale::nn
