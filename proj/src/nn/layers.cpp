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

#include "latscale/nn/layers.hpp"

#include <cmath>

#include "latscale/error.hpp"

namespace latscale::nn {

int ParamStore::add(std::string name, Matrix init) {
  if (index_.contains(name)) {
    throw Error(ErrorCode::kInvalidArgument, "parameter " + name + " registered twice");
  }
  const auto rows = init.rows();
  const auto cols = init.cols();
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(init), Matrix::Zero(rows, cols),
                     Matrix::Zero(rows, cols)});
  return static_cast<int>(params_.size() - 1);
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::vector<Matrix> ParamStore::zero_grads() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return out;
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json doc;
  doc["format"] = "latscale-params";
  doc["version"] = 1;
  doc["params"] = nlohmann::json::array();
  for (const auto& p : params_) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(p.value.size()));
    for (Index r = 0; r < p.value.rows(); ++r) {
      for (Index c = 0; c < p.value.cols(); ++c) values.push_back(p.value(r, c));
    }
    doc["params"].push_back(
        {{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"values", values}});
  }
  return doc;
}

void ParamStore::load_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string()) != "latscale-params" || doc.value("version", 0) != 1) {
    throw Error(ErrorCode::kCheckpointMismatch, "unsupported parameter checkpoint format");
  }
  const auto& list = doc.at("params");
  if (list.size() != params_.size()) {
    throw Error(ErrorCode::kCheckpointMismatch, "checkpoint parameter count differs from model");
  }
  for (const auto& item : list) {
    auto name = item.at("name").get<std::string>();
    auto idx = find(name);
    if (!idx) throw Error(ErrorCode::kCheckpointMismatch, "unexpected parameter " + name);
    auto& p = params_[*idx];
    auto shape = item.at("shape").get<std::vector<Index>>();
    auto values = item.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols() ||
        static_cast<Index>(values.size()) != p.value.size()) {
      throw Error(ErrorCode::kCheckpointMismatch, "shape mismatch for parameter " + name);
    }
    std::size_t i = 0;
    for (Index r = 0; r < p.value.rows(); ++r) {
      for (Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = values[i++];
    }
  }
}

Context::Context(Tape& tape, const ParamStore& params, std::vector<Matrix>* grads,
                 std::mt19937_64* rng, bool training)
    : tape_(tape),
      params_(params),
      grads_(grads),
      rng_(rng),
      training_(training),
      bound_(params.size()) {}

std::mt19937_64& Context::rng() {
  if (rng_ == nullptr) throw Error(ErrorCode::kInvalidArgument, "context has no dropout stream");
  return *rng_;
}

Var Context::param(int index) {
  auto i = static_cast<std::size_t>(index);
  if (!bound_[i].valid()) {
    Matrix* sink = grads_ != nullptr ? &(*grads_)[i] : nullptr;
    bound_[i] = tape_.bind(params_[i].value, sink);
  }
  return bound_[i];
}

Matrix glorot(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

Dense Dense::make(ParamStore& store, const std::string& name, Index in, Index out,
                  std::mt19937_64& rng, bool with_bias) {
  Dense d;
  d.in = in;
  d.out = out;
  d.weight = store.add(name + ".weight", glorot(in, out, rng));
  if (with_bias) d.bias = store.add(name + ".bias", Matrix::Zero(1, out));
  return d;
}

Var Dense::operator()(Context& ctx, Var x) const {
  if (x.cols() != in) {
    throw Error(ErrorCode::kShapeMismatch, "dense layer expects " + std::to_string(in) +
                                               " inputs, got " + std::to_string(x.cols()));
  }
  Var y = matmul(x, ctx.param(weight));
  if (bias >= 0) y = add_row(y, ctx.param(bias));
  return y;
}

GatedLinearUnit GatedLinearUnit::make(ParamStore& store, const std::string& name, Index in,
                                      Index out, std::mt19937_64& rng) {
  return {Dense::make(store, name + ".gate", in, out, rng),
          Dense::make(store, name + ".value", in, out, rng)};
}

Var GatedLinearUnit::operator()(Context& ctx, Var a) const {
  return mul(sigmoid(gate(ctx, a)), value(ctx, a));
}

LayerNorm LayerNorm::make(ParamStore& store, const std::string& name, Index size) {
  LayerNorm n;
  n.size = size;
  n.gamma = store.add(name + ".gamma", Matrix::Ones(1, size));
  n.beta = store.add(name + ".beta", Matrix::Zero(1, size));
  return n;
}

Var LayerNorm::operator()(Context& ctx, Var x) const {
  return layer_norm(x, ctx.param(gamma), ctx.param(beta));
}

GateAddNorm GateAddNorm::make(ParamStore& store, const std::string& name, Index in, Index out,
                              double dropout, std::mt19937_64& rng) {
  return {GatedLinearUnit::make(store, name + ".glu", in, out, rng),
          LayerNorm::make(store, name + ".norm", out), dropout};
}

Var GateAddNorm::operator()(Context& ctx, Var x, Var skip) const {
  if (ctx.training() && dropout > 0.0) x = nn::dropout(x, dropout, ctx.rng(), true);
  return norm(ctx, add(skip, glu(ctx, x)));
}

GatedResidualNetwork GatedResidualNetwork::make(ParamStore& store, const std::string& name,
                                                Index in, Index hidden, Index out,
                                                std::mt19937_64& rng, double dropout,
                                                Index context) {
  GatedResidualNetwork g;
  g.input_layer = Dense::make(store, name + ".fc_input", in, hidden, rng);
  if (context > 0) {
    g.context_layer = Dense::make(store, name + ".fc_context", context, hidden, rng, false);
  }
  g.hidden_layer = Dense::make(store, name + ".fc_hidden", hidden, hidden, rng);
  g.glu = GatedLinearUnit::make(store, name + ".glu", hidden, out, rng);
  g.norm = LayerNorm::make(store, name + ".norm", out);
  if (in != out) g.skip = Dense::make(store, name + ".skip", in, out, rng);
  g.dropout = dropout;
  return g;
}

Var GatedResidualNetwork::operator()(Context& ctx, Var a, std::optional<Var> context) const {
  Var pre = input_layer(ctx, a);
  if (context_layer) {
    if (!context) throw Error(ErrorCode::kShapeMismatch, "GRN expects a context input");
    Var c = (*context_layer)(ctx, *context);
    if (c.rows() == 1 && pre.rows() != 1) {
      pre = add_row(pre, c);
    } else {
      pre = add(pre, c);
    }
  }
  Var eta1 = hidden_layer(ctx, elu(pre));
  if (ctx.training() && dropout > 0.0) eta1 = nn::dropout(eta1, dropout, ctx.rng(), true);
  Var residual = skip ? (*skip)(ctx, a) : a;
  return norm(ctx, add(residual, glu(ctx, eta1)));
}

LstmCell LstmCell::make(ParamStore& store, const std::string& name, Index in, Index hidden,
                        std::mt19937_64& rng) {
  LstmCell cell;
  cell.in = in;
  cell.hidden = hidden;
  cell.w = store.add(name + ".w_input", glorot(in, 4 * hidden, rng));
  cell.u = store.add(name + ".w_hidden", glorot(hidden, 4 * hidden, rng));
  cell.b = store.add(name + ".bias", Matrix::Zero(1, 4 * hidden));
  return cell;
}

LstmCell::State LstmCell::step(Context& ctx, Var x, Var h, Var c) const {
  if (x.cols() != in || h.cols() != hidden || c.cols() != hidden) {
    throw Error(ErrorCode::kShapeMismatch, "lstm step: input or state width differs");
  }
  Var z = add_row(add(matmul(x, ctx.param(w)), matmul(h, ctx.param(u))), ctx.param(b));
  Var i = sigmoid(slice_cols(z, 0, hidden));
  Var f = sigmoid(slice_cols(z, hidden, hidden));
  Var g = nn::tanh(slice_cols(z, 2 * hidden, hidden));
  Var o = sigmoid(slice_cols(z, 3 * hidden, hidden));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, nn::tanh(c_next));
  return {h_next, c_next};
}

Var LstmCell::sequence(Context& ctx, Var x, Var h0, Var c0) const {
  if (x.cols() != in || h0.cols() != hidden || c0.cols() != hidden || h0.rows() != 1 ||
      c0.rows() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "lstm sequence: input or state shape differs");
  }
  Var wv = ctx.param(w);
  Var uv = ctx.param(u);
  Var bv = ctx.param(b);
  Tape& tape = ctx.tape();
  const Index steps = x.rows();
  const Index hs = hidden;
  const Matrix& uw = uv.value();

  // gates(t) holds activated i, f, g, o; cells(t) holds c_t (row 0 is c_0).
  Matrix pre = (x.value() * wv.value()).rowwise() + bv.value().row(0);
  Matrix gates(steps, 4 * hs);
  Matrix cells(steps + 1, hs);
  Matrix hidden_states(steps + 1, hs);
  cells.row(0) = c0.value().row(0);
  hidden_states.row(0) = h0.value().row(0);
  for (Index t = 0; t < steps; ++t) {
    Eigen::RowVectorXd z = pre.row(t) + hidden_states.row(t) * uw;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (Index j = 0; j < hs; ++j) {
      gates(t, j) = sig(z(j));
      gates(t, hs + j) = sig(z(hs + j));
      gates(t, 2 * hs + j) = std::tanh(z(2 * hs + j));
      gates(t, 3 * hs + j) = sig(z(3 * hs + j));
      cells(t + 1, j) = gates(t, hs + j) * cells(t, j) + gates(t, j) * gates(t, 2 * hs + j);
      hidden_states(t + 1, j) = gates(t, 3 * hs + j) * std::tanh(cells(t + 1, j));
    }
  }
  Matrix out(steps + 1, hs);
  out.topRows(steps) = hidden_states.bottomRows(steps);
  out.row(steps) = cells.row(steps);

  const bool rg = tape.requires_grad(x) || tape.requires_grad(h0) || tape.requires_grad(c0) ||
                  tape.requires_grad(wv) || tape.requires_grad(uv) || tape.requires_grad(bv);
  return tape.push(
      std::move(out), rg,
      [x, h0, c0, wv, uv, bv, gates = std::move(gates), cells = std::move(cells),
       hidden_states = std::move(hidden_states), steps, hs](Tape& t, const Matrix& g,
                                                            const Matrix&) {
        const Matrix& uw = t.value(uv);
        Matrix dpre(steps, 4 * hs);
        Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(hs);
        Eigen::RowVectorXd dc_next = g.row(steps);
        for (Index s = steps - 1; s >= 0; --s) {
          Eigen::RowVectorXd dh = g.row(s) + dh_next;
          for (Index j = 0; j < hs; ++j) {
            const double i = gates(s, j);
            const double f = gates(s, hs + j);
            const double cand = gates(s, 2 * hs + j);
            const double o = gates(s, 3 * hs + j);
            const double tc = std::tanh(cells(s + 1, j));
            const double dc = dc_next(j) + dh(j) * o * (1.0 - tc * tc);
            dpre(s, j) = dc * cand * i * (1.0 - i);
            dpre(s, hs + j) = dc * cells(s, j) * f * (1.0 - f);
            dpre(s, 2 * hs + j) = dc * i * (1.0 - cand * cand);
            dpre(s, 3 * hs + j) = dh(j) * tc * o * (1.0 - o);
            dc_next(j) = dc * f;
          }
          dh_next = dpre.row(s) * uw.transpose();
        }
        if (t.requires_grad(x)) t.accumulate(x, dpre * t.value(wv).transpose());
        if (t.requires_grad(wv)) t.accumulate(wv, t.value(x).transpose() * dpre);
        if (t.requires_grad(uv)) {
          t.accumulate(uv, hidden_states.topRows(steps).transpose() * dpre);
        }
        if (t.requires_grad(bv)) t.accumulate(bv, dpre.colwise().sum());
        if (t.requires_grad(h0)) t.accumulate(h0, dh_next);
        if (t.requires_grad(c0)) t.accumulate(c0, dc_next);
      });
}

InterpretableAttention InterpretableAttention::make(ParamStore& store, const std::string& name,
                                                    Index model_dim, Index heads,
                                                    std::mt19937_64& rng) {
  if (heads < 1 || model_dim % heads != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "attention heads must be >= 1 and divide the model width");
  }
  InterpretableAttention a;
  a.heads = heads;
  a.head_dim = model_dim / heads;
  for (Index h = 0; h < heads; ++h) {
    a.query.push_back(
        Dense::make(store, name + ".query" + std::to_string(h), model_dim, a.head_dim, rng));
    a.key.push_back(
        Dense::make(store, name + ".key" + std::to_string(h), model_dim, a.head_dim, rng));
  }
  a.value = Dense::make(store, name + ".value", model_dim, a.head_dim, rng);
  a.output = Dense::make(store, name + ".output", a.head_dim, model_dim, rng);
  return a;
}

InterpretableAttention::Result InterpretableAttention::operator()(Context& ctx, Var q, Var k,
                                                                  Var v,
                                                                  const Mask& mask) const {
  if (k.rows() != v.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "attention keys and values differ in length");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var shared = value(ctx, v);
  Result r;
  for (Index h = 0; h < heads; ++h) {
    Var qh = query[static_cast<std::size_t>(h)](ctx, q);
    Var kh = key[static_cast<std::size_t>(h)](ctx, k);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    r.head_weights.push_back(softmax_rows(scores, mask));
  }
  r.weights = r.head_weights.front();
  for (std::size_t h = 1; h < r.head_weights.size(); ++h) {
    r.weights = add(r.weights, r.head_weights[h]);
  }
  if (heads > 1) r.weights = scale(r.weights, 1.0 / static_cast<double>(heads));
  r.output = output(ctx, matmul(r.weights, shared));
  return r;
}

void adam_step(ParamStore& store, const std::vector<Matrix>& grads, const AdamOptions& o,
               long step) {
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    const auto& g = grads[i];
    if (g.size() == 0) continue;
    p.adam_m = o.beta1 * p.adam_m + (1.0 - o.beta1) * g;
    p.adam_v = o.beta2 * p.adam_v + (1.0 - o.beta2) * g.cwiseProduct(g);
    p.value.array() -= o.learning_rate * (p.adam_m.array() / c1) /
                       ((p.adam_v.array() / c2).sqrt() + o.epsilon);
  }
}

}  // namespace latscale::nn
