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

#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "latscale/nn/tensor.hpp"

namespace latscale::nn {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix adam_m;
  Matrix adam_v;
};

// Named trainable tensors in registration order.
class ParamStore {
 public:
  int add(std::string name, Matrix init);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  // Total number of scalar weights.
  std::size_t scalar_count() const;

  // One zero matrix per parameter, shaped like its value.
  std::vector<Matrix> zero_grads() const;

  // Checkpoint document: {"format": "latscale-params", "version": 1,
  // "params": [{"name", "shape": [rows, cols], "values": [...]}]}.
  nlohmann::json to_json() const;
  // Loads values into an already-built store; names and shapes must match.
  void load_json(const nlohmann::json& doc);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Per-forward state: the tape, parameter bindings, gradient sinks, and the
// dropout stream.
class Context {
 public:
  Context(Tape& tape, const ParamStore& params, std::vector<Matrix>* grads = nullptr,
          std::mt19937_64* rng = nullptr, bool training = false);

  Tape& tape() { return tape_; }
  bool training() const { return training_; }
  std::mt19937_64& rng();

  // Parameter i bound on this tape; gradients flow into grads[i] if present.
  Var param(int index);

 private:
  Tape& tape_;
  const ParamStore& params_;
  std::vector<Matrix>* grads_;
  std::mt19937_64* rng_;
  bool training_;
  std::vector<Var> bound_;
};

// Uniform Glorot initialization.
Matrix glorot(Index rows, Index cols, std::mt19937_64& rng);

struct Dense {
  int weight = -1;
  int bias = -1;  // -1 when the layer has no bias
  Index in = 0;
  Index out = 0;

  static Dense make(ParamStore& store, const std::string& name, Index in, Index out,
                    std::mt19937_64& rng, bool with_bias = true);
  Var operator()(Context& ctx, Var x) const;
};

// sigmoid(W_g a + b_g) * (W_v a + b_v)
struct GatedLinearUnit {
  Dense gate;
  Dense value;

  static GatedLinearUnit make(ParamStore& store, const std::string& name, Index in, Index out,
                              std::mt19937_64& rng);
  Var operator()(Context& ctx, Var a) const;
};

struct LayerNorm {
  int gamma = -1;
  int beta = -1;
  Index size = 0;

  static LayerNorm make(ParamStore& store, const std::string& name, Index size);
  Var operator()(Context& ctx, Var x) const;
};

// LayerNorm(skip + GLU(dropout(x)))
struct GateAddNorm {
  GatedLinearUnit glu;
  LayerNorm norm;
  double dropout = 0.0;

  static GateAddNorm make(ParamStore& store, const std::string& name, Index in, Index out,
                          double dropout, std::mt19937_64& rng);
  Var operator()(Context& ctx, Var x, Var skip) const;
};

// eta2 = ELU(W2 a + W3 c + b2); eta1 = W1 eta2 + b1;
// out = LayerNorm(skip(a) + GLU(eta1)), skip being a projection when the
// input and output widths differ.
struct GatedResidualNetwork {
  Dense input_layer;
  std::optional<Dense> context_layer;
  Dense hidden_layer;
  GatedLinearUnit glu;
  LayerNorm norm;
  std::optional<Dense> skip;
  double dropout = 0.0;

  static GatedResidualNetwork make(ParamStore& store, const std::string& name, Index in,
                                   Index hidden, Index out, std::mt19937_64& rng,
                                   double dropout = 0.0, Index context = 0);
  Var operator()(Context& ctx, Var a, std::optional<Var> context = std::nullopt) const;
};

// Gate order in the packed weights: input, forget, cell candidate, output.
struct LstmCell {
  int w = -1;  // in x 4H
  int u = -1;  // H x 4H
  int b = -1;  // 1 x 4H
  Index in = 0;
  Index hidden = 0;

  static LstmCell make(ParamStore& store, const std::string& name, Index in, Index hidden,
                       std::mt19937_64& rng);

  struct State {
    Var h;
    Var c;
  };
  // One step from primitive ops.
  State step(Context& ctx, Var x, Var h, Var c) const;
  // Whole sequence as one fused node. Rows 0..T-1 of the result hold h_1..h_T,
  // row T holds c_T.
  Var sequence(Context& ctx, Var x, Var h0, Var c0) const;
};

// Multi-head attention whose heads share one value projection, so the
// head-averaged weights fully describe the output.
struct InterpretableAttention {
  std::vector<Dense> query;
  std::vector<Dense> key;
  Dense value;
  Dense output;
  Index heads = 1;
  Index head_dim = 0;

  static InterpretableAttention make(ParamStore& store, const std::string& name, Index model_dim,
                                     Index heads, std::mt19937_64& rng);

  struct Result {
    Var output;   // queries x model_dim
    Var weights;  // queries x keys, mean over heads
    std::vector<Var> head_weights;
  };
  Result operator()(Context& ctx, Var q, Var k, Var v, const Mask& mask) const;
};

struct AdamOptions {
  double learning_rate = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One Adam update with bias correction; `step` counts from 1.
void adam_step(ParamStore& store, const std::vector<Matrix>& grads, const AdamOptions& options,
               long step);

}  // namespace latscale::nn
