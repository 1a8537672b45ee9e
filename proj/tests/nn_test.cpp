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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "latscale/error.hpp"
#include "latscale/nn/grad_check.hpp"
#include "latscale/nn/layers.hpp"
#include "latscale/nn/tensor.hpp"

namespace latscale::nn {
namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Reduces any output to a scalar with fixed random weights so every output
// entry contributes a distinct gradient.
Var project(Var v, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return weighted_sum(v, random_matrix(v.rows(), v.cols(), rng));
}

TEST(Ops, PrimitiveGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  Tensor a(random_matrix(4, 3, rng));
  Tensor b(random_matrix(3, 5, rng));
  Tensor c(random_matrix(4, 3, rng));
  Tensor row(random_matrix(1, 3, rng));
  Tensor col(random_matrix(4, 1, rng));
  Tensor gamma(random_matrix(1, 3, rng));
  Tensor beta(random_matrix(1, 3, rng));

  struct Case {
    const char* name;
    ScalarFn fn;
    std::vector<Tensor*> inputs;
  };
  std::vector<Case> cases = {
      {"matmul", [](Tape&, std::span<const Var> v) { return project(matmul(v[0], v[1])); },
       {&a, &b}},
      {"transpose", [](Tape&, std::span<const Var> v) { return project(transpose(v[0])); },
       {&a}},
      {"add_sub_mul",
       [](Tape&, std::span<const Var> v) {
         return project(mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.3))));
       },
       {&a, &c}},
      {"add_row", [](Tape&, std::span<const Var> v) { return project(add_row(v[0], v[1])); },
       {&a, &row}},
      {"scale_rows",
       [](Tape&, std::span<const Var> v) { return project(scale_rows(v[0], v[1])); },
       {&a, &col}},
      {"sigmoid_tanh",
       [](Tape&, std::span<const Var> v) { return project(nn::tanh(sigmoid(v[0]))); },
       {&a}},
      {"elu", [](Tape&, std::span<const Var> v) { return project(elu(v[0])); }, {&a}},
      {"layer_norm",
       [](Tape&, std::span<const Var> v) { return project(layer_norm(v[0], v[1], v[2])); },
       {&a, &gamma, &beta}},
      {"softmax", [](Tape&, std::span<const Var> v) { return project(softmax_rows(v[0])); },
       {&a}},
      {"masked_softmax",
       [](Tape&, std::span<const Var> v) {
         return project(softmax_rows(v[0], causal_mask(3, 5)));
       },
       {&b}},
      {"concat_slice",
       [](Tape&, std::span<const Var> v) {
         std::vector<Var> parts{v[0], v[1]};
         Var cat = concat_cols(parts);
         std::vector<Var> rows{slice_rows(cat, 1, 2), slice_cols(cat, 2, 4)};
         return add(project(rows[0]), project(concat_rows(std::vector<Var>{rows[1], rows[1]})));
       },
       {&a, &c}},
      {"mean", [](Tape&, std::span<const Var> v) { return mean(mul(v[0], v[0])); }, {&a}},
  };
  for (auto& c : cases) {
    auto r = grad_check(c.fn, c.inputs);
    EXPECT_LT(r.max_relative_error, 1e-4) << c.name;
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(GradCheck, LinearLayerIsExactToRounding) {
  std::mt19937_64 rng(2);
  Tensor x(random_matrix(5, 4, rng));
  Tensor w(random_matrix(4, 3, rng));
  Tensor b(random_matrix(1, 3, rng));
  std::vector<Tensor*> in{&x, &w, &b};
  auto r = grad_check(
      [](Tape&, std::span<const Var> v) { return project(add_row(matmul(v[0], v[1]), v[2])); },
      in);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  std::mt19937_64 rng(3);
  Tensor x(random_matrix(3, 3, rng));
  std::vector<Tensor*> in{&x};
  auto broken_square = [](Tape& t, std::span<const Var> v) {
    Var a = v[0];
    Var sq = t.push(a.value().cwiseProduct(a.value()), true,
                    [a](Tape& t, const Matrix& g, const Matrix&) {
                      // Missing the factor of 2.
                      t.accumulate(a, g.cwiseProduct(t.value(a)));
                    });
    return project(sq);
  };
  auto r = grad_check(broken_square, in);
  EXPECT_GT(r.max_relative_error, 1e-4);
  EXPECT_FALSE(r.passes(1e-4));
}

TEST(Glu, ZeroGateIsHalfOfValuePath) {
  std::mt19937_64 rng(4);
  ParamStore store;
  auto glu = GatedLinearUnit::make(store, "glu", 5, 3, rng);
  store[static_cast<std::size_t>(glu.gate.weight)].value.setZero();
  store[static_cast<std::size_t>(glu.gate.bias)].value.setZero();
  Matrix a = random_matrix(4, 5, rng);
  Tape tape;
  Context ctx(tape, store);
  Var x = tape.constant(a);
  Matrix out = glu(ctx, x).value();
  Matrix linear = glu.value(ctx, x).value();
  EXPECT_TRUE(out.isApprox(0.5 * linear, 1e-14));
}

TEST(Glu, BoundedByValuePathAndGradients) {
  std::mt19937_64 rng(5);
  ParamStore store;
  auto glu = GatedLinearUnit::make(store, "glu", 6, 4, rng);
  Matrix a = random_matrix(7, 6, rng);
  {
    Tape tape;
    Context ctx(tape, store);
    Var x = tape.constant(a);
    Matrix out = glu(ctx, x).value();
    Matrix linear = glu.value(ctx, x).value();
    EXPECT_TRUE((out.array().abs() <= linear.array().abs()).all());
  }
  auto r = grad_check_params(
      [&](Context& ctx) { return project(glu(ctx, ctx.tape().constant(a))); }, store);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Grn, OutputIsLayerNormalized) {
  std::mt19937_64 rng(6);
  ParamStore store;
  auto grn = GatedResidualNetwork::make(store, "grn", 5, 8, 8, rng);
  Tape tape;
  Context ctx(tape, store);
  Matrix out = grn(ctx, tape.constant(random_matrix(10, 5, rng, 2.0))).value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double mu = out.row(r).mean();
    const double var = (out.row(r).array() - mu).square().mean();
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(Grn, GradientsWithAndWithoutContext) {
  std::mt19937_64 rng(7);
  ParamStore store;
  auto plain = GatedResidualNetwork::make(store, "plain", 4, 6, 4, rng);
  auto projected = GatedResidualNetwork::make(store, "proj", 4, 6, 3, rng, 0.0, 2);
  Matrix a = random_matrix(5, 4, rng);
  Matrix c = random_matrix(1, 2, rng);
  auto r = grad_check_params(
      [&](Context& ctx) {
        Var x = ctx.tape().constant(a);
        Var h = plain(ctx, x);
        return project(projected(ctx, h, ctx.tape().constant(c)));
      },
      store);
  EXPECT_LT(r.max_relative_error, 1e-4);

  Tensor input(a);
  std::vector<Tensor*> in{&input};
  auto rin = grad_check(
      [&](Tape& tape, std::span<const Var> v) {
        Context ctx(tape, store);
        return project(plain(ctx, plain(ctx, v[0])));
      },
      in);
  EXPECT_LT(rin.max_relative_error, 1e-4);
}

TEST(Grn, NoContextIsDeterministic) {
  std::mt19937_64 rng(8);
  ParamStore store;
  auto grn = GatedResidualNetwork::make(store, "grn", 3, 4, 3, rng);
  EXPECT_FALSE(grn.context_layer.has_value());
  Matrix a = random_matrix(2, 3, rng);
  Tape t1;
  Tape t2;
  Context c1(t1, store);
  Context c2(t2, store);
  EXPECT_EQ(grn(c1, t1.constant(a)).value(), grn(c2, t2.constant(a)).value());
  Tape t3;
  Context c3(t3, store);
  EXPECT_THROW(grn(c3, t3.constant(Matrix::Zero(2, 5))), Error);
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  std::mt19937_64 rng(9);
  ParamStore store;
  auto cell = LstmCell::make(store, "lstm", 3, 4, rng);
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.setZero();
  Tape tape;
  Context ctx(tape, store);
  auto s = cell.step(ctx, tape.constant(random_matrix(1, 3, rng)),
                     tape.constant(Matrix::Zero(1, 4)), tape.constant(Matrix::Zero(1, 4)));
  EXPECT_TRUE(s.h.value().isZero(0.0));
}

TEST(Lstm, CellStateGrowthIsBounded) {
  std::mt19937_64 rng(10);
  ParamStore store;
  auto cell = LstmCell::make(store, "lstm", 3, 4, rng);
  for (int c = 0; c < 1000; ++c) {
    Tape tape;
    Context ctx(tape, store);
    Matrix c0 = random_matrix(1, 4, rng, 3.0);
    auto s = cell.step(ctx, tape.constant(random_matrix(1, 3, rng, 3.0)),
                       tape.constant(random_matrix(1, 4, rng)), tape.constant(c0));
    ASSERT_TRUE((s.c.value().array().abs() <= c0.array().abs() + 1.0).all());
  }
}

TEST(Lstm, ThreeStepGradientAndFusedSequenceAgree) {
  std::mt19937_64 rng(11);
  ParamStore store;
  auto cell = LstmCell::make(store, "lstm", 3, 4, rng);
  store[static_cast<std::size_t>(cell.b)].value = random_matrix(1, 16, rng, 0.5);
  Matrix xs = random_matrix(3, 3, rng);
  Matrix h0 = random_matrix(1, 4, rng, 0.5);
  Matrix c0 = random_matrix(1, 4, rng, 0.5);

  auto unrolled = [&](Context& ctx) {
    Tape& t = ctx.tape();
    Var h = t.constant(h0);
    Var c = t.constant(c0);
    Var x = t.constant(xs);
    std::vector<Var> hs;
    for (Index s = 0; s < 3; ++s) {
      auto st = cell.step(ctx, slice_rows(x, s, 1), h, c);
      h = st.h;
      c = st.c;
      hs.push_back(h);
    }
    hs.push_back(c);
    return concat_rows(hs);
  };
  auto fused = [&](Context& ctx) {
    Tape& t = ctx.tape();
    return cell.sequence(ctx, t.constant(xs), t.constant(h0), t.constant(c0));
  };

  auto r = grad_check_params([&](Context& ctx) { return project(unrolled(ctx)); }, store);
  EXPECT_LT(r.max_relative_error, 1e-4);
  auto rf = grad_check_params([&](Context& ctx) { return project(fused(ctx)); }, store);
  EXPECT_LT(rf.max_relative_error, 1e-4);

  auto g1 = store.zero_grads();
  auto g2 = store.zero_grads();
  Tape t1;
  Tape t2;
  Context c1(t1, store, &g1);
  Context c2(t2, store, &g2);
  Var a = unrolled(c1);
  Var b = fused(c2);
  ASSERT_TRUE(a.value().isApprox(b.value(), 1e-13));
  t1.backward(project(a));
  t2.backward(project(b));
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_TRUE(g1[i].isApprox(g2[i], 1e-12));

  // Input and initial-state gradients of the fused op.
  Tensor x(xs);
  Tensor h(h0);
  Tensor c(c0);
  std::vector<Tensor*> in{&x, &h, &c};
  auto ri = grad_check(
      [&](Tape& tape, std::span<const Var> v) {
        Context ctx(tape, store);
        return project(cell.sequence(ctx, v[0], v[1], v[2]));
      },
      in);
  EXPECT_LT(ri.max_relative_error, 1e-4);
}

TEST(Attention, SingleHeadAndCausality) {
  std::mt19937_64 rng(12);
  for (Index heads : {1, 2, 4}) {
    ParamStore store;
    auto att = InterpretableAttention::make(store, "att", 8, heads, rng);
    for (int c = 0; c < 50; ++c) {
      const Index keys = 3 + c % 9;
      const Index queries = 1 + c % keys;
      Tape tape;
      Context ctx(tape, store);
      Var kv = tape.constant(random_matrix(keys, 8, rng, 2.0));
      Var q = slice_rows(kv, keys - queries, queries);
      auto mask = causal_mask(queries, keys);
      auto r = att(ctx, q, kv, kv, mask);
      const Matrix& w = r.weights.value();
      ASSERT_EQ(w.rows(), queries);
      ASSERT_EQ(w.cols(), keys);
      for (Index i = 0; i < queries; ++i) {
        ASSERT_NEAR(w.row(i).sum(), 1.0, 1e-6);
        for (Index j = 0; j < keys; ++j) {
          ASSERT_GE(w(i, j), 0.0);
          if (j > keys - queries + i) ASSERT_EQ(w(i, j), 0.0);
        }
      }
      if (heads == 1) ASSERT_EQ(w, r.head_weights[0].value());
      // Averaged weights reproduce the output through the shared value path.
      Matrix direct = (w * att.value(ctx, kv).value()) *
                          store[static_cast<std::size_t>(att.output.weight)].value;
      direct.rowwise() += store[static_cast<std::size_t>(att.output.bias)].value.row(0);
      ASSERT_TRUE(direct.isApprox(r.output.value(), 1e-12));
    }
  }
}

TEST(Attention, Gradients) {
  std::mt19937_64 rng(13);
  ParamStore store;
  auto att = InterpretableAttention::make(store, "att", 4, 2, rng);
  Matrix kv = random_matrix(6, 4, rng);
  auto r = grad_check_params(
      [&](Context& ctx) {
        Var k = ctx.tape().constant(kv);
        auto res = att(ctx, slice_rows(k, 3, 3), k, k, causal_mask(3, 6));
        return add(project(res.output), project(res.weights, 7));
      },
      store);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(QuantileLoss, PinballValues) {
  EXPECT_EQ(quantile_loss(3.0, 3.0, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(quantile_loss(4.0, 0.0, 0.5), 2.0);
  EXPECT_NEAR(quantile_loss(0.0, 1.0, 0.9), 0.1, 1e-15);
  EXPECT_THROW(quantile_loss(1.0, 0.0, 1.0), Error);
  EXPECT_THROW(quantile_loss(1.0, 0.0, 0.0), Error);
}

TEST(QuantileLoss, TapeOpMatchesScalarAndGradient) {
  std::mt19937_64 rng(14);
  Matrix target = random_matrix(5, 1, rng);
  Tensor pred(random_matrix(5, 3, rng));
  std::vector<double> qs{0.1, 0.5, 0.9};
  Tape tape;
  Var loss = pinball_loss(tape.constant(pred.value), target, qs);
  double expected = 0.0;
  for (Index r = 0; r < 5; ++r) {
    for (Index c = 0; c < 3; ++c) {
      expected += quantile_loss(target(r, 0), pred.value(r, c), qs[static_cast<std::size_t>(c)]);
    }
  }
  EXPECT_NEAR(loss.value()(0, 0), expected / 5.0, 1e-14);
  std::vector<Tensor*> in{&pred};
  auto r = grad_check(
      [&](Tape&, std::span<const Var> v) { return pinball_loss(v[0], target, qs); }, in);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(15);
  for (int c = 0; c < 1000; ++c) {
    Tape tape;
    Matrix m = random_matrix(1 + c % 5, 1 + c % 7, rng, 10.0);
    Matrix y = softmax_rows(tape.constant(m)).value();
    ASSERT_GE(y.minCoeff(), 0.0);
    for (Index r = 0; r < y.rows(); ++r) ASSERT_NEAR(y.row(r).sum(), 1.0, 1e-6);
  }
}

TEST(Dropout, InferenceIdentityAndTrainingMean) {
  std::mt19937_64 rng(16);
  Tape tape;
  Var x = tape.constant(Matrix::Constant(1, 100000, 2.0));
  EXPECT_EQ(dropout(x, 0.1, rng, false).id(), x.id());
  Var y = dropout(x, 0.1, rng, true);
  EXPECT_NEAR(y.value().mean(), 2.0, 0.02 * 2.0);
  EXPECT_GT((y.value().array() == 0.0).count(), 0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  store.add("w", Matrix::Constant(1, 2, 1.0));
  std::vector<Matrix> grads{(Matrix(1, 2) << 0.5, -2.0).finished()};
  adam_step(store, grads, {}, 1);
  EXPECT_NEAR(store[0].value(0, 0), 1.0 - 0.03, 1e-6);
  EXPECT_NEAR(store[0].value(0, 1), 1.0 + 0.03, 1e-6);
}

TEST(ParamStore, CheckpointRoundTripAndMismatch) {
  std::mt19937_64 rng(17);
  ParamStore a;
  Dense::make(a, "d", 3, 2, rng);
  ParamStore b;
  Dense::make(b, "d", 3, 2, rng);
  b.load_json(a.to_json());
  EXPECT_EQ(a[0].value, b[0].value);
  EXPECT_EQ(a.scalar_count(), 8u);
  EXPECT_THROW(a.add("d.weight", Matrix::Zero(1, 1)), Error);
  ParamStore c;
  Dense::make(c, "d", 4, 2, rng);
  EXPECT_THROW(c.load_json(a.to_json()), Error);
}

}  // namespace
}  // namespace latscale::nn
