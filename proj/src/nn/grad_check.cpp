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

#include "latscale/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "latscale/error.hpp"

namespace latscale::nn {

namespace {

void compare(double analytic, double numeric, GradCheckResult& r) {
  const double abs_err = std::abs(analytic - numeric);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  r.max_absolute_error = std::max(r.max_absolute_error, abs_err);
  r.max_relative_error = std::max(r.max_relative_error, abs_err / denom);
  ++r.checked;
}

double scalar_of(Var v) {
  if (v.rows() != 1 || v.cols() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "grad_check needs a scalar-valued function");
  }
  return v.value()(0, 0);
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor* const> inputs, double step) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (auto* in : inputs) leaves.push_back(tape.input(in->value));
    Var out = f(tape, leaves);
    scalar_of(out);
    tape.backward(out);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      Matrix g = tape.grad(leaves[i]);
      if (g.size() == 0) g = Matrix::Zero(inputs[i]->rows(), inputs[i]->cols());
      inputs[i]->grad = g;
      analytic.push_back(std::move(g));
    }
  }
  auto evaluate = [&]() {
    Tape tape;
    std::vector<Var> leaves;
    for (auto* in : inputs) leaves.push_back(tape.constant(in->value));
    return scalar_of(f(tape, leaves));
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Matrix& value = inputs[i]->value;
    for (Index e = 0; e < value.size(); ++e) {
      const double saved = value.data()[e];
      value.data()[e] = saved + step;
      const double plus = evaluate();
      value.data()[e] = saved - step;
      const double minus = evaluate();
      value.data()[e] = saved;
      compare(analytic[i].data()[e], (plus - minus) / (2.0 * step), result);
    }
  }
  return result;
}

GradCheckResult grad_check_params(const std::function<Var(Context&)>& f, ParamStore& store,
                                  double step) {
  auto grads = store.zero_grads();
  {
    Tape tape;
    Context ctx(tape, store, &grads);
    Var out = f(ctx);
    scalar_of(out);
    tape.backward(out);
  }
  auto evaluate = [&]() {
    Tape tape;
    Context ctx(tape, store);
    return scalar_of(f(ctx));
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < store.size(); ++i) {
    Matrix& value = store[i].value;
    for (Index e = 0; e < value.size(); ++e) {
      const double saved = value.data()[e];
      value.data()[e] = saved + step;
      const double plus = evaluate();
      value.data()[e] = saved - step;
      const double minus = evaluate();
      value.data()[e] = saved;
      compare(grads[i].data()[e], (plus - minus) / (2.0 * step), result);
    }
  }
  return result;
}

}  // namespace latscale::nn
