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

#include <functional>
#include <span>
#include <vector>

#include "latscale/nn/layers.hpp"
#include "latscale/nn/tensor.hpp"

namespace latscale::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t checked = 0;

  bool passes(double tol) const { return max_relative_error < tol; }
};

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries
// whose true gradient is ~0 from dominating through rounding noise.
inline constexpr double kGradCheckFloor = 1e-6;
inline constexpr double kGradCheckStep = 1e-5;

// Builds a scalar from leaves bound to the given inputs.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients of `f` with respect to every entry of
// every input against central differences.
GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor* const> inputs,
                           double step = kGradCheckStep);

// Same, over every parameter in `store`. `f` must be deterministic (no
// dropout) and build its graph through the supplied context.
GradCheckResult grad_check_params(const std::function<Var(Context&)>& f, ParamStore& store,
                                  double step = kGradCheckStep);

}  // namespace latscale::nn
