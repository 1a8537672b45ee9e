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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latscale/krr.hpp"
#include "latscale/plan.hpp"

namespace latscale::scaler {

struct SlaSpec {
  double threshold_ms = 0.0;

  void validate() const;
};

struct ViolationReport {
  bool violated = false;
  double violation_fraction = 0.0;  // max over steps of max(0, (y - sla) / y)
  std::size_t worst_step = 0;       // 0-based horizon step
  double predicted_ms = 0.0;        // forecast at the worst step
};

// `forecast` is the median series over the horizon.
ViolationReport detect_violation(std::span<const double> forecast, const SlaSpec& sla);

// forecast * (1 - v) per step.
std::vector<double> desired_latency(std::span<const double> forecast,
                                    const ViolationReport& report);

// theta[0] + sum_k theta[k + 1] * model_k(row[k])
double combined_predict(const Eigen::VectorXd& theta, std::span<const krr::KrrModel> models,
                        std::span<const double> row);

// sum_t (theta[0] + F.row(t) . theta[1:] - target_t)^2 over a tabulated
// T x K matrix F of regressor outputs.
class LeastSquaresObjective {
 public:
  LeastSquaresObjective(Eigen::MatrixXd regressor_outputs, Eigen::VectorXd target);
  static LeastSquaresObjective from_models(std::span<const krr::KrrModel> models,
                                           const Eigen::MatrixXd& importances,
                                           const Eigen::VectorXd& target);

  std::size_t dimension() const { return static_cast<std::size_t>(design_.cols()); }
  const Eigen::MatrixXd& design() const { return design_; }  // [1 | F]
  const Eigen::VectorXd& target() const { return target_; }

  double value(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;

 private:
  Eigen::MatrixXd design_;
  Eigen::VectorXd target_;
};

struct LbfgsbOptions {
  std::size_t memory = 10;
  double armijo = 1e-4;
  double curvature_epsilon = 1e-10;
  double projected_gradient_tolerance = 1e-8;
  std::size_t max_iterations = 500;
  std::size_t max_backtracks = 60;
};

struct LbfgsbResult {
  Eigen::VectorXd x;
  double f = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double projected_gradient_norm = 0.0;  // infinity norm at x
};

// Returns f(x) and writes the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

// Projected-gradient L-BFGS on the box [lower, upper]; a start outside the
// box is projected.
LbfgsbResult lbfgsb_minimize(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lower,
                             const Eigen::VectorXd& upper, const LbfgsbOptions& options = {});

// Infinity norm of P(x - g) - x.
double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                               const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

enum class TargetMode { kDesired, kActual };
std::string_view to_string(TargetMode mode);
TargetMode target_mode_from_string(std::string_view name);

struct ThetaBounds {
  double factor_lower = 0.25;
  double factor_upper = 4.0;
  double intercept_lower = -1e4;
  double intercept_upper = 1e4;

  Eigen::VectorXd lower(std::size_t k) const;
  Eigen::VectorXd upper(std::size_t k) const;
};

struct ThetaFit {
  Eigen::VectorXd theta;
  double objective = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

// Starts from theta = 1 with the intercept at mean(target).
ThetaFit fit_theta(const LeastSquaresObjective& objective, const ThetaBounds& bounds = {},
                   const LbfgsbOptions& options = {});
// Per-component boxes, intercept first.
ThetaFit fit_theta(const LeastSquaresObjective& objective, const Eigen::VectorXd& lower,
                   const Eigen::VectorXd& upper, const LbfgsbOptions& options = {});

struct CatalogEntry {
  std::string feature;
  bool actionable = false;
  std::string owner;  // service for resources, trace for front-end calls
  Resource resource = Resource::kPods;
  double current = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct PlanContext {
  std::string trace;
  double sla_ms = 0.0;
  double violation_fraction = 0.0;
  TargetMode target_mode = TargetMode::kDesired;
};

// One action per actionable feature, one advisory per call feature.
ScalingPlan make_plan(const std::vector<std::string>& features, const ThetaFit& fit,
                      std::span<const CatalogEntry> catalog, const PlanContext& context);

}  // namespace latscale::scaler
