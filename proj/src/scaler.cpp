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

#include "latscale/scaler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "latscale/error.hpp"
#include "latscale/trace_data.hpp"

namespace latscale::scaler {

using Eigen::Index;
using Eigen::VectorXd;

void SlaSpec::validate() const {
  if (!(threshold_ms > 0.0) || !std::isfinite(threshold_ms)) {
    throw Error(ErrorCode::kInvalidArgument, "SLA threshold must be a positive number of ms");
  }
}

ViolationReport detect_violation(std::span<const double> forecast, const SlaSpec& sla) {
  sla.validate();
  if (forecast.empty()) throw Error(ErrorCode::kEmptyInput, "forecast is empty");
  ViolationReport r;
  const auto worst = std::max_element(forecast.begin(), forecast.end());
  r.worst_step = static_cast<std::size_t>(worst - forecast.begin());
  r.predicted_ms = *worst;
  if (*worst > sla.threshold_ms) {
    r.violation_fraction = (*worst - sla.threshold_ms) / *worst;
    r.violated = r.violation_fraction > 0.0;
  }
  return r;
}

std::vector<double> desired_latency(std::span<const double> forecast,
                                    const ViolationReport& report) {
  std::vector<double> out(forecast.begin(), forecast.end());
  for (auto& v : out) v *= 1.0 - report.violation_fraction;
  return out;
}

double combined_predict(const VectorXd& theta, std::span<const krr::KrrModel> models,
                        std::span<const double> row) {
  if (static_cast<std::size_t>(theta.size()) != models.size() + 1 || row.size() != models.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "combined_predict: theta needs K + 1 entries and the row K entries");
  }
  double out = theta(0);
  for (std::size_t k = 0; k < models.size(); ++k) {
    out += theta(static_cast<Index>(k + 1)) * models[k].predict(row[k]);
  }
  return out;
}

LeastSquaresObjective::LeastSquaresObjective(Eigen::MatrixXd regressor_outputs,
                                             VectorXd target)
    : target_(std::move(target)) {
  if (regressor_outputs.rows() != target_.size() || target_.size() == 0) {
    throw Error(ErrorCode::kShapeMismatch,
                "objective: regressor outputs need one non-empty row per target value");
  }
  design_.resize(regressor_outputs.rows(), regressor_outputs.cols() + 1);
  design_.col(0).setOnes();
  design_.rightCols(regressor_outputs.cols()) = regressor_outputs;
}

LeastSquaresObjective LeastSquaresObjective::from_models(std::span<const krr::KrrModel> models,
                                                         const Eigen::MatrixXd& importances,
                                                         const VectorXd& target) {
  if (importances.cols() != static_cast<Index>(models.size())) {
    throw Error(ErrorCode::kShapeMismatch, "objective: one importance column per model");
  }
  Eigen::MatrixXd f(importances.rows(), importances.cols());
  for (Index k = 0; k < importances.cols(); ++k) {
    f.col(k) = models[static_cast<std::size_t>(k)].predict_rows(importances.col(k));
  }
  return {std::move(f), target};
}

double LeastSquaresObjective::value(const VectorXd& theta) const {
  if (theta.size() != design_.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "objective: theta has the wrong length");
  }
  return (design_ * theta - target_).squaredNorm();
}

VectorXd LeastSquaresObjective::gradient(const VectorXd& theta) const {
  if (theta.size() != design_.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "objective: theta has the wrong length");
  }
  return 2.0 * design_.transpose() * (design_ * theta - target_);
}

double LeastSquaresObjective::operator()(const VectorXd& theta, VectorXd& grad) const {
  const VectorXd r = design_ * theta - target_;
  grad = 2.0 * design_.transpose() * r;
  return r.squaredNorm();
}

namespace {

VectorXd project(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

double evaluate(const Objective& f, const VectorXd& x, VectorXd& g) {
  const double v = f(x, g);
  if (!std::isfinite(v) || !g.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "objective or gradient is not finite");
  }
  return v;
}

struct Pair {
  VectorXd s;
  VectorXd y;
  double rho;
};

// Two-loop recursion on pairs restricted to the free coordinates, so that
// curvature seen along held variables does not leak into the free subspace.
VectorXd two_loop(const VectorXd& g, const std::deque<Pair>& memory,
                  const Eigen::Array<bool, Eigen::Dynamic, 1>& held) {
  std::vector<Pair> pairs;
  for (const Pair& p : memory) {
    Pair r{p.s, p.y, 0.0};
    for (Index i = 0; i < r.s.size(); ++i) {
      if (held(i)) r.s(i) = r.y(i) = 0.0;
    }
    const double sy = r.s.dot(r.y);
    if (!(sy > 1e-12 * r.s.norm() * r.y.norm()) || sy <= 0.0) continue;
    r.rho = 1.0 / sy;
    pairs.push_back(std::move(r));
  }
  VectorXd q = g;
  std::vector<double> a(pairs.size());
  for (std::size_t i = pairs.size(); i-- > 0;) {
    a[i] = pairs[i].rho * pairs[i].s.dot(q);
    q -= a[i] * pairs[i].y;
  }
  if (!pairs.empty()) {
    const auto& last = pairs.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double b = pairs[i].rho * pairs[i].y.dot(q);
    q += (a[i] - b) * pairs[i].s;
  }
  return -q;
}

}  // namespace

double projected_gradient_norm(const VectorXd& x, const VectorXd& g, const VectorXd& lower,
                               const VectorXd& upper) {
  return (project(x - g, lower, upper) - x).lpNorm<Eigen::Infinity>();
}

LbfgsbResult lbfgsb_minimize(const Objective& f, VectorXd x0, const VectorXd& lower,
                             const VectorXd& upper, const LbfgsbOptions& options) {
  const Index n = x0.size();
  if (lower.size() != n || upper.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "bounds and start point differ in length");
  }
  if ((lower.array() > upper.array()).any()) {
    throw Error(ErrorCode::kInvalidArgument, "a lower bound exceeds its upper bound");
  }
  LbfgsbResult r;
  VectorXd x = project(x0, lower, upper);
  VectorXd g(n);
  double fx = evaluate(f, x, g);
  std::deque<Pair> memory;
  Eigen::Array<bool, Eigen::Dynamic, 1> previous_held;

  while (true) {
    r.projected_gradient_norm = projected_gradient_norm(x, g, lower, upper);
    if (r.projected_gradient_norm < options.projected_gradient_tolerance) {
      r.converged = true;
      break;
    }
    if (r.iterations >= options.max_iterations) break;

    // Variables within eps of a bound that the gradient pushes against take a
    // scaled steepest-descent step; the rest follow the quasi-Newton direction.
    const double eps = std::min(1e-3, r.projected_gradient_norm);
    Eigen::Array<bool, Eigen::Dynamic, 1> held =
        ((x.array() <= lower.array() + eps) && (g.array() > 0.0)) ||
        ((x.array() >= upper.array() - eps) && (g.array() < 0.0));
    // Curvature pairs from another face of the box mislead the free subspace.
    if (previous_held.size() == n && (previous_held != held).any()) memory.clear();
    previous_held = held;
    double gamma = 1.0;
    if (!memory.empty()) gamma = memory.back().s.dot(memory.back().y) / memory.back().y.squaredNorm();
    VectorXd free_g = g;
    for (Index i = 0; i < n; ++i) {
      if (held(i)) free_g(i) = 0.0;
    }
    VectorXd d = two_loop(free_g, memory, held);
    for (Index i = 0; i < n; ++i) {
      if (held(i)) d(i) = -gamma * g(i);
    }
    if (!(g.dot(d) < 0.0)) {
      memory.clear();
      d = -g;
    }
    double t = 1.0;
    if (memory.empty()) t = std::min(1.0, 1.0 / d.lpNorm<Eigen::Infinity>());

    bool accepted = false;
    VectorXd x_new;
    VectorXd g_new(n);
    double f_new = 0.0;
    for (std::size_t b = 0; b <= options.max_backtracks; ++b, t *= 0.5) {
      x_new = project(x + t * d, lower, upper);
      const VectorXd step = x_new - x;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
      f_new = f(x_new, g_new);
      if (!std::isfinite(f_new) || !g_new.allFinite()) continue;
      const double slope = g.dot(step);
      // Once the Armijo decrease drops below the rounding of f, descent is
      // judged from the slope at the trial point instead.
      const double resolution = 1e-12 * std::max(1.0, std::abs(fx));
      const bool ok = -options.armijo * slope > resolution
                          ? f_new <= fx + options.armijo * slope
                          : f_new <= fx + resolution && g_new.dot(step) <= 0.5 * std::abs(slope);
      if (ok) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (memory.empty()) break;
      memory.clear();
      continue;
    }
    const VectorXd s = x_new - x;
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > options.curvature_epsilon) {
      memory.push_back({s, y, 1.0 / sy});
      if (memory.size() > options.memory) memory.pop_front();
    }
    x = x_new;
    g = g_new;
    fx = f_new;
    ++r.iterations;
  }
  r.x = x;
  r.f = fx;
  return r;
}

std::string_view to_string(TargetMode mode) {
  return mode == TargetMode::kDesired ? "desired" : "actual";
}

TargetMode target_mode_from_string(std::string_view name) {
  if (name == "desired") return TargetMode::kDesired;
  if (name == "actual") return TargetMode::kActual;
  throw Error(ErrorCode::kInvalidArgument,
              "target mode must be desired or actual, got '" + std::string(name) + "'");
}

VectorXd ThetaBounds::lower(std::size_t k) const {
  VectorXd v = VectorXd::Constant(static_cast<Index>(k + 1), factor_lower);
  v(0) = intercept_lower;
  return v;
}

VectorXd ThetaBounds::upper(std::size_t k) const {
  VectorXd v = VectorXd::Constant(static_cast<Index>(k + 1), factor_upper);
  v(0) = intercept_upper;
  return v;
}

ThetaFit fit_theta(const LeastSquaresObjective& objective, const ThetaBounds& bounds,
                   const LbfgsbOptions& options) {
  const std::size_t k = objective.dimension() - 1;
  return fit_theta(objective, bounds.lower(k), bounds.upper(k), options);
}

ThetaFit fit_theta(const LeastSquaresObjective& objective, const VectorXd& lower,
                   const VectorXd& upper, const LbfgsbOptions& options) {
  const std::size_t k = objective.dimension() - 1;
  if (lower.size() != static_cast<Index>(k + 1) || upper.size() != lower.size()) {
    throw Error(ErrorCode::kShapeMismatch, "theta bounds need one entry per feature plus intercept");
  }
  VectorXd x0 = VectorXd::Ones(static_cast<Index>(k + 1));
  x0(0) = objective.target().mean();
  auto r = lbfgsb_minimize([&](const VectorXd& x, VectorXd& g) { return objective(x, g); }, x0,
                           lower, upper, options);
  return {r.x, r.f, r.converged, r.iterations};
}

ScalingPlan make_plan(const std::vector<std::string>& features, const ThetaFit& fit,
                      std::span<const CatalogEntry> catalog, const PlanContext& context) {
  if (static_cast<std::size_t>(fit.theta.size()) != features.size() + 1) {
    throw Error(ErrorCode::kShapeMismatch, "theta needs one entry per feature plus intercept");
  }
  ScalingPlan plan;
  plan.trace = context.trace;
  plan.sla_ms = context.sla_ms;
  plan.violation_fraction = context.violation_fraction;
  plan.features = features;
  plan.theta.assign(fit.theta.data(), fit.theta.data() + fit.theta.size());
  plan.objective = fit.objective;
  plan.converged = fit.converged;
  plan.target_mode = std::string(to_string(context.target_mode));
  for (std::size_t k = 0; k < features.size(); ++k) {
    const auto it = std::find_if(catalog.begin(), catalog.end(),
                                 [&](const CatalogEntry& e) { return e.feature == features[k]; });
    if (it == catalog.end()) {
      throw Error(ErrorCode::kNotInCatalog, "feature " + features[k] + " is not in the catalog");
    }
    const double factor = fit.theta(static_cast<Index>(k + 1));
    if (!it->actionable) {
      plan.advisories.push_back({it->feature, it->owner, factor,
                                 "shape front-end calls of " + it->owner + " by factor " +
                                     format_number(factor) + "; not enforced"});
      continue;
    }
    double recommended = factor * it->current;
    if (it->resource == Resource::kPods) recommended = std::round(recommended);
    recommended = std::clamp(recommended, it->lower, it->upper);
    plan.actions.push_back({it->owner, it->resource, it->current, factor, recommended});
  }
  return plan;
}

}  // namespace latscale::scaler
