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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "latscale/krr.hpp"
#include "latscale/plan.hpp"
#include "latscale/scaler.hpp"
#include "latscale/sim.hpp"
#include "latscale/tft.hpp"
#include "latscale/trace_data.hpp"

namespace latscale::pipeline {

enum class ResourceMode { kHorizontal, kVertical, kBoth };

std::string_view to_string(ResourceMode mode);
ResourceMode resource_mode_from_string(std::string_view name);

struct RunConfig {
  std::filesystem::path scenario;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out = "out";
  std::string trace = "green";
  ResourceMode resources = ResourceMode::kHorizontal;
  std::optional<std::uint64_t> seed;  // overrides scenario and model seeds

  // SLA: an explicit threshold wins; otherwise sla_fraction of steady p95.
  std::optional<double> sla_ms;
  double sla_fraction = 0.8;
  std::size_t steady_steps = 480;
  double tolerance = 1.05;  // after-plan p95 may exceed the SLA by this factor

  // Last windows kept out of training and early stopping for scoring.
  double holdout_fraction = 0.15;

  tft::TftConfig tft;
  krr::GridSearchSpec grid;
  std::size_t krr_windows = 1;  // decoder blocks stacked as KRR rows
  krr::KrrTarget krr_target = krr::KrrTarget::kLatency;

  scaler::ThetaBounds bounds;  // factor box applies to actionable resources
  double calls_lower = 0.25;   // box for front-end call factors
  double calls_upper = 4.0;
  scaler::TargetMode target_mode = scaler::TargetMode::kDesired;
  bool pin_intercept = false;
  scaler::LbfgsbOptions optimizer;

  void validate() const;
  nlohmann::json to_json() const;
  // Flat sections of key = value lines; unknown keys are rejected.
  static RunConfig from_ini(const std::filesystem::path& path);
  static RunConfig from_ini_text(const std::string& text);
};

// Raised by the end-to-end driver; names the stage that failed.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// Model covariates for one trace: every front-end calls series plus the
// resources of the services the trace visits, filtered by `mode`.
std::vector<std::string> select_features(const TraceDataset& dataset, const sim::CallGraph& graph,
                                         std::string_view trace, ResourceMode mode);

// Actionability and bounds of each feature under `configs`.
std::vector<scaler::CatalogEntry> feature_catalog(std::span<const std::string> features,
                                                  const sim::ServiceConfigs& configs);

// Median over steps of the per-step p95 latency of `trace` when `configs`
// stay fixed for `steps` steps under the scenario's workload.
double steady_p95(const sim::Scenario& scenario, const sim::ServiceConfigs& configs,
                  std::string_view trace, std::size_t steps);

struct WindowSplit {
  std::vector<Window> train;
  std::vector<Window> validation;
  std::vector<Window> holdout;
};
WindowSplit split_for_run(std::vector<Window> windows, double validation_fraction,
                          double holdout_fraction);

struct HoldoutScore {
  tft::Metrics model;        // median forecast
  tft::Metrics persistence;  // last encoder target repeated
  std::size_t windows = 0;
  std::size_t points = 0;

  nlohmann::json to_json() const;
};
HoldoutScore score_windows(const tft::TftModel& model, std::span<const Window> windows);

struct PlanOutcome {
  tft::QuantileForecast forecast;  // planning window
  scaler::ViolationReport violation;
  Eigen::MatrixXd importances;  // KRR rows x features
  Eigen::VectorXd predicted;    // median forecast matching the rows
  Eigen::VectorXd desired;
  std::optional<krr::PerFeatureFit> krr;  // absent when the SLA holds
  std::optional<scaler::ThetaFit> fit;
  ScalingPlan plan;

  nlohmann::json to_json() const;
};

// Lower and upper theta boxes, intercept first, in catalog order.
std::pair<Eigen::VectorXd, Eigen::VectorXd> theta_boxes(
    std::span<const scaler::CatalogEntry> catalog, const RunConfig& config);

// Plans from the last window of `windows`. When the median forecast breaches
// the SLA, decoder importances of the last krr_windows blocks (spaced one
// decoder length apart) become KRR rows; otherwise the plan is a no-op.
PlanOutcome plan_from_windows(const tft::TftModel& model, std::span<const Window> windows,
                              std::span<const scaler::CatalogEntry> catalog, double sla_ms,
                              const RunConfig& config);

struct E2eReport {
  std::string trace;
  std::vector<std::string> features;
  double steady_p95_before = 0.0;
  double sla_ms = 0.0;
  double p95_after = 0.0;
  bool sla_met = false;  // p95_after <= tolerance * sla_ms
  tft::TrainingReport training;
  HoldoutScore holdout;
  PlanOutcome outcome;
  sim::ServiceConfigs before;
  sim::ServiceConfigs after;
  double seconds = 0.0;  // wall clock; kept out of the JSON so reruns match

  nlohmann::json to_json() const;
};

using Progress = std::function<void(std::string_view stage)>;

// simulate, train, score, forecast, interpret, KRR, optimize, plan, apply,
// re-simulate. Failures surface as StageError.
E2eReport run_e2e(const sim::Scenario& scenario, const RunConfig& config,
                  const Progress& progress = {});

}  // namespace latscale::pipeline
