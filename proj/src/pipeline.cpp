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

#include "latscale/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "latscale/error.hpp"

namespace latscale::pipeline {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view to_string(ResourceMode mode) {
  switch (mode) {
    case ResourceMode::kHorizontal:
      return "horizontal";
    case ResourceMode::kVertical:
      return "vertical";
    case ResourceMode::kBoth:
      return "both";
  }
  return "horizontal";
}

ResourceMode resource_mode_from_string(std::string_view name) {
  if (name == "horizontal") return ResourceMode::kHorizontal;
  if (name == "vertical") return ResourceMode::kVertical;
  if (name == "both") return ResourceMode::kBoth;
  throw Error(ErrorCode::kInvalidArgument,
              "resources must be horizontal, vertical or both, got '" + std::string(name) + "'");
}

void RunConfig::validate() const {
  if (trace.empty()) throw Error(ErrorCode::kInvalidArgument, "trace must not be empty");
  if (sla_ms && !(*sla_ms > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "sla_ms must be positive");
  }
  if (!(sla_fraction > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sla_fraction must be positive");
  if (steady_steps == 0) throw Error(ErrorCode::kInvalidArgument, "steady_steps must be positive");
  if (!(tolerance >= 1.0)) throw Error(ErrorCode::kInvalidArgument, "tolerance must be at least 1");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "holdout_fraction must lie in [0, 1)");
  }
  if (krr_windows == 0) throw Error(ErrorCode::kInvalidArgument, "krr_windows must be positive");
  if (!(bounds.factor_lower <= bounds.factor_upper) ||
      !(bounds.intercept_lower <= bounds.intercept_upper) || !(calls_lower <= calls_upper)) {
    throw Error(ErrorCode::kInvalidArgument, "theta bounds must satisfy lower <= upper");
  }
  tft.validate();
  grid.validate();
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json doc;
  doc["scenario"] = scenario.string();
  doc["dataset"] = dataset.string();
  doc["checkpoint"] = checkpoint.string();
  doc["out"] = out.string();
  doc["trace"] = trace;
  doc["resources"] = std::string(to_string(resources));
  doc["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  doc["sla_ms"] = sla_ms ? nlohmann::json(*sla_ms) : nlohmann::json(nullptr);
  doc["sla_fraction"] = sla_fraction;
  doc["steady_steps"] = steady_steps;
  doc["tolerance"] = tolerance;
  doc["holdout_fraction"] = holdout_fraction;
  doc["tft"] = tft.to_json();
  doc["krr"] = {{"alpha_grid", grid.alpha_grid},
                {"beta_grid", grid.beta_grid},
                {"folds", grid.folds},
                {"windows", krr_windows},
                {"target", std::string(krr::to_string(krr_target))}};
  doc["scaler"] = {{"factor_lower", bounds.factor_lower},
                   {"factor_upper", bounds.factor_upper},
                   {"intercept_lower", bounds.intercept_lower},
                   {"intercept_upper", bounds.intercept_upper},
                   {"calls_lower", calls_lower},
                   {"calls_upper", calls_upper},
                   {"pin_intercept", pin_intercept},
                   {"target", std::string(scaler::to_string(target_mode))}};
  return doc;
}

namespace {

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::string> parts;
  boost::split(parts, text, boost::is_any_of(","));
  std::vector<double> out;
  for (auto& p : parts) {
    boost::trim(p);
    if (p.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, key + ": '" + p + "' is not a number");
    }
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto v = boost::to_lower_copy(boost::trim_copy(text));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::kInvalidArgument, key + ": '" + text + "' is not a boolean");
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const auto v = boost::trim_copy(text);
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(v, &used));
    } else {
      if (!v.empty() && v.front() == '-') throw std::invalid_argument(v);
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, key + ": '" + text + "' is not a valid number");
  }
}

}  // namespace

RunConfig RunConfig::from_ini_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error(ErrorCode::kInvalidArgument, "config: key '" + section + "' outside a section");
    }
    for (const auto& [key, node] : body) {
      const std::string name = section + "." + key;
      const std::string v = boost::trim_copy(node.data());
      if (name == "run.scenario") {
        c.scenario = v;
      } else if (name == "run.dataset") {
        c.dataset = v;
      } else if (name == "run.checkpoint") {
        c.checkpoint = v;
      } else if (name == "run.out") {
        c.out = v;
      } else if (name == "run.trace") {
        c.trace = v;
      } else if (name == "run.resources") {
        c.resources = resource_mode_from_string(v);
      } else if (name == "run.seed") {
        c.seed = parse_number<std::uint64_t>(name, v);
      } else if (name == "run.sla_ms") {
        c.sla_ms = parse_number<double>(name, v);
      } else if (name == "run.sla_fraction") {
        c.sla_fraction = parse_number<double>(name, v);
      } else if (name == "run.steady_steps") {
        c.steady_steps = parse_number<std::size_t>(name, v);
      } else if (name == "run.tolerance") {
        c.tolerance = parse_number<double>(name, v);
      } else if (name == "run.holdout_fraction") {
        c.holdout_fraction = parse_number<double>(name, v);
      } else if (name == "tft.hidden_size") {
        c.tft.hidden_size = parse_number<std::size_t>(name, v);
      } else if (name == "tft.attention_heads") {
        c.tft.attention_heads = parse_number<std::size_t>(name, v);
      } else if (name == "tft.dropout") {
        c.tft.dropout = parse_number<double>(name, v);
      } else if (name == "tft.learning_rate") {
        c.tft.learning_rate = parse_number<double>(name, v);
      } else if (name == "tft.batch_size") {
        c.tft.batch_size = parse_number<std::size_t>(name, v);
      } else if (name == "tft.max_epochs") {
        c.tft.max_epochs = parse_number<std::size_t>(name, v);
      } else if (name == "tft.encoder_length") {
        c.tft.encoder_length = parse_number<std::size_t>(name, v);
      } else if (name == "tft.decoder_length") {
        c.tft.decoder_length = parse_number<std::size_t>(name, v);
      } else if (name == "tft.quantiles") {
        c.tft.quantiles = parse_list(name, v);
      } else if (name == "tft.early_stopping_patience") {
        c.tft.early_stopping_patience = parse_number<std::size_t>(name, v);
      } else if (name == "tft.validation_fraction") {
        c.tft.validation_fraction = parse_number<double>(name, v);
      } else if (name == "tft.lr_decay_patience") {
        c.tft.lr_decay_patience = parse_number<std::size_t>(name, v);
      } else if (name == "tft.lr_decay") {
        c.tft.lr_decay = parse_number<double>(name, v);
      } else if (name == "krr.alpha_grid") {
        c.grid.alpha_grid = parse_list(name, v);
      } else if (name == "krr.beta_grid") {
        c.grid.beta_grid = parse_list(name, v);
      } else if (name == "krr.folds") {
        c.grid.folds = parse_number<std::size_t>(name, v);
      } else if (name == "krr.windows") {
        c.krr_windows = parse_number<std::size_t>(name, v);
      } else if (name == "krr.target") {
        c.krr_target = krr::krr_target_from_string(v);
      } else if (name == "scaler.factor_lower") {
        c.bounds.factor_lower = parse_number<double>(name, v);
      } else if (name == "scaler.factor_upper") {
        c.bounds.factor_upper = parse_number<double>(name, v);
      } else if (name == "scaler.intercept_lower") {
        c.bounds.intercept_lower = parse_number<double>(name, v);
      } else if (name == "scaler.intercept_upper") {
        c.bounds.intercept_upper = parse_number<double>(name, v);
      } else if (name == "scaler.calls_lower") {
        c.calls_lower = parse_number<double>(name, v);
      } else if (name == "scaler.calls_upper") {
        c.calls_upper = parse_number<double>(name, v);
      } else if (name == "scaler.pin_intercept") {
        c.pin_intercept = parse_bool(name, v);
      } else if (name == "scaler.target") {
        c.target_mode = scaler::target_mode_from_string(v);
      } else {
        throw Error(ErrorCode::kInvalidArgument, "config: unknown key '" + name + "'");
      }
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return from_ini_text(text.str());
}

std::vector<std::string> select_features(const TraceDataset& dataset, const sim::CallGraph& graph,
                                         std::string_view trace, ResourceMode mode) {
  const auto services = graph.services_on(trace);
  return tft::default_features(dataset, services, mode != ResourceMode::kVertical,
                               mode != ResourceMode::kHorizontal);
}

std::vector<scaler::CatalogEntry> feature_catalog(std::span<const std::string> features,
                                                  const sim::ServiceConfigs& configs) {
  std::vector<scaler::CatalogEntry> out;
  for (const auto& name : features) {
    const auto dot = name.find('.');
    if (dot == std::string::npos) {
      throw Error(ErrorCode::kNotInCatalog, "feature " + name + " has no owner component");
    }
    const std::string prefix = name.substr(0, dot);
    const std::string owner = name.substr(dot + 1);
    scaler::CatalogEntry e;
    e.feature = name;
    e.owner = owner;
    if (prefix == "cps") {
      e.resource = Resource::kCalls;
      out.push_back(e);
      continue;
    }
    const auto it = configs.find(owner);
    if (it == configs.end()) {
      throw Error(ErrorCode::kNotInCatalog, "feature " + name + " names an unknown service");
    }
    const auto& c = it->second;
    e.actionable = true;
    e.resource = resource_from_string(prefix);
    switch (e.resource) {
      case Resource::kPods:
        e.current = c.pods;
        e.lower = 1;
        e.upper = c.pods_max;
        break;
      case Resource::kCpu:
        e.current = c.cpu_cores;
        e.lower = c.cpu_min;
        e.upper = c.cpu_max;
        break;
      case Resource::kMem:
        e.current = c.mem_bytes;
        e.lower = c.mem_min;
        e.upper = c.mem_max;
        break;
      case Resource::kCalls:
        e.actionable = false;
        break;
    }
    out.push_back(e);
  }
  return out;
}

double steady_p95(const sim::Scenario& scenario, const sim::ServiceConfigs& configs,
                  std::string_view trace, std::size_t steps) {
  const auto ds = sim::simulate(scenario.graph, scenario.workload, configs, steps, scenario.seed,
                                {}, scenario.options);
  std::vector<double> lat = ds.target(trace).values;
  auto mid = lat.begin() + static_cast<std::ptrdiff_t>(lat.size() / 2);
  std::nth_element(lat.begin(), mid, lat.end());
  if (lat.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(lat.begin(), mid);
  return 0.5 * (lo + hi);
}

WindowSplit split_for_run(std::vector<Window> windows, double validation_fraction,
                          double holdout_fraction) {
  WindowSplit out;
  std::size_t held = static_cast<std::size_t>(
      std::floor(holdout_fraction * static_cast<double>(windows.size())));
  if (holdout_fraction > 0.0) held = std::max<std::size_t>(held, 1);
  if (windows.size() < held + 2) {
    throw Error(ErrorCode::kDatasetTooShort,
                "too few windows for training, validation and hold-out parts");
  }
  out.holdout.assign(windows.end() - static_cast<std::ptrdiff_t>(held), windows.end());
  windows.resize(windows.size() - held);
  auto [tr, va] = tft::split_windows(std::move(windows), validation_fraction);
  out.train = std::move(tr);
  out.validation = std::move(va);
  return out;
}

nlohmann::json HoldoutScore::to_json() const {
  return {{"windows", windows},
          {"points", points},
          {"tft", {{"r2", model.r2}, {"rmse", model.rmse}}},
          {"persistence", {{"r2", persistence.r2}, {"rmse", persistence.rmse}}}};
}

HoldoutScore score_windows(const tft::TftModel& model, std::span<const Window> windows) {
  if (windows.empty()) throw Error(ErrorCode::kEmptyInput, "no windows to score");
  const std::size_t median = model.config().median_index();
  std::vector<double> forecast;
  std::vector<double> persistence;
  std::vector<double> actual;
  for (const auto& w : windows) {
    const auto fc = model.predict(w);
    const double last = w.encoder.target(w.encoder.target.size() - 1);
    for (Index t = 0; t < w.label.size(); ++t) {
      forecast.push_back(fc.values(t, static_cast<Index>(median)));
      persistence.push_back(last);
      actual.push_back(w.label(t));
    }
  }
  HoldoutScore s;
  s.model = tft::evaluate(forecast, actual);
  s.persistence = tft::evaluate(persistence, actual);
  s.windows = windows.size();
  s.points = actual.size();
  return s;
}

nlohmann::json PlanOutcome::to_json() const {
  nlohmann::json doc;
  doc["violation"] = {{"violated", violation.violated},
                      {"violation_fraction", violation.violation_fraction},
                      {"worst_step", violation.worst_step},
                      {"predicted_ms", violation.predicted_ms}};
  doc["krr_rows"] = importances.rows();
  if (krr) {
    nlohmann::json models = nlohmann::json::array();
    for (std::size_t k = 0; k < krr->features.size(); ++k) {
      const auto& f = krr->features[k];
      models.push_back({{"feature", plan.features[k]},
                        {"alpha", f.search.alpha},
                        {"beta", f.search.beta},
                        {"cv_mse", f.search.best_mse()}});
    }
    doc["krr"] = {{"models", models},
                  {"pooled_r2", krr->pooled_r2},
                  {"pooled_rmse", krr->pooled_rmse}};
  }
  if (fit) {
    doc["optimizer"] = {{"objective", fit->objective},
                        {"converged", fit->converged},
                        {"iterations", fit->iterations}};
  }
  doc["plan"] = plan.to_json();
  return doc;
}

std::pair<VectorXd, VectorXd> theta_boxes(std::span<const scaler::CatalogEntry> catalog,
                                          const RunConfig& config) {
  const Index n = static_cast<Index>(catalog.size()) + 1;
  VectorXd lower(n);
  VectorXd upper(n);
  lower(0) = config.pin_intercept ? 0.0 : config.bounds.intercept_lower;
  upper(0) = config.pin_intercept ? 0.0 : config.bounds.intercept_upper;
  for (Index k = 1; k < n; ++k) {
    const bool actionable = catalog[static_cast<std::size_t>(k - 1)].actionable;
    lower(k) = actionable ? config.bounds.factor_lower : config.calls_lower;
    upper(k) = actionable ? config.bounds.factor_upper : config.calls_upper;
  }
  return {lower, upper};
}

PlanOutcome plan_from_windows(const tft::TftModel& model, std::span<const Window> windows,
                              std::span<const scaler::CatalogEntry> catalog, double sla_ms,
                              const RunConfig& config) {
  if (windows.empty()) throw Error(ErrorCode::kEmptyInput, "no window to plan from");
  const std::size_t median = model.config().median_index();
  const std::size_t tau = model.config().decoder_length;
  PlanOutcome out;
  out.forecast = model.predict(windows.back());
  const VectorXd last_median = out.forecast.column(median);
  out.violation = scaler::detect_violation(
      std::span<const double>(last_median.data(), static_cast<std::size_t>(last_median.size())),
      scaler::SlaSpec{sla_ms});

  const auto& features = model.features();
  out.plan.trace = config.trace;
  out.plan.sla_ms = sla_ms;
  out.plan.violation_fraction = out.violation.violation_fraction;
  out.plan.features = features;
  out.plan.target_mode = std::string(scaler::to_string(config.target_mode));
  if (!out.violation.violated) {
    // No breach: identity factors and no enforced change.
    out.plan.theta.assign(features.size() + 1, 1.0);
    out.plan.theta[0] = 0.0;
    out.plan.converged = true;
    return out;
  }

  // Blocks end at the last window and step back one decoder length each.
  std::vector<const Window*> blocks;
  for (std::size_t b = 0; b < config.krr_windows; ++b) {
    const std::size_t back = b * tau;
    if (back >= windows.size()) break;
    blocks.push_back(&windows[windows.size() - 1 - back]);
  }
  std::reverse(blocks.begin(), blocks.end());
  const Index rows = static_cast<Index>(blocks.size() * tau);
  out.importances.resize(rows, static_cast<Index>(features.size()));
  out.predicted.resize(rows);
  Index r = 0;
  for (const Window* w : blocks) {
    const auto imp = model.interpret(*w);
    const auto fc = w == &windows.back() ? out.forecast : model.predict(*w);
    out.importances.middleRows(r, static_cast<Index>(tau)) = imp.decoder_variable_importance;
    out.predicted.segment(r, static_cast<Index>(tau)) = fc.column(median);
    r += static_cast<Index>(tau);
  }
  const auto desired = scaler::desired_latency(
      std::span<const double>(out.predicted.data(), static_cast<std::size_t>(rows)), out.violation);
  out.desired = Eigen::Map<const VectorXd>(desired.data(), rows);

  out.krr = krr::fit_per_feature(out.importances, out.desired, config.grid, config.krr_target);
  const MatrixXd f = out.krr->predict_columns(out.importances);
  const VectorXd& target =
      config.target_mode == scaler::TargetMode::kDesired ? out.desired : out.predicted;
  scaler::LeastSquaresObjective objective(f, target);
  std::vector<scaler::CatalogEntry> ordered;
  for (const auto& name : features) {
    const auto it = std::find_if(catalog.begin(), catalog.end(),
                                 [&](const scaler::CatalogEntry& e) { return e.feature == name; });
    if (it == catalog.end()) {
      throw Error(ErrorCode::kNotInCatalog, "feature " + name + " is not in the catalog");
    }
    ordered.push_back(*it);
  }
  const auto [lower, upper] = theta_boxes(ordered, config);
  out.fit = scaler::fit_theta(objective, lower, upper, config.optimizer);
  scaler::PlanContext ctx{config.trace, sla_ms, out.violation.violation_fraction,
                          config.target_mode};
  out.plan = scaler::make_plan(features, *out.fit, catalog, ctx);
  return out;
}

namespace {

nlohmann::json configs_json(const sim::ServiceConfigs& configs) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [name, c] : configs) {
    doc[name] = {{"pods", c.pods}, {"cpu_cores", c.cpu_cores}, {"mem_bytes", c.mem_bytes}};
  }
  return doc;
}

template <typename F>
auto stage(const Progress& progress, std::string_view name, F&& body) {
  if (progress) progress(name);
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(name), e.what());
  }
}

}  // namespace

nlohmann::json E2eReport::to_json() const {
  nlohmann::json doc;
  doc["trace"] = trace;
  doc["features"] = features;
  doc["steady_p95_before_ms"] = steady_p95_before;
  doc["sla_ms"] = sla_ms;
  doc["p95_after_ms"] = p95_after;
  doc["sla_met"] = sla_met;
  doc["training"] = training.to_json();
  doc["holdout"] = holdout.to_json();
  doc["outcome"] = outcome.to_json();
  doc["resources_before"] = configs_json(before);
  doc["resources_after"] = configs_json(after);
  return doc;
}

E2eReport run_e2e(const sim::Scenario& scenario_in, const RunConfig& config_in,
                  const Progress& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig config = config_in;
  sim::Scenario scenario = scenario_in;
  if (config.seed) {
    scenario.seed = *config.seed;
    config.tft.seed = *config.seed;
  }
  stage(progress, "config", [&] {
    config.validate();
    return 0;
  });
  E2eReport rep;
  rep.trace = config.trace;

  const auto sim_result = stage(progress, "simulate", [&] { return scenario.run(); });
  const auto& ds = sim_result.dataset;
  rep.before = sim_result.final_configs;

  auto split = stage(progress, "windows", [&] {
    rep.features = select_features(ds, scenario.graph, config.trace, config.resources);
    auto windows = make_windows(ds, config.tft.window_spec(), config.trace, rep.features);
    return split_for_run(std::move(windows), config.tft.validation_fraction,
                         config.holdout_fraction);
  });

  tft::TftModel model(config.tft, rep.features, ds.target(config.trace).name);
  rep.training = stage(progress, "train", [&] {
    return tft::train(model, split.train, split.validation);
  });
  rep.holdout = stage(progress, "evaluate", [&] {
    return score_windows(model, split.holdout.empty() ? split.validation : split.holdout);
  });

  rep.steady_p95_before = stage(progress, "steady", [&] {
    return steady_p95(scenario, rep.before, config.trace, config.steady_steps);
  });
  rep.sla_ms = config.sla_ms.value_or(config.sla_fraction * rep.steady_p95_before);

  rep.outcome = stage(progress, "plan", [&] {
    // Plan from the most recent windows, where the final resources apply.
    std::vector<Window> recent = std::move(split.holdout);
    if (recent.empty()) recent = split.validation;
    const auto catalog = feature_catalog(rep.features, rep.before);
    return plan_from_windows(model, recent, catalog, rep.sla_ms, config);
  });

  rep.after = stage(progress, "apply", [&] { return sim::apply_plan(rep.before, rep.outcome.plan); });
  rep.p95_after = stage(progress, "resimulate", [&] {
    return steady_p95(scenario, rep.after, config.trace, config.steady_steps);
  });
  rep.sla_met = rep.p95_after <= config.tolerance * rep.sla_ms;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace latscale::pipeline
