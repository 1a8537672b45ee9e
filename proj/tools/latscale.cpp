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

// latscale: simulate, train, predict, interpret, plan, e2e, evaluate.
// Exit codes: 0 success, 2 usage or validation, 3 runtime failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "latscale/error.hpp"
#include "latscale/pipeline.hpp"
#include "latscale/sim.hpp"
#include "latscale/tft.hpp"
#include "latscale/trace_data.hpp"

namespace fs = std::filesystem;
using namespace latscale;

namespace {

// Input problems detected before any stage runs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string trace;
  std::string resources;
  std::optional<double> sla_ms;
  bool quiet = false;

  std::string scenario;
  std::string dataset;
  std::string checkpoint;
  std::optional<std::size_t> duration;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> window;
};

pipeline::RunConfig resolve(const Flags& f) {
  pipeline::RunConfig c;
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw UsageError("config file not found: " + f.config);
    try {
      c = pipeline::RunConfig::from_ini(f.config);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  } else {
    // Desk-scale windows unless a config says otherwise.
    c.tft.encoder_length = 64;
    c.tft.decoder_length = 16;
  }
  if (f.seed) c.seed = f.seed;
  if (!f.out.empty()) c.out = f.out;
  if (!f.trace.empty()) c.trace = f.trace;
  if (f.sla_ms) c.sla_ms = f.sla_ms;
  if (!f.scenario.empty()) c.scenario = f.scenario;
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (f.epochs) c.tft.max_epochs = *f.epochs;
  try {
    if (!f.resources.empty()) c.resources = pipeline::resource_mode_from_string(f.resources);
    if (c.seed) c.tft.seed = *c.seed;
    c.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return c;
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " path is required");
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

fs::path checkpoint_path(const pipeline::RunConfig& c) {
  return c.checkpoint.empty() ? c.out / "model.json" : c.checkpoint;
}

sim::Scenario load_scenario(const pipeline::RunConfig& c) {
  require_file(c.scenario, "scenario");
  try {
    auto s = sim::Scenario::load(c.scenario);
    if (c.seed) s.seed = *c.seed;
    return s;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const nlohmann::json& doc) {
  auto out = open_out(p);
  out << doc.dump(2) << "\n";
}

struct Loaded {
  TraceDataset dataset;
  tft::TftModel model;
  std::vector<Window> windows;
};

Loaded load_model_and_data(const pipeline::RunConfig& c) {
  require_file(c.dataset, "dataset");
  const auto cp = checkpoint_path(c);
  require_file(cp, "checkpoint");
  auto ds = load_dataset(c.dataset);
  auto model = tft::TftModel::load(cp);
  const auto& target = model.target();
  const std::string trace = target.substr(target.find('.') + 1);
  auto windows = make_windows(ds, model.config().window_spec(), trace, model.features());
  return {std::move(ds), std::move(model), std::move(windows)};
}

const Window& pick_window(const Loaded& l, const Flags& f) {
  if (!f.window) return l.windows.back();
  if (*f.window >= l.windows.size()) {
    throw UsageError("window " + std::to_string(*f.window) + " out of range; dataset has " +
                     std::to_string(l.windows.size()) + " windows");
  }
  return l.windows[*f.window];
}

sim::CallGraph graph_for(const pipeline::RunConfig& c) {
  if (!c.scenario.empty() && fs::exists(c.scenario)) return sim::Scenario::load(c.scenario).graph;
  return sim::build_robotshop_graph();
}

// Resource bounds from the scenario (or defaults); current values from the
// last dataset row where the dataset records them.
sim::ServiceConfigs current_configs(const pipeline::RunConfig& c, const TraceDataset& ds) {
  auto configs = !c.scenario.empty() && fs::exists(c.scenario)
                     ? sim::Scenario::load(c.scenario).services
                     : sim::robotshop_services();
  for (auto& [name, cfg] : configs) {
    if (const auto* s = ds.find("pods." + name)) cfg.pods = static_cast<int>(s->values.back());
    if (const auto* s = ds.find("cpu." + name)) cfg.cpu_cores = s->values.back();
    if (const auto* s = ds.find("mem." + name)) cfg.mem_bytes = s->values.back();
  }
  return configs;
}

template <typename F>
void stage(const std::string& name, const Flags& f, F&& body) {
  if (!f.quiet) std::cerr << "[" << name << "]\n";
  try {
    body();
  } catch (const UsageError&) {
    throw;
  } catch (const pipeline::StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw pipeline::StageError(name, e.what());
  }
}

int cmd_simulate(const Flags& f) {
  const auto c = resolve(f);
  if (f.duration && *f.duration == 0) throw UsageError("--duration must be at least 1");
  auto s = load_scenario(c);
  if (f.duration) s.duration = *f.duration;
  stage("simulate", f, [&] {
    const auto result = s.run();
    auto out = open_out(c.out / "dataset.csv");
    write_dataset_csv(out, result.dataset);
    write_json(c.out / "scenario.json", s.to_json());
  });
  return 0;
}

int cmd_train(const Flags& f) {
  const auto c = resolve(f);
  require_file(c.dataset, "dataset");
  stage("train", f, [&] {
    const auto ds = load_dataset(c.dataset);
    const auto features = pipeline::select_features(ds, graph_for(c), c.trace, c.resources);
    auto windows = make_windows(ds, c.tft.window_spec(), c.trace, features);
    auto split = pipeline::split_for_run(std::move(windows), c.tft.validation_fraction,
                                         c.holdout_fraction);
    tft::TftModel model(c.tft, features, ds.target(c.trace).name);
    const auto report = tft::train(model, split.train, split.validation);
    model.save(checkpoint_path(c));
    nlohmann::json doc = report.to_json();
    doc["config"] = c.tft.to_json();
    doc["features"] = features;
    doc["target"] = model.target();
    if (!split.holdout.empty()) doc["holdout"] = pipeline::score_windows(model, split.holdout).to_json();
    write_json(c.out / "training_report.json", doc);
  });
  return 0;
}

int cmd_predict(const Flags& f) {
  const auto c = resolve(f);
  auto l = load_model_and_data(c);
  stage("predict", f, [&] {
    const auto fc = l.model.predict(pick_window(l, f));
    auto out = open_out(c.out / "forecast.csv");
    fc.write_csv(out);
  });
  return 0;
}

int cmd_interpret(const Flags& f) {
  const auto c = resolve(f);
  auto l = load_model_and_data(c);
  stage("interpret", f, [&] {
    const auto imp = l.model.interpret(pick_window(l, f));
    auto out = open_out(c.out / "importance.csv");
    imp.write_csv(out);
  });
  return 0;
}

int cmd_plan(const Flags& f) {
  const auto c = resolve(f);
  if (!c.sla_ms) throw UsageError("plan needs --sla-ms or run.sla_ms in the config");
  auto l = load_model_and_data(c);
  stage("plan", f, [&] {
    const auto configs = current_configs(c, l.dataset);
    const auto catalog = pipeline::feature_catalog(l.model.features(), configs);
    std::span<const Window> windows(l.windows);
    if (f.window) windows = windows.first(*f.window + 1);
    const auto outcome = pipeline::plan_from_windows(l.model, windows, catalog, *c.sla_ms, c);
    write_json(c.out / "plan.json", outcome.plan.to_json());
    write_json(c.out / "plan_outcome.json", outcome.to_json());
  });
  return 0;
}

int cmd_evaluate(const Flags& f) {
  const auto c = resolve(f);
  auto l = load_model_and_data(c);
  stage("evaluate", f, [&] {
    auto split = pipeline::split_for_run(l.windows, l.model.config().validation_fraction,
                                         c.holdout_fraction);
    const auto& scored = split.holdout.empty() ? split.validation : split.holdout;
    write_json(c.out / "evaluation.json", pipeline::score_windows(l.model, scored).to_json());
  });
  return 0;
}

int cmd_e2e(const Flags& f) {
  const auto c = resolve(f);
  const auto s = load_scenario(c);
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = pipeline::run_e2e(s, c, [&](std::string_view name) {
    if (!f.quiet) std::cerr << "[" << name << "]\n";
  });
  stage("write", f, [&] {
    write_json(c.out / "e2e_report.json", report.to_json());
    write_json(c.out / "plan.json", report.outcome.plan.to_json());
  });
  if (!f.quiet) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "tft r2 " << report.holdout.model.r2 << " (persistence "
              << report.holdout.persistence.r2 << "); p95 " << report.steady_p95_before
              << " -> " << report.p95_after << " ms against SLA " << report.sla_ms << " ms; "
              << (report.sla_met ? "met" : "not met") << "; " << secs << " s\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latency forecasting and SLA-driven autoscaling plans"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "INI run configuration");
  app.add_option("--seed", f.seed, "Seed for the simulator and the model");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--trace", f.trace, "Target trace");
  app.add_option("--resources", f.resources, "horizontal, vertical or both");
  app.add_option("--sla-ms", f.sla_ms, "SLA threshold in milliseconds");
  app.add_flag("--quiet", f.quiet, "No progress on stderr");

  auto* simulate = app.add_subcommand("simulate", "Simulate a scenario into a dataset CSV");
  simulate->add_option("--scenario", f.scenario, "Scenario JSON");
  simulate->add_option("--duration", f.duration, "Override the scenario length in steps");

  auto* train = app.add_subcommand("train", "Train a forecaster on a dataset");
  train->add_option("--dataset", f.dataset, "Dataset CSV");
  train->add_option("--scenario", f.scenario, "Scenario JSON, for the call graph");
  train->add_option("--checkpoint", f.checkpoint, "Checkpoint to write");
  train->add_option("--epochs", f.epochs, "Maximum epochs");

  CLI::App* with_model[] = {
      app.add_subcommand("predict", "Quantile forecast for one window"),
      app.add_subcommand("interpret", "Variable importance for one window"),
      app.add_subcommand("plan", "Scaling plan from the latest window"),
      app.add_subcommand("evaluate", "Hold-out RMSE and R2 against persistence"),
  };
  for (auto* sub : with_model) {
    sub->add_option("--dataset", f.dataset, "Dataset CSV");
    sub->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
    if (sub->get_name() != "evaluate") {
      sub->add_option("--window", f.window, "Window index (default: last)");
    }
  }
  with_model[2]->add_option("--scenario", f.scenario, "Scenario JSON, for resource bounds");

  auto* e2e = app.add_subcommand("e2e", "Run the full loop on a scenario");
  e2e->add_option("--scenario", f.scenario, "Scenario JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto name = app.get_subcommands().front()->get_name();
    if (name == "simulate") return cmd_simulate(f);
    if (name == "train") return cmd_train(f);
    if (name == "predict") return cmd_predict(f);
    if (name == "interpret") return cmd_interpret(f);
    if (name == "plan") return cmd_plan(f);
    if (name == "evaluate") return cmd_evaluate(f);
    if (name == "e2e") return cmd_e2e(f);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const pipeline::StageError& e) {
    std::cerr << "error in stage " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error in stage load: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
