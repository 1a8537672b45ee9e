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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "latscale/plan.hpp"
#include "latscale/trace_data.hpp"

namespace latscale::sim {

struct TracePath {
  std::string color;
  std::vector<std::string> hops;
};

struct CallGraph {
  std::vector<std::string> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  std::vector<TracePath> paths;

  // Distinct path colors in declaration order.
  std::vector<std::string> traces() const;
  // Services a request of `trace` visits, each once, in hop order.
  std::vector<std::string> services_on(std::string_view trace) const;
  std::vector<std::string> topological_order() const;
  void validate() const;

  // Builds nodes and edges from the paths.
  static CallGraph from_paths(std::vector<TracePath> paths);
};

CallGraph build_robotshop_graph();

struct ServiceConfig {
  std::string name;
  double base_service_ms = 5.0;
  double per_pod_rate = 100.0;  // requests/s per pod at reference_cpu_cores
  int pods = 1;
  double cpu_cores = 1.0;
  double mem_bytes = 512.0 * 1024 * 1024;

  double reference_cpu_cores = 1.0;
  double mem_floor_bytes = 0.0;  // below this the base time is penalized
  int pods_max = 16;
  double cpu_min = 0.1;
  double cpu_max = 16.0;
  double mem_min = 64.0 * 1024 * 1024;
  double mem_max = 64.0 * 1024 * 1024 * 1024;

  void validate() const;
};

using ServiceConfigs = std::map<std::string, ServiceConfig, std::less<>>;

struct Burst {
  std::size_t start = 0;
  std::size_t duration = 0;
  double magnitude = 0.0;
};

struct TraceWorkload {
  std::string trace;
  double base = 0.0;       // calls/s
  double amplitude = 0.0;  // sinusoid amplitude, calls/s
  double period = 100.0;   // steps
  double phase = 0.0;      // radians
  double noise_sigma = 0.0;
  std::vector<Burst> bursts;
};

struct WorkloadProfile {
  std::vector<TraceWorkload> traces;

  const TraceWorkload* find(std::string_view trace) const;
};

// Resource changes over the run; lets generated data carry resource
// variability the models can learn from.
struct ResourceChange {
  std::size_t step = 0;
  std::string service;
  Resource resource = Resource::kPods;
  double value = 1.0;
};

// Every `interval` steps the resource is redrawn uniformly from [lo, hi]
// (pod counts are drawn as integers).
struct ResourceWalk {
  std::string service;
  Resource resource = Resource::kPods;
  std::size_t interval = 50;
  double lo = 1.0;
  double hi = 4.0;
  std::size_t until = static_cast<std::size_t>(-1);  // walk stops at this step
};

struct ResourceSchedule {
  std::vector<ResourceChange> changes;
  std::vector<ResourceWalk> walks;

  bool empty() const { return changes.empty() && walks.empty(); }
};

struct SimOptions {
  double latency_noise_sigma = 0.1;  // lognormal sigma; 0 disables noise
  double util_floor = 0.02;
  double rho_cap = 0.98;
  double mem_penalty = 2.0;
};

// Latency of one request at one service, before noise.
double service_latency_ms(const ServiceConfig& config, double arrival_rate,
                          const SimOptions& options);
double utilization(const ServiceConfig& config, double arrival_rate);

struct SimulationResult {
  TraceDataset dataset;
  ServiceConfigs final_configs;  // resources in force at the last step
};

SimulationResult simulate_run(const CallGraph& graph, const WorkloadProfile& workload,
                              const ServiceConfigs& configs, std::size_t duration_steps,
                              std::uint64_t seed, const ResourceSchedule& schedule = {},
                              const SimOptions& options = {});

inline TraceDataset simulate(const CallGraph& graph, const WorkloadProfile& workload,
                             const ServiceConfigs& configs, std::size_t duration_steps,
                             std::uint64_t seed, const ResourceSchedule& schedule = {},
                             const SimOptions& options = {}) {
  return simulate_run(graph, workload, configs, duration_steps, seed, schedule, options)
      .dataset;
}

ServiceConfigs apply_plan(const ServiceConfigs& configs, const ScalingPlan& plan);

struct Scenario {
  CallGraph graph = build_robotshop_graph();
  ServiceConfigs services;
  WorkloadProfile workload;
  ResourceSchedule schedule;
  SimOptions options;
  std::size_t duration = 1000;
  std::uint64_t seed = 1;

  SimulationResult run() const;
  nlohmann::json to_json() const;
  static Scenario from_json(const nlohmann::json& doc);
  static Scenario load(const std::filesystem::path& path);
};

// Default per-service configs for the Robot Shop graph.
ServiceConfigs robotshop_services();

}  // namespace latscale::sim
