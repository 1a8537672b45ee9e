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

#include "latscale/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "latscale/error.hpp"

namespace latscale::sim {

std::vector<std::string> CallGraph::traces() const {
  std::vector<std::string> out;
  for (const auto& p : paths) {
    if (std::find(out.begin(), out.end(), p.color) == out.end()) out.push_back(p.color);
  }
  return out;
}

std::vector<std::string> CallGraph::services_on(std::string_view trace) const {
  std::vector<std::string> out;
  for (const auto& p : paths) {
    if (p.color != trace) continue;
    for (const auto& hop : p.hops) {
      if (std::find(out.begin(), out.end(), hop) == out.end()) out.push_back(hop);
    }
  }
  return out;
}

std::vector<std::string> CallGraph::topological_order() const {
  std::map<std::string, int, std::less<>> indegree;
  for (const auto& n : nodes) indegree[n] = 0;
  for (const auto& [from, to] : edges) ++indegree[to];
  std::deque<std::string> ready;
  for (const auto& n : nodes) {
    if (indegree[n] == 0) ready.push_back(n);
  }
  std::vector<std::string> order;
  while (!ready.empty()) {
    auto n = ready.front();
    ready.pop_front();
    order.push_back(n);
    for (const auto& [from, to] : edges) {
      if (from == n && --indegree[to] == 0) ready.push_back(to);
    }
  }
  if (order.size() != nodes.size()) {
    throw Error(ErrorCode::kInvalidArgument, "call graph contains a cycle");
  }
  return order;
}

void CallGraph::validate() const {
  std::set<std::string, std::less<>> known(nodes.begin(), nodes.end());
  std::set<std::pair<std::string, std::string>> edge_set(edges.begin(), edges.end());
  for (const auto& [from, to] : edges) {
    if (!known.contains(from) || !known.contains(to)) {
      throw Error(ErrorCode::kInvalidArgument, "edge references an unknown node");
    }
  }
  for (const auto& p : paths) {
    if (p.hops.size() < 2) {
      throw Error(ErrorCode::kInvalidArgument, "path " + p.color + " needs at least 2 hops");
    }
    for (std::size_t i = 0; i + 1 < p.hops.size(); ++i) {
      if (!edge_set.contains({p.hops[i], p.hops[i + 1]})) {
        throw Error(ErrorCode::kInvalidArgument,
                    "path " + p.color + " is not a chain of graph edges");
      }
    }
    if (p.hops.front() != "front-end") {
      // A sub-path must branch off a service its trace already visits.
      bool branches = std::any_of(paths.begin(), paths.end(), [&](const TracePath& other) {
        return &other != &p && other.color == p.color &&
               std::find(other.hops.begin(), other.hops.end(), p.hops.front()) !=
                   other.hops.end();
      });
      if (!branches) {
        throw Error(ErrorCode::kInvalidArgument,
                    "path " + p.color + " must start at front-end or branch off its trace");
      }
    }
  }
  topological_order();
}

CallGraph CallGraph::from_paths(std::vector<TracePath> paths) {
  CallGraph g;
  for (const auto& p : paths) {
    for (std::size_t i = 0; i < p.hops.size(); ++i) {
      if (std::find(g.nodes.begin(), g.nodes.end(), p.hops[i]) == g.nodes.end()) {
        g.nodes.push_back(p.hops[i]);
      }
      if (i + 1 < p.hops.size()) {
        std::pair<std::string, std::string> e{p.hops[i], p.hops[i + 1]};
        if (std::find(g.edges.begin(), g.edges.end(), e) == g.edges.end()) {
          g.edges.push_back(std::move(e));
        }
      }
    }
  }
  g.paths = std::move(paths);
  g.validate();
  return g;
}

CallGraph build_robotshop_graph() {
  return CallGraph::from_paths({
      {"purple", {"front-end", "shipping", "cart", "cart-db"}},
      {"green", {"front-end", "cart", "cart-db"}},
      {"green", {"cart", "catalogue", "catalogue-db"}},
      {"blue", {"front-end", "catalogue", "catalogue-db"}},
      {"red", {"front-end", "user", "user-db"}},
      {"black", {"front-end", "payment", "user", "user-db"}},
  });
}

void ServiceConfig::validate() const {
  if (!(base_service_ms > 0.0) || !(per_pod_rate > 0.0) || pods < 1 ||
      !(cpu_cores > 0.0) || !(mem_bytes > 0.0) || !(reference_cpu_cores > 0.0) ||
      pods_max < pods) {
    throw Error(ErrorCode::kInvalidArgument, "invalid configuration for service " + name);
  }
}

ServiceConfigs robotshop_services() {
  ServiceConfigs out;
  auto add = [&](std::string name, double base_ms, double rate, int pods) {
    ServiceConfig c;
    c.name = name;
    c.base_service_ms = base_ms;
    c.per_pod_rate = rate;
    c.pods = pods;
    out.emplace(std::move(name), std::move(c));
  };
  add("front-end", 4.0, 400.0, 2);
  add("shipping", 12.0, 60.0, 1);
  add("cart", 15.0, 25.0, 2);
  add("cart-db", 3.0, 400.0, 1);
  add("catalogue", 10.0, 60.0, 1);
  add("catalogue-db", 3.0, 400.0, 1);
  add("user", 8.0, 80.0, 1);
  add("user-db", 3.0, 400.0, 1);
  add("payment", 20.0, 40.0, 1);
  return out;
}

const TraceWorkload* WorkloadProfile::find(std::string_view trace) const {
  for (const auto& t : traces) {
    if (t.trace == trace) return &t;
  }
  return nullptr;
}

double utilization(const ServiceConfig& config, double arrival_rate) {
  const double rate =
      config.per_pod_rate * config.cpu_cores / config.reference_cpu_cores;
  return arrival_rate / (static_cast<double>(config.pods) * rate);
}

double service_latency_ms(const ServiceConfig& config, double arrival_rate,
                          const SimOptions& options) {
  const double rho = utilization(config, arrival_rate);
  double base = config.base_service_ms;
  if (config.mem_bytes < config.mem_floor_bytes) base *= options.mem_penalty;
  return base / std::max(options.util_floor, 1.0 - std::min(rho, options.rho_cap));
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

void set_resource(ServiceConfig& c, Resource r, double value) {
  switch (r) {
    case Resource::kPods: c.pods = std::max(1, static_cast<int>(std::lround(value))); break;
    case Resource::kCpu: c.cpu_cores = value; break;
    case Resource::kMem: c.mem_bytes = value; break;
    case Resource::kCalls:
      throw Error(ErrorCode::kInvalidArgument, "calls are not a service resource");
  }
}

}  // namespace

SimulationResult simulate_run(const CallGraph& graph, const WorkloadProfile& workload,
                              const ServiceConfigs& configs, std::size_t duration_steps,
                              std::uint64_t seed, const ResourceSchedule& schedule,
                              const SimOptions& options) {
  if (duration_steps < 1) {
    throw Error(ErrorCode::kInvalidArgument, "duration must be at least one step");
  }
  graph.validate();
  ServiceConfigs state;
  for (const auto& node : graph.nodes) {
    auto it = configs.find(node);
    if (it == configs.end()) {
      throw Error(ErrorCode::kUnconfiguredService, "service " + node + " is not configured");
    }
    it->second.validate();
    state.emplace(node, it->second);
  }
  auto check_service = [&](const std::string& name) -> ServiceConfig& {
    auto it = state.find(name);
    if (it == state.end()) {
      throw Error(ErrorCode::kUnknownService, "schedule references unknown service " + name);
    }
    return it->second;
  };
  for (const auto& c : schedule.changes) check_service(c.service);
  for (const auto& w : schedule.walks) check_service(w.service);

  const auto traces = graph.traces();
  std::vector<std::vector<std::size_t>> trace_service_idx(traces.size());
  const auto& nodes = graph.nodes;
  for (std::size_t m = 0; m < traces.size(); ++m) {
    for (const auto& s : graph.services_on(traces[m])) {
      auto pos = std::find(nodes.begin(), nodes.end(), s) - nodes.begin();
      trace_service_idx[m].push_back(static_cast<std::size_t>(pos));
    }
  }

  auto workload_rng = stream(seed, 1);
  auto latency_rng = stream(seed, 2);
  auto schedule_rng = stream(seed, 3);
  std::normal_distribution<double> unit_normal(0.0, 1.0);

  const auto n = duration_steps;
  std::vector<std::vector<double>> cps(traces.size(), std::vector<double>(n));
  std::vector<std::vector<double>> latency(traces.size(), std::vector<double>(n));
  std::vector<std::vector<double>> pods(nodes.size(), std::vector<double>(n));
  std::vector<std::vector<double>> cpu(nodes.size(), std::vector<double>(n));
  std::vector<std::vector<double>> mem(nodes.size(), std::vector<double>(n));

  std::vector<double> arrivals(nodes.size());
  std::vector<double> hop_ms(nodes.size());
  std::vector<double> samples;
  for (std::size_t t = 0; t < n; ++t) {
    for (const auto& c : schedule.changes) {
      if (c.step == t) set_resource(check_service(c.service), c.resource, c.value);
    }
    for (const auto& w : schedule.walks) {
      if (w.interval == 0 || t % w.interval != 0 || t >= w.until) continue;
      double value = 0.0;
      if (w.resource == Resource::kPods) {
        std::uniform_int_distribution<int> pick(static_cast<int>(std::lround(w.lo)),
                                                static_cast<int>(std::lround(w.hi)));
        value = pick(schedule_rng);
      } else {
        std::uniform_real_distribution<double> pick(w.lo, w.hi);
        value = pick(schedule_rng);
      }
      set_resource(check_service(w.service), w.resource, value);
    }

    std::fill(arrivals.begin(), arrivals.end(), 0.0);
    for (std::size_t m = 0; m < traces.size(); ++m) {
      double rate = 0.0;
      if (const auto* wl = workload.find(traces[m])) {
        rate = wl->base;
        if (wl->amplitude != 0.0 && wl->period > 0.0) {
          rate += wl->amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                                               wl->period +
                                           wl->phase);
        }
        if (wl->noise_sigma > 0.0) rate += wl->noise_sigma * unit_normal(workload_rng);
        for (const auto& b : wl->bursts) {
          if (t >= b.start && t < b.start + b.duration) rate += b.magnitude;
        }
      }
      rate = std::max(0.0, rate);
      cps[m][t] = rate;
      for (auto s : trace_service_idx[m]) arrivals[s] += rate;
    }

    for (std::size_t s = 0; s < nodes.size(); ++s) {
      const auto& c = state.at(nodes[s]);
      hop_ms[s] = service_latency_ms(c, arrivals[s], options);
      pods[s][t] = c.pods;
      cpu[s][t] = c.cpu_cores;
      mem[s][t] = c.mem_bytes;
    }

    for (std::size_t m = 0; m < traces.size(); ++m) {
      const auto requests =
          std::max<long>(1, std::lround(cps[m][t]));
      samples.assign(static_cast<std::size_t>(requests), 0.0);
      for (auto& sample : samples) {
        double total = 0.0;
        for (auto s : trace_service_idx[m]) {
          double noise = 1.0;
          if (options.latency_noise_sigma > 0.0) {
            noise = std::exp(options.latency_noise_sigma * unit_normal(latency_rng));
          }
          total += hop_ms[s] * noise;
        }
        sample = total;
      }
      latency[m][t] = p95(samples);
    }
  }

  std::vector<MetricSeries> series;
  for (std::size_t m = 0; m < traces.size(); ++m) {
    series.push_back({"cps." + traces[m], MetricKind::kFrontEndCalls, "cps", traces[m],
                      std::move(cps[m])});
  }
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    series.push_back({"pods." + nodes[s], MetricKind::kHorizontalResource, "pods", nodes[s],
                      std::move(pods[s])});
  }
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    series.push_back({"cpu." + nodes[s], MetricKind::kVerticalResource, "cpu", nodes[s],
                      std::move(cpu[s])});
  }
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    series.push_back({"mem." + nodes[s], MetricKind::kVerticalResource, "mem", nodes[s],
                      std::move(mem[s])});
  }
  for (std::size_t m = 0; m < traces.size(); ++m) {
    series.push_back({"latency_p95." + traces[m], MetricKind::kTargetLatency, "latency_p95",
                      traces[m], std::move(latency[m])});
  }
  std::vector<std::int64_t> time(n);
  for (std::size_t t = 0; t < n; ++t) time[t] = static_cast<std::int64_t>(t);
  return {TraceDataset(std::move(time), std::move(series)), std::move(state)};
}

ServiceConfigs apply_plan(const ServiceConfigs& configs, const ScalingPlan& plan) {
  ServiceConfigs out = configs;
  for (const auto& a : plan.actions) {
    auto it = out.find(a.service);
    if (it == out.end()) {
      throw Error(ErrorCode::kUnknownService, "plan references unknown service " + a.service);
    }
    auto& c = it->second;
    switch (a.resource) {
      case Resource::kPods:
        c.pods = static_cast<int>(std::clamp<long>(
            std::lround(a.factor * static_cast<double>(c.pods)), 1, c.pods_max));
        break;
      case Resource::kCpu:
        c.cpu_cores = std::clamp(a.factor * c.cpu_cores, c.cpu_min, c.cpu_max);
        break;
      case Resource::kMem:
        c.mem_bytes = std::clamp(a.factor * c.mem_bytes, c.mem_min, c.mem_max);
        break;
      case Resource::kCalls:
        break;
    }
  }
  return out;
}

SimulationResult Scenario::run() const {
  return simulate_run(graph, workload, services, duration, seed, schedule, options);
}

nlohmann::json Scenario::to_json() const {
  nlohmann::json doc;
  doc["seed"] = seed;
  doc["duration"] = duration;
  auto& paths = doc["graph"]["paths"];
  paths = nlohmann::json::array();
  for (const auto& p : graph.paths) paths.push_back({{"color", p.color}, {"hops", p.hops}});
  doc["services"] = nlohmann::json::array();
  for (const auto& [name, c] : services) {
    doc["services"].push_back({{"name", c.name},
                               {"base_service_ms", c.base_service_ms},
                               {"per_pod_rate", c.per_pod_rate},
                               {"pods", c.pods},
                               {"cpu_cores", c.cpu_cores},
                               {"mem_bytes", c.mem_bytes},
                               {"reference_cpu_cores", c.reference_cpu_cores},
                               {"mem_floor_bytes", c.mem_floor_bytes},
                               {"pods_max", c.pods_max},
                               {"cpu_min", c.cpu_min},
                               {"cpu_max", c.cpu_max},
                               {"mem_min", c.mem_min},
                               {"mem_max", c.mem_max}});
  }
  doc["workload"] = nlohmann::json::array();
  for (const auto& w : workload.traces) {
    nlohmann::json item{{"trace", w.trace},         {"base", w.base},
                        {"amplitude", w.amplitude}, {"period", w.period},
                        {"phase", w.phase},         {"noise_sigma", w.noise_sigma}};
    item["bursts"] = nlohmann::json::array();
    for (const auto& b : w.bursts) {
      item["bursts"].push_back(
          {{"start", b.start}, {"duration", b.duration}, {"magnitude", b.magnitude}});
    }
    doc["workload"].push_back(std::move(item));
  }
  doc["schedule"]["changes"] = nlohmann::json::array();
  for (const auto& c : schedule.changes) {
    doc["schedule"]["changes"].push_back({{"step", c.step},
                                          {"service", c.service},
                                          {"resource", std::string(to_string(c.resource))},
                                          {"value", c.value}});
  }
  doc["schedule"]["walks"] = nlohmann::json::array();
  for (const auto& w : schedule.walks) {
    nlohmann::json item{{"service", w.service},
                        {"resource", std::string(to_string(w.resource))},
                        {"interval", w.interval},
                        {"lo", w.lo},
                        {"hi", w.hi}};
    if (w.until != static_cast<std::size_t>(-1)) item["until"] = w.until;
    doc["schedule"]["walks"].push_back(std::move(item));
  }
  doc["options"] = {{"latency_noise_sigma", options.latency_noise_sigma},
                    {"util_floor", options.util_floor},
                    {"rho_cap", options.rho_cap},
                    {"mem_penalty", options.mem_penalty}};
  return doc;
}

Scenario Scenario::from_json(const nlohmann::json& doc) {
  Scenario s;
  try {
    s.seed = doc.value("seed", std::uint64_t{1});
    s.duration = doc.value("duration", std::size_t{1000});
    if (doc.contains("graph") && doc["graph"].contains("paths")) {
      std::vector<TracePath> paths;
      for (const auto& p : doc["graph"]["paths"]) {
        paths.push_back({p.at("color").get<std::string>(),
                         p.at("hops").get<std::vector<std::string>>()});
      }
      s.graph = CallGraph::from_paths(std::move(paths));
    }
    s.services = robotshop_services();
    for (const auto& item : doc.value("services", nlohmann::json::array())) {
      auto name = item.at("name").get<std::string>();
      ServiceConfig c;
      if (auto it = s.services.find(name); it != s.services.end()) c = it->second;
      c.name = name;
      c.base_service_ms = item.value("base_service_ms", c.base_service_ms);
      c.per_pod_rate = item.value("per_pod_rate", c.per_pod_rate);
      c.pods = item.value("pods", c.pods);
      c.cpu_cores = item.value("cpu_cores", c.cpu_cores);
      c.mem_bytes = item.value("mem_bytes", c.mem_bytes);
      c.reference_cpu_cores = item.value("reference_cpu_cores", c.reference_cpu_cores);
      c.mem_floor_bytes = item.value("mem_floor_bytes", c.mem_floor_bytes);
      c.pods_max = item.value("pods_max", c.pods_max);
      c.cpu_min = item.value("cpu_min", c.cpu_min);
      c.cpu_max = item.value("cpu_max", c.cpu_max);
      c.mem_min = item.value("mem_min", c.mem_min);
      c.mem_max = item.value("mem_max", c.mem_max);
      c.validate();
      s.services[name] = c;
    }
    for (const auto& item : doc.value("workload", nlohmann::json::array())) {
      TraceWorkload w;
      w.trace = item.at("trace").get<std::string>();
      w.base = item.value("base", 0.0);
      w.amplitude = item.value("amplitude", 0.0);
      w.period = item.value("period", 100.0);
      w.phase = item.value("phase", 0.0);
      w.noise_sigma = item.value("noise_sigma", 0.0);
      for (const auto& b : item.value("bursts", nlohmann::json::array())) {
        w.bursts.push_back({b.at("start").get<std::size_t>(),
                            b.at("duration").get<std::size_t>(),
                            b.at("magnitude").get<double>()});
      }
      s.workload.traces.push_back(std::move(w));
    }
    if (doc.contains("schedule")) {
      const auto& sch = doc["schedule"];
      for (const auto& c : sch.value("changes", nlohmann::json::array())) {
        s.schedule.changes.push_back({c.at("step").get<std::size_t>(),
                                      c.at("service").get<std::string>(),
                                      resource_from_string(c.at("resource").get<std::string>()),
                                      c.at("value").get<double>()});
      }
      for (const auto& w : sch.value("walks", nlohmann::json::array())) {
        ResourceWalk walk;
        walk.service = w.at("service").get<std::string>();
        walk.resource = resource_from_string(w.value("resource", std::string("pods")));
        walk.interval = w.value("interval", walk.interval);
        walk.lo = w.at("lo").get<double>();
        walk.hi = w.at("hi").get<double>();
        walk.until = w.value("until", walk.until);
        s.schedule.walks.push_back(std::move(walk));
      }
    }
    if (doc.contains("options")) {
      const auto& o = doc["options"];
      s.options.latency_noise_sigma =
          o.value("latency_noise_sigma", s.options.latency_noise_sigma);
      s.options.util_floor = o.value("util_floor", s.options.util_floor);
      s.options.rho_cap = o.value("rho_cap", s.options.rho_cap);
      s.options.mem_penalty = o.value("mem_penalty", s.options.mem_penalty);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad scenario: ") + e.what());
  }
  return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open scenario " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "scenario " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

}  // namespace latscale::sim
