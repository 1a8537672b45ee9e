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

#include <functional>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "latscale/error.hpp"
#include "latscale/sim.hpp"

namespace latscale::sim {
namespace {

SimOptions noiseless() {
  SimOptions o;
  o.latency_noise_sigma = 0.0;
  return o;
}

WorkloadProfile flat_workload(double cps) {
  WorkloadProfile w;
  for (const auto& t : build_robotshop_graph().traces()) w.traces.push_back({t, cps});
  return w;
}

std::string csv_of(const TraceDataset& ds) {
  std::ostringstream out;
  write_dataset_csv(out, ds);
  return out.str();
}

TEST(CallGraph, RobotShopPaths) {
  auto g = build_robotshop_graph();
  EXPECT_EQ(g.traces(), (std::vector<std::string>{"purple", "green", "blue", "red", "black"}));
  EXPECT_EQ(g.paths[0].hops,
            (std::vector<std::string>{"front-end", "shipping", "cart", "cart-db"}));
  EXPECT_EQ(g.paths.back().hops,
            (std::vector<std::string>{"front-end", "payment", "user", "user-db"}));
  EXPECT_EQ(g.services_on("green"), (std::vector<std::string>{"front-end", "cart", "cart-db",
                                                               "catalogue", "catalogue-db"}));
  auto order = g.topological_order();
  EXPECT_EQ(order.size(), g.nodes.size());
  auto pos = [&](const std::string& n) {
    return std::find(order.begin(), order.end(), n) - order.begin();
  };
  for (const auto& [from, to] : g.edges) EXPECT_LT(pos(from), pos(to));
}

TEST(CallGraph, RejectsCyclesAndDanglingSubPaths) {
  EXPECT_THROW(CallGraph::from_paths({{"x", {"front-end", "a", "front-end"}}}), Error);
  EXPECT_THROW(CallGraph::from_paths({{"x", {"front-end", "a"}}, {"y", {"b", "c"}}}), Error);
  EXPECT_THROW(CallGraph::from_paths({{"x", {"front-end"}}}), Error);
}

TEST(Simulate, ZeroWorkloadIsSumOfBaseTimes) {
  auto g = build_robotshop_graph();
  auto configs = robotshop_services();
  auto ds = simulate(g, flat_workload(0.0), configs, 5, 1, {}, noiseless());
  for (const auto& trace : g.traces()) {
    double expected = 0.0;
    for (const auto& s : g.services_on(trace)) expected += configs.at(s).base_service_ms;
    for (double y : ds.target(trace).values) EXPECT_DOUBLE_EQ(y, expected) << trace;
  }
}

TEST(Simulate, LatencyFormulaDirectEvaluation) {
  ServiceConfig c;
  c.base_service_ms = 20.0;
  c.per_pod_rate = 10.0;
  c.pods = 1;
  EXPECT_NEAR(service_latency_ms(c, 8.0, noiseless()), 100.0, 1e-12);
  EXPECT_NEAR(utilization(c, 8.0), 0.8, 1e-15);
  c.pods = 2;
  EXPECT_NEAR(utilization(c, 8.0), 0.4, 1e-15);
}

TEST(Simulate, SaturationIsBounded) {
  ServiceConfig c;
  c.base_service_ms = 10.0;
  c.per_pod_rate = 10.0;
  const auto o = noiseless();
  double last = 0.0;
  for (double lambda = 0.0; lambda < 9.8; lambda += 0.1) {
    double l = service_latency_ms(c, lambda, o);
    EXPECT_GE(l, last);
    last = l;
  }
  EXPECT_GT(last, 10.0 / 0.03);
  EXPECT_NEAR(service_latency_ms(c, 1e6, o), 10.0 / o.util_floor, 1e-9);
}

TEST(Simulate, VerticalResourcesAreCausal) {
  ServiceConfig c;
  c.base_service_ms = 10.0;
  c.per_pod_rate = 10.0;
  c.mem_floor_bytes = 1e9;
  c.mem_bytes = 2e9;
  const double base = service_latency_ms(c, 5.0, noiseless());
  c.cpu_cores = 2.0;
  EXPECT_LT(service_latency_ms(c, 5.0, noiseless()), base);
  c.cpu_cores = 1.0;
  c.mem_bytes = 5e8;
  EXPECT_DOUBLE_EQ(service_latency_ms(c, 5.0, noiseless()), 2.0 * base);
}

TEST(Simulate, SameSeedIsBitIdentical) {
  auto g = build_robotshop_graph();
  WorkloadProfile w;
  for (const auto& t : g.traces()) w.traces.push_back({t, 12.0, 4.0, 50.0, 0.3, 1.5, {{30, 10, 8.0}}});
  ResourceSchedule sched;
  sched.walks.push_back({"cart", Resource::kPods, 20, 1, 4});
  auto a = csv_of(simulate(g, w, robotshop_services(), 200, 99, sched));
  auto b = csv_of(simulate(g, w, robotshop_services(), 200, 99, sched));
  auto c = csv_of(simulate(g, w, robotshop_services(), 200, 100, sched));
  EXPECT_EQ(a, b);
  EXPECT_EQ(std::hash<std::string>{}(a), std::hash<std::string>{}(b));
  EXPECT_NE(a, c);
}

TEST(Simulate, DatasetHasEverySeries) {
  auto g = build_robotshop_graph();
  auto ds = simulate(g, flat_workload(5.0), robotshop_services(), 10, 3);
  EXPECT_EQ(ds.traces().size(), 5u);
  for (const auto& n : g.nodes) {
    EXPECT_NE(ds.find("pods." + n), nullptr);
    EXPECT_NE(ds.find("cpu." + n), nullptr);
    EXPECT_NE(ds.find("mem." + n), nullptr);
    EXPECT_EQ(ds.feature_count(n), 3u);
  }
  for (const auto& t : g.traces()) EXPECT_NE(ds.find("cps." + t), nullptr);
}

TEST(Simulate, UnconfiguredServiceFails) {
  auto configs = robotshop_services();
  configs.erase("payment");
  try {
    simulate(build_robotshop_graph(), flat_workload(1.0), configs, 3, 1);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnconfiguredService);
  }
  EXPECT_THROW(simulate(build_robotshop_graph(), flat_workload(1.0), robotshop_services(), 0, 1),
               Error);
}

// Adding a pod anywhere never raises any trace's latency (noise off).
TEST(Simulate, PodMonotonicityFuzzed) {
  auto g = build_robotshop_graph();
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> rate(0.0, 40.0);
  std::uniform_int_distribution<int> pods(1, 4);
  std::uniform_int_distribution<std::size_t> which(0, g.nodes.size() - 1);
  for (int c = 0; c < 1000; ++c) {
    auto configs = robotshop_services();
    for (auto& [name, cfg] : configs) cfg.pods = pods(rng);
    WorkloadProfile w;
    for (const auto& t : g.traces()) w.traces.push_back({t, rate(rng)});
    auto bigger = configs;
    bigger.at(g.nodes[which(rng)]).pods += 1;
    auto before = simulate(g, w, configs, 2, 5, {}, noiseless());
    auto after = simulate(g, w, bigger, 2, 5, {}, noiseless());
    for (const auto& t : g.traces()) {
      for (std::size_t i = 0; i < 2; ++i) {
        ASSERT_LE(after.target(t).values[i], before.target(t).values[i]) << "case " << c;
      }
    }
  }
}

ScalingPlan plan_with(std::string service, Resource r, double factor) {
  ScalingPlan p;
  p.actions.push_back({std::move(service), r, 0.0, factor, 0.0});
  return p;
}

TEST(ApplyPlan, PodArithmeticAndClamp) {
  auto configs = robotshop_services();
  configs.at("cart").pods = 2;
  EXPECT_EQ(apply_plan(configs, plan_with("cart", Resource::kPods, 2.0)).at("cart").pods, 4);
  configs.at("cart").pods = 1;
  EXPECT_EQ(apply_plan(configs, plan_with("cart", Resource::kPods, 0.1)).at("cart").pods, 1);
  configs.at("cart").pods = 6;
  configs.at("cart").pods_max = 8;
  EXPECT_EQ(apply_plan(configs, plan_with("cart", Resource::kPods, 3.0)).at("cart").pods, 8);
}

TEST(ApplyPlan, IdentityAndVertical) {
  auto configs = robotshop_services();
  auto same = apply_plan(configs, plan_with("cart", Resource::kPods, 1.0));
  EXPECT_EQ(same.at("cart").pods, configs.at("cart").pods);
  auto cpu = apply_plan(configs, plan_with("cart", Resource::kCpu, 1.5));
  EXPECT_DOUBLE_EQ(cpu.at("cart").cpu_cores, 1.5 * configs.at("cart").cpu_cores);
  auto mem = apply_plan(configs, plan_with("cart", Resource::kMem, 1e9));
  EXPECT_DOUBLE_EQ(mem.at("cart").mem_bytes, configs.at("cart").mem_max);
  try {
    apply_plan(configs, plan_with("nope", Resource::kPods, 2.0));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownService);
  }
}

TEST(Scenario, JsonRoundTrip) {
  Scenario s;
  s.services = robotshop_services();
  s.workload = flat_workload(3.0);
  s.workload.traces[1].bursts.push_back({5, 3, 2.0});
  s.schedule.walks.push_back({"cart", Resource::kPods, 10, 1, 3});
  s.schedule.changes.push_back({4, "catalogue", Resource::kCpu, 2.0});
  s.duration = 30;
  s.seed = 8;
  auto back = Scenario::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(csv_of(back.run().dataset), csv_of(s.run().dataset));
}

}  // namespace
}  // namespace latscale::sim
