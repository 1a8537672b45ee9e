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

#include "latscale/plan.hpp"

#include "latscale/error.hpp"

namespace latscale {

std::string_view to_string(Resource r) {
  switch (r) {
    case Resource::kPods: return "pods";
    case Resource::kCpu: return "cpu";
    case Resource::kMem: return "mem";
    case Resource::kCalls: return "cps";
  }
  return "unknown";
}

Resource resource_from_string(std::string_view name) {
  if (name == "pods") return Resource::kPods;
  if (name == "cpu") return Resource::kCpu;
  if (name == "mem") return Resource::kMem;
  if (name == "cps") return Resource::kCalls;
  throw Error(ErrorCode::kInvalidArgument, "unknown resource '" + std::string(name) + "'");
}

bool ScalingPlan::is_noop() const {
  for (const auto& a : actions) {
    if (a.recommended != a.current) return false;
  }
  return true;
}

nlohmann::json ScalingPlan::to_json() const {
  nlohmann::json doc;
  doc["trace"] = trace;
  doc["sla_ms"] = sla_ms;
  doc["violation_fraction"] = violation_fraction;
  doc["theta"] = theta;
  doc["converged"] = converged;
  doc["actions"] = nlohmann::json::array();
  for (const auto& a : actions) {
    doc["actions"].push_back({{"service", a.service},
                              {"resource", std::string(to_string(a.resource))},
                              {"current", a.current},
                              {"factor", a.factor},
                              {"recommended", a.recommended}});
  }
  doc["advisories"] = nlohmann::json::array();
  for (const auto& a : advisories) {
    doc["advisories"].push_back(
        {{"feature", a.feature}, {"trace", a.trace}, {"factor", a.factor}, {"note", a.note}});
  }
  doc["provenance"] = {{"features", features},
                       {"objective", objective},
                       {"target", target_mode},
                       {"factor_reading", "multiplicative"}};
  return doc;
}

ScalingPlan ScalingPlan::from_json(const nlohmann::json& doc) {
  ScalingPlan plan;
  plan.trace = doc.at("trace").get<std::string>();
  plan.sla_ms = doc.at("sla_ms").get<double>();
  plan.violation_fraction = doc.at("violation_fraction").get<double>();
  plan.theta = doc.at("theta").get<std::vector<double>>();
  plan.converged = doc.at("converged").get<bool>();
  for (const auto& a : doc.at("actions")) {
    plan.actions.push_back({a.at("service").get<std::string>(),
                            resource_from_string(a.at("resource").get<std::string>()),
                            a.at("current").get<double>(), a.at("factor").get<double>(),
                            a.at("recommended").get<double>()});
  }
  for (const auto& a : doc.at("advisories")) {
    plan.advisories.push_back({a.at("feature").get<std::string>(),
                               a.at("trace").get<std::string>(), a.at("factor").get<double>(),
                               a.at("note").get<std::string>()});
  }
  if (doc.contains("provenance")) {
    const auto& p = doc["provenance"];
    plan.features = p.value("features", std::vector<std::string>{});
    plan.objective = p.value("objective", 0.0);
    plan.target_mode = p.value("target", std::string("desired"));
  }
  return plan;
}

}  // namespace latscale
