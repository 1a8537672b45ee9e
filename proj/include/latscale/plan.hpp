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

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace latscale {

enum class Resource { kPods, kCpu, kMem, kCalls };

std::string_view to_string(Resource r);
Resource resource_from_string(std::string_view name);

struct ScalingAction {
  std::string service;
  Resource resource = Resource::kPods;
  double current = 0.0;
  double factor = 1.0;
  double recommended = 0.0;
};

// Front-end call features cannot be actuated; they surface as advice.
struct Advisory {
  std::string feature;
  std::string trace;
  double factor = 1.0;
  std::string note;
};

struct ScalingPlan {
  std::string trace;
  double sla_ms = 0.0;
  double violation_fraction = 0.0;
  std::vector<std::string> features;  // theta[k + 1] belongs to features[k]
  std::vector<double> theta;          // theta[0] is the intercept
  double objective = 0.0;
  bool converged = true;
  std::string target_mode = "desired";
  std::vector<ScalingAction> actions;
  std::vector<Advisory> advisories;

  bool is_noop() const;
  nlohmann::json to_json() const;
  static ScalingPlan from_json(const nlohmann::json& doc);
};

}  // namespace latscale
