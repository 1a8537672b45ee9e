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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

const fs::path kSource = LATSCALE_SOURCE_DIR;
const std::string kCli = LATSCALE_CLI;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " --quiet > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "latscale_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.ini") << "[tft]\nencoder_length = 16\ndecoder_length = 4\n"
                                        "hidden_size = 4\n[run]\nholdout_fraction = 0.1\n";
    scenario_ = (kSource / "scenarios/demo.json").string();
    ASSERT_EQ(run("simulate --scenario " + scenario_ + " --duration 160 --out " +
                  (dir_ / "a").string()),
              0);
    ASSERT_EQ(run("train --config " + (dir_ / "tiny.ini").string() + " --dataset " +
                  data().string() + " --epochs 1 --out " + (dir_ / "a").string()),
              0);
  }
  static fs::path data() { return dir_ / "a" / "dataset.csv"; }
  static std::string model_args() {
    return "--config " + (dir_ / "tiny.ini").string() + " --dataset " + data().string() +
           " --out " + (dir_ / "a").string();
  }
  static inline fs::path dir_;
  static inline std::string scenario_;
};

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("simulate --scenario " + scenario_ + " --duration 0"), 2);
  EXPECT_EQ(run("simulate --scenario /nonexistent.json"), 2);
  EXPECT_EQ(run("predict --dataset /nonexistent.csv"), 2);
  EXPECT_EQ(run("train --dataset " + data().string() + " --resources diagonal"), 2);
  EXPECT_EQ(run("train --config /nonexistent.ini --dataset " + data().string()), 2);
  EXPECT_EQ(run("plan " + model_args()), 2);  // no SLA given
  EXPECT_EQ(run("predict " + model_args() + " --window 100000"), 2);
}

TEST_F(Cli, RuntimeFailureExitsThree) {
  EXPECT_EQ(run("train --dataset " + data().string() + " --trace teal --out " +
                (dir_ / "c").string()),
            3);
}

TEST_F(Cli, SimulateIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(run("simulate --scenario " + scenario_ + " --duration 160 --out " +
                (dir_ / "b").string()),
            0);
  EXPECT_EQ(slurp(dir_ / "a" / "dataset.csv"), slurp(dir_ / "b" / "dataset.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "scenario.json"), slurp(dir_ / "b" / "scenario.json"));
  ASSERT_EQ(run("simulate --scenario " + scenario_ + " --duration 160 --seed 8 --out " +
                (dir_ / "s8").string()),
            0);
  EXPECT_NE(slurp(dir_ / "a" / "dataset.csv"), slurp(dir_ / "s8" / "dataset.csv"));
}

TEST_F(Cli, TrainReportEchoesConfigAndEpochs) {
  auto doc = nlohmann::json::parse(slurp(dir_ / "a" / "training_report.json"));
  EXPECT_EQ(doc["config"]["hidden_size"], 4);
  EXPECT_EQ(doc["config"]["attention_heads"], 1);
  EXPECT_EQ(doc["config"]["dropout"], 0.1);
  EXPECT_EQ(doc["config"]["max_epochs"], 1);
  EXPECT_EQ(doc["epochs"].size(), 1u);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "model.json"));
}

TEST_F(Cli, PredictWritesOneRowPerStepAndQuantile) {
  ASSERT_EQ(run("predict " + model_args()), 0);
  std::istringstream csv(slurp(dir_ / "a" / "forecast.csv"));
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4 * 3);
  const auto first = slurp(dir_ / "a" / "forecast.csv");
  ASSERT_EQ(run("predict " + model_args()), 0);
  EXPECT_EQ(first, slurp(dir_ / "a" / "forecast.csv"));
}

TEST_F(Cli, InterpretPlanAndEvaluateWriteTheirFiles) {
  ASSERT_EQ(run("interpret " + model_args() + " --window 3"), 0);
  EXPECT_FALSE(slurp(dir_ / "a" / "importance.csv").empty());
  ASSERT_EQ(run("plan " + model_args() + " --scenario " + scenario_ + " --sla-ms 1"), 0);
  auto plan = nlohmann::json::parse(slurp(dir_ / "a" / "plan.json"));
  EXPECT_EQ(plan["sla_ms"], 1.0);
  EXPECT_GT(plan["violation_fraction"].get<double>(), 0.0);
  ASSERT_EQ(run("evaluate " + model_args()), 0);
  auto eval = nlohmann::json::parse(slurp(dir_ / "a" / "evaluation.json"));
  EXPECT_TRUE(eval.contains("tft") && eval.contains("persistence"));
}

}  // namespace
