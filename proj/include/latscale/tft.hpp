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
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "latscale/nn/layers.hpp"
#include "latscale/trace_data.hpp"

namespace latscale::tft {

using nn::Index;
using nn::Matrix;

struct TftConfig {
  std::size_t hidden_size = 8;
  std::size_t attention_heads = 1;
  double dropout = 0.1;
  double learning_rate = 0.03;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  std::size_t encoder_length = 400;
  std::size_t decoder_length = 50;
  std::vector<double> quantiles{0.1, 0.5, 0.9};
  std::size_t early_stopping_patience = 5;
  double validation_fraction = 0.2;
  // Learning rate is multiplied by lr_decay after this many epochs without a
  // validation improvement; 0 disables the schedule.
  std::size_t lr_decay_patience = 0;
  double lr_decay = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  WindowSpec window_spec() const { return {encoder_length, decoder_length}; }
  // Column of the quantile closest to 0.5.
  std::size_t median_index() const;

  nlohmann::json to_json() const;
  static TftConfig from_json(const nlohmann::json& doc);
};

// One window after per-window min-max scaling. Known covariates are scaled
// over encoder and decoder steps together; the target over the encoder only.
struct ScaledWindow {
  Matrix encoder;  // k x (features + 1); the last column is the target
  Matrix decoder;  // tau x features
  Eigen::VectorXd label;  // tau, scaled with the target's encoder scaling
  NormalizationState normalization;
  SeriesScaling target_scaling;
};

ScaledWindow scale_window(const Window& window, std::string_view target_name);

struct QuantileForecast {
  std::vector<double> quantiles;
  Matrix values;  // tau x quantiles, milliseconds, ascending along each row
  NormalizationState normalization;

  Eigen::VectorXd column(std::size_t q) const { return values.col(static_cast<Index>(q)); }
  void write_csv(std::ostream& out) const;  // step,quantile,value_ms
};

struct ImportanceSeries {
  std::vector<std::string> encoder_features;
  std::vector<std::string> decoder_features;
  Matrix encoder_variable_importance;  // k x encoder features
  Matrix decoder_variable_importance;  // tau x decoder features
  Matrix attention_profile;            // tau x (k + tau)

  // Per-feature mean of the decoder weights over the decoder steps.
  Eigen::VectorXd mean_decoder_importance() const;
  // step,feature,weight rows: encoder steps first, then decoder steps
  // numbered k + 1 .. k + tau.
  void write_csv(std::ostream& out) const;
};

class TftModel {
 public:
  // `features` are the known covariates used by both encoder and decoder; the
  // encoder additionally sees the past target.
  TftModel(TftConfig config, std::vector<std::string> features, std::string target);

  const TftConfig& config() const { return config_; }
  const std::vector<std::string>& features() const { return features_; }
  const std::string& target() const { return target_; }
  std::vector<std::string> encoder_features() const;
  std::size_t parameter_count() const { return params_.scalar_count(); }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  struct Output {
    nn::Var quantiles;         // tau x Q, scaled units, unsorted
    nn::Var encoder_weights;   // k x (features + 1)
    nn::Var decoder_weights;   // tau x features
    nn::Var attention;         // tau x (k + tau)
  };
  Output forward(nn::Context& ctx, const Matrix& encoder, const Matrix& decoder) const;

  QuantileForecast predict(const Window& window) const;
  ImportanceSeries interpret(const Window& window) const;

  nlohmann::json to_json() const;
  static TftModel from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static TftModel load(const std::filesystem::path& path);

 private:
  struct Selection {
    std::vector<nn::Dense> embeddings;
    std::optional<nn::GatedResidualNetwork> flat;
    std::vector<nn::GatedResidualNetwork> per_variable;
  };
  Selection make_selection(const std::string& name, std::size_t variables, std::mt19937_64& rng);
  struct Selected {
    nn::Var embedding;
    nn::Var weights;
  };
  Selected select(nn::Context& ctx, const Selection& s, const Matrix& x) const;
  void check_window(const Window& window) const;

  TftConfig config_;
  std::vector<std::string> features_;
  std::string target_;
  nn::ParamStore params_;
  Selection encoder_selection_;
  Selection decoder_selection_;
  nn::LstmCell encoder_lstm_;
  nn::LstmCell decoder_lstm_;
  nn::GateAddNorm post_lstm_;
  nn::GatedResidualNetwork enrichment_;
  nn::InterpretableAttention attention_;
  nn::GateAddNorm post_attention_;
  nn::GatedResidualNetwork position_wise_;
  nn::GateAddNorm pre_output_;
  nn::Dense output_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  std::size_t train_windows = 0;
  std::size_t validation_windows = 0;
  std::size_t parameter_count = 0;

  nlohmann::json to_json() const;
};

// Chronological split: the last validation_fraction of windows validate.
// Both parts get at least one window.
std::pair<std::vector<Window>, std::vector<Window>> split_windows(std::vector<Window> windows,
                                                                  double validation_fraction);

// Mean pinball loss of the model on windows, without dropout.
double mean_loss(const TftModel& model, std::span<const ScaledWindow> windows);

TrainingReport train(TftModel& model, std::span<const Window> train_windows,
                     std::span<const Window> validation_windows);

struct Metrics {
  double rmse = 0.0;
  double r2 = 0.0;
};
Metrics evaluate(std::span<const double> forecast, std::span<const double> actual);

// Default covariates: every front-end calls series plus the resources of
// `services` (all services when empty), dropping series that never change.
std::vector<std::string> default_features(const TraceDataset& dataset,
                                          std::span<const std::string> services = {},
                                          bool horizontal = true, bool vertical = false);

}  // namespace latscale::tft
