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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

namespace latscale {

enum class MetricKind {
  kFrontEndCalls,
  kHorizontalResource,
  kVerticalResource,
  kTargetLatency,
};

std::string_view to_string(MetricKind kind);

// One column of a dataset. Column names follow `<kind>.<owner>[.<metric>]`,
// e.g. `cps.green`, `pods.cart`, `latency_p95.green`.
struct MetricSeries {
  std::string name;
  MetricKind kind = MetricKind::kFrontEndCalls;
  std::string prefix;  // leading name component: cps, pods, cpu, mem, ...
  std::string owner;   // trace id for calls and latency, microservice otherwise
  std::vector<double> values;

  bool is_resource() const {
    return kind == MetricKind::kHorizontalResource ||
           kind == MetricKind::kVerticalResource;
  }
  std::optional<std::string> microservice() const {
    if (is_resource()) return owner;
    return std::nullopt;
  }
};

// Aligned, gap-free time series for every trace and microservice. Immutable
// once constructed; the constructor enforces the invariants.
class TraceDataset {
 public:
  TraceDataset(std::vector<std::int64_t> time_index,
               std::vector<MetricSeries> series);

  std::size_t length() const { return time_index_.size(); }
  const std::vector<std::int64_t>& time_index() const { return time_index_; }
  const std::vector<MetricSeries>& series() const { return series_; }

  // Traces with a target latency series, in column order.
  const std::vector<std::string>& traces() const { return traces_; }
  const std::vector<std::string>& microservices() const { return services_; }
  std::size_t feature_count(std::string_view microservice) const;

  const MetricSeries& target(std::string_view trace) const;
  const MetricSeries& at(std::string_view name) const;
  const MetricSeries* find(std::string_view name) const;

  // Names of every non-target series, in column order.
  std::vector<std::string> feature_names() const;

 private:
  std::vector<std::int64_t> time_index_;
  std::vector<MetricSeries> series_;
  std::vector<std::string> traces_;
  std::vector<std::string> services_;
};

// Maps a column's leading component to its kind.
struct ColumnSchema {
  std::map<std::string, MetricKind, std::less<>> prefixes;

  static ColumnSchema defaults();
};

TraceDataset load_dataset(const std::filesystem::path& path,
                          const ColumnSchema& schema = ColumnSchema::defaults());
TraceDataset parse_dataset(std::istream& in,
                           const ColumnSchema& schema = ColumnSchema::defaults());
void write_dataset_csv(std::ostream& out, const TraceDataset& dataset);

// Shortest round-trip decimal form; keeps CSV output byte-stable.
std::string format_number(double value);

// Nearest-rank percentile: the smallest sample v such that at least
// `fraction` of the samples are <= v. `fraction` must lie in (0, 1].
double percentile_nearest_rank(std::span<const double> samples, double fraction);
double p95(std::span<const double> samples);

struct WindowSpec {
  std::size_t encoder_length = 400;
  std::size_t decoder_length = 50;

  void validate() const;
  std::size_t window_count(std::size_t series_length) const;
};

struct EncoderBlock {
  std::vector<std::string> feature_names;
  Eigen::MatrixXd features;  // encoder_length x features
  Eigen::VectorXd target;    // encoder_length
};

// Known-future inputs only; a decoder block has no target field.
struct DecoderBlock {
  std::vector<std::string> feature_names;
  Eigen::MatrixXd features;  // decoder_length x features
};

struct Window {
  std::size_t start = 0;  // dataset row of the first encoder step
  EncoderBlock encoder;
  DecoderBlock decoder;
  Eigen::VectorXd label;  // observed target over the decoder steps
};

// Stride-1 sliding windows. When `feature_names` is empty every non-target
// series is used.
std::vector<Window> make_windows(const TraceDataset& dataset,
                                 const WindowSpec& spec,
                                 std::string_view target_trace,
                                 std::span<const std::string> feature_names = {});

// Per-series min-max scaling shifted by epsilon so outputs stay positive.
inline constexpr double kNormEpsilon = 0.01;
inline constexpr double kRangeFloor = 1e-8;

struct SeriesScaling {
  std::string series;
  std::size_t window_start = 0;
  double min = 0.0;
  double range = kRangeFloor;  // max - min + floor
  double epsilon = kNormEpsilon;

  double normalize(double x) const { return (x - min) / range + epsilon; }
  double inverse(double x) const { return (x - epsilon) * range + min; }

  static SeriesScaling fit(std::string series, std::size_t window_start,
                           std::span<const double> values);
};

struct NormalizationState {
  std::vector<SeriesScaling> entries;

  const SeriesScaling& at(std::string_view series) const;
  nlohmann::json to_json() const;
  static NormalizationState from_json(const nlohmann::json& doc);
};

struct SeriesBlock {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // steps x series
  std::size_t window_start = 0;
};

// Normalizes every column of `block` with scaling fitted on that column and
// appends the fitted parameters to `state_out`.
SeriesBlock normalize_window(const SeriesBlock& block,
                             NormalizationState& state_out);
SeriesBlock denormalize_window(const SeriesBlock& block,
                               const NormalizationState& state);

}  // namespace latscale
