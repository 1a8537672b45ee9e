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

#include "latscale/trace_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "latscale/error.hpp"

namespace latscale {

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kFrontEndCalls: return "front_end_calls";
    case MetricKind::kHorizontalResource: return "horizontal_resource";
    case MetricKind::kVerticalResource: return "vertical_resource";
    case MetricKind::kTargetLatency: return "target_latency";
  }
  return "unknown";
}

TraceDataset::TraceDataset(std::vector<std::int64_t> time_index,
                           std::vector<MetricSeries> series)
    : time_index_(std::move(time_index)), series_(std::move(series)) {
  if (time_index_.empty()) {
    throw Error(ErrorCode::kEmptyInput, "dataset has no time steps");
  }
  for (std::size_t i = 1; i < time_index_.size(); ++i) {
    if (time_index_[i] != time_index_[0] + static_cast<std::int64_t>(i)) {
      throw Error(ErrorCode::kOutOfOrder,
                  "time index must be contiguous with unit step");
    }
  }
  std::set<std::string, std::less<>> names;
  std::set<std::string, std::less<>> seen_targets;
  for (const auto& s : series_) {
    if (!names.insert(s.name).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate series " + s.name);
    }
    if (s.values.size() != time_index_.size()) {
      throw Error(ErrorCode::kLengthMismatch,
                  "series " + s.name + " does not match the time index length");
    }
    if (s.owner.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "series " + s.name + " has no owner");
    }
    for (double v : s.values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFinite, "series " + s.name + " has a non-finite value");
      }
    }
    switch (s.kind) {
      case MetricKind::kTargetLatency:
        if (!seen_targets.insert(s.owner).second) {
          throw Error(ErrorCode::kInvalidArgument,
                      "trace " + s.owner + " has more than one target series");
        }
        traces_.push_back(s.owner);
        for (double v : s.values) {
          if (v < 0.0) {
            throw Error(ErrorCode::kInvalidArgument,
                        "negative latency in " + s.name);
          }
        }
        break;
      case MetricKind::kHorizontalResource:
        for (double v : s.values) {
          if (v < 1.0 || v != std::round(v)) {
            throw Error(ErrorCode::kInvalidArgument,
                        "pod counts must be positive integers in " + s.name);
          }
        }
        [[fallthrough]];
      case MetricKind::kVerticalResource:
        if (std::find(services_.begin(), services_.end(), s.owner) == services_.end()) {
          services_.push_back(s.owner);
        }
        break;
      case MetricKind::kFrontEndCalls:
        break;
    }
  }
}

std::size_t TraceDataset::feature_count(std::string_view microservice) const {
  return static_cast<std::size_t>(std::count_if(
      series_.begin(), series_.end(), [&](const MetricSeries& s) {
        return s.is_resource() && s.owner == microservice;
      }));
}

const MetricSeries& TraceDataset::target(std::string_view trace) const {
  for (const auto& s : series_) {
    if (s.kind == MetricKind::kTargetLatency && s.owner == trace) return s;
  }
  throw Error(ErrorCode::kMissingColumn,
              "no target latency series for trace " + std::string(trace));
}

const MetricSeries* TraceDataset::find(std::string_view name) const {
  for (const auto& s : series_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const MetricSeries& TraceDataset::at(std::string_view name) const {
  if (const auto* s = find(name)) return *s;
  throw Error(ErrorCode::kMissingColumn, "no series named " + std::string(name));
}

std::vector<std::string> TraceDataset::feature_names() const {
  std::vector<std::string> out;
  for (const auto& s : series_) {
    if (s.kind != MetricKind::kTargetLatency) out.push_back(s.name);
  }
  return out;
}

ColumnSchema ColumnSchema::defaults() {
  ColumnSchema schema;
  schema.prefixes = {
      {"cps", MetricKind::kFrontEndCalls},
      {"pods", MetricKind::kHorizontalResource},
      {"cpu", MetricKind::kVerticalResource},
      {"mem", MetricKind::kVerticalResource},
      {"latency_p95", MetricKind::kTargetLatency},
  };
  return schema;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    cells.push_back(trim(line.substr(pos, comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return cells;
}

template <typename T>
bool parse_cell(std::string_view cell, T& out) {
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size();
}

MetricSeries describe_column(std::string_view header, const ColumnSchema& schema) {
  auto dot = header.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == header.size()) {
    throw DataError(ErrorCode::kInvalidArgument,
                    "column name must look like <kind>.<owner>[.<metric>]", 0,
                    std::string(header));
  }
  auto prefix = header.substr(0, dot);
  auto rest = header.substr(dot + 1);
  auto it = schema.prefixes.find(prefix);
  if (it == schema.prefixes.end()) {
    throw DataError(ErrorCode::kInvalidArgument, "unknown column kind", 0,
                    std::string(header));
  }
  MetricSeries s;
  s.name = std::string(header);
  s.kind = it->second;
  s.prefix = std::string(prefix);
  s.owner = std::string(rest.substr(0, rest.find('.')));
  return s;
}

}  // namespace

TraceDataset parse_dataset(std::istream& in, const ColumnSchema& schema) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw DataError(ErrorCode::kMissingColumn, "missing time index column 't'", 0, "t");
  }
  auto header = split_csv(line);
  if (header.front() != "t") {
    throw DataError(ErrorCode::kMissingColumn,
                    "first column must be the time index 't'", 0, "t");
  }
  std::vector<MetricSeries> series;
  for (std::size_t c = 1; c < header.size(); ++c) {
    series.push_back(describe_column(header[c], schema));
  }

  std::vector<std::int64_t> times;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw DataError(ErrorCode::kRaggedRow,
                      "expected " + std::to_string(header.size()) + " cells, found " +
                          std::to_string(cells.size()),
                      row);
    }
    std::int64_t t = 0;
    if (!parse_cell(cells[0], t)) {
      throw DataError(ErrorCode::kNonNumeric,
                      "time index '" + std::string(cells[0]) + "' is not an integer",
                      row, "t");
    }
    if (!times.empty()) {
      if (t == times.back()) {
        throw DataError(ErrorCode::kDuplicateTimeIndex,
                        "duplicated time index " + std::to_string(t), row, "t");
      }
      if (t < times.back()) {
        throw DataError(ErrorCode::kOutOfOrder,
                        "time index " + std::to_string(t) + " is out of order", row, "t");
      }
      if (t != times.back() + 1) {
        throw DataError(ErrorCode::kOutOfOrder,
                        "gap in time index before " + std::to_string(t), row, "t");
      }
    }
    times.push_back(t);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_cell(cells[c], v) || !std::isfinite(v)) {
        throw DataError(ErrorCode::kNonNumeric,
                        "cell '" + std::string(cells[c]) + "' is not a finite number",
                        row, series[c - 1].name);
      }
      series[c - 1].values.push_back(v);
    }
  }
  if (times.empty()) {
    throw DataError(ErrorCode::kEmptyInput, "dataset has no data rows", 1);
  }
  return TraceDataset(std::move(times), std::move(series));
}

TraceDataset load_dataset(const std::filesystem::path& path,
                          const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open dataset " + path.string());
  }
  return parse_dataset(in, schema);
}

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_dataset_csv(std::ostream& out, const TraceDataset& dataset) {
  out << 't';
  for (const auto& s : dataset.series()) out << ',' << s.name;
  out << '\n';
  for (std::size_t i = 0; i < dataset.length(); ++i) {
    out << dataset.time_index()[i];
    for (const auto& s : dataset.series()) out << ',' << format_number(s.values[i]);
    out << '\n';
  }
}

double percentile_nearest_rank(std::span<const double> samples, double fraction) {
  if (samples.empty()) {
    throw Error(ErrorCode::kEmptyInput, "percentile of an empty sample");
  }
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "percentile fraction must lie in (0, 1]");
  }
  const auto n = samples.size();
  // The small offset keeps products like 0.95 * 100 from rounding up a rank.
  auto rank = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   sorted.end());
  return sorted[rank - 1];
}

double p95(std::span<const double> samples) {
  return percentile_nearest_rank(samples, 0.95);
}

void WindowSpec::validate() const {
  if (encoder_length < 1 || decoder_length < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "encoder and decoder lengths must be at least 1");
  }
}

std::size_t WindowSpec::window_count(std::size_t series_length) const {
  const auto span = encoder_length + decoder_length;
  return series_length < span ? 0 : series_length - span + 1;
}

std::vector<Window> make_windows(const TraceDataset& dataset, const WindowSpec& spec,
                                 std::string_view target_trace,
                                 std::span<const std::string> feature_names) {
  spec.validate();
  const auto& target = dataset.target(target_trace);
  const auto n = dataset.length();
  if (n < spec.encoder_length + spec.decoder_length) {
    throw Error(ErrorCode::kDatasetTooShort,
                "dataset has " + std::to_string(n) + " steps but windows need " +
                    std::to_string(spec.encoder_length + spec.decoder_length));
  }
  std::vector<std::string> names(feature_names.begin(), feature_names.end());
  if (names.empty()) names = dataset.feature_names();
  std::vector<const MetricSeries*> columns;
  for (const auto& name : names) {
    const auto& s = dataset.at(name);
    if (s.kind == MetricKind::kTargetLatency) {
      throw Error(ErrorCode::kInvalidArgument,
                  "target series " + name + " cannot be a model feature");
    }
    columns.push_back(&s);
  }

  const auto k = spec.encoder_length;
  const auto tau = spec.decoder_length;
  const auto f = columns.size();
  std::vector<Window> windows;
  windows.reserve(spec.window_count(n));
  for (std::size_t start = 0; start + k + tau <= n; ++start) {
    Window w;
    w.start = start;
    w.encoder.feature_names = names;
    w.decoder.feature_names = names;
    w.encoder.features.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
    w.decoder.features.resize(static_cast<Eigen::Index>(tau), static_cast<Eigen::Index>(f));
    w.encoder.target.resize(static_cast<Eigen::Index>(k));
    w.label.resize(static_cast<Eigen::Index>(tau));
    for (std::size_t j = 0; j < f; ++j) {
      const auto& v = columns[j]->values;
      for (std::size_t t = 0; t < k; ++t) {
        w.encoder.features(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
            v[start + t];
      }
      for (std::size_t t = 0; t < tau; ++t) {
        w.decoder.features(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
            v[start + k + t];
      }
    }
    for (std::size_t t = 0; t < k; ++t) {
      w.encoder.target(static_cast<Eigen::Index>(t)) = target.values[start + t];
    }
    for (std::size_t t = 0; t < tau; ++t) {
      w.label(static_cast<Eigen::Index>(t)) = target.values[start + k + t];
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

SeriesScaling SeriesScaling::fit(std::string series, std::size_t window_start,
                                 std::span<const double> values) {
  if (values.empty()) {
    throw Error(ErrorCode::kEmptyInput, "cannot fit scaling on an empty series");
  }
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  SeriesScaling s;
  s.series = std::move(series);
  s.window_start = window_start;
  s.min = *lo;
  s.range = (*hi - *lo) + kRangeFloor;
  s.epsilon = kNormEpsilon;
  return s;
}

const SeriesScaling& NormalizationState::at(std::string_view series) const {
  for (const auto& e : entries) {
    if (e.series == series) return e;
  }
  throw Error(ErrorCode::kMissingColumn,
              "no normalization parameters for " + std::string(series));
}

nlohmann::json NormalizationState::to_json() const {
  auto doc = nlohmann::json::array();
  for (const auto& e : entries) {
    doc.push_back({{"series", e.series},
                   {"window_start", e.window_start},
                   {"min", e.min},
                   {"range", e.range},
                   {"epsilon", e.epsilon}});
  }
  return doc;
}

NormalizationState NormalizationState::from_json(const nlohmann::json& doc) {
  NormalizationState state;
  for (const auto& item : doc) {
    SeriesScaling s;
    s.series = item.at("series").get<std::string>();
    s.window_start = item.at("window_start").get<std::size_t>();
    s.min = item.at("min").get<double>();
    s.range = item.at("range").get<double>();
    s.epsilon = item.at("epsilon").get<double>();
    state.entries.push_back(std::move(s));
  }
  return state;
}

SeriesBlock normalize_window(const SeriesBlock& block, NormalizationState& state_out) {
  if (block.values.size() == 0) {
    throw Error(ErrorCode::kEmptyInput, "cannot normalize an empty block");
  }
  if (static_cast<Eigen::Index>(block.names.size()) != block.values.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "block names do not match its columns");
  }
  SeriesBlock out = block;
  for (Eigen::Index c = 0; c < block.values.cols(); ++c) {
    Eigen::VectorXd col = block.values.col(c);
    auto scaling = SeriesScaling::fit(block.names[static_cast<std::size_t>(c)],
                                      block.window_start,
                                      std::span<const double>(col.data(), col.size()));
    for (Eigen::Index r = 0; r < col.size(); ++r) {
      out.values(r, c) = scaling.normalize(col(r));
    }
    state_out.entries.push_back(std::move(scaling));
  }
  return out;
}

SeriesBlock denormalize_window(const SeriesBlock& block, const NormalizationState& state) {
  SeriesBlock out = block;
  for (Eigen::Index c = 0; c < block.values.cols(); ++c) {
    const auto& scaling = state.at(block.names[static_cast<std::size_t>(c)]);
    for (Eigen::Index r = 0; r < block.values.rows(); ++r) {
      out.values(r, c) = scaling.inverse(block.values(r, c));
    }
  }
  return out;
}

}  // namespace latscale
