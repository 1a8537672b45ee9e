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

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "latscale/error.hpp"
#include "latscale/trace_data.hpp"

namespace latscale {
namespace {

std::string small_csv(std::size_t rows) {
  std::ostringstream out;
  out << "t,cps.green,pods.cart,latency_p95.green\n";
  for (std::size_t t = 0; t < rows; ++t) {
    out << t << ',' << 10.0 + static_cast<double>(t % 7) << ',' << 1 + t % 3 << ','
        << 40.0 + static_cast<double>(t % 11) << '\n';
  }
  return out.str();
}

TraceDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

template <typename Fn>
DataError capture(Fn&& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e;
  }
  ADD_FAILURE() << "expected a DataError";
  return DataError(ErrorCode::kInvalidArgument, "none", 0);
}

TEST(LoadDataset, ParsesSchemaColumns) {
  auto ds = parse(small_csv(500));
  EXPECT_EQ(ds.length(), 500u);  // N = 499
  EXPECT_EQ(ds.traces(), std::vector<std::string>{"green"});
  ASSERT_EQ(ds.microservices(), std::vector<std::string>{"cart"});
  EXPECT_EQ(ds.feature_count("cart"), 1u);
  EXPECT_EQ(ds.at("pods.cart").kind, MetricKind::kHorizontalResource);
  EXPECT_EQ(ds.at("cps.green").kind, MetricKind::kFrontEndCalls);
  EXPECT_EQ(ds.target("green").name, "latency_p95.green");
  EXPECT_EQ(ds.at("pods.cart").microservice(), std::optional<std::string>("cart"));
  EXPECT_EQ(ds.at("cps.green").microservice(), std::nullopt);
}

TEST(LoadDataset, AcceptsThreePartColumnNames) {
  auto ds = parse("t,cpu.cart.cores,mem.cart.bytes,latency_p95.green.ms\n0,1,2,3\n1,1,2,4\n");
  EXPECT_EQ(ds.at("cpu.cart.cores").owner, "cart");
  EXPECT_EQ(ds.feature_count("cart"), 2u);
  EXPECT_EQ(ds.target("green").values[1], 4.0);
}

TEST(LoadDataset, EmptyFileIsMissingColumn) {
  auto e = capture([] { parse(""); });
  EXPECT_EQ(e.code(), ErrorCode::kMissingColumn);
  EXPECT_EQ(e.column(), std::optional<std::string>("t"));
}

TEST(LoadDataset, DuplicateTimeIndexReportsRow) {
  auto e = capture([] { parse("t,cps.green\n0,1\n1,1\n1,1\n2,1\n"); });
  EXPECT_EQ(e.code(), ErrorCode::kDuplicateTimeIndex);
  EXPECT_EQ(e.row(), 3u);
}

TEST(LoadDataset, RejectsOutOfOrderRows) {
  auto e = capture([] { parse("t,cps.green\n0,1\n2,1\n1,1\n"); });
  EXPECT_EQ(e.code(), ErrorCode::kOutOfOrder);
  EXPECT_EQ(e.row(), 2u);
}

TEST(LoadDataset, RaggedRowAndNonNumericCell) {
  auto ragged = capture([] { parse("t,cps.green,pods.cart\n0,1,1\n1,1\n"); });
  EXPECT_EQ(ragged.code(), ErrorCode::kRaggedRow);
  EXPECT_EQ(ragged.row(), 2u);
  auto bad = capture([] { parse("t,cps.green,pods.cart\n0,1,1\n1,abc,1\n"); });
  EXPECT_EQ(bad.code(), ErrorCode::kNonNumeric);
  EXPECT_EQ(bad.row(), 2u);
  EXPECT_EQ(bad.column(), std::optional<std::string>("cps.green"));
}

TEST(LoadDataset, RejectsInvalidResourceValues) {
  EXPECT_THROW(parse("t,pods.cart\n0,1.5\n"), Error);
  EXPECT_THROW(parse("t,pods.cart\n0,0\n"), Error);
  EXPECT_THROW(parse("t,latency_p95.green\n0,-1\n"), Error);
  EXPECT_THROW(parse("t,latency_p95.green,latency_p95.green.x\n0,1,1\n"), Error);
}

TEST(LoadDataset, CsvRoundTripIsByteStable) {
  auto ds = parse(small_csv(50));
  std::ostringstream first;
  write_dataset_csv(first, ds);
  std::ostringstream second;
  write_dataset_csv(second, parse(first.str()));
  EXPECT_EQ(first.str(), second.str());
}

TEST(P95, PercentileAnecdote) {
  // 95 responses at or below 100 ms, 5 above.
  std::vector<double> samples;
  for (int i = 0; i < 94; ++i) samples.push_back(1.0 + i);
  samples.push_back(100.0);
  for (int i = 0; i < 5; ++i) samples.push_back(150.0 + i);
  std::shuffle(samples.begin(), samples.end(), std::mt19937(3));
  EXPECT_EQ(p95(samples), 100.0);
}

TEST(P95, ConstantAndOneToTwenty) {
  std::vector<double> same(37, 12.5);
  EXPECT_EQ(p95(same), 12.5);
  std::vector<double> ramp;
  for (int i = 20; i >= 1; --i) ramp.push_back(i);
  EXPECT_EQ(p95(ramp), 19.0);
  EXPECT_EQ(p95(std::vector<double>{7.0}), 7.0);
  EXPECT_THROW(p95(std::vector<double>{}), Error);
}

// Oracle: sort and take the ceil(0.95 n)-th order statistic using integer
// arithmetic for the rank.
double p95_oracle(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t rank = (95 * v.size() + 99) / 100;
  return v[rank - 1];
}

TEST(P95, MatchesSortOracleFuzzed) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(1, 400);
  std::lognormal_distribution<double> lat(3.0, 0.8);
  for (int c = 0; c < 1000; ++c) {
    std::vector<double> v(static_cast<std::size_t>(size(rng)));
    for (auto& x : v) x = lat(rng);
    ASSERT_EQ(p95(v), p95_oracle(v)) << "case " << c;
  }
  std::vector<double> big(10000);
  for (auto& x : big) x = lat(rng);
  EXPECT_EQ(p95(big), p95_oracle(big));
}

TEST(Windows, CountBoundaries) {
  WindowSpec spec{400, 50};
  EXPECT_EQ(make_windows(parse(small_csv(450)), spec, "green").size(), 1u);
  EXPECT_EQ(make_windows(parse(small_csv(460)), spec, "green").size(), 11u);
  try {
    make_windows(parse(small_csv(449)), spec, "green");
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDatasetTooShort);
  }
  EXPECT_THROW(WindowSpec({0, 5}).validate(), Error);
}

TEST(Windows, CountFormulaProperty) {
  std::mt19937_64 rng(5);
  auto ds = parse(small_csv(120));
  for (int c = 0; c < 200; ++c) {
    WindowSpec spec{std::uniform_int_distribution<std::size_t>(1, 80)(rng),
                    std::uniform_int_distribution<std::size_t>(1, 40)(rng)};
    if (spec.encoder_length + spec.decoder_length > ds.length()) continue;
    auto w = make_windows(ds, spec, "green");
    ASSERT_EQ(w.size(), ds.length() - spec.encoder_length - spec.decoder_length + 1);
    ASSERT_EQ(w.size(), spec.window_count(ds.length()));
  }
}

TEST(Windows, DecoderNeverCarriesTheTarget) {
  auto ds = parse(small_csv(120));
  const auto& target = ds.target("green").values;
  auto windows = make_windows(ds, {20, 6}, "green");
  for (const auto& w : windows) {
    for (const auto& name : w.decoder.feature_names) {
      ASSERT_NE(ds.at(name).kind, MetricKind::kTargetLatency);
    }
    ASSERT_EQ(w.decoder.features.cols(), static_cast<Eigen::Index>(ds.feature_names().size()));
    for (Eigen::Index t = 0; t < w.decoder.features.rows(); ++t) {
      for (Eigen::Index j = 0; j < w.decoder.features.cols(); ++j) {
        const auto& src = ds.at(w.decoder.feature_names[static_cast<std::size_t>(j)]).values;
        ASSERT_EQ(w.decoder.features(t, j), src[w.start + 20 + static_cast<std::size_t>(t)]);
      }
      ASSERT_EQ(w.label(t), target[w.start + 20 + static_cast<std::size_t>(t)]);
    }
    for (Eigen::Index t = 0; t < 20; ++t) {
      ASSERT_EQ(w.encoder.target(t), target[w.start + static_cast<std::size_t>(t)]);
    }
  }
  std::vector<std::string> leak{"latency_p95.green"};
  EXPECT_THROW(make_windows(ds, {20, 6}, "green", leak), Error);
}

TEST(Normalize, ConstantSeries) {
  SeriesBlock block{{"x"}, Eigen::MatrixXd::Constant(3, 1, 5.0)};
  NormalizationState state;
  auto out = normalize_window(block, state);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out.values(i, 0), kNormEpsilon);
  ASSERT_EQ(state.entries.size(), 1u);
  EXPECT_EQ(state.entries[0].min, 5.0);
  EXPECT_EQ(state.entries[0].range, kRangeFloor);
}

TEST(Normalize, ZeroToTen) {
  SeriesBlock block{{"x"}, Eigen::MatrixXd(2, 1)};
  block.values << 0.0, 10.0;
  NormalizationState state;
  auto out = normalize_window(block, state);
  EXPECT_NEAR(out.values(0, 0), 0.01, 1e-12);
  EXPECT_NEAR(out.values(1, 0), 10.0 / (10.0 + 1e-8) + 0.01, 1e-15);
  EXPECT_LE(std::abs(out.values(1, 0) - 1.01), 1e-9 + 1e-15);
}

TEST(Normalize, RoundTripAndPositivityFuzzed) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> mag(-6.0, 6.0);
  std::uniform_int_distribution<int> len(1, 60);
  for (int c = 0; c < 1000; ++c) {
    const double s = std::pow(10.0, mag(rng));
    SeriesBlock block{{"a", "b"}, Eigen::MatrixXd(len(rng), 2)};
    std::normal_distribution<double> val(mag(rng) * s, s);
    for (Eigen::Index i = 0; i < block.values.size(); ++i) block.values.data()[i] = val(rng);
    NormalizationState state;
    auto norm = normalize_window(block, state);
    ASSERT_GT(norm.values.minCoeff(), 0.0);
    auto back = denormalize_window(norm, state);
    for (Eigen::Index i = 0; i < block.values.size(); ++i) {
      const double x = block.values.data()[i];
      const double denom = std::max(std::abs(x), state.entries[0].range + state.entries[1].range);
      ASSERT_LE(std::abs(back.values.data()[i] - x) / denom, 1e-9);
    }
  }
}

TEST(Normalize, StateSerializesWithDocumentedKeys) {
  SeriesBlock block{{"pods.cart"}, Eigen::MatrixXd(3, 1), 42};
  block.values << 1.0, 3.0, 2.0;
  NormalizationState state;
  normalize_window(block, state);
  auto doc = state.to_json();
  ASSERT_EQ(doc.size(), 1u);
  for (const char* key : {"series", "window_start", "min", "range", "epsilon"}) {
    EXPECT_TRUE(doc[0].contains(key)) << key;
  }
  EXPECT_EQ(doc[0]["window_start"], 42);
  auto back = NormalizationState::from_json(doc);
  EXPECT_EQ(back.at("pods.cart").range, state.entries[0].range);
}

}  // namespace
}  // namespace latscale
