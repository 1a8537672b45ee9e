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

#include "latscale/tft.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "latscale/error.hpp"

namespace latscale::tft {

using nn::Context;
using nn::Tape;
using nn::Var;

namespace {

constexpr const char* kCheckpointFormat = "latscale-tft";

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

Index as_index(std::size_t n) { return static_cast<Index>(n); }

}  // namespace

void TftConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidArgument, "invalid model config: " + what);
  };
  if (hidden_size < 1) fail("hidden_size must be >= 1");
  if (attention_heads < 1 || hidden_size % attention_heads != 0) {
    fail("attention_heads must divide hidden_size");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (encoder_length < 1 || decoder_length < 1) fail("window lengths must be >= 1");
  if (quantiles.empty()) fail("at least one quantile is required");
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) fail("quantiles must lie in (0, 1)");
    if (i > 0 && !(quantiles[i] > quantiles[i - 1])) fail("quantiles must increase strictly");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    fail("validation_fraction must lie in (0, 1)");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must lie in (0, 1]");
}

std::size_t TftConfig::median_index() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < quantiles.size(); ++i) {
    if (std::abs(quantiles[i] - 0.5) < std::abs(quantiles[best] - 0.5)) best = i;
  }
  return best;
}

nlohmann::json TftConfig::to_json() const {
  return {{"hidden_size", hidden_size},
          {"attention_heads", attention_heads},
          {"dropout", dropout},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"encoder_length", encoder_length},
          {"decoder_length", decoder_length},
          {"quantiles", quantiles},
          {"early_stopping_patience", early_stopping_patience},
          {"validation_fraction", validation_fraction},
          {"lr_decay_patience", lr_decay_patience},
          {"lr_decay", lr_decay},
          {"seed", seed}};
}

TftConfig TftConfig::from_json(const nlohmann::json& doc) {
  TftConfig c;
  c.hidden_size = doc.value("hidden_size", c.hidden_size);
  c.attention_heads = doc.value("attention_heads", c.attention_heads);
  c.dropout = doc.value("dropout", c.dropout);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.max_epochs = doc.value("max_epochs", c.max_epochs);
  c.encoder_length = doc.value("encoder_length", c.encoder_length);
  c.decoder_length = doc.value("decoder_length", c.decoder_length);
  c.quantiles = doc.value("quantiles", c.quantiles);
  c.early_stopping_patience = doc.value("early_stopping_patience", c.early_stopping_patience);
  c.validation_fraction = doc.value("validation_fraction", c.validation_fraction);
  c.lr_decay_patience = doc.value("lr_decay_patience", c.lr_decay_patience);
  c.lr_decay = doc.value("lr_decay", c.lr_decay);
  c.seed = doc.value("seed", c.seed);
  c.validate();
  return c;
}

ScaledWindow scale_window(const Window& window, std::string_view target_name) {
  const Index k = window.encoder.features.rows();
  const Index tau = window.decoder.features.rows();
  const Index f = window.encoder.features.cols();
  if (window.decoder.features.cols() != f || window.encoder.target.size() != k ||
      window.label.size() != tau) {
    throw Error(ErrorCode::kShapeMismatch, "window blocks disagree on shape");
  }
  ScaledWindow out;
  out.encoder.resize(k, f + 1);
  out.decoder.resize(tau, f);
  std::vector<double> joined(static_cast<std::size_t>(k + tau));
  for (Index j = 0; j < f; ++j) {
    for (Index t = 0; t < k; ++t) joined[static_cast<std::size_t>(t)] = window.encoder.features(t, j);
    for (Index t = 0; t < tau; ++t) {
      joined[static_cast<std::size_t>(k + t)] = window.decoder.features(t, j);
    }
    auto s = SeriesScaling::fit(window.encoder.feature_names[static_cast<std::size_t>(j)],
                                window.start, joined);
    for (Index t = 0; t < k; ++t) out.encoder(t, j) = s.normalize(window.encoder.features(t, j));
    for (Index t = 0; t < tau; ++t) out.decoder(t, j) = s.normalize(window.decoder.features(t, j));
    out.normalization.entries.push_back(std::move(s));
  }
  out.target_scaling =
      SeriesScaling::fit(std::string(target_name), window.start,
                         std::span<const double>(window.encoder.target.data(),
                                                 static_cast<std::size_t>(k)));
  for (Index t = 0; t < k; ++t) out.encoder(t, f) = out.target_scaling.normalize(window.encoder.target(t));
  out.label.resize(tau);
  for (Index t = 0; t < tau; ++t) out.label(t) = out.target_scaling.normalize(window.label(t));
  out.normalization.entries.push_back(out.target_scaling);
  return out;
}

void QuantileForecast::write_csv(std::ostream& out) const {
  out << "step,quantile,value_ms\n";
  for (Index t = 0; t < values.rows(); ++t) {
    for (std::size_t q = 0; q < quantiles.size(); ++q) {
      out << (t + 1) << ',' << format_number(quantiles[q]) << ','
          << format_number(values(t, as_index(q))) << '\n';
    }
  }
}

Eigen::VectorXd ImportanceSeries::mean_decoder_importance() const {
  return decoder_variable_importance.colwise().mean().transpose();
}

void ImportanceSeries::write_csv(std::ostream& out) const {
  out << "step,feature,weight\n";
  const Index k = encoder_variable_importance.rows();
  for (Index t = 0; t < k; ++t) {
    for (std::size_t j = 0; j < encoder_features.size(); ++j) {
      out << (t + 1) << ',' << encoder_features[j] << ','
          << format_number(encoder_variable_importance(t, as_index(j))) << '\n';
    }
  }
  for (Index t = 0; t < decoder_variable_importance.rows(); ++t) {
    for (std::size_t j = 0; j < decoder_features.size(); ++j) {
      out << (k + t + 1) << ',' << decoder_features[j] << ','
          << format_number(decoder_variable_importance(t, as_index(j))) << '\n';
    }
  }
}

TftModel::TftModel(TftConfig config, std::vector<std::string> features, std::string target)
    : config_(std::move(config)), features_(std::move(features)), target_(std::move(target)) {
  config_.validate();
  if (features_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "model needs at least one decoder feature");
  }
  std::set<std::string> unique(features_.begin(), features_.end());
  if (unique.size() != features_.size() || unique.count(target_) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "feature names must be distinct from each other "
                                             "and from the target");
  }
  std::mt19937_64 rng(config_.seed);
  const auto h = as_index(config_.hidden_size);
  const double p = config_.dropout;
  encoder_selection_ = make_selection("encoder_vsn", features_.size() + 1, rng);
  decoder_selection_ = make_selection("decoder_vsn", features_.size(), rng);
  encoder_lstm_ = nn::LstmCell::make(params_, "encoder_lstm", h, h, rng);
  decoder_lstm_ = nn::LstmCell::make(params_, "decoder_lstm", h, h, rng);
  post_lstm_ = nn::GateAddNorm::make(params_, "post_lstm", h, h, p, rng);
  enrichment_ = nn::GatedResidualNetwork::make(params_, "enrichment", h, h, h, rng, p);
  attention_ = nn::InterpretableAttention::make(params_, "attention", h,
                                                as_index(config_.attention_heads), rng);
  post_attention_ = nn::GateAddNorm::make(params_, "post_attention", h, h, p, rng);
  position_wise_ = nn::GatedResidualNetwork::make(params_, "position_wise", h, h, h, rng, p);
  pre_output_ = nn::GateAddNorm::make(params_, "pre_output", h, h, 0.0, rng);
  output_ = nn::Dense::make(params_, "output", h, as_index(config_.quantiles.size()), rng);
}

std::vector<std::string> TftModel::encoder_features() const {
  auto names = features_;
  names.push_back(target_);
  return names;
}

TftModel::Selection TftModel::make_selection(const std::string& name, std::size_t variables,
                                             std::mt19937_64& rng) {
  const auto h = as_index(config_.hidden_size);
  const auto n = as_index(variables);
  Selection s;
  for (Index j = 0; j < n; ++j) {
    s.embeddings.push_back(
        nn::Dense::make(params_, name + ".embed" + std::to_string(j), 1, h, rng));
  }
  if (n > 1) {
    s.flat = nn::GatedResidualNetwork::make(params_, name + ".flat", n * h, h, n, rng,
                                            config_.dropout);
  }
  for (Index j = 0; j < n; ++j) {
    s.per_variable.push_back(nn::GatedResidualNetwork::make(
        params_, name + ".var" + std::to_string(j), h, h, h, rng, config_.dropout));
  }
  return s;
}

TftModel::Selected TftModel::select(Context& ctx, const Selection& s, const Matrix& x) const {
  Tape& tape = ctx.tape();
  const Index n = x.cols();
  std::vector<Var> embedded;
  embedded.reserve(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    embedded.push_back(s.embeddings[static_cast<std::size_t>(j)](ctx, tape.constant(x.col(j))));
  }
  if (n == 1) {
    return {s.per_variable[0](ctx, embedded[0]), tape.constant(Matrix::Ones(x.rows(), 1))};
  }
  Var weights = nn::softmax_rows((*s.flat)(ctx, nn::concat_cols(embedded)));
  Var combined;
  for (Index j = 0; j < n; ++j) {
    Var term = nn::scale_rows(s.per_variable[static_cast<std::size_t>(j)](
                                  ctx, embedded[static_cast<std::size_t>(j)]),
                              nn::slice_cols(weights, j, 1));
    combined = combined.valid() ? nn::add(combined, term) : term;
  }
  return {combined, weights};
}

TftModel::Output TftModel::forward(Context& ctx, const Matrix& encoder,
                                   const Matrix& decoder) const {
  const Index k = encoder.rows();
  const Index tau = decoder.rows();
  const Index h = as_index(config_.hidden_size);
  if (encoder.cols() != as_index(features_.size() + 1) ||
      decoder.cols() != as_index(features_.size()) || k < 1 || tau < 1) {
    throw Error(ErrorCode::kShapeMismatch, "model input does not match its feature set");
  }
  Tape& tape = ctx.tape();
  auto enc = select(ctx, encoder_selection_, encoder);
  auto dec = select(ctx, decoder_selection_, decoder);

  Var zero = tape.constant(Matrix::Zero(1, h));
  Var enc_seq = encoder_lstm_.sequence(ctx, enc.embedding, zero, zero);
  Var dec_seq = decoder_lstm_.sequence(ctx, dec.embedding, nn::slice_rows(enc_seq, k - 1, 1),
                                       nn::slice_rows(enc_seq, k, 1));
  std::vector<Var> lstm_parts{nn::slice_rows(enc_seq, 0, k), nn::slice_rows(dec_seq, 0, tau)};
  std::vector<Var> selected_parts{enc.embedding, dec.embedding};
  Var temporal = post_lstm_(ctx, nn::concat_rows(lstm_parts), nn::concat_rows(selected_parts));
  Var enriched = enrichment_(ctx, temporal);

  Var queries = nn::slice_rows(enriched, k, tau);
  auto att = attention_(ctx, queries, enriched, enriched, nn::causal_mask(tau, k + tau));
  Var attended = post_attention_(ctx, att.output, queries);
  Var decoded = position_wise_(ctx, attended);
  Var final_state = pre_output_(ctx, decoded, nn::slice_rows(temporal, k, tau));
  return {output_(ctx, final_state), enc.weights, dec.weights, att.weights};
}

void TftModel::check_window(const Window& window) const {
  if (window.encoder.features.rows() != as_index(config_.encoder_length) ||
      window.decoder.features.rows() != as_index(config_.decoder_length)) {
    throw Error(ErrorCode::kLengthMismatch,
                "window lengths " + std::to_string(window.encoder.features.rows()) + "/" +
                    std::to_string(window.decoder.features.rows()) + " differ from the model's " +
                    std::to_string(config_.encoder_length) + "/" +
                    std::to_string(config_.decoder_length));
  }
  if (window.encoder.feature_names != features_) {
    throw Error(ErrorCode::kShapeMismatch, "window features differ from the model's features");
  }
}

QuantileForecast TftModel::predict(const Window& window) const {
  check_window(window);
  auto scaled = scale_window(window, target_);
  Tape tape;
  Context ctx(tape, params_);
  Matrix values = forward(ctx, scaled.encoder, scaled.decoder).quantiles.value();
  for (Index t = 0; t < values.rows(); ++t) {
    for (Index q = 0; q < values.cols(); ++q) {
      values(t, q) = scaled.target_scaling.inverse(values(t, q));
    }
    std::sort(values.row(t).begin(), values.row(t).end());
  }
  return {config_.quantiles, std::move(values), std::move(scaled.normalization)};
}

ImportanceSeries TftModel::interpret(const Window& window) const {
  check_window(window);
  auto scaled = scale_window(window, target_);
  Tape tape;
  Context ctx(tape, params_);
  auto out = forward(ctx, scaled.encoder, scaled.decoder);
  return {encoder_features(), features_, out.encoder_weights.value(),
          out.decoder_weights.value(), out.attention.value()};
}

nlohmann::json TftModel::to_json() const {
  return {{"format", kCheckpointFormat},
          {"version", 1},
          {"config", config_.to_json()},
          {"features", features_},
          {"target", target_},
          {"weights", params_.to_json()}};
}

TftModel TftModel::from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string()) != kCheckpointFormat || doc.value("version", 0) != 1) {
    throw Error(ErrorCode::kCheckpointMismatch, "not a model checkpoint");
  }
  TftModel model(TftConfig::from_json(doc.at("config")),
                 doc.at("features").get<std::vector<std::string>>(),
                 doc.at("target").get<std::string>());
  model.params_.load_json(doc.at("weights"));
  return model;
}

void TftModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << to_json().dump() << '\n';
}

TftModel TftModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointMismatch, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::json TrainingReport::to_json() const {
  nlohmann::json epochs_doc = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_doc.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"validation_loss", e.validation_loss}});
  }
  return {{"epochs", epochs_doc},
          {"stopped_epoch", stopped_epoch},
          {"best_epoch", best_epoch},
          {"best_validation_loss", best_validation_loss},
          {"train_windows", train_windows},
          {"validation_windows", validation_windows},
          {"parameter_count", parameter_count}};
}

std::pair<std::vector<Window>, std::vector<Window>> split_windows(std::vector<Window> windows,
                                                                  double validation_fraction) {
  if (windows.size() < 2) {
    throw Error(ErrorCode::kEmptyInput, "need at least two windows to split");
  }
  auto n_val = static_cast<std::size_t>(
      std::llround(validation_fraction * static_cast<double>(windows.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, windows.size() - 1);
  std::vector<Window> val(std::make_move_iterator(windows.end() - static_cast<long>(n_val)),
                          std::make_move_iterator(windows.end()));
  windows.resize(windows.size() - n_val);
  return {std::move(windows), std::move(val)};
}

double mean_loss(const TftModel& model, std::span<const ScaledWindow> windows) {
  if (windows.empty()) throw Error(ErrorCode::kEmptyInput, "no windows to score");
  double total = 0.0;
  for (const auto& w : windows) {
    Tape tape;
    Context ctx(tape, model.params());
    auto out = model.forward(ctx, w.encoder, w.decoder);
    total += nn::pinball_loss(out.quantiles, w.label, model.config().quantiles).value()(0, 0);
  }
  return total / static_cast<double>(windows.size());
}

TrainingReport train(TftModel& model, std::span<const Window> train_windows,
                     std::span<const Window> validation_windows) {
  if (train_windows.empty() || validation_windows.empty()) {
    throw Error(ErrorCode::kEmptyInput, "training needs train and validation windows");
  }
  const auto& config = model.config();
  auto scale_all = [&](std::span<const Window> ws) {
    std::vector<ScaledWindow> out;
    out.reserve(ws.size());
    for (const auto& w : ws) {
      if (w.encoder.feature_names != model.features() ||
          w.encoder.features.rows() != as_index(config.encoder_length) ||
          w.decoder.features.rows() != as_index(config.decoder_length)) {
        throw Error(ErrorCode::kLengthMismatch, "window does not match the model");
      }
      out.push_back(scale_window(w, model.target()));
    }
    return out;
  };
  const auto train_set = scale_all(train_windows);
  const auto val_set = scale_all(validation_windows);

  TrainingReport report;
  report.train_windows = train_set.size();
  report.validation_windows = val_set.size();
  report.parameter_count = model.parameter_count();

  auto& store = model.params();
  nn::AdamOptions adam;
  adam.learning_rate = config.learning_rate;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Matrix> best_values;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  long step = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto shuffle_rng = stream(config.seed, epoch, 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const auto end = std::min(order.size(), begin + config.batch_size);
      auto grads = store.zero_grads();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& w = train_set[order[i]];
        auto dropout_rng = stream(config.seed, epoch, order[i] + 1);
        Tape tape;
        Context ctx(tape, store, &grads, &dropout_rng, true);
        auto out = model.forward(ctx, w.encoder, w.decoder);
        Var loss = nn::pinball_loss(out.quantiles, w.label, config.quantiles);
        epoch_loss += loss.value()(0, 0);
        tape.backward(loss);
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (auto& g : grads) g *= inv;
      nn::adam_step(store, grads, adam, ++step);
    }
    const double val_loss = mean_loss(model, val_set);
    report.epochs.push_back({epoch, epoch_loss / static_cast<double>(train_set.size()), val_loss});
    report.stopped_epoch = epoch;
    if (val_loss < best) {
      best = val_loss;
      report.best_epoch = epoch;
      best_values.clear();
      for (std::size_t i = 0; i < store.size(); ++i) best_values.push_back(store[i].value);
      stale = 0;
    } else {
      ++stale;
      if (config.lr_decay_patience > 0 && stale % config.lr_decay_patience == 0) {
        adam.learning_rate *= config.lr_decay;
      }
    }
    if (stale >= std::max<std::size_t>(1, config.early_stopping_patience)) break;
  }
  for (std::size_t i = 0; i < best_values.size(); ++i) store[i].value = best_values[i];
  report.best_validation_loss = best;
  return report;
}

Metrics evaluate(std::span<const double> forecast, std::span<const double> actual) {
  if (forecast.size() != actual.size()) {
    throw Error(ErrorCode::kLengthMismatch, "forecast and actual lengths differ");
  }
  if (actual.size() < 2) {
    throw Error(ErrorCode::kLengthMismatch, "evaluation needs at least two points");
  }
  const double n = static_cast<double>(actual.size());
  const double mean = std::accumulate(actual.begin(), actual.end(), 0.0) / n;
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    sse += (actual[i] - forecast[i]) * (actual[i] - forecast[i]);
    sst += (actual[i] - mean) * (actual[i] - mean);
  }
  if (sst == 0.0) {
    throw Error(ErrorCode::kZeroVariance, "actual values have zero variance; R2 is undefined");
  }
  return {std::sqrt(sse / n), 1.0 - sse / sst};
}

std::vector<std::string> default_features(const TraceDataset& dataset,
                                          std::span<const std::string> services, bool horizontal,
                                          bool vertical) {
  std::vector<std::string> out;
  for (const auto& s : dataset.series()) {
    bool keep = false;
    switch (s.kind) {
      case MetricKind::kFrontEndCalls:
        keep = true;
        break;
      case MetricKind::kHorizontalResource:
      case MetricKind::kVerticalResource: {
        const bool wanted = s.kind == MetricKind::kHorizontalResource ? horizontal : vertical;
        const bool visited = services.empty() ||
                             std::find(services.begin(), services.end(), s.owner) != services.end();
        keep = wanted && visited;
        break;
      }
      case MetricKind::kTargetLatency:
        break;
    }
    if (!keep) continue;
    auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
    if (*lo != *hi) out.push_back(s.name);
  }
  return out;
}

}  // namespace latscale::tft
