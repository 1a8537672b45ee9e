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

#include "latscale/krr.hpp"

#include <cmath>
#include <ostream>

#include "latscale/error.hpp"
#include "latscale/trace_data.hpp"

namespace latscale::krr {

namespace {

using Eigen::Index;

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFinite, std::string(what) + " contains non-finite values");
  }
}

Eigen::MatrixXd column(std::span<const double> x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Index>(x.size()));
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Index>& rows) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

double rbf(std::span<const double> x, std::span<const double> y, double beta) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::kShapeMismatch, "rbf: inputs differ in dimension");
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
  return std::exp(-beta * d2);
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x, double beta) {
  const Index n = x.rows();
  Eigen::MatrixXd k(n, n);
  for (Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      k(i, j) = k(j, i) = std::exp(-beta * (x.row(i) - x.row(j)).squaredNorm());
    }
  }
  return k;
}

double KrrModel::predict(std::span<const double> x) const {
  if (static_cast<Index>(x.size()) != support.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "krr predict: input dimension differs");
  }
  double out = center;
  for (Index i = 0; i < support.rows(); ++i) {
    double d2 = 0.0;
    for (Index j = 0; j < support.cols(); ++j) {
      const double d = support(i, j) - x[static_cast<std::size_t>(j)];
      d2 += d * d;
    }
    out += dual(i) * std::exp(-beta * d2);
  }
  return out;
}

Eigen::VectorXd KrrModel::predict_rows(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) row[static_cast<std::size_t>(c)] = x(r, c);
    out(r) = predict(row);
  }
  return out;
}

nlohmann::json KrrModel::to_json() const {
  std::vector<std::vector<double>> inputs;
  for (Index i = 0; i < support.rows(); ++i) {
    inputs.emplace_back();
    for (Index j = 0; j < support.cols(); ++j) inputs.back().push_back(support(i, j));
  }
  return {{"alpha", alpha},
          {"beta", beta},
          {"center", center},
          {"support_inputs", inputs},
          {"dual_coefficients", std::vector<double>(dual.data(), dual.data() + dual.size())}};
}

KrrModel KrrModel::from_json(const nlohmann::json& doc) {
  KrrModel m;
  m.alpha = doc.at("alpha").get<double>();
  m.beta = doc.at("beta").get<double>();
  m.center = doc.at("center").get<double>();
  auto inputs = doc.at("support_inputs").get<std::vector<std::vector<double>>>();
  auto dual = doc.at("dual_coefficients").get<std::vector<double>>();
  if (inputs.size() != dual.size()) {
    throw Error(ErrorCode::kShapeMismatch, "krr dump: support and coefficients differ in length");
  }
  const Index d = inputs.empty() ? 1 : static_cast<Index>(inputs.front().size());
  m.support.resize(static_cast<Index>(inputs.size()), d);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (static_cast<Index>(inputs[i].size()) != d) {
      throw Error(ErrorCode::kShapeMismatch, "krr dump: ragged support inputs");
    }
    for (Index j = 0; j < d; ++j) m.support(static_cast<Index>(i), j) = inputs[i][static_cast<std::size_t>(j)];
  }
  m.dual = Eigen::Map<const Eigen::VectorXd>(dual.data(), static_cast<Index>(dual.size()));
  return m;
}

KrrModel fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha, double beta) {
  if (x.rows() != y.size() || x.rows() < 1) {
    throw Error(ErrorCode::kLengthMismatch, "krr fit: need equal, non-zero input lengths");
  }
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "krr fit: alpha and beta must be positive");
  }
  check_finite(x, "krr inputs");
  check_finite(y, "krr targets");
  KrrModel m;
  m.alpha = alpha;
  m.beta = beta;
  m.center = y.mean();
  m.support = x;
  Eigen::MatrixXd k = kernel_matrix(x, beta);
  k.diagonal().array() += alpha;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kFactorizationFailure,
                "krr fit: K + alpha I is not positive definite; increase alpha");
  }
  m.dual = llt.solve((y.array() - m.center).matrix());
  return m;
}

KrrModel fit(std::span<const double> x, std::span<const double> y, double alpha, double beta) {
  return fit(column(x), column(y), alpha, beta);
}

void GridSearchSpec::validate() const {
  if (alpha_grid.empty() || beta_grid.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "grid search needs non-empty grids");
  }
  for (double v : alpha_grid) {
    if (!(v > 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha grid values must be > 0");
  }
  for (double v : beta_grid) {
    if (!(v > 0.0)) throw Error(ErrorCode::kInvalidArgument, "beta grid values must be > 0");
  }
  if (folds < 2) throw Error(ErrorCode::kInvalidArgument, "grid search needs >= 2 folds");
}

double GridSearchResult::best_mse() const {
  for (const auto& c : table) {
    if (c.alpha == alpha && c.beta == beta) return c.mse;
  }
  throw Error(ErrorCode::kInvalidArgument, "selected cell missing from the table");
}

void GridSearchResult::write_csv(std::ostream& out) const {
  out << "alpha,beta,cv_mse\n";
  for (const auto& c : table) {
    out << format_number(c.alpha) << ',' << format_number(c.beta) << ',' << format_number(c.mse)
        << '\n';
  }
}

std::vector<std::pair<std::size_t, std::size_t>> contiguous_folds(std::size_t n,
                                                                  std::size_t folds) {
  if (folds < 2 || n < folds) {
    throw Error(ErrorCode::kDatasetTooShort, "cross-validation needs at least " +
                                                 std::to_string(folds) + " points, got " +
                                                 std::to_string(n));
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t size = n / folds + (f < n % folds ? 1 : 0);
    out.emplace_back(begin, begin + size);
    begin += size;
  }
  return out;
}

double cv_mse(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha, double beta,
              std::size_t folds) {
  const auto n = static_cast<std::size_t>(x.rows());
  double total = 0.0;
  for (auto [begin, end] : contiguous_folds(n, folds)) {
    std::vector<Index> train;
    std::vector<Index> val;
    for (std::size_t i = 0; i < n; ++i) {
      (i >= begin && i < end ? val : train).push_back(static_cast<Index>(i));
    }
    Eigen::VectorXd ytr(static_cast<Index>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) ytr(static_cast<Index>(i)) = y(train[i]);
    auto model = fit(take_rows(x, train), ytr, alpha, beta);
    auto pred = model.predict_rows(take_rows(x, val));
    double se = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double e = pred(static_cast<Index>(i)) - y(val[i]);
      se += e * e;
    }
    total += se / static_cast<double>(val.size());
  }
  return total / static_cast<double>(folds);
}

GridSearchResult grid_search(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const GridSearchSpec& spec) {
  spec.validate();
  if (x.rows() != y.size()) {
    throw Error(ErrorCode::kLengthMismatch, "grid search: inputs and targets differ in length");
  }
  GridSearchResult r;
  bool have = false;
  double best = 0.0;
  for (double a : spec.alpha_grid) {
    for (double b : spec.beta_grid) {
      const double mse = cv_mse(x, y, a, b, spec.folds);
      r.table.push_back({a, b, mse});
      const bool better = !have || mse < best ||
                          (mse == best && (a > r.alpha || (a == r.alpha && b < r.beta)));
      if (better) {
        have = true;
        best = mse;
        r.alpha = a;
        r.beta = b;
      }
    }
  }
  return r;
}

GridSearchResult grid_search(std::span<const double> x, std::span<const double> y,
                             const GridSearchSpec& spec) {
  return grid_search(column(x), column(y), spec);
}

Eigen::MatrixXd PerFeatureFit::predict_columns(const Eigen::MatrixXd& importances) const {
  if (importances.cols() != static_cast<Index>(features.size())) {
    throw Error(ErrorCode::kShapeMismatch, "importance columns differ from the fitted features");
  }
  Eigen::MatrixXd out(importances.rows(), importances.cols());
  for (Index k = 0; k < importances.cols(); ++k) {
    out.col(k) = features[static_cast<std::size_t>(k)].model.predict_rows(importances.col(k));
  }
  return out;
}

std::string_view to_string(KrrTarget target) {
  return target == KrrTarget::kLatency ? "latency" : "share";
}

KrrTarget krr_target_from_string(std::string_view name) {
  if (name == "latency") return KrrTarget::kLatency;
  if (name == "share") return KrrTarget::kShare;
  throw Error(ErrorCode::kInvalidArgument,
              "KRR target must be latency or share, got '" + std::string(name) + "'");
}

PerFeatureFit fit_per_feature(const Eigen::MatrixXd& importances, const Eigen::VectorXd& target,
                              const GridSearchSpec& spec, KrrTarget mode) {
  if (importances.cols() < 1 || importances.rows() != target.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "importance matrix must have >= 1 column and one row per target value");
  }
  PerFeatureFit out;
  for (Index k = 0; k < importances.cols(); ++k) {
    Eigen::MatrixXd xk = importances.col(k);
    const Eigen::VectorXd yk =
        mode == KrrTarget::kLatency ? target : Eigen::VectorXd(xk.col(0).cwiseProduct(target));
    auto search = grid_search(xk, yk, spec);
    out.features.push_back({fit(xk, yk, search.alpha, search.beta), std::move(search)});
  }
  const Eigen::MatrixXd columns = out.predict_columns(importances);
  const Eigen::VectorXd combined = mode == KrrTarget::kLatency
                                       ? Eigen::VectorXd(columns.rowwise().mean())
                                       : Eigen::VectorXd(columns.rowwise().sum());
  const double n = static_cast<double>(target.size());
  const double sse = (combined - target).squaredNorm();
  const double sst = (target.array() - target.mean()).square().sum();
  out.pooled_rmse = std::sqrt(sse / n);
  out.pooled_r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
  return out;
}

}  // namespace latscale::krr
