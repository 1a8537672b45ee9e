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

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace latscale::krr {

// exp(-beta * |x - x'|^2)
double rbf(std::span<const double> x, std::span<const double> y, double beta);

// Gram matrix of the rows of x.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x, double beta);

struct KrrModel {
  double alpha = 1.0;
  double beta = 1.0;
  double center = 0.0;
  Eigen::MatrixXd support;  // n x d
  Eigen::VectorXd dual;     // n

  double predict(std::span<const double> x) const;
  double predict(double x) const { return predict(std::span<const double>(&x, 1)); }
  Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const;

  nlohmann::json to_json() const;
  static KrrModel from_json(const nlohmann::json& doc);
};

// Centers y and solves (K + alpha I) a = y - mean(y) by Cholesky.
KrrModel fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha, double beta);
KrrModel fit(std::span<const double> x, std::span<const double> y, double alpha, double beta);

struct GridSearchSpec {
  std::vector<double> alpha_grid{0.01, 0.1, 1.0, 10.0};
  std::vector<double> beta_grid{0.01, 0.1, 1.0, 10.0};
  std::size_t folds = 3;

  void validate() const;
};

struct CvCell {
  double alpha = 0.0;
  double beta = 0.0;
  double mse = 0.0;
};

struct GridSearchResult {
  double alpha = 0.0;
  double beta = 0.0;
  std::vector<CvCell> table;  // alpha-major, in grid order

  double best_mse() const;
  void write_csv(std::ostream& out) const;  // alpha,beta,cv_mse
};

// Half-open [begin, end) row ranges of contiguous folds; earlier folds take
// the remainder.
std::vector<std::pair<std::size_t, std::size_t>> contiguous_folds(std::size_t n,
                                                                  std::size_t folds);

// Mean over folds of the validation MSE.
double cv_mse(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha, double beta,
              std::size_t folds);

// Exhaustive search; ties go to the larger alpha, then the smaller beta.
GridSearchResult grid_search(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const GridSearchSpec& spec = {});
GridSearchResult grid_search(std::span<const double> x, std::span<const double> y,
                             const GridSearchSpec& spec = {});

struct FeatureFit {
  KrrModel model;
  GridSearchResult search;
};

// What each per-feature regressor learns. kLatency: the full target from
// its importance column. kShare: the importance-weighted part w_k * y, so the
// K outputs sum to the target when the weights sum to one.
enum class KrrTarget { kLatency, kShare };

std::string_view to_string(KrrTarget target);
KrrTarget krr_target_from_string(std::string_view name);

struct PerFeatureFit {
  std::vector<FeatureFit> features;
  // In-sample diagnostics of the combined regressors against the target:
  // their equal-weight mean for kLatency, their sum for kShare.
  double pooled_r2 = 0.0;
  double pooled_rmse = 0.0;

  // steps x K matrix of f_k evaluated on the matching importance columns.
  Eigen::MatrixXd predict_columns(const Eigen::MatrixXd& importances) const;
};

// One grid-searched univariate regressor per importance column.
PerFeatureFit fit_per_feature(const Eigen::MatrixXd& importances, const Eigen::VectorXd& target,
                              const GridSearchSpec& spec = {},
                              KrrTarget mode = KrrTarget::kLatency);

}  // namespace latscale::krr
