#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecborrow/error.hpp"

namespace ecborrow {

// Basis expansion without intercept: the raw covariates, then powers
// 2..degree of the selected columns, then (optionally) pairwise products of
// the raw covariates.
struct BasisSpec {
  int degree = 1;
  std::vector<std::size_t> power_columns;  // empty: every column
  bool interactions = false;

  static BasisSpec identity() { return {}; }
  static BasisSpec polynomial(int degree) { return {degree, {}, false}; }
  // [X, X_{p-1}^2, X_p^2, X_{p-1}^3, X_p^3] for degree 3, tail = 2.
  static BasisSpec tail_powers(std::size_t p, std::size_t tail, int degree);

  std::size_t dimension(std::size_t p) const;
  Eigen::MatrixXd expand(const Eigen::MatrixXd& x) const;
  std::vector<std::string> names(const std::vector<std::string>& covariates) const;
  std::string describe() const;

  friend bool operator==(const BasisSpec&, const BasisSpec&) = default;
};

void to_json(nlohmann::json& j, const BasisSpec& b);
void from_json(const nlohmann::json& j, BasisSpec& b);

// Affine predictor on an expanded basis; coefficients[0] is the intercept.
struct LinearModel {
  BasisSpec basis;
  Eigen::VectorXd coefficients;
  std::string fitted_on;
  bool ridge_used = false;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

struct OlsOptions {
  bool ridge_fallback = true;
  double ridge_penalty = 1e-8;  // applied on the standardized design
};

LinearModel fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                    const BasisSpec& basis = {}, const OlsOptions& options = {},
                    std::string fitted_on = {});

// h_i = d_i' (D'D)^{-1} d_i for each row of x_new, where D is the intercept plus
// basis design of x_train. Scaled by a residual variance this is the sampling
// variance of the OLS prediction at x_new.
Eigen::VectorXd ols_leverage(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& x_new,
                             const BasisSpec& basis = {});

// Logistic regression on the raw covariates plus intercept.
struct LogisticModel {
  Eigen::VectorXd coefficients;  // log-odds scale, intercept first
  int iterations = 0;
  double gradient_norm = 0.0;    // score norm on the original design
  bool converged = false;
  bool separated = false;        // coefficient cap was hit

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const;
};

struct LogisticOptions {
  int max_iter = 100;
  double tol = 1e-10;
  // Cap on the L2 norm of coefficients on the standardized scale.
  double coefficient_cap = 20.0;
};

LogisticModel fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           const LogisticOptions& options = {});

// ---------------------------------------------------------------------------
// Gradient-boosted regression trees (squared error) with cross-fitting.

// Row view that binds to rows of column-major matrices without copying.
using RowRef = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double predict(const RowRef& row) const;
};

struct TreeEnsemble {
  double intercept = 0.0;
  double shrinkage = 0.1;
  std::vector<RegressionTree> trees;

  // Prediction using the first n_trees trees (all when negative).
  double predict_row(const RowRef& row, int n_trees = -1) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x, int n_trees = -1) const;
};

struct BoostingConfig {
  std::vector<int> tree_grid{50, 100, 150, 200, 250, 300, 350, 400, 450, 500};
  std::vector<int> depth_grid{1, 2, 3};
  double shrinkage = 0.1;
  int folds = 5;
  int min_leaf = 5;
  std::uint64_t seed = 0;
};

struct TuningPoint {
  int depth = 0;
  int n_trees = 0;
  double mse = 0.0;
};

struct BoostedTreesModel {
  TreeEnsemble full;                       // all rows, tuned by K-fold CV
  std::vector<TreeEnsemble> fold_models;   // fold k model never saw fold k
  std::vector<int> fold_assignment;        // per training row
  int n_trees = 0;
  int max_depth = 0;
  double shrinkage = 0.1;
  bool has_offset = false;
  bool degenerate = false;                 // constant response, single leaf
  std::vector<TuningPoint> cv_path;
};

// Fits y (optionally y - offset) by boosting. Tuning of (depth, n_trees) for
// every fold model uses only that fold's training rows, so cross-fitted
// predictions are independent of the held-out outcomes.
BoostedTreesModel fit_boosted_trees(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    const BoostingConfig& config,
                                    const Eigen::VectorXd* offset = nullptr);

// Fixed-hyperparameter boosting on all rows; building block of the above.
TreeEnsemble boost(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_trees, int depth,
                   double shrinkage, int min_leaf);

enum class PredictMode { kInSample, kCrossFitted };

// In-sample: the full model at arbitrary rows. Cross-fitted: x must be the
// training design (same rows, same order); row i gets its fold model.
// offset supplies the base prediction at x when the model was fitted with one.
Eigen::VectorXd predict_mu(const BoostedTreesModel& model, const Eigen::MatrixXd& x,
                           PredictMode mode, const Eigen::VectorXd* offset = nullptr);
Eigen::VectorXd predict_mu(const LinearModel& model, const Eigen::MatrixXd& x);

// ---------------------------------------------------------------------------

struct VarianceRatio {
  double value = 0.0;
  double numerator = 0.0;    // mean squared trial-control residual
  double denominator = 0.0;  // mean squared EC residual
  bool disabled = false;     // explicit no-borrowing switch (value 0)

  static VarianceRatio none() { return {0.0, 0.0, 0.0, true}; }
};

VarianceRatio estimate_variance_ratio(std::span<const double> resid_rpct_controls,
                                      std::span<const double> resid_ec);

nlohmann::json summary_json(const LinearModel& m);
nlohmann::json summary_json(const LogisticModel& m);
nlohmann::json summary_json(const BoostedTreesModel& m);

}  // namespace ecborrow
