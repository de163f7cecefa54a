#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <span>

#include "ecborrow/nuisance.hpp"

namespace ecborrow {

// Entropy balancing of external controls against trial moments.
struct CalibrationProblem {
  Eigen::MatrixXd ec_basis;        // N_E x K, rows g(X_i)
  Eigen::VectorXd target_moments;  // trial sample mean of g(X)
  BasisSpec basis_spec;            // how g is formed from covariates

  static CalibrationProblem from_covariates(const Eigen::MatrixXd& ec_x,
                                            const Eigen::MatrixXd& rpct_x,
                                            const BasisSpec& basis = {});
};

struct CalibrationOptions {
  double tol = 1e-10;        // max |sum q g - gbar| on the original basis scale
  int max_iter = 500;
  double dual_cap = 100.0;   // |eta| on the standardized basis
  int stall_limit = 20;      // iterations without residual progress
  double accept_tol = 1e-8;  // a stall at or below this residual counts as converged
};

struct CalibrationWeights {
  Eigen::VectorXd weights;   // normalized, sums to 1
  Eigen::VectorXd dual;      // eta on the original basis scale
  double residual = 0.0;     // max |sum q_i g(X_i) - gbar|
  double dual_residual = 0.0;  // ||U(eta)|| / sum exp(eta'g)
  double objective = 0.0;    // sum q log q
  int iterations = 0;
  BasisSpec basis_spec;
  // log q(x) = dual' g(x) - shift - log_sum
  double shift = 0.0;
  double log_sum = 0.0;
};

// Damped Newton on the dual objective log sum_i exp{eta'(g_i - gbar)} with
// Armijo backtracking, started from eta = 0 (uniform weights).
// Throws InfeasibleError when the dual diverges and ConvergenceError when the
// iteration budget runs out.
CalibrationWeights solve_calibration(const CalibrationProblem& problem,
                                     const CalibrationOptions& options = {});

// N_R * q_i: the density-ratio scale used inside the estimators.
Eigen::VectorXd density_ratio_scale(const CalibrationWeights& weights, std::size_t n_rpct);

// Normalized-scale weight function q(x; eta) evaluated at arbitrary basis rows.
Eigen::VectorXd evaluate_weights(const CalibrationWeights& weights, const Eigen::MatrixXd& basis_rows);

// Same, from raw covariates through the stored basis.
Eigen::VectorXd evaluate_weights_at(const CalibrationWeights& weights, const Eigen::MatrixXd& x);

// CSV audit: record_id, weight, density_ratio_weight. A nonnegative group adds
// a trailing group column.
void write_weights_csv(std::ostream& out, std::span<const std::size_t> record_ids,
                       const CalibrationWeights& weights, std::size_t n_rpct, int group = -1,
                       bool header = true);

}  // namespace ecborrow
