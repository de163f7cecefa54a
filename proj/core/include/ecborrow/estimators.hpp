#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <iosfwd>
#include <string>

#include "ecborrow/selection.hpp"

namespace ecborrow {

// Per-record plug-in values. All vectors have one entry per record of R u E.
// q_dr is the density-ratio-scale calibration weight evaluated at every record
// (trial controls need it in the denominator); pi_b is the fitted probability
// of comparability, also at every record.
struct EifInputs {
  Eigen::VectorXd r;      // 1 trial, 0 external control
  Eigen::VectorXd a;      // treatment, 0 for ECs
  Eigen::VectorXd y;
  Eigen::VectorXd pi_a;
  Eigen::VectorXd mu1;
  Eigen::VectorXd mu0;
  Eigen::VectorXd q_dr;
  double r_hat = 0.0;
  Eigen::VectorXd pi_b;
  double r_b = 0.0;
  // var(Y | X, A = 0, R = 1) plug-in, used only by the efficiency gain.
  double control_residual_variance = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(r.size()); }
  std::size_t n_rpct() const;
  std::size_t n_external() const;
  // Throws std::invalid_argument on shape or range problems.
  void check() const;
};

struct EstimateReport {
  std::string estimator;
  double tau_hat = 0.0;
  double variance = 0.0;  // V_hat / N
  double ci_low = 0.0;
  double ci_high = 0.0;
  double alpha = 0.05;
  std::size_t n = 0;
  std::size_t n_borrowed = 0;
  double efficiency_gain = 0.0;
  bool bypassed = false;  // empty comparable set, trial-only estimate
  Eigen::VectorXd influence_values;

  double std_error() const;
};

inline constexpr double kDenominatorGuard = 1e-10;

EstimateReport aipw_estimate(const EifInputs& in, double alpha = 0.05);
EstimateReport acw_estimate(const EifInputs& in, double alpha = 0.05);
// selection.b_tilde is indexed by EC in record order.
EstimateReport acw_alasso_estimate(const EifInputs& in, const BiasSelection& selection,
                                   double alpha = 0.05);

// N^-1 sum psi_i^2.
double eif_variance(const Eigen::VectorXd& influence_values, std::size_t n);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// tau -/+ z_{alpha/2} sqrt(variance), variance on the estimator scale.
Interval confidence_interval(double tau_hat, double variance, double alpha);

enum class Side { kTwoSided, kLess, kGreater };

struct TestDecision {
  double z = 0.0;
  double p_value = 1.0;
  bool reject = false;
  Side side = Side::kTwoSided;
};

TestDecision hypothesis_test(const EstimateReport& report, double null_value, Side side,
                             double alpha = 0.05);

// Plug-in variance reduction relative to the trial-only estimator.
double efficiency_gain(const EifInputs& in, const BiasSelection& selection);

double normal_cdf(double x);
// Inverse standard normal CDF.
double normal_quantile(double p);

nlohmann::json to_json(const EstimateReport& report, bool with_influence = false);
void write_influence_csv(std::ostream& out, const EstimateReport& report);

}  // namespace ecborrow
