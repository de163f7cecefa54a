#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ecborrow/calibration.hpp"
#include "ecborrow/data_model.hpp"

namespace ecborrow {

// Initial per-EC bias estimates b_hat_i = mu0_E(X_i) - mu0(X_i).
struct BiasEstimates {
  Eigen::VectorXd b_hat;
  std::string source = "linear";
  bool cross_fitted = false;
};

BiasEstimates compute_bias_estimates(std::span<const double> mu0_ec_preds,
                                     std::span<const double> mu0_preds,
                                     std::string source = "linear", bool cross_fitted = false);

struct PseudoObservations {
  Eigen::VectorXd xi_hat;
  Eigen::VectorXd sigma2;  // diagonal of Sigma_xi
};

// xi_i = N / N_R * q_i * (Y_i - mu0(X_i)) over the dataset's ECs (in
// external_index order), q normalized. sigma2_i = (N / N_R * q_i)^2 * (s2 + v_i)
// where s2 is the EC residual mean square and v_i the optional sampling
// variance of mu0(X_i) (empty means zero). mu0_ec holds mu0 at the EC rows.
PseudoObservations compute_pseudo_observations(const TrialDataset& data,
                                               const CalibrationWeights& weights,
                                               std::span<const double> mu0_ec,
                                               double ec_residual_mean_square,
                                               std::span<const double> mu0_fit_variance = {});

struct CvPoint {
  double omega = 0.0;
  double lambda = 0.0;
  double score = 0.0;
  std::size_t n_zero = 0;  // zeros at this point on the full data
};

struct BiasSelection {
  Eigen::VectorXd b_tilde;
  std::vector<std::size_t> selected;  // positions among the ECs with b_tilde == 0
  double lambda = 0.0;
  double omega = 1.0;
  std::vector<CvPoint> cv_path;
  std::string warning;

  bool is_selected(std::size_t i) const { return b_tilde(static_cast<Eigen::Index>(i)) == 0.0; }
};

// Smallest |b_hat| used in the penalty weight.
inline constexpr double kBiasFloor = 1e-8;

// Closed-form minimizer of (xi - b)^2 / sigma2 + lambda |b| / |b_hat|^omega per
// coordinate: soft thresholding at lambda sigma2 / (2 |b_hat|^omega).
BiasSelection adaptive_lasso_solve(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                   double lambda, double omega);

// Smallest lambda that zeroes every coordinate.
double lambda_max(const PseudoObservations& xi, const BiasEstimates& b_hat, double omega);

// count points log-spaced from ratio * lambda_max to lambda_max, ascending.
std::vector<double> lambda_grid(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                double omega, int count = 30, double ratio = 1e-3);

struct TuningResult {
  double lambda = 0.0;
  double omega = 1.0;
  std::vector<CvPoint> cv_path;
  std::string warning;
};

// Cross-validated choice of (lambda, omega). Each of `folds` rounds splits the
// pseudo-observations by seeded Gaussian fission, f = xi + Z and g = xi - Z
// with Z ~ N(0, sigma2), which are independent given the bias. Thresholds are
// fitted on f (scaled by sqrt(2) to match its noise level) and scored on g by
// sum (g - b_tilde(f))^2 / (2 sigma2); scores are
// averaged over rounds. Ties go to the larger lambda. An empty lambda_grid means
// the default per-omega grid.
TuningResult cross_validate_tuning(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                   std::span<const double> lambda_grid,
                                   std::span<const double> omega_grid, int folds,
                                   std::uint64_t seed);

struct SelectionConfig {
  std::vector<double> omega_grid{1.0, 2.0};
  std::vector<double> lambda_grid;  // empty: log-spaced default per omega
  int n_lambda = 30;
  double lambda_ratio = 1e-3;
  int folds = 5;
  std::uint64_t seed = 0;
  bool fit_variance = true;  // add the mu0 prediction variance to sigma2
};

void to_json(nlohmann::json& j, const SelectionConfig& c);
void from_json(const nlohmann::json& j, SelectionConfig& c);

// Tuning followed by the solve at the chosen pair.
BiasSelection select_comparable(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                const SelectionConfig& config);

// CSV: ec_record_id, b_hat, xi_hat, b_tilde, selected. A nonnegative group
// adds a trailing group column.
void write_selection_csv(std::ostream& out, std::span<const std::size_t> record_ids,
                         const BiasEstimates& b_hat, const PseudoObservations& xi,
                         const BiasSelection& selection, int group = -1, bool header = true);

nlohmann::json summary_json(const BiasSelection& s);

}  // namespace ecborrow
