#include "ecborrow/selection.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

#include "ecborrow/random.hpp"

namespace ecborrow {

BiasEstimates compute_bias_estimates(std::span<const double> mu0_ec_preds,
                                     std::span<const double> mu0_preds, std::string source,
                                     bool cross_fitted) {
  if (mu0_ec_preds.size() != mu0_preds.size()) {
    throw std::invalid_argument("compute_bias_estimates: length mismatch");
  }
  BiasEstimates out;
  out.b_hat.resize(static_cast<Eigen::Index>(mu0_preds.size()));
  for (std::size_t i = 0; i < mu0_preds.size(); ++i) {
    out.b_hat(static_cast<Eigen::Index>(i)) = mu0_ec_preds[i] - mu0_preds[i];
  }
  if (!out.b_hat.allFinite()) throw NumericalError("bias estimates are not finite");
  out.source = std::move(source);
  out.cross_fitted = cross_fitted;
  return out;
}

PseudoObservations compute_pseudo_observations(const TrialDataset& data,
                                               const CalibrationWeights& weights,
                                               std::span<const double> mu0_ec,
                                               double ec_residual_mean_square,
                                               std::span<const double> mu0_fit_variance) {
  const auto ec = data.external_index();
  const auto n_e = static_cast<Eigen::Index>(ec.size());
  if (weights.weights.size() != n_e || mu0_ec.size() != ec.size() ||
      (!mu0_fit_variance.empty() && mu0_fit_variance.size() != ec.size())) {
    throw std::invalid_argument("compute_pseudo_observations: inputs do not cover the ECs");
  }
  const double n_r = static_cast<double>(data.rpct_index().size());
  const double factor = static_cast<double>(data.size()) / n_r;
  PseudoObservations out;
  out.xi_hat.resize(n_e);
  out.sigma2.resize(n_e);
  for (Eigen::Index i = 0; i < n_e; ++i) {
    const double scale = factor * weights.weights(i);
    const auto row = ec[static_cast<std::size_t>(i)];
    out.xi_hat(i) = scale * (data[row].outcome - mu0_ec[static_cast<std::size_t>(i)]);
    const double v = mu0_fit_variance.empty() ? 0.0 : mu0_fit_variance[static_cast<std::size_t>(i)];
    if (!(v >= 0.0)) throw std::invalid_argument("compute_pseudo_observations: negative fit variance");
    out.sigma2(i) = scale * scale * (ec_residual_mean_square + v);
  }
  return out;
}

namespace {

void check_inputs(const PseudoObservations& xi, const BiasEstimates& b_hat) {
  if (xi.xi_hat.size() != xi.sigma2.size() || xi.xi_hat.size() != b_hat.b_hat.size()) {
    throw std::invalid_argument("selection: length mismatch");
  }
  for (Eigen::Index i = 0; i < xi.sigma2.size(); ++i) {
    if (!(xi.sigma2(i) > 0.0) || !std::isfinite(xi.sigma2(i))) {
      throw NumericalError("selection: nonpositive pseudo-observation variance at EC " +
                           std::to_string(i));
    }
  }
}

double penalty_base(double b, double omega) {
  return std::pow(std::max(std::abs(b), kBiasFloor), omega);
}

// Soft threshold of v at lambda * sigma2 / (2 |b|^omega); exact zero inside.
double shrink(double v, double sigma2, double b, double lambda, double omega) {
  if (lambda == 0.0) return v;
  const double t = lambda * sigma2 / (2.0 * penalty_base(b, omega));
  const double a = std::abs(v);
  if (a <= t) return 0.0;
  return std::copysign(a - t, v);
}

}  // namespace

BiasSelection adaptive_lasso_solve(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                   double lambda, double omega) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("adaptive_lasso_solve: lambda must be >= 0");
  if (!(omega > 0.0)) throw std::invalid_argument("adaptive_lasso_solve: omega must be > 0");
  check_inputs(xi, b_hat);
  BiasSelection out;
  out.lambda = lambda;
  out.omega = omega;
  const auto n = xi.xi_hat.size();
  out.b_tilde.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.b_tilde(i) = shrink(xi.xi_hat(i), xi.sigma2(i), b_hat.b_hat(i), lambda, omega);
    if (out.b_tilde(i) == 0.0) out.selected.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

double lambda_max(const PseudoObservations& xi, const BiasEstimates& b_hat, double omega) {
  check_inputs(xi, b_hat);
  double m = 0.0;
  for (Eigen::Index i = 0; i < xi.xi_hat.size(); ++i) {
    m = std::max(m, 2.0 * std::abs(xi.xi_hat(i)) * penalty_base(b_hat.b_hat(i), omega) / xi.sigma2(i));
  }
  // Guard against the last coordinate surviving by rounding.
  return m * (1.0 + 1e-12);
}

std::vector<double> lambda_grid(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                double omega, int count, double ratio) {
  if (count < 1) throw std::invalid_argument("lambda_grid: count must be positive");
  const double top = lambda_max(xi, b_hat, omega);
  if (top == 0.0) return {0.0};
  if (count == 1) return {top};
  std::vector<double> grid(static_cast<std::size_t>(count));
  const double lo = std::log(top * ratio);
  const double hi = std::log(top);
  for (int k = 0; k < count; ++k) {
    grid[static_cast<std::size_t>(k)] = std::exp(lo + (hi - lo) * k / (count - 1));
  }
  grid.back() = top;
  return grid;
}

namespace {

std::vector<std::vector<double>> build_grids(const PseudoObservations& xi,
                                             const BiasEstimates& b_hat,
                                             std::span<const double> lambda_grid_in,
                                             std::span<const double> omega_grid, int count,
                                             double ratio) {
  std::vector<std::vector<double>> grids;
  for (double w : omega_grid) {
    if (!(w > 0.0)) throw std::invalid_argument("cross_validate_tuning: omega must be > 0");
    grids.push_back(lambda_grid_in.empty()
                        ? lambda_grid(xi, b_hat, w, count, ratio)
                        : std::vector<double>(lambda_grid_in.begin(), lambda_grid_in.end()));
  }
  return grids;
}

TuningResult tune(const PseudoObservations& xi, const BiasEstimates& b_hat,
                  const std::vector<std::vector<double>>& grids,
                  std::span<const double> omega_grid, int folds, std::uint64_t seed) {
  const auto n = xi.xi_hat.size();
  TuningResult out;

  const bool degenerate = (xi.xi_hat.array() == xi.xi_hat(0)).all();
  if (degenerate) {
    double best_lambda = 0.0;
    double best_omega = omega_grid[0];
    for (std::size_t w = 0; w < grids.size(); ++w) {
      for (double l : grids[w]) {
        if (l > best_lambda) {
          best_lambda = l;
          best_omega = omega_grid[w];
        }
      }
    }
    out.lambda = best_lambda;
    out.omega = best_omega;
    out.warning = "all pseudo-observations are identical; using the largest lambda";
    return out;
  }

  // Fission noise, one draw per round. f carries twice the noise variance of
  // xi, so its threshold is scaled by sqrt(2) to apply the same rule in
  // standardized units.
  std::vector<Eigen::VectorXd> noise(static_cast<std::size_t>(folds));
  for (int k = 0; k < folds; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::normal_distribution<double> z(0.0, 1.0);
    auto& v = noise[static_cast<std::size_t>(k)];
    v.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = z(rng) * std::sqrt(xi.sigma2(i));
  }

  bool have = false;
  double best_score = 0.0;
  for (std::size_t w = 0; w < grids.size(); ++w) {
    const double omega = omega_grid[w];
    for (double lambda : grids[w]) {
      if (!(lambda >= 0.0)) throw std::invalid_argument("cross_validate_tuning: negative lambda");
      double score = 0.0;
      for (const auto& z : noise) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double f = xi.xi_hat(i) + z(i);
          const double g = xi.xi_hat(i) - z(i);
          const double fit = shrink(f, xi.sigma2(i), b_hat.b_hat(i), lambda * std::numbers::sqrt2, omega);
          score += (g - fit) * (g - fit) / (2.0 * xi.sigma2(i));
        }
      }
      score /= static_cast<double>(folds);

      CvPoint pt{omega, lambda, score, 0};
      for (Eigen::Index i = 0; i < n; ++i) {
        if (shrink(xi.xi_hat(i), xi.sigma2(i), b_hat.b_hat(i), lambda, omega) == 0.0) ++pt.n_zero;
      }
      out.cv_path.push_back(pt);

      const double tol = 1e-12 * std::max(1.0, std::abs(best_score));
      if (!have || score < best_score - tol) {
        have = true;
        best_score = score;
        out.lambda = lambda;
        out.omega = omega;
      } else if (std::abs(score - best_score) <= tol && lambda > out.lambda) {
        best_score = std::min(best_score, score);
        out.lambda = lambda;
        out.omega = omega;
      }
    }
  }
  return out;
}

void check_tuning_args(const PseudoObservations& xi, const BiasEstimates& b_hat,
                       std::span<const double> omega_grid, int folds) {
  check_inputs(xi, b_hat);
  if (omega_grid.empty()) throw std::invalid_argument("cross_validate_tuning: empty omega grid");
  if (folds < 2) throw std::invalid_argument("cross_validate_tuning: folds must be >= 2");
  if (xi.xi_hat.size() < folds) {
    throw std::invalid_argument("cross_validate_tuning: fewer ECs than folds");
  }
}

}  // namespace

TuningResult cross_validate_tuning(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                   std::span<const double> lambda_grid_in,
                                   std::span<const double> omega_grid, int folds,
                                   std::uint64_t seed) {
  check_tuning_args(xi, b_hat, omega_grid, folds);
  return tune(xi, b_hat, build_grids(xi, b_hat, lambda_grid_in, omega_grid, 30, 1e-3), omega_grid,
              folds, seed);
}

void to_json(nlohmann::json& j, const SelectionConfig& c) {
  j = nlohmann::json{{"omega_grid", c.omega_grid},   {"lambda_grid", c.lambda_grid},
                     {"n_lambda", c.n_lambda},       {"lambda_ratio", c.lambda_ratio},
                     {"folds", c.folds},             {"seed", c.seed},
                     {"fit_variance", c.fit_variance}};
}

void from_json(const nlohmann::json& j, SelectionConfig& c) {
  SelectionConfig d;
  c.omega_grid = j.value("omega_grid", d.omega_grid);
  c.lambda_grid = j.value("lambda_grid", d.lambda_grid);
  c.n_lambda = j.value("n_lambda", d.n_lambda);
  c.lambda_ratio = j.value("lambda_ratio", d.lambda_ratio);
  c.folds = j.value("folds", d.folds);
  c.seed = j.value("seed", d.seed);
  c.fit_variance = j.value("fit_variance", d.fit_variance);
}

BiasSelection select_comparable(const PseudoObservations& xi, const BiasEstimates& b_hat,
                                const SelectionConfig& config) {
  check_tuning_args(xi, b_hat, config.omega_grid, config.folds);
  auto t = tune(xi, b_hat,
                build_grids(xi, b_hat, config.lambda_grid, config.omega_grid, config.n_lambda,
                            config.lambda_ratio),
                config.omega_grid, config.folds, config.seed);
  BiasSelection s = adaptive_lasso_solve(xi, b_hat, t.lambda, t.omega);
  s.cv_path = std::move(t.cv_path);
  s.warning = std::move(t.warning);
  return s;
}

void write_selection_csv(std::ostream& out, std::span<const std::size_t> record_ids,
                         const BiasEstimates& b_hat, const PseudoObservations& xi,
                         const BiasSelection& selection, int group, bool header) {
  const auto n = static_cast<std::size_t>(selection.b_tilde.size());
  if (record_ids.size() != n || static_cast<std::size_t>(b_hat.b_hat.size()) != n ||
      static_cast<std::size_t>(xi.xi_hat.size()) != n) {
    throw std::invalid_argument("write_selection_csv: length mismatch");
  }
  if (header) out << "ec_record_id,b_hat,xi_hat,b_tilde,selected" << (group >= 0 ? ",group\n" : "\n");
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    out << record_ids[i] << ',' << format_double(b_hat.b_hat(e)) << ','
        << format_double(xi.xi_hat(e)) << ',' << format_double(selection.b_tilde(e)) << ','
        << (selection.b_tilde(e) == 0.0 ? 1 : 0);
    if (group >= 0) out << ',' << group;
    out << '\n';
  }
}

nlohmann::json summary_json(const BiasSelection& s) {
  nlohmann::json path = nlohmann::json::array();
  for (const auto& p : s.cv_path) {
    path.push_back({{"omega", p.omega}, {"lambda", p.lambda}, {"score", p.score}, {"n_zero", p.n_zero}});
  }
  nlohmann::json j{{"lambda", s.lambda},
                   {"omega", s.omega},
                   {"n_ec", s.b_tilde.size()},
                   {"n_selected", s.selected.size()},
                   {"cv_path", std::move(path)}};
  if (!s.warning.empty()) j["warning"] = s.warning;
  return j;
}

}  // namespace ecborrow
