#include "ecborrow/pipeline.hpp"

#include <algorithm>
#include <exception>
#include <stdexcept>

#include "ecborrow/random.hpp"

namespace ecborrow {

std::vector<std::string> all_estimators() { return {kAipw, kAcw, kAcwAlasso, kAcwAlassoGbm}; }

void check_estimator_names(const std::vector<std::string>& names) {
  const auto known = all_estimators();
  for (const auto& n : names) {
    if (std::find(known.begin(), known.end(), n) == known.end()) {
      throw std::invalid_argument("unknown estimator '" + n +
                                  "' (expected aipw, acw, acw_alasso, acw_alasso_gbm)");
    }
  }
}

const EstimateReport* PipelineResult::find(const std::string& estimator) const {
  for (const auto& e : estimates) {
    if (e.estimator == estimator) return &e;
  }
  return nullptr;
}

namespace {

nlohmann::json boosting_json(const BoostingConfig& b) {
  return {{"tree_grid", b.tree_grid}, {"depth_grid", b.depth_grid}, {"shrinkage", b.shrinkage},
          {"folds", b.folds},         {"min_leaf", b.min_leaf},     {"seed", b.seed}};
}

BoostingConfig boosting_from(const nlohmann::json& j) {
  BoostingConfig b;
  b.tree_grid = j.value("tree_grid", b.tree_grid);
  b.depth_grid = j.value("depth_grid", b.depth_grid);
  b.shrinkage = j.value("shrinkage", b.shrinkage);
  b.folds = j.value("folds", b.folds);
  b.min_leaf = j.value("min_leaf", b.min_leaf);
  b.seed = j.value("seed", b.seed);
  return b;
}

}  // namespace

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{{"estimators", c.estimators},
                     {"outcome_basis", c.outcome_basis},
                     {"calibration_basis", c.calibration_basis},
                     {"calibration",
                      {{"tol", c.calibration.tol},
                       {"max_iter", c.calibration.max_iter},
                       {"dual_cap", c.calibration.dual_cap},
                       {"stall_limit", c.calibration.stall_limit},
                       {"accept_tol", c.calibration.accept_tol}}},
                     {"selection", c.selection},
                     {"boosting", boosting_json(c.boosting)},
                     {"alpha", c.alpha},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  PipelineConfig d;
  c.estimators = j.value("estimators", d.estimators);
  check_estimator_names(c.estimators);
  c.outcome_basis = j.value("outcome_basis", d.outcome_basis);
  c.calibration_basis = j.value("calibration_basis", d.calibration_basis);
  if (j.contains("calibration")) {
    const auto& k = j.at("calibration");
    c.calibration.tol = k.value("tol", d.calibration.tol);
    c.calibration.max_iter = k.value("max_iter", d.calibration.max_iter);
    c.calibration.dual_cap = k.value("dual_cap", d.calibration.dual_cap);
    c.calibration.stall_limit = k.value("stall_limit", d.calibration.stall_limit);
    c.calibration.accept_tol = k.value("accept_tol", d.calibration.accept_tol);
  }
  c.selection = j.value("selection", d.selection);
  c.boosting = j.contains("boosting") ? boosting_from(j.at("boosting")) : d.boosting;
  c.alpha = j.value("alpha", d.alpha);
  c.seed = j.value("seed", d.seed);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
}

namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

Eigen::VectorXd rows_of(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(idx[k]));
  return out;
}

std::vector<double> residuals(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                              const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y(static_cast<Eigen::Index>(i)) - mu(static_cast<Eigen::Index>(i)));
  return out;
}

double mean_square(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return s / static_cast<double>(v.size());
}

bool wants(const PipelineConfig& c, const char* name) {
  return std::find(c.estimators.begin(), c.estimators.end(), name) != c.estimators.end();
}

// Shared state of one pipeline run.
struct Context {
  const TrialDataset& data;
  const PipelineConfig& config;
  std::vector<std::size_t> treated, control, ec;
  Eigen::VectorXd y;
  EifInputs base;  // R, A, Y, pi_A filled
  std::vector<double> mu0_fit_variance;  // at the ECs; empty when disabled
};

// Selective borrowing given the control-mean predictions mu0 (all records) and
// the EC-model predictions at the ECs.
std::pair<EstimateReport, SelectionArtifacts> run_alasso(const Context& ctx,
                                                          const CalibrationWeights& w,
                                                          const Eigen::VectorXd& q_dr,
                                                          const Eigen::VectorXd& mu1,
                                                          const Eigen::VectorXd& mu0,
                                                          const Eigen::VectorXd& mu0_ec_at_ec,
                                                          const std::string& source,
                                                          bool cross_fitted,
                                                          std::uint64_t stream) {
  SelectionArtifacts art;
  const Eigen::VectorXd mu0_at_ec = rows_of(mu0, ctx.ec);
  art.b_hat = compute_bias_estimates({mu0_ec_at_ec.data(), static_cast<std::size_t>(mu0_ec_at_ec.size())},
                                     {mu0_at_ec.data(), static_cast<std::size_t>(mu0_at_ec.size())},
                                     source, cross_fitted);
  const Eigen::VectorXd y_ec = rows_of(ctx.y, ctx.ec);
  const double s2 = (y_ec - mu0_ec_at_ec).squaredNorm() / static_cast<double>(ctx.ec.size());
  if (!(s2 > 0.0)) throw NumericalError("EC residual mean square is zero");
  art.xi = compute_pseudo_observations(ctx.data, w,
                                       {mu0_at_ec.data(), static_cast<std::size_t>(mu0_at_ec.size())},
                                       s2, ctx.mu0_fit_variance);

  SelectionConfig sc = ctx.config.selection;
  sc.seed = derive_seed(ctx.config.selection.seed ^ ctx.config.seed, stream);
  art.selection = select_comparable(art.xi, art.b_hat, sc);

  const auto resid_c = residuals(ctx.y, mu0, ctx.control);
  std::vector<std::size_t> chosen;
  Eigen::VectorXd indicator(static_cast<Eigen::Index>(ctx.ec.size()));
  for (std::size_t k = 0; k < ctx.ec.size(); ++k) {
    const bool sel = art.selection.b_tilde(static_cast<Eigen::Index>(k)) == 0.0;
    indicator(static_cast<Eigen::Index>(k)) = sel ? 1.0 : 0.0;
    if (sel) chosen.push_back(ctx.ec[k]);
  }

  EifInputs in = ctx.base;
  in.mu1 = mu1;
  in.mu0 = mu0;
  in.q_dr = q_dr;
  in.control_residual_variance = mean_square(resid_c);
  const auto n = static_cast<Eigen::Index>(ctx.data.size());
  if (chosen.empty()) {
    in.pi_b = Eigen::VectorXd::Zero(n);
  } else if (chosen.size() == ctx.ec.size()) {
    in.pi_b = Eigen::VectorXd::Ones(n);
  } else {
    const auto model = fit_logistic(rows_of(ctx.data.covariates(), ctx.ec), indicator);
    in.pi_b = model.predict_proba(ctx.data.covariates());
    art.pi_b_fitted = true;
  }
  if (!chosen.empty()) {
    art.r_b = estimate_variance_ratio(resid_c, residuals(ctx.y, mu0, chosen));
    in.r_b = art.r_b.value;
  }
  auto rep = acw_alasso_estimate(in, art.selection, ctx.config.alpha);
  return {std::move(rep), std::move(art)};
}

}  // namespace

PipelineResult run_pipeline(const TrialDataset& data, const PipelineConfig& config) {
  check_estimator_names(config.estimators);
  PipelineResult res;
  Context ctx{data, config, data.treated_index(), data.control_index(), data.external_index(),
              data.outcomes(), {}, {}};
  if (ctx.treated.empty() || ctx.control.empty()) throw DataError("empty trial arm");
  res.ec_rows = ctx.ec;

  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::MatrixXd& x = data.covariates();
  ctx.base.r.resize(n);
  ctx.base.a.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = data[static_cast<std::size_t>(i)];
    ctx.base.r(i) = rec.source == kTrialSource ? 1.0 : 0.0;
    ctx.base.a(i) = rec.treatment;
  }
  ctx.base.y = data.outcomes();
  ctx.base.pi_a = data.propensities();

  // Linear outcome models.
  const LinearModel m1 = fit_ols(rows_of(x, ctx.treated), rows_of(ctx.y, ctx.treated),
                                 config.outcome_basis, {}, "rpct_treated");
  const LinearModel m0 = fit_ols(rows_of(x, ctx.control), rows_of(ctx.y, ctx.control),
                                 config.outcome_basis, {}, "rpct_control");
  const Eigen::VectorXd mu1 = m1.predict(x);
  const Eigen::VectorXd mu0 = m0.predict(x);
  res.nuisance["mu1"] = summary_json(m1);
  res.nuisance["mu0"] = summary_json(m0);

  auto attempt = [&](const char* name, auto&& body) {
    if (!wants(config, name)) return;
    if (!config.capture_failures) {
      res.estimates.push_back(body());
      return;
    }
    try {
      res.estimates.push_back(body());
    } catch (const std::exception& e) {
      res.failures[name] = e.what();
    }
  };

  attempt(kAipw, [&] {
    EifInputs in = ctx.base;
    in.mu1 = mu1;
    in.mu0 = mu0;
    return aipw_estimate(in, config.alpha);
  });

  const bool borrowing = wants(config, kAcw) || wants(config, kAcwAlasso) || wants(config, kAcwAlassoGbm);
  if (!borrowing) return res;

  // Calibration and the variance ratio; failures here void every borrowing estimator.
  Eigen::VectorXd q_dr;
  try {
    if (ctx.ec.empty()) throw DataError("no external controls to borrow");
    auto problem = CalibrationProblem::from_covariates(rows_of(x, ctx.ec), rows_of(x, data.rpct_index()),
                                                       config.calibration_basis);
    res.weights = solve_calibration(problem, config.calibration);
    q_dr = evaluate_weights_at(*res.weights, x) * static_cast<double>(data.rpct_index().size());
    res.r_hat = estimate_variance_ratio(residuals(ctx.y, mu0, ctx.control), residuals(ctx.y, mu0, ctx.ec));
  } catch (const std::exception& e) {
    if (!config.capture_failures) throw;
    for (const char* name : {kAcw, kAcwAlasso, kAcwAlassoGbm}) {
      if (wants(config, name)) res.failures[name] = e.what();
    }
    return res;
  }

  attempt(kAcw, [&] {
    EifInputs in = ctx.base;
    in.mu1 = mu1;
    in.mu0 = mu0;
    in.q_dr = q_dr;
    in.r_hat = res.r_hat.value;
    in.control_residual_variance = res.r_hat.numerator;
    return acw_estimate(in, config.alpha);
  });

  // Sampling variance of the linear control fit at the ECs, with the residual
  // variance on n_c - dim degrees of freedom.
  if (config.selection.fit_variance && (wants(config, kAcwAlasso) || wants(config, kAcwAlassoGbm))) {
    const auto rc = residuals(ctx.y, mu0, ctx.control);
    const double dim = static_cast<double>(config.outcome_basis.dimension(static_cast<std::size_t>(x.cols())) + 1);
    const double n_c = static_cast<double>(rc.size());
    const double s2c = mean_square(rc) * n_c / std::max(1.0, n_c - dim);
    const Eigen::VectorXd h = ols_leverage(rows_of(x, ctx.control), rows_of(x, ctx.ec), config.outcome_basis);
    ctx.mu0_fit_variance.resize(ctx.ec.size());
    for (std::size_t k = 0; k < ctx.ec.size(); ++k) {
      ctx.mu0_fit_variance[k] = s2c * h(static_cast<Eigen::Index>(k));
    }
  }

  attempt(kAcwAlasso, [&] {
    const LinearModel me = fit_ols(rows_of(x, ctx.ec), rows_of(ctx.y, ctx.ec), config.outcome_basis,
                                   {}, "external_controls");
    res.nuisance["mu0_ec"] = summary_json(me);
    auto [rep, art] = run_alasso(ctx, *res.weights, q_dr, mu1, mu0, me.predict(rows_of(x, ctx.ec)),
                                 "linear", false, 1);
    rep.estimator = kAcwAlasso;
    res.linear = std::move(art);
    return rep;
  });

  attempt(kAcwAlassoGbm, [&] {
    // mu0: linear base plus a boosted correction fitted on trial controls,
    // cross-fitted at the controls. mu0_E: mu0 plus a boosted correction fitted
    // on the ECs, cross-fitted, so b_hat is the EC correction.
    const Eigen::MatrixXd xc = rows_of(x, ctx.control);
    const Eigen::VectorXd base_c = rows_of(mu0, ctx.control);
    BoostingConfig bc = config.boosting;
    bc.seed = derive_seed(config.boosting.seed ^ config.seed, 11);
    const auto g0 = fit_boosted_trees(xc, rows_of(ctx.y, ctx.control), bc, &base_c);
    Eigen::VectorXd mu0_gbm = predict_mu(g0, x, PredictMode::kInSample, &mu0);
    const Eigen::VectorXd cf = predict_mu(g0, xc, PredictMode::kCrossFitted, &base_c);
    for (std::size_t k = 0; k < ctx.control.size(); ++k) {
      mu0_gbm(static_cast<Eigen::Index>(ctx.control[k])) = cf(static_cast<Eigen::Index>(k));
    }

    const Eigen::MatrixXd xe = rows_of(x, ctx.ec);
    const Eigen::VectorXd base_e = rows_of(mu0_gbm, ctx.ec);
    BoostingConfig be = config.boosting;
    be.seed = derive_seed(config.boosting.seed ^ config.seed, 12);
    const auto ge = fit_boosted_trees(xe, rows_of(ctx.y, ctx.ec), be, &base_e);
    const Eigen::VectorXd mu0_ec = predict_mu(ge, xe, PredictMode::kCrossFitted, &base_e);
    res.nuisance["mu0_gbm"] = summary_json(g0);
    res.nuisance["mu0_ec_gbm"] = summary_json(ge);

    auto [rep, art] = run_alasso(ctx, *res.weights, q_dr, mu1, mu0_gbm, mu0_ec, "boosted", true, 2);
    rep.estimator = kAcwAlassoGbm;
    res.boosted = std::move(art);
    return rep;
  });

  return res;
}

}  // namespace ecborrow
