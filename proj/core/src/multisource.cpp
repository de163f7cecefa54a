#include "ecborrow/multisource.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ecborrow {

GroupEstimate estimate_per_group(const TrialDataset& data, int group, const PipelineConfig& config) {
  GroupEstimate g;
  g.group = group;
  g.rows = data.group_rows(group);
  std::size_t n_ec = 0;
  for (auto r : g.rows) n_ec += data.is_external(r) ? 1 : 0;
  if (n_ec == 0) throw DataError("external control group " + std::to_string(group) + " is empty");
  g.result = run_pipeline(data.restrict_to_group(group), config);
  return g;
}

Eigen::VectorXd extend_influence(const Eigen::VectorXd& influence,
                                 const std::vector<std::size_t>& rows, std::size_t n) {
  if (static_cast<std::size_t>(influence.size()) != rows.size()) {
    throw std::invalid_argument("extend_influence: row count mismatch");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const double scale = static_cast<double>(n) / static_cast<double>(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= n) throw std::invalid_argument("extend_influence: row out of range");
    out(static_cast<Eigen::Index>(rows[k])) = scale * influence(static_cast<Eigen::Index>(k));
  }
  return out;
}

Eigen::MatrixXd estimate_covariance(const std::vector<Eigen::VectorXd>& influence, std::size_t n) {
  const auto k = static_cast<Eigen::Index>(influence.size());
  if (k == 0 || n == 0) throw std::invalid_argument("estimate_covariance: no groups");
  Eigen::MatrixXd psi(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (influence[static_cast<std::size_t>(j)].size() != static_cast<Eigen::Index>(n)) {
      throw std::invalid_argument("estimate_covariance: influence vectors must have length N");
    }
    psi.col(j) = influence[static_cast<std::size_t>(j)];
  }
  Eigen::MatrixXd s = psi.transpose() * psi / static_cast<double>(n);
  return (s + s.transpose()) / 2.0;
}

PooledEstimate combine(const std::vector<EstimateReport>& per_group,
                       const Eigen::MatrixXd& covariance, const CombineOptions& options) {
  const auto k = static_cast<Eigen::Index>(per_group.size());
  if (k == 0) throw std::invalid_argument("combine: no group estimates");
  if (covariance.rows() != k || covariance.cols() != k) {
    throw std::invalid_argument("combine: covariance must be K x K");
  }
  PooledEstimate p;
  p.per_group = per_group;
  p.covariance = covariance;

  if (k == 1) {
    p.weights = Eigen::VectorXd::Ones(1);
    p.tau_star = per_group[0].tau_hat;
    p.variance_star = per_group[0].variance;
  } else {
    Eigen::MatrixXd sigma = covariance;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(cond <= options.condition_limit)) {
      if (!options.regularize) {
        throw NumericalError("combine: covariance is singular or ill-conditioned");
      }
      sigma.diagonal().array() += options.ridge_scale * sigma.trace() / static_cast<double>(k);
      p.regularized = true;
    }
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);
    const Eigen::VectorXd s1 = sigma.ldlt().solve(ones);
    const double denom = ones.dot(s1);
    if (!(std::abs(denom) > 0.0) || !s1.allFinite()) throw NumericalError("combine: degenerate covariance");
    p.weights = s1 / denom;
    Eigen::VectorXd tau(k);
    for (Eigen::Index j = 0; j < k; ++j) tau(j) = per_group[static_cast<std::size_t>(j)].tau_hat;
    p.tau_star = p.weights.dot(tau);
    p.variance_star = std::max(0.0, p.weights.dot(covariance * p.weights));
    p.negative_weights = (p.weights.array() < 0.0).any();
  }
  const Interval ci = confidence_interval(p.tau_star, p.variance_star, options.alpha);
  p.ci_low = ci.low;
  p.ci_high = ci.high;
  return p;
}

PooledEstimate estimate_pooled(const TrialDataset& data, const PipelineConfig& config,
                               const std::string& estimator, std::vector<GroupEstimate>* groups) {
  const auto ids = data.external_groups();
  if (ids.empty()) throw DataError("no external control groups");
  std::vector<GroupEstimate> runs;
  for (int g : ids) runs.push_back(estimate_per_group(data, g, config));

  std::vector<EstimateReport> reps;
  std::vector<Eigen::VectorXd> psi;
  for (const auto& r : runs) {
    const auto* e = r.result.find(estimator);
    if (e == nullptr) {
      auto it = r.result.failures.find(estimator);
      throw Error("group " + std::to_string(r.group) + ": estimator " + estimator + " failed" +
                  (it == r.result.failures.end() ? std::string() : ": " + it->second));
    }
    reps.push_back(*e);
    psi.push_back(extend_influence(e->influence_values, r.rows, data.size()));
  }
  const Eigen::MatrixXd cov = estimate_covariance(psi, data.size()) / static_cast<double>(data.size());
  CombineOptions opt;
  opt.alpha = config.alpha;
  PooledEstimate p = combine(reps, cov, opt);
  p.groups = ids;
  if (groups != nullptr) *groups = std::move(runs);
  return p;
}

nlohmann::json to_json(const PooledEstimate& p) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t k = 0; k < p.per_group.size(); ++k) {
    auto j = to_json(p.per_group[k]);
    if (k < p.groups.size()) j["group"] = p.groups[k];
    per.push_back(std::move(j));
  }
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < p.covariance.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(p.covariance.cols()));
    for (Eigen::Index c = 0; c < p.covariance.cols(); ++c) row[static_cast<std::size_t>(c)] = p.covariance(r, c);
    cov.push_back(row);
  }
  return {{"per_group", per},
          {"covariance", cov},
          {"weights", std::vector<double>(p.weights.data(), p.weights.data() + p.weights.size())},
          {"tau_star", p.tau_star},
          {"variance_star", p.variance_star},
          {"std_error", std::sqrt(p.variance_star)},
          {"ci_low", p.ci_low},
          {"ci_high", p.ci_high},
          {"regularized", p.regularized},
          {"negative_weights", p.negative_weights}};
}

}  // namespace ecborrow
