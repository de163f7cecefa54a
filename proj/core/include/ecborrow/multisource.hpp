#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <string>
#include <vector>

#include "ecborrow/pipeline.hpp"

namespace ecborrow {

struct PooledEstimate {
  std::vector<EstimateReport> per_group;
  std::vector<int> groups;
  Eigen::MatrixXd covariance;  // estimator scale, K x K
  Eigen::VectorXd weights;     // d_hat, sums to 1
  double tau_star = 0.0;
  double variance_star = 0.0;  // d' covariance d
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool regularized = false;      // ridge added to a near-singular covariance
  bool negative_weights = false;
};

struct GroupEstimate {
  int group = 0;
  PipelineResult result;
  std::vector<std::size_t> rows;  // positions of R u E^[k] in the full dataset
};

// Pipeline restricted to the trial plus EC group k.
GroupEstimate estimate_per_group(const TrialDataset& data, int group, const PipelineConfig& config);

// Sigma_jk = N^-1 sum_i psi_i^[j] psi_i^[k] over zero-extended influence
// vectors of common length N.
Eigen::MatrixXd estimate_covariance(const std::vector<Eigen::VectorXd>& influence, std::size_t n);

// Zero-extends a group's influence vector (length |rows|) to length n and
// rescales it to the common sample size, so that N^-2 sum psi^2 equals the
// group's variance.
Eigen::VectorXd extend_influence(const Eigen::VectorXd& influence,
                                 const std::vector<std::size_t>& rows, std::size_t n);

struct CombineOptions {
  bool regularize = true;
  double condition_limit = 1e10;
  double ridge_scale = 1e-8;  // times trace / K
  double alpha = 0.05;
};

// Minimum-variance weights d = Sigma^-1 1 / (1' Sigma^-1 1). covariance is on
// the estimator scale.
PooledEstimate combine(const std::vector<EstimateReport>& per_group,
                       const Eigen::MatrixXd& covariance, const CombineOptions& options = {});

// All groups, then the pooled combination of the named estimator.
PooledEstimate estimate_pooled(const TrialDataset& data, const PipelineConfig& config,
                               const std::string& estimator, std::vector<GroupEstimate>* groups = nullptr);

nlohmann::json to_json(const PooledEstimate& p);

}  // namespace ecborrow
