#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecborrow/calibration.hpp"
#include "ecborrow/data_model.hpp"
#include "ecborrow/estimators.hpp"
#include "ecborrow/nuisance.hpp"
#include "ecborrow/selection.hpp"

namespace ecborrow {

// Estimator identifiers used in reports, configs and metric tables.
inline constexpr const char* kAipw = "aipw";
inline constexpr const char* kAcw = "acw";
inline constexpr const char* kAcwAlasso = "acw_alasso";
inline constexpr const char* kAcwAlassoGbm = "acw_alasso_gbm";

std::vector<std::string> all_estimators();
// Throws std::invalid_argument for unknown names.
void check_estimator_names(const std::vector<std::string>& names);

struct PipelineConfig {
  std::vector<std::string> estimators = all_estimators();
  BasisSpec outcome_basis;      // linear outcome models
  BasisSpec calibration_basis;  // g(X)
  CalibrationOptions calibration;
  SelectionConfig selection;
  BoostingConfig boosting;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  // Record per-estimator failures instead of throwing.
  bool capture_failures = false;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

// Everything the selective-borrowing estimator produced, for audit.
struct SelectionArtifacts {
  BiasEstimates b_hat;
  PseudoObservations xi;
  BiasSelection selection;
  VarianceRatio r_b;
  bool pi_b_fitted = false;  // false when pi_b is constant
};

struct PipelineResult {
  std::vector<EstimateReport> estimates;       // requested order, failures omitted
  std::map<std::string, std::string> failures;  // estimator -> message
  std::optional<CalibrationWeights> weights;
  std::vector<std::size_t> ec_rows;  // dataset positions of the ECs
  VarianceRatio r_hat;
  std::optional<SelectionArtifacts> linear;
  std::optional<SelectionArtifacts> boosted;
  nlohmann::json nuisance;  // model summaries

  const EstimateReport* find(const std::string& estimator) const;
};

// Single-source pipeline over R u E: nuisance fits, calibration, selection
// and the requested estimators. All ECs are treated as one group.
PipelineResult run_pipeline(const TrialDataset& data, const PipelineConfig& config);

}  // namespace ecborrow
