#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecborrow/data_model.hpp"
#include "ecborrow/pipeline.hpp"

namespace ecborrow {

// C: linear in X. W: linear in X^w = [X, X_{P-1}^2, X_P^2, X_{P-1}^3, X_P^3].
enum class ModelChoice { kC, kW };

std::string to_string(ModelChoice m);
ModelChoice parse_model_choice(const std::string& s);

struct ScenarioConfig {
  ModelChoice sp = ModelChoice::kC;  // selection propensity
  ModelChoice om = ModelChoice::kC;  // outcome means
  double omega = 0.0;                // unmeasured-confounding strength
  std::size_t n_c = 50;
  std::size_t n_t = 200;
  std::size_t n_e = 500;
  double sigma_y = 1.0;
  double null_effect = 0.0;  // target of E{tau(X) | R = 1} for type I error
  double alt_effect = 0.3;   // target for power
  std::size_t p = 12;
  double rho = 0.2;  // exchangeable correlation, unless `correlation` is given
  std::vector<std::vector<double>> correlation;
  double eta0 = -0.7;
  std::vector<double> eta, eta_w;    // eta_w: the four X^w extras
  std::vector<double> beta, beta_w;
  std::vector<double> alpha;
  std::size_t replications = 500;
  std::uint64_t seed = 1;
  bool prematch = true;
  std::size_t max_draws_factor = 1000;  // rejection cap: factor * (N_R + N_E)

  std::size_t n_rpct() const { return n_c + n_t; }
  // Coefficients drawn from U[-0.5, 0.5] with the given seed.
  static ScenarioConfig with_default_coefficients(std::uint64_t coefficient_seed = kCoefficientSeed);
  void fill_missing_coefficients(std::uint64_t coefficient_seed = kCoefficientSeed);
  // Throws std::invalid_argument.
  void check() const;

  static constexpr std::uint64_t kCoefficientSeed = 20240611;
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

struct OracleRecord {
  double target = 0.0;            // E{tau(X) | R = 1} on the trial sample
  double alpha0 = 0.0;            // effect intercept that hits the target
  std::vector<double> u;          // unmeasured confounder, dataset order
  std::vector<double> tau;        // tau(X_i), dataset order
  std::vector<double> ec_bias;    // mu0_E(X, U) - mu0(X, U, 0), EC order
  std::size_t draws = 0;          // candidate subjects drawn
};

struct GeneratedData {
  TrialDataset data;  // trial records first, then ECs (source 1)
  OracleRecord oracle;
};

GeneratedData generate_dataset(const ScenarioConfig& config, std::uint64_t rep_seed,
                               double effect_target);

// Greedy 1-NN without replacement on e_hat (one entry per record): each step
// takes the globally closest (EC, unmatched trial anchor) pair, ties broken by
// lower EC position then lower anchor position. Anchors are reused once all
// are matched. Returns the dataset positions kept (trial rows plus chosen
// ECs), in original order.
std::vector<std::size_t> nn_prematch_rows(const TrialDataset& data, const Eigen::VectorXd& e_hat,
                                          std::size_t n_needed);
TrialDataset nn_prematch(const TrialDataset& data, const Eigen::VectorXd& e_hat, std::size_t n_needed);

// Per replication and estimator.
struct ReplicationOutcome {
  bool ok = false;
  std::string error;
  double tau_null = 0.0;
  double se_null = 0.0;
  double tau_alt = 0.0;
  double se_alt = 0.0;
  bool reject_null = false;  // two-sided, true effect null_effect
  bool covered = false;      // CI covers null_effect
  bool reject_alt = false;   // one-sided tau > null_effect
  std::size_t n_borrowed = 0;
};

struct MetricsRow {
  std::string estimator;
  std::size_t n_c = 0;
  std::size_t replications = 0;  // successful
  std::size_t failures = 0;
  double bias = 0.0, bias_se = 0.0;
  double variance = 0.0, variance_se = 0.0;
  double mse = 0.0, mse_se = 0.0;
  double type1_error = 0.0, type1_se = 0.0;
  double power = 0.0, power_se = 0.0;
  double coverage = 0.0, coverage_se = 0.0;
  double mean_se = 0.0;        // average reported standard error
  double mean_borrowed = 0.0;  // average number of ECs borrowed
};

struct MetricsTable {
  std::string cell;
  std::vector<MetricsRow> rows;

  const MetricsRow* find(const std::string& estimator, std::size_t n_c) const;
  void write_csv(std::ostream& out) const;
  nlohmann::json to_json() const;
};

// Raw outcomes indexed [estimator][replication].
using ReplicationLog = std::map<std::string, std::vector<ReplicationOutcome>>;

MetricsRow aggregate(const std::string& estimator, std::size_t n_c,
                     const std::vector<ReplicationOutcome>& outcomes, double null_effect);

// One replication: generate null and alternative datasets with common random
// numbers, pre-match, estimate, test.
std::map<std::string, ReplicationOutcome> run_replication(const ScenarioConfig& scenario,
                                                          const PipelineConfig& pipeline,
                                                          std::size_t index);

// Replication r uses seed derive_seed(scenario.seed, r). Work is spread over
// `threads` workers; aggregation runs in replication order, so results do not
// depend on the thread count.
MetricsTable run_replications(const ScenarioConfig& scenario, const PipelineConfig& pipeline,
                              unsigned threads = 1, ReplicationLog* log = nullptr);

// Full protocol description used by `simulate`.
struct SimulationPlan {
  ScenarioConfig scenario;
  PipelineConfig pipeline;
  std::vector<std::size_t> n_c_grid{20, 50, 100};
  std::vector<double> omega_grid{0.0, 0.3};
  std::vector<std::string> scenarios{"CC"};  // sp then om
};

void to_json(nlohmann::json& j, const SimulationPlan& p);
void from_json(const nlohmann::json& j, SimulationPlan& p);

std::string cell_name(ModelChoice sp, ModelChoice om, double omega);

// One table per (scenario, omega) cell with rows per (estimator, N_c).
std::vector<MetricsTable> run_plan(const SimulationPlan& plan, unsigned threads,
                                   const std::function<void(const std::string&)>& progress = {});

}  // namespace ecborrow
