#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecborrow/error.hpp"

namespace ecborrow {

// Source id 0 is the randomized trial; ids >= 1 label external-control groups.
inline constexpr int kTrialSource = 0;

struct SubjectRecord {
  int source = kTrialSource;
  int treatment = 0;
  double outcome = 0.0;
  std::vector<double> covariates;
  // Known treatment propensity pi_A(x). External controls carry the value the
  // trial design would assign at their covariates; it enters the weighting
  // denominators.
  double propensity = 0.5;
};

struct GroupSizes {
  std::size_t rpct = 0;
  std::size_t treated = 0;
  std::size_t control = 0;
  std::size_t external = 0;
  std::map<int, std::size_t> per_group;  // EC group id -> size

  friend bool operator==(const GroupSizes&, const GroupSizes&) = default;
};

// One invariant violation. row == -1 marks a dataset-level violation.
struct Violation {
  long row = -1;
  std::string field;
  std::string rule;
  std::string message;

  std::string to_json_line() const;
};

// Immutable after construction. Columnar copies of the records are cached so
// the numerical modules can work on Eigen views.
class TrialDataset {
 public:
  TrialDataset() = default;
  explicit TrialDataset(std::vector<SubjectRecord> records,
                        std::vector<std::string> covariate_names = {});

  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x_.cols()); }

  const SubjectRecord& operator[](std::size_t i) const { return records_[i]; }
  std::span<const SubjectRecord> records() const { return records_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  const GroupSizes& group_sizes() const { return sizes_; }

  const Eigen::MatrixXd& covariates() const { return x_; }
  const Eigen::VectorXd& outcomes() const { return y_; }
  const Eigen::VectorXd& propensities() const { return pi_; }

  bool is_rpct(std::size_t i) const { return records_[i].source == kTrialSource; }
  bool is_treated(std::size_t i) const { return is_rpct(i) && records_[i].treatment == 1; }
  bool is_control(std::size_t i) const { return is_rpct(i) && records_[i].treatment == 0; }
  bool is_external(std::size_t i) const { return records_[i].source != kTrialSource; }

  std::vector<std::size_t> rpct_index() const;
  std::vector<std::size_t> treated_index() const;
  std::vector<std::size_t> control_index() const;
  std::vector<std::size_t> external_index() const;

  // Sorted ids of the external-control groups present.
  std::vector<int> external_groups() const;

  // Rows in the given order (record ids are positions in this dataset).
  TrialDataset subset(std::span<const std::size_t> rows) const;
  // Trial records plus external group k, in original order.
  TrialDataset restrict_to_group(int group) const;
  // Positions of the rows restrict_to_group(group) keeps.
  std::vector<std::size_t> group_rows(int group) const;

 private:
  std::vector<SubjectRecord> records_;
  std::vector<std::string> names_;
  GroupSizes sizes_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd pi_;
};

struct ValidationOptions {
  double positivity_epsilon = 1e-6;
};

// Empty iff every record and dataset invariant holds.
std::vector<Violation> validate(const TrialDataset& dataset,
                                const ValidationOptions& options = {});

// Recount group sizes directly from records.
GroupSizes count_groups(std::span<const SubjectRecord> records);

struct ColumnSchema {
  std::string source = "source";
  std::string treatment = "treatment";
  std::string outcome = "outcome";
  // Empty means every column not named elsewhere in the schema.
  std::vector<std::string> covariates;
  // Per-record propensity column; takes precedence over the constant.
  std::optional<std::string> propensity_column;
  // Constant design propensity. When neither is given, N_t / N_R is used.
  std::optional<double> propensity_constant;
};

// Thrown by ingestion; carries every row-level diagnostic found.
class IngestError : public DataError {
 public:
  IngestError(const std::string& what, std::vector<Violation> violations)
      : DataError(what), violations_(std::move(violations)) {}
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

TrialDataset ingest_csv(const std::string& path, const ColumnSchema& schema,
                        const ValidationOptions& options = {});
TrialDataset ingest_csv(std::istream& in, const ColumnSchema& schema,
                        const ValidationOptions& options = {});

// Writes source, treatment, outcome, propensity and the covariate columns with
// shortest round-trip formatting, so ingest(emit(d)) reproduces d bit-exactly.
void emit_csv(const TrialDataset& dataset, std::ostream& out);

// Schema matching emit_csv output.
ColumnSchema emitted_schema(const TrialDataset& dataset);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

}  // namespace ecborrow
