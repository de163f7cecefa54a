#include "ecborrow/data_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace ecborrow {

std::string Violation::to_json_line() const {
  nlohmann::json j;
  if (row >= 0) {
    j["row"] = row;
  } else {
    j["row"] = nullptr;
  }
  j["field"] = field;
  j["rule"] = rule;
  j["message"] = message;
  return j.dump();
}

GroupSizes count_groups(std::span<const SubjectRecord> records) {
  GroupSizes s;
  for (const auto& r : records) {
    if (r.source == kTrialSource) {
      ++s.rpct;
      if (r.treatment == 1) {
        ++s.treated;
      } else {
        ++s.control;
      }
    } else {
      ++s.external;
      ++s.per_group[r.source];
    }
  }
  return s;
}

TrialDataset::TrialDataset(std::vector<SubjectRecord> records,
                           std::vector<std::string> covariate_names)
    : records_(std::move(records)), names_(std::move(covariate_names)) {
  sizes_ = count_groups(records_);
  const std::size_t p = records_.empty() ? names_.size() : records_.front().covariates.size();
  if (names_.empty()) {
    for (std::size_t j = 0; j < p; ++j) names_.push_back("x" + std::to_string(j + 1));
  }
  const auto n = static_cast<Eigen::Index>(records_.size());
  x_.resize(n, static_cast<Eigen::Index>(p));
  y_.resize(n);
  pi_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records_[static_cast<std::size_t>(i)];
    // Ragged rows are a validation failure, not a construction failure.
    for (std::size_t j = 0; j < p; ++j) {
      x_(i, static_cast<Eigen::Index>(j)) =
          j < r.covariates.size() ? r.covariates[j] : std::numeric_limits<double>::quiet_NaN();
    }
    y_(i) = r.outcome;
    pi_(i) = r.propensity;
  }
}

namespace {

template <typename Pred>
std::vector<std::size_t> indices_where(std::size_t n, Pred pred) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (pred(i)) out.push_back(i);
  }
  return out;
}

}  // namespace

std::vector<std::size_t> TrialDataset::rpct_index() const {
  return indices_where(size(), [&](std::size_t i) { return is_rpct(i); });
}
std::vector<std::size_t> TrialDataset::treated_index() const {
  return indices_where(size(), [&](std::size_t i) { return is_treated(i); });
}
std::vector<std::size_t> TrialDataset::control_index() const {
  return indices_where(size(), [&](std::size_t i) { return is_control(i); });
}
std::vector<std::size_t> TrialDataset::external_index() const {
  return indices_where(size(), [&](std::size_t i) { return is_external(i); });
}

std::vector<int> TrialDataset::external_groups() const {
  std::vector<int> out;
  for (const auto& [k, n] : sizes_.per_group) out.push_back(k);
  return out;
}

TrialDataset TrialDataset::subset(std::span<const std::size_t> rows) const {
  std::vector<SubjectRecord> out;
  out.reserve(rows.size());
  for (auto i : rows) out.push_back(records_.at(i));
  return TrialDataset(std::move(out), names_);
}

std::vector<std::size_t> TrialDataset::group_rows(int group) const {
  return indices_where(size(), [&](std::size_t i) {
    return records_[i].source == kTrialSource || records_[i].source == group;
  });
}

TrialDataset TrialDataset::restrict_to_group(int group) const {
  const auto rows = group_rows(group);
  return subset(rows);
}

std::vector<Violation> validate(const TrialDataset& dataset, const ValidationOptions& options) {
  std::vector<Violation> out;
  const auto records = dataset.records();
  const std::size_t p = dataset.covariate_names().size();
  const double eps = options.positivity_epsilon;

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const long row = static_cast<long>(i);
    if (r.source < 0) {
      out.push_back({row, "source", "source_nonnegative",
                     "source id must be 0 (trial) or a positive EC group id"});
    }
    if (r.treatment != 0 && r.treatment != 1) {
      out.push_back({row, "treatment", "binary_treatment", "treatment must be 0 or 1"});
    }
    if (r.source != kTrialSource && r.treatment == 1) {
      out.push_back({row, "treatment", "ec_control_only", "EC treated subject"});
    }
    if (!std::isfinite(r.outcome)) {
      out.push_back({row, "outcome", "finite_outcome", "outcome is missing or not finite"});
    }
    if (r.covariates.size() != p) {
      out.push_back({row, "covariates", "covariate_length",
                     "expected " + std::to_string(p) + " covariates, found " +
                         std::to_string(r.covariates.size())});
    }
    for (std::size_t j = 0; j < r.covariates.size(); ++j) {
      if (!std::isfinite(r.covariates[j])) {
        const std::string name = j < p ? dataset.covariate_names()[j] : "x" + std::to_string(j + 1);
        out.push_back({row, name, "finite_covariate", "covariate is missing or not finite"});
      }
    }
    if (r.source == kTrialSource) {
      if (!(r.propensity > eps && r.propensity < 1.0 - eps)) {
        out.push_back({row, "propensity", "positivity",
                       "treatment propensity must lie in (eps, 1 - eps)"});
      }
    } else if (!(r.propensity >= 0.0 && r.propensity < 1.0)) {
      out.push_back({row, "propensity", "propensity_range",
                     "EC propensity must lie in [0, 1)"});
    }
  }

  const auto& sizes = dataset.group_sizes();
  if (sizes.treated == 0) {
    out.push_back({-1, "treatment", "nonempty_treated_arm", "RPCT treated arm is empty"});
  }
  if (sizes.control == 0) {
    out.push_back({-1, "treatment", "nonempty_control_arm", "RPCT control arm is empty"});
  }
  if (sizes != count_groups(records)) {
    out.push_back({-1, "group_sizes", "group_size_consistency",
                   "group sizes disagree with record counts"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<int> parse_int(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    // Accept integral values written as reals ("1.0").
    const auto d = parse_double(s);
    if (d && std::floor(*d) == *d && std::abs(*d) < 1e9) return static_cast<int>(*d);
    return std::nullopt;
  }
  return v;
}

}  // namespace

TrialDataset ingest_csv(const std::string& path, const ColumnSchema& schema,
                        const ValidationOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path);
  return ingest_csv(in, schema, options);
}

TrialDataset ingest_csv(std::istream& in, const ColumnSchema& schema,
                        const ValidationOptions& options) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("input has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  auto find_col = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw IngestError("missing column '" + name + "'",
                        {{-1, name, "schema", "missing column '" + name + "'"}});
    }
    return static_cast<std::size_t>(it - header.begin());
  };

  const std::size_t c_source = find_col(schema.source);
  const std::size_t c_treat = find_col(schema.treatment);
  const std::size_t c_out = find_col(schema.outcome);
  std::optional<std::size_t> c_pi;
  if (schema.propensity_column) c_pi = find_col(*schema.propensity_column);

  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    std::set<std::size_t> used{c_source, c_treat, c_out};
    if (c_pi) used.insert(*c_pi);
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (!used.count(j)) cov_names.push_back(header[j]);
    }
  }
  std::vector<std::size_t> c_cov;
  for (const auto& name : cov_names) c_cov.push_back(find_col(name));

  std::vector<SubjectRecord> records;
  std::vector<Violation> problems;
  long row = -1;
  while (std::getline(in, line)) {
    if (trim(line).empty() || trim(line) == "\r") continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      problems.push_back({row, "row", "column_count",
                          "row " + std::to_string(row) + ": expected " +
                              std::to_string(header.size()) + " cells, found " +
                              std::to_string(cells.size())});
      continue;
    }
    SubjectRecord r;
    bool ok = true;
    auto bad = [&](const std::string& field, const std::string& rule, const std::string& msg) {
      problems.push_back({row, field, rule, "row " + std::to_string(row) + ": " + msg});
      ok = false;
    };

    if (auto v = parse_int(cells[c_source])) {
      r.source = *v;
    } else {
      bad(schema.source, "numeric", "non-numeric or missing source '" + cells[c_source] + "'");
    }
    if (auto v = parse_int(cells[c_treat]); v && (*v == 0 || *v == 1)) {
      r.treatment = *v;
    } else {
      bad(schema.treatment, "binary_treatment",
          "treatment must be 0 or 1, found '" + cells[c_treat] + "'");
    }
    if (auto v = parse_double(cells[c_out]); v && std::isfinite(*v)) {
      r.outcome = *v;
    } else {
      bad(schema.outcome, "finite_outcome",
          trim(cells[c_out]).empty() ? "missing outcome"
                                     : "non-numeric outcome '" + cells[c_out] + "'");
    }
    r.covariates.resize(c_cov.size());
    for (std::size_t j = 0; j < c_cov.size(); ++j) {
      const auto& cell = cells[c_cov[j]];
      if (auto v = parse_double(cell); v && std::isfinite(*v)) {
        r.covariates[j] = *v;
      } else {
        bad(cov_names[j], "finite_covariate",
            trim(cell).empty() ? "missing covariate '" + cov_names[j] + "'"
                               : "non-numeric covariate '" + cov_names[j] + "': '" + cell + "'");
      }
    }
    if (c_pi) {
      if (auto v = parse_double(cells[*c_pi]); v && std::isfinite(*v)) {
        r.propensity = *v;
      } else {
        bad(*schema.propensity_column, "numeric", "non-numeric or missing propensity");
      }
    }
    if (ok && r.source != kTrialSource && r.treatment == 1) {
      bad(schema.treatment, "ec_control_only", "EC treated subject");
    }
    if (ok && r.source < 0) {
      bad(schema.source, "source_nonnegative", "negative source id");
    }
    if (ok) records.push_back(std::move(r));
  }

  if (!problems.empty()) {
    std::ostringstream msg;
    msg << problems.size() << " invalid row(s); first: " << problems.front().message;
    throw IngestError(msg.str(), std::move(problems));
  }

  if (!c_pi) {
    double pi = 0.0;
    if (schema.propensity_constant) {
      pi = *schema.propensity_constant;
    } else {
      const auto sizes = count_groups(records);
      pi = sizes.rpct == 0 ? 0.0
                           : static_cast<double>(sizes.treated) / static_cast<double>(sizes.rpct);
    }
    for (auto& r : records) r.propensity = pi;
  }

  TrialDataset dataset(std::move(records), cov_names);
  auto violations = validate(dataset, options);
  if (!violations.empty()) {
    std::string first = violations.front().message;
    throw IngestError(first, std::move(violations));
  }
  return dataset;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

ColumnSchema emitted_schema(const TrialDataset& dataset) {
  ColumnSchema s;
  s.covariates = dataset.covariate_names();
  s.propensity_column = "propensity";
  return s;
}

void emit_csv(const TrialDataset& dataset, std::ostream& out) {
  out << "source,treatment,outcome,propensity";
  for (const auto& name : dataset.covariate_names()) out << ',' << name;
  out << '\n';
  for (const auto& r : dataset.records()) {
    out << r.source << ',' << r.treatment << ',' << format_double(r.outcome) << ','
        << format_double(r.propensity);
    for (double x : r.covariates) out << ',' << format_double(x);
    out << '\n';
  }
}

}  // namespace ecborrow
