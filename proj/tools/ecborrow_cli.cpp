// Command-line front end: estimate, simulate, validate.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ecborrow/ecborrow.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kConvergence = 2, kInfeasible = 3, kOther = 4 };

struct Options {
  std::string input;
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::vector<std::string> estimators;
  unsigned threads = 1;
  std::optional<std::size_t> replications;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ecborrow::DataError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ecborrow::DataError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

ecborrow::ColumnSchema schema_from(const json& j) {
  ecborrow::ColumnSchema s;
  if (j.is_null()) return s;
  s.source = j.value("source", s.source);
  s.treatment = j.value("treatment", s.treatment);
  s.outcome = j.value("outcome", s.outcome);
  s.covariates = j.value("covariates", s.covariates);
  if (j.contains("propensity_column")) s.propensity_column = j.at("propensity_column").get<std::string>();
  if (j.contains("propensity")) s.propensity_constant = j.at("propensity").get<double>();
  return s;
}

json schema_json(const ecborrow::ColumnSchema& s) {
  json j{{"source", s.source}, {"treatment", s.treatment}, {"outcome", s.outcome}, {"covariates", s.covariates}};
  if (s.propensity_column) j["propensity_column"] = *s.propensity_column;
  if (s.propensity_constant) j["propensity"] = *s.propensity_constant;
  return j;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

int fail(const char* kind, const std::string& message, ExitCode code,
         const std::vector<ecborrow::Violation>* violations = nullptr) {
  json j{{"error", kind}, {"message", message}, {"exit_code", static_cast<int>(code)}};
  if (violations != nullptr) {
    json v = json::array();
    for (const auto& x : *violations) v.push_back(json::parse(x.to_json_line()));
    j["violations"] = v;
  }
  std::cerr << j.dump() << '\n';
  return code;
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ecborrow::IngestError& e) {
    return fail("validation", e.what(), kValidation, &e.violations());
  } catch (const ecborrow::DataError& e) {
    return fail("validation", e.what(), kValidation);
  } catch (const ecborrow::InfeasibleError& e) {
    return fail("infeasible", e.what(), kInfeasible);
  } catch (const ecborrow::ConvergenceError& e) {
    return fail("convergence", e.what(), kConvergence);
  } catch (const std::invalid_argument& e) {
    return fail("validation", e.what(), kValidation);
  } catch (const json::exception& e) {
    return fail("validation", std::string("config: ") + e.what(), kValidation);
  } catch (const std::exception& e) {
    return fail("error", e.what(), kOther);
  }
}

json group_json(const ecborrow::GroupEstimate& g) {
  const auto& r = g.result;
  json est = json::array();
  for (const auto& e : r.estimates) est.push_back(ecborrow::to_json(e));
  json j{{"group", g.group}, {"estimates", est}, {"nuisance", r.nuisance}};
  if (r.weights) {
    j["calibration"] = {{"iterations", r.weights->iterations},
                        {"residual", r.weights->residual},
                        {"dual_residual", r.weights->dual_residual},
                        {"objective", r.weights->objective},
                        {"dual", std::vector<double>(r.weights->dual.data(),
                                                     r.weights->dual.data() + r.weights->dual.size())},
                        {"basis", r.weights->basis_spec.describe()}};
    j["variance_ratio"] = {{"value", r.r_hat.value},
                           {"numerator", r.r_hat.numerator},
                           {"denominator", r.r_hat.denominator}};
  }
  auto sel = [](const ecborrow::SelectionArtifacts& a) {
    json s = ecborrow::summary_json(a.selection);
    s["r_b"] = a.r_b.value;
    s["pi_b_fitted"] = a.pi_b_fitted;
    s["b_hat_source"] = a.b_hat.source;
    s["cross_fitted"] = a.b_hat.cross_fitted;
    return s;
  };
  if (r.linear) j["selection"]["acw_alasso"] = sel(*r.linear);
  if (r.boosted) j["selection"]["acw_alasso_gbm"] = sel(*r.boosted);
  if (!r.failures.empty()) j["failures"] = r.failures;
  return j;
}

int cmd_estimate(const Options& o) {
  json cfg = o.config.empty() ? json::object() : read_json_file(o.config);
  std::string input = o.input.empty() ? cfg.value("input", std::string()) : o.input;
  if (input.empty()) throw ecborrow::DataError("no input file (use --input or \"input\" in the config)");
  if (!fs::exists(input)) throw ecborrow::DataError("input '" + input + "' does not exist");

  const auto schema = schema_from(cfg.value("schema", json()));
  ecborrow::PipelineConfig pc = cfg.value("pipeline", json::object()).get<ecborrow::PipelineConfig>();
  if (o.seed) pc.seed = *o.seed;
  if (o.alpha) pc.alpha = *o.alpha;
  if (!o.estimators.empty()) pc.estimators = o.estimators;
  ecborrow::check_estimator_names(pc.estimators);
  if (!(pc.alpha > 0.0 && pc.alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
  const std::string pooled_name = cfg.value("pooled_estimator", std::string(ecborrow::kAcwAlasso));

  const auto data = ecborrow::ingest_csv(input, schema);
  const auto ids = data.external_groups();
  if (ids.empty()) throw ecborrow::DataError("input has no external controls");

  std::vector<ecborrow::GroupEstimate> groups;
  std::optional<ecborrow::PooledEstimate> pooled;
  if (ids.size() == 1) {
    groups.push_back(ecborrow::estimate_per_group(data, ids[0], pc));
  } else {
    if (std::find(pc.estimators.begin(), pc.estimators.end(), pooled_name) == pc.estimators.end()) {
      throw std::invalid_argument("pooled_estimator '" + pooled_name + "' is not among the estimators");
    }
    pooled = ecborrow::estimate_pooled(data, pc, pooled_name, &groups);
  }

  json resolved{{"input", input}, {"schema", schema_json(schema)}, {"pipeline", pc},
                {"pooled_estimator", pooled_name}};
  const auto& sz = data.group_sizes();
  json report{{"tool", "ecborrow"},
              {"version", ecborrow::version()},
              {"seed", pc.seed},
              {"config", resolved},
              {"data",
               {{"n", data.size()},
                {"rpct", sz.rpct},
                {"treated", sz.treated},
                {"control", sz.control},
                {"external", sz.external},
                {"groups", ids}}}};
  json gj = json::array();
  for (const auto& g : groups) gj.push_back(group_json(g));
  report["groups"] = gj;
  report["estimates"] = gj[0]["estimates"];
  if (pooled) {
    report["estimates"] = json::array();
    report["pooled"] = ecborrow::to_json(*pooled);
    report["pooled"]["estimator"] = pooled_name;
  }

  // Audit tables; record ids are data-row positions in the input file.
  std::ostringstream weights, selection, selection_gbm;
  const bool multi = groups.size() > 1;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& g = groups[k];
    const auto& r = g.result;
    std::vector<std::size_t> ec_ids;
    for (auto pos : r.ec_rows) ec_ids.push_back(g.rows[pos]);
    const int tag = multi ? g.group : -1;
    if (r.weights) {
      ecborrow::write_weights_csv(weights, ec_ids, *r.weights, data.group_sizes().rpct, tag, k == 0);
    }
    if (r.linear) {
      ecborrow::write_selection_csv(selection, ec_ids, r.linear->b_hat, r.linear->xi,
                                    r.linear->selection, tag, k == 0);
    }
    if (r.boosted) {
      ecborrow::write_selection_csv(selection_gbm, ec_ids, r.boosted->b_hat, r.boosted->xi,
                                    r.boosted->selection, tag, k == 0);
    }
  }
  std::string weights_csv = weights.str();
  std::string selection_csv = selection.str();
  if (weights_csv.empty()) weights_csv = multi ? "record_id,weight,density_ratio_weight,group\n"
                                               : "record_id,weight,density_ratio_weight\n";
  if (selection_csv.empty()) selection_csv = multi ? "ec_record_id,b_hat,xi_hat,b_tilde,selected,group\n"
                                                   : "ec_record_id,b_hat,xi_hat,b_tilde,selected\n";

  fs::create_directories(o.out);
  write_file(fs::path(o.out) / "report.json", report.dump(2) + "\n");
  write_file(fs::path(o.out) / "selection.csv", selection_csv);
  write_file(fs::path(o.out) / "weights.csv", weights_csv);
  if (!selection_gbm.str().empty()) write_file(fs::path(o.out) / "selection_gbm.csv", selection_gbm.str());

  // Table-style summary on stdout.
  auto line = [](const std::string& name, double est, double se, double lo, double hi) {
    std::cout << name << "  estimate " << est << "  se " << se << "  ci [" << lo << ", " << hi << "]\n";
  };
  for (const auto& g : groups) {
    if (multi) std::cout << "group " << g.group << '\n';
    for (const auto& e : g.result.estimates) line(e.estimator, e.tau_hat, e.std_error(), e.ci_low, e.ci_high);
  }
  if (pooled) line("pooled " + pooled_name, pooled->tau_star, std::sqrt(pooled->variance_star), pooled->ci_low, pooled->ci_high);
  return kOk;
}

int cmd_simulate(const Options& o) {
  ecborrow::SimulationPlan plan;
  if (!o.config.empty()) {
    plan = read_json_file(o.config).get<ecborrow::SimulationPlan>();
  } else {
    plan.scenario.fill_missing_coefficients();
  }
  if (o.seed) plan.scenario.seed = *o.seed;
  if (o.alpha) plan.pipeline.alpha = *o.alpha;
  if (o.replications) plan.scenario.replications = *o.replications;
  if (!o.estimators.empty()) plan.pipeline.estimators = o.estimators;
  ecborrow::check_estimator_names(plan.pipeline.estimators);
  if (!(plan.pipeline.alpha > 0.0 && plan.pipeline.alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
  plan.scenario.check();

  const auto tables = ecborrow::run_plan(plan, std::max(1u, o.threads), [](const std::string& msg) {
    std::cerr << "simulating " << msg << '\n';
  });

  fs::create_directories(o.out);
  json files = json::array();
  for (const auto& t : tables) {
    std::ostringstream csv;
    t.write_csv(csv);
    write_file(fs::path(o.out) / ("metrics_" + t.cell + ".csv"), csv.str());
    write_file(fs::path(o.out) / ("metrics_" + t.cell + ".json"), t.to_json().dump(2) + "\n");
    files.push_back("metrics_" + t.cell + ".csv");
  }
  json run{{"tool", "ecborrow"},
           {"version", ecborrow::version()},
           {"seed", plan.scenario.seed},
           {"config", plan},
           {"outputs", files}};
  write_file(fs::path(o.out) / "simulation.json", run.dump(2) + "\n");
  for (const auto& t : tables) {
    for (const auto& r : t.rows) {
      std::cout << t.cell << ' ' << r.estimator << " n_c=" << r.n_c << " bias=" << r.bias
                << " var=" << r.variance << " type1=" << r.type1_error << " power=" << r.power
                << " failures=" << r.failures << '\n';
    }
  }
  return kOk;
}

int cmd_validate(const Options& o) {
  json cfg = o.config.empty() ? json::object() : read_json_file(o.config);
  std::string input = o.input.empty() ? cfg.value("input", std::string()) : o.input;
  if (input.empty()) throw ecborrow::DataError("no input file (use --input or \"input\" in the config)");
  const auto schema = schema_from(cfg.value("schema", json()));
  std::vector<ecborrow::Violation> violations;
  try {
    const auto data = ecborrow::ingest_csv(input, schema);
    violations = ecborrow::validate(data);
  } catch (const ecborrow::IngestError& e) {
    violations = e.violations();
    if (violations.empty()) violations.push_back({-1, "file", "schema", e.what()});
  }
  json v = json::array();
  for (const auto& x : violations) v.push_back(json::parse(x.to_json_line()));
  json report{{"input", input}, {"valid", violations.empty()}, {"violations", v}};
  std::cout << report.dump() << '\n';
  if (!o.out.empty() && o.out != ".") {
    fs::create_directories(o.out);
    write_file(fs::path(o.out) / "violations.json", report.dump(2) + "\n");
  }
  return violations.empty() ? kOk : kValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect estimation with selective borrowing of external controls"};
  app.set_version_flag("--version", ecborrow::version());
  app.require_subcommand(1);

  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Base seed");
    sub->add_option("--alpha", o.alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--estimators", o.estimators, "Comma-separated: aipw,acw,acw_alasso,acw_alasso_gbm")
        ->delimiter(',');
    sub->add_option("--threads", o.threads, "Worker threads (simulation only)")->check(CLI::PositiveNumber);
  };

  auto* est = app.add_subcommand("estimate", "Estimate the treatment effect on a CSV file");
  est->add_option("--input", o.input, "Input CSV");
  common(est);
  auto* sim = app.add_subcommand("simulate", "Run the simulation protocol");
  common(sim);
  sim->add_option("--replications", o.replications, "Override the replication count");
  auto* val = app.add_subcommand("validate", "Validate a CSV file");
  val->add_option("--input", o.input, "Input CSV");
  common(val);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kValidation;
  }

  if (*est) return guarded([&] { return cmd_estimate(o); });
  if (*sim) return guarded([&] { return cmd_simulate(o); });
  return guarded([&] { return cmd_validate(o); });
}
