#include "ecborrow/simulation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ecborrow/random.hpp"

namespace ecborrow {

std::string to_string(ModelChoice m) { return m == ModelChoice::kC ? "C" : "W"; }

ModelChoice parse_model_choice(const std::string& s) {
  if (s == "C" || s == "c") return ModelChoice::kC;
  if (s == "W" || s == "w") return ModelChoice::kW;
  throw std::invalid_argument("model choice must be C or W, got '" + s + "'");
}

namespace {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> draw_uniform(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform01(rng) - 0.5;
  return v;
}

}  // namespace

void ScenarioConfig::fill_missing_coefficients(std::uint64_t coefficient_seed) {
  Rng rng(coefficient_seed);
  auto e = draw_uniform(rng, p);
  auto ew = draw_uniform(rng, 4);
  auto b = draw_uniform(rng, p);
  auto bw = draw_uniform(rng, 4);
  auto a = draw_uniform(rng, p);
  if (eta.empty()) eta = std::move(e);
  if (eta_w.empty()) eta_w = std::move(ew);
  if (beta.empty()) beta = std::move(b);
  if (beta_w.empty()) beta_w = std::move(bw);
  if (alpha.empty()) alpha = std::move(a);
}

ScenarioConfig ScenarioConfig::with_default_coefficients(std::uint64_t coefficient_seed) {
  ScenarioConfig c;
  c.fill_missing_coefficients(coefficient_seed);
  return c;
}

void ScenarioConfig::check() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("scenario: " + m); };
  if (n_c == 0 || n_t == 0 || n_e == 0) fail("sizes must be positive");
  if (!(omega >= 0.0)) fail("omega must be >= 0");
  if (!(sigma_y > 0.0)) fail("sigma_y must be > 0");
  if (p < 2) fail("p must be >= 2");
  if (eta.size() != p || beta.size() != p || alpha.size() != p) fail("eta, beta, alpha need p entries");
  if (eta_w.size() != 4 || beta_w.size() != 4) fail("eta_w and beta_w need 4 entries");
  if (!correlation.empty()) {
    if (correlation.size() != p) fail("correlation must be p x p");
    for (const auto& r : correlation) {
      if (r.size() != p) fail("correlation must be p x p");
    }
  } else if (!(rho > -1.0 / static_cast<double>(p - 1) && rho < 1.0)) {
    fail("exchangeable rho outside the positive-definite range");
  }
  if (replications == 0) fail("replications must be positive");
  if (max_draws_factor == 0) fail("max_draws_factor must be positive");
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{{"sp", to_string(c.sp)},
                     {"om", to_string(c.om)},
                     {"omega", c.omega},
                     {"n_c", c.n_c},
                     {"n_t", c.n_t},
                     {"n_e", c.n_e},
                     {"sigma_y", c.sigma_y},
                     {"null_effect", c.null_effect},
                     {"alt_effect", c.alt_effect},
                     {"p", c.p},
                     {"rho", c.rho},
                     {"eta0", c.eta0},
                     {"eta", c.eta},
                     {"eta_w", c.eta_w},
                     {"beta", c.beta},
                     {"beta_w", c.beta_w},
                     {"alpha", c.alpha},
                     {"replications", c.replications},
                     {"seed", c.seed},
                     {"prematch", c.prematch},
                     {"max_draws_factor", c.max_draws_factor}};
  if (!c.correlation.empty()) j["correlation"] = c.correlation;
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  ScenarioConfig d;
  c.sp = parse_model_choice(j.value("sp", std::string("C")));
  c.om = parse_model_choice(j.value("om", std::string("C")));
  c.omega = j.value("omega", d.omega);
  c.n_c = j.value("n_c", d.n_c);
  c.n_t = j.value("n_t", d.n_t);
  c.n_e = j.value("n_e", d.n_e);
  c.sigma_y = j.value("sigma_y", d.sigma_y);
  c.null_effect = j.value("null_effect", d.null_effect);
  c.alt_effect = j.value("alt_effect", d.alt_effect);
  c.p = j.value("p", d.p);
  c.rho = j.value("rho", d.rho);
  c.correlation = j.value("correlation", d.correlation);
  c.eta0 = j.value("eta0", d.eta0);
  c.eta = j.value("eta", d.eta);
  c.eta_w = j.value("eta_w", d.eta_w);
  c.beta = j.value("beta", d.beta);
  c.beta_w = j.value("beta_w", d.beta_w);
  c.alpha = j.value("alpha", d.alpha);
  c.replications = j.value("replications", d.replications);
  c.seed = j.value("seed", d.seed);
  c.prematch = j.value("prematch", d.prematch);
  c.max_draws_factor = j.value("max_draws_factor", d.max_draws_factor);
  c.fill_missing_coefficients(j.value("coefficient_seed", ScenarioConfig::kCoefficientSeed));
  c.check();
}

namespace {

Eigen::MatrixXd correlation_factor(const ScenarioConfig& c) {
  const auto p = static_cast<Eigen::Index>(c.p);
  Eigen::MatrixXd corr(p, p);
  if (c.correlation.empty()) {
    corr.setConstant(c.rho);
    corr.diagonal().setOnes();
  } else {
    for (Eigen::Index i = 0; i < p; ++i) {
      for (Eigen::Index k = 0; k < p; ++k) {
        corr(i, k) = c.correlation[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      }
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("scenario: correlation is not positive definite");
  return llt.matrixL();
}

double linear(const std::vector<double>& coef, const std::vector<double>& coef_w,
              const Eigen::VectorXd& x, ModelChoice m) {
  double s = 0.0;
  for (std::size_t k = 0; k < coef.size(); ++k) s += coef[k] * x(static_cast<Eigen::Index>(k));
  if (m == ModelChoice::kW) {
    const auto p = x.size();
    const double a = x(p - 2);
    const double b = x(p - 1);
    s += coef_w[0] * a * a + coef_w[1] * b * b + coef_w[2] * a * a * a + coef_w[3] * b * b * b;
  }
  return s;
}

}  // namespace

GeneratedData generate_dataset(const ScenarioConfig& config, std::uint64_t rep_seed,
                               double effect_target) {
  config.check();
  const std::size_t n_r = config.n_rpct();
  const std::size_t n_e = config.n_e;
  const auto p = static_cast<Eigen::Index>(config.p);
  const Eigen::MatrixXd chol = correlation_factor(config);

  Rng rng(rep_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Eigen::VectorXd> xr, xe;
  std::vector<double> ur, ue;
  const std::size_t cap = config.max_draws_factor * (n_r + n_e);
  std::size_t draws = 0;
  Eigen::VectorXd z(p);
  while (xr.size() < n_r || xe.size() < n_e) {
    if (++draws > cap) {
      std::ostringstream msg;
      msg << "rejection sampling exceeded " << cap << " draws (trial " << xr.size() << "/" << n_r
          << ", external " << xe.size() << "/" << n_e << "); adjust eta0";
      throw ConvergenceError(msg.str());
    }
    for (Eigen::Index k = 0; k < p; ++k) z(k) = normal(rng);
    Eigen::VectorXd x = chol * z;
    const double u = normal(rng);
    const double logit = config.eta0 + linear(config.eta, config.eta_w, x, config.sp) + config.omega * u;
    const double pr = 1.0 / (1.0 + std::exp(-logit));
    const bool in_trial = uniform01(rng) < pr;
    if (in_trial && xr.size() < n_r) {
      xr.push_back(std::move(x));
      ur.push_back(u);
    } else if (!in_trial && xe.size() < n_e) {
      xe.push_back(std::move(x));
      ue.push_back(u);
    }
  }

  // Complete randomization: exactly n_t treated.
  std::vector<int> treat(n_r, 0);
  std::fill(treat.begin(), treat.begin() + static_cast<std::ptrdiff_t>(config.n_t), 1);
  std::shuffle(treat.begin(), treat.end(), rng);

  GeneratedData out;
  OracleRecord& o = out.oracle;
  o.target = effect_target;
  o.draws = draws;
  Eigen::VectorXd xbar = Eigen::VectorXd::Zero(p);
  for (const auto& x : xr) xbar += x;
  xbar /= static_cast<double>(n_r);
  double ax = 0.0;
  for (Eigen::Index k = 0; k < p; ++k) ax += config.alpha[static_cast<std::size_t>(k)] * xbar(k);
  o.alpha0 = effect_target - ax;

  const double pi_a = static_cast<double>(config.n_t) / static_cast<double>(n_r);
  const double s = config.sigma_y;
  const double w = config.omega;
  std::vector<SubjectRecord> recs;
  recs.reserve(n_r + n_e);
  auto tau_of = [&](const Eigen::VectorXd& x) {
    double t = o.alpha0;
    for (Eigen::Index k = 0; k < p; ++k) t += config.alpha[static_cast<std::size_t>(k)] * x(k);
    return t;
  };
  for (std::size_t i = 0; i < n_r; ++i) {
    const auto& x = xr[i];
    const double tau = tau_of(x);
    const double mu = linear(config.beta, config.beta_w, x, config.om) + treat[i] * tau + w * ur[i] * s;
    SubjectRecord r;
    r.source = kTrialSource;
    r.treatment = treat[i];
    r.outcome = mu + s * normal(rng);
    r.covariates.assign(x.data(), x.data() + p);
    r.propensity = pi_a;
    recs.push_back(std::move(r));
    o.u.push_back(ur[i]);
    o.tau.push_back(tau);
  }
  for (std::size_t i = 0; i < n_e; ++i) {
    const auto& x = xe[i];
    const double mu0 = linear(config.beta, config.beta_w, x, config.om) + w * ue[i] * s;
    const double mu0_e = mu0 + w * s;
    SubjectRecord r;
    r.source = 1;
    r.treatment = 0;
    r.outcome = mu0_e + s * normal(rng);
    r.covariates.assign(x.data(), x.data() + p);
    r.propensity = pi_a;
    recs.push_back(std::move(r));
    o.u.push_back(ue[i]);
    o.tau.push_back(tau_of(x));
    o.ec_bias.push_back(mu0_e - mu0);
  }
  std::vector<std::string> names;
  for (Eigen::Index k = 0; k < p; ++k) names.push_back("X" + std::to_string(k + 1));
  out.data = TrialDataset(std::move(recs), std::move(names));
  return out;
}

std::vector<std::size_t> nn_prematch_rows(const TrialDataset& data, const Eigen::VectorXd& e_hat,
                                          std::size_t n_needed) {
  if (static_cast<std::size_t>(e_hat.size()) != data.size()) {
    throw std::invalid_argument("nn_prematch: e_hat must have one entry per record");
  }
  const auto ec = data.external_index();
  const auto anchors = data.rpct_index();
  if (n_needed > ec.size()) {
    throw std::invalid_argument("nn_prematch: n_needed exceeds the number of external controls");
  }
  std::vector<bool> keep(data.size(), false);
  for (auto a : anchors) keep[a] = true;
  if (n_needed == ec.size()) {
    for (auto e : ec) keep[e] = true;
  } else if (n_needed > 0) {
    if (anchors.empty()) throw std::invalid_argument("nn_prematch: no trial anchors");
    std::vector<bool> alive(anchors.size(), true);
    std::size_t n_alive = anchors.size();
    std::vector<bool> taken(ec.size(), false);
    std::vector<std::size_t> best(ec.size());
    std::vector<double> best_d(ec.size());
    auto refresh = [&](std::size_t i) {
      const double v = e_hat(static_cast<Eigen::Index>(ec[i]));
      double bd = std::numeric_limits<double>::infinity();
      std::size_t ba = 0;
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (!alive[a]) continue;
        const double d = std::abs(v - e_hat(static_cast<Eigen::Index>(anchors[a])));
        if (d < bd) {  // anchors scanned in position order: ties keep the lower one
          bd = d;
          ba = a;
        }
      }
      best[i] = ba;
      best_d[i] = bd;
    };
    for (std::size_t i = 0; i < ec.size(); ++i) refresh(i);
    for (std::size_t step = 0; step < n_needed; ++step) {
      std::size_t pick = ec.size();
      for (std::size_t i = 0; i < ec.size(); ++i) {
        if (taken[i]) continue;
        // Strict comparison in position order: ties keep the lower EC.
        if (pick == ec.size() || best_d[i] < best_d[pick]) pick = i;
      }
      taken[pick] = true;
      keep[ec[pick]] = true;
      const std::size_t used = best[pick];
      alive[used] = false;
      if (--n_alive == 0) {
        std::fill(alive.begin(), alive.end(), true);
        n_alive = anchors.size();
        for (std::size_t i = 0; i < ec.size(); ++i) {
          if (!taken[i]) refresh(i);
        }
      } else {
        for (std::size_t i = 0; i < ec.size(); ++i) {
          if (!taken[i] && best[i] == used) refresh(i);
        }
      }
    }
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep[i]) rows.push_back(i);
  }
  return rows;
}

TrialDataset nn_prematch(const TrialDataset& data, const Eigen::VectorXd& e_hat, std::size_t n_needed) {
  const auto rows = nn_prematch_rows(data, e_hat, n_needed);
  return data.subset(rows);
}

const MetricsRow* MetricsTable::find(const std::string& estimator, std::size_t n_c) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator && r.n_c == n_c) return &r;
  }
  return nullptr;
}

void MetricsTable::write_csv(std::ostream& out) const {
  out << "cell,estimator,n_c,replications,failures,bias,bias_se,variance,variance_se,mse,mse_se,"
         "type1_error,type1_se,power,power_se,coverage,coverage_se,mean_se,mean_borrowed\n";
  for (const auto& r : rows) {
    out << cell << ',' << r.estimator << ',' << r.n_c << ',' << r.replications << ',' << r.failures;
    for (double v : {r.bias, r.bias_se, r.variance, r.variance_se, r.mse, r.mse_se, r.type1_error,
                     r.type1_se, r.power, r.power_se, r.coverage, r.coverage_se, r.mean_se,
                     r.mean_borrowed}) {
      out << ',' << format_double(v);
    }
    out << '\n';
  }
}

nlohmann::json MetricsTable::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"estimator", r.estimator},     {"n_c", r.n_c},
                  {"replications", r.replications}, {"failures", r.failures},
                  {"bias", r.bias},               {"bias_se", r.bias_se},
                  {"variance", r.variance},       {"variance_se", r.variance_se},
                  {"mse", r.mse},                 {"mse_se", r.mse_se},
                  {"type1_error", r.type1_error}, {"type1_se", r.type1_se},
                  {"power", r.power},             {"power_se", r.power_se},
                  {"coverage", r.coverage},       {"coverage_se", r.coverage_se},
                  {"mean_se", r.mean_se},         {"mean_borrowed", r.mean_borrowed}});
  }
  return {{"cell", cell}, {"rows", rs}};
}

MetricsRow aggregate(const std::string& estimator, std::size_t n_c,
                     const std::vector<ReplicationOutcome>& outcomes, double null_effect) {
  MetricsRow row;
  row.estimator = estimator;
  row.n_c = n_c;
  std::vector<const ReplicationOutcome*> ok;
  for (const auto& o : outcomes) {
    if (o.ok) {
      ok.push_back(&o);
    } else {
      ++row.failures;
    }
  }
  row.replications = ok.size();
  if (ok.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.bias = row.bias_se = row.variance = row.variance_se = row.mse = row.mse_se = nan;
    row.type1_error = row.type1_se = row.power = row.power_se = row.coverage = row.coverage_se = nan;
    row.mean_se = row.mean_borrowed = nan;
    return row;
  }
  const double r = static_cast<double>(ok.size());
  double mean = 0.0, rej = 0.0, pow = 0.0, cov = 0.0, se = 0.0, borrowed = 0.0;
  for (const auto* o : ok) {
    mean += o->tau_null;
    rej += o->reject_null ? 1.0 : 0.0;
    pow += o->reject_alt ? 1.0 : 0.0;
    cov += o->covered ? 1.0 : 0.0;
    se += o->se_null;
    borrowed += static_cast<double>(o->n_borrowed);
  }
  mean /= r;
  double m2 = 0.0, m4 = 0.0, e2 = 0.0, e4 = 0.0;
  for (const auto* o : ok) {
    const double c = o->tau_null - mean;
    m2 += c * c;
    m4 += c * c * c * c;
    const double e = o->tau_null - null_effect;
    e2 += e * e;
    e4 += e * e * e * e;
  }
  m2 /= r;
  m4 /= r;
  e2 /= r;
  e4 /= r;
  row.bias = mean - null_effect;
  row.bias_se = std::sqrt(m2 / r);
  row.variance = m2;
  row.variance_se = std::sqrt(std::max(0.0, m4 - m2 * m2) / r);
  row.mse = e2;
  row.mse_se = std::sqrt(std::max(0.0, e4 - e2 * e2) / r);
  auto rate = [&](double count, double& p, double& s) {
    p = count / r;
    s = std::sqrt(p * (1.0 - p) / r);
  };
  rate(rej, row.type1_error, row.type1_se);
  rate(pow, row.power, row.power_se);
  rate(cov, row.coverage, row.coverage_se);
  row.mean_se = se / r;
  row.mean_borrowed = borrowed / r;
  return row;
}

std::map<std::string, ReplicationOutcome> run_replication(const ScenarioConfig& scenario,
                                                          const PipelineConfig& pipeline,
                                                          std::size_t index) {
  std::map<std::string, ReplicationOutcome> out;
  for (const auto& e : pipeline.estimators) out[e] = {};
  const std::uint64_t seed = derive_seed(scenario.seed, index);
  try {
    auto g0 = generate_dataset(scenario, seed, scenario.null_effect);
    auto g1 = generate_dataset(scenario, seed, scenario.alt_effect);
    TrialDataset d0 = std::move(g0.data);
    TrialDataset d1 = std::move(g1.data);
    if (scenario.prematch) {
      const std::size_t need = scenario.n_t > scenario.n_c ? scenario.n_t - scenario.n_c : 0;
      Eigen::VectorXd r(static_cast<Eigen::Index>(d0.size()));
      for (std::size_t i = 0; i < d0.size(); ++i) r(static_cast<Eigen::Index>(i)) = d0.is_rpct(i) ? 1.0 : 0.0;
      const auto model = fit_logistic(d0.covariates(), r);
      const auto rows = nn_prematch_rows(d0, model.predict_proba(d0.covariates()), need);
      d0 = d0.subset(rows);
      d1 = d1.subset(rows);
    }
    PipelineConfig pc = pipeline;
    pc.seed = seed;
    pc.capture_failures = true;
    const auto r0 = run_pipeline(d0, pc);
    const auto r1 = run_pipeline(d1, pc);
    for (auto& [name, o] : out) {
      const auto* e0 = r0.find(name);
      const auto* e1 = r1.find(name);
      if (e0 == nullptr || e1 == nullptr) {
        auto it = r0.failures.find(name);
        if (it == r0.failures.end()) it = r1.failures.find(name);
        o.error = it == r1.failures.end() ? "estimator failed" : it->second;
        continue;
      }
      o.ok = true;
      o.tau_null = e0->tau_hat;
      o.se_null = e0->std_error();
      o.tau_alt = e1->tau_hat;
      o.se_alt = e1->std_error();
      o.reject_null = hypothesis_test(*e0, scenario.null_effect, Side::kTwoSided, pc.alpha).reject;
      o.covered = e0->ci_low <= scenario.null_effect && scenario.null_effect <= e0->ci_high;
      o.reject_alt = hypothesis_test(*e1, scenario.null_effect, Side::kGreater, pc.alpha).reject;
      o.n_borrowed = e0->n_borrowed;
    }
  } catch (const std::exception& e) {
    for (auto& [name, o] : out) {
      o.ok = false;
      o.error = e.what();
    }
  }
  return out;
}

MetricsTable run_replications(const ScenarioConfig& scenario, const PipelineConfig& pipeline,
                              unsigned threads, ReplicationLog* log) {
  scenario.check();
  check_estimator_names(pipeline.estimators);
  const std::size_t reps = scenario.replications;
  std::vector<std::map<std::string, ReplicationOutcome>> results(reps);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= reps) return;
      results[i] = run_replication(scenario, pipeline, i);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(reps)));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  MetricsTable table;
  table.cell = cell_name(scenario.sp, scenario.om, scenario.omega);
  for (const auto& name : pipeline.estimators) {
    std::vector<ReplicationOutcome> col;
    col.reserve(reps);
    for (auto& r : results) col.push_back(r.at(name));
    table.rows.push_back(aggregate(name, scenario.n_c, col, scenario.null_effect));
    if (log != nullptr) (*log)[name] = std::move(col);
  }
  return table;
}

std::string cell_name(ModelChoice sp, ModelChoice om, double omega) {
  return to_string(sp) + to_string(om) + "_omega" + format_double(omega);
}

void to_json(nlohmann::json& j, const SimulationPlan& p) {
  j = nlohmann::json{{"scenario", p.scenario},
                     {"pipeline", p.pipeline},
                     {"grid", {{"n_c", p.n_c_grid}, {"omega", p.omega_grid}, {"scenarios", p.scenarios}}}};
}

void from_json(const nlohmann::json& j, SimulationPlan& p) {
  for (const auto& [key, value] : j.items()) {
    if (key != "scenario" && key != "pipeline" && key != "grid") {
      throw std::invalid_argument("unknown simulation config key '" + key + "'");
    }
  }
  SimulationPlan d;
  d.scenario.fill_missing_coefficients();
  p.scenario = j.contains("scenario") ? j.at("scenario").get<ScenarioConfig>() : d.scenario;
  p.pipeline = j.contains("pipeline") ? j.at("pipeline").get<PipelineConfig>() : d.pipeline;
  const auto g = j.value("grid", nlohmann::json::object());
  for (const auto& [key, value] : g.items()) {
    if (key != "n_c" && key != "omega" && key != "scenarios") {
      throw std::invalid_argument("unknown grid key '" + key + "'");
    }
  }
  p.n_c_grid = g.value("n_c", d.n_c_grid);
  p.omega_grid = g.value("omega", d.omega_grid);
  p.scenarios = g.value("scenarios", d.scenarios);
  if (p.n_c_grid.empty() || p.omega_grid.empty() || p.scenarios.empty()) {
    throw std::invalid_argument("simulation grid entries must be nonempty");
  }
  for (const auto& s : p.scenarios) {
    if (s.size() != 2) throw std::invalid_argument("scenario '" + s + "' must be two letters, e.g. CW");
    parse_model_choice(s.substr(0, 1));
    parse_model_choice(s.substr(1, 1));
  }
}

std::vector<MetricsTable> run_plan(const SimulationPlan& plan, unsigned threads,
                                   const std::function<void(const std::string&)>& progress) {
  std::vector<MetricsTable> tables;
  for (const auto& s : plan.scenarios) {
    for (double omega : plan.omega_grid) {
      ScenarioConfig sc = plan.scenario;
      sc.sp = parse_model_choice(s.substr(0, 1));
      sc.om = parse_model_choice(s.substr(1, 1));
      sc.omega = omega;
      MetricsTable table;
      table.cell = cell_name(sc.sp, sc.om, omega);
      std::vector<MetricsTable> parts;
      for (std::size_t n_c : plan.n_c_grid) {
        sc.n_c = n_c;
        if (progress) progress(table.cell + " n_c=" + std::to_string(n_c));
        parts.push_back(run_replications(sc, plan.pipeline, threads));
      }
      // Rows grouped by estimator, then N_c.
      for (const auto& name : plan.pipeline.estimators) {
        for (const auto& part : parts) {
          for (const auto& r : part.rows) {
            if (r.estimator == name) table.rows.push_back(r);
          }
        }
      }
      tables.push_back(std::move(table));
    }
  }
  return tables;
}

}  // namespace ecborrow
