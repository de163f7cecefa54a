#include "ecborrow/estimators.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ecborrow/data_model.hpp"
#include "ecborrow/error.hpp"

namespace ecborrow {

std::size_t EifInputs::n_rpct() const {
  return static_cast<std::size_t>((r.array() == 1.0).count());
}

std::size_t EifInputs::n_external() const { return size() - n_rpct(); }

void EifInputs::check() const {
  const auto n = r.size();
  auto need = [&](const Eigen::VectorXd& v, const char* name) {
    if (v.size() != n) {
      throw std::invalid_argument(std::string("EifInputs: ") + name + " has the wrong length");
    }
  };
  need(a, "a");
  need(y, "y");
  need(pi_a, "pi_a");
  need(mu1, "mu1");
  need(mu0, "mu0");
  if (q_dr.size() != 0) need(q_dr, "q_dr");
  if (pi_b.size() != 0) need(pi_b, "pi_b");
  if (!(r_hat >= 0.0) || !(r_b >= 0.0)) throw std::invalid_argument("EifInputs: negative variance ratio");
  std::size_t treated = 0;
  std::size_t control = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (r(i) != 0.0 && r(i) != 1.0) throw std::invalid_argument("EifInputs: R must be 0 or 1");
    if (a(i) != 0.0 && a(i) != 1.0) throw std::invalid_argument("EifInputs: A must be 0 or 1");
    if (r(i) == 0.0 && a(i) != 0.0) throw std::invalid_argument("EifInputs: treated external control");
    if (r(i) == 1.0) {
      if (!(pi_a(i) > 0.0 && pi_a(i) < 1.0)) throw std::invalid_argument("EifInputs: pi_A outside (0,1)");
      (a(i) == 1.0 ? treated : control) += 1;
    }
    if (pi_b.size() != 0 && !(pi_b(i) >= 0.0 && pi_b(i) <= 1.0)) {
      throw std::invalid_argument("EifInputs: pi_b outside [0,1]");
    }
  }
  if (treated == 0 || control == 0) throw DataError("empty trial arm");
}

double EstimateReport::std_error() const { return std::sqrt(variance); }

namespace {

// Shared solver for the EIF estimating equation. coef(i) multiplies the
// control residual of record i in the augmentation; records with coef 0 do not
// contribute.
EstimateReport solve(const EifInputs& in, const Eigen::VectorXd& coef, std::string name,
                     double alpha) {
  const auto n = in.r.size();
  const double n_r = static_cast<double>(in.n_rpct());
  const double n_all = static_cast<double>(n);

  Eigen::VectorXd main = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd aug = Eigen::VectorXd::Zero(n);
  double s_main = 0.0;
  double s_aug = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (in.r(i) == 1.0) {
      main(i) = in.mu1(i) - in.mu0(i);
      if (in.a(i) == 1.0) main(i) += (in.y(i) - in.mu1(i)) / in.pi_a(i);
      s_main += main(i);
    }
    if (coef(i) != 0.0) {
      aug(i) = coef(i) * (in.y(i) - in.mu0(i));
      s_aug += aug(i);
    }
  }

  EstimateReport rep;
  rep.estimator = std::move(name);
  rep.alpha = alpha;
  rep.n = static_cast<std::size_t>(n);
  rep.tau_hat = (s_main - s_aug) / n_r;
  rep.influence_values.resize(n);
  const double scale = n_all / n_r;
  for (Eigen::Index i = 0; i < n; ++i) {
    rep.influence_values(i) = scale * (in.r(i) * (main(i) - rep.tau_hat) - aug(i));
  }
  rep.variance = eif_variance(rep.influence_values, rep.n) / n_all;
  const Interval ci = confidence_interval(rep.tau_hat, rep.variance, alpha);
  rep.ci_low = ci.low;
  rep.ci_high = ci.high;
  return rep;
}

void guard(double denom, Eigen::Index i) {
  if (!(denom >= kDenominatorGuard) || !std::isfinite(denom)) {
    std::ostringstream msg;
    msg << "weighting denominator " << denom << " below " << kDenominatorGuard << " at record "
        << i << " (positivity failure)";
    throw NumericalError(msg.str());
  }
}

void check_q(const EifInputs& in) {
  if (in.q_dr.size() != in.r.size()) throw std::invalid_argument("EifInputs: q_dr is required");
  for (Eigen::Index i = 0; i < in.q_dr.size(); ++i) {
    if (!(in.q_dr(i) > 0.0) || !std::isfinite(in.q_dr(i))) {
      throw std::invalid_argument("EifInputs: q_dr must be positive");
    }
  }
}

// Trial-only coefficients (1 - A) / (1 - pi_A).
Eigen::VectorXd aipw_coef(const EifInputs& in) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(in.r.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (in.r(i) == 1.0 && in.a(i) == 0.0) {
      const double d = 1.0 - in.pi_a(i);
      guard(d, i);
      c(i) = 1.0 / d;
    }
  }
  return c;
}

std::vector<bool> selected_mask(const EifInputs& in, const BiasSelection& selection) {
  const auto n_e = static_cast<Eigen::Index>(in.n_external());
  if (selection.b_tilde.size() != n_e) {
    throw std::invalid_argument("acw_alasso_estimate: selection does not match the ECs");
  }
  std::vector<bool> mask(in.size(), false);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < in.r.size(); ++i) {
    if (in.r(i) == 0.0) mask[static_cast<std::size_t>(i)] = selection.b_tilde(k++) == 0.0;
  }
  return mask;
}

}  // namespace

EstimateReport aipw_estimate(const EifInputs& in, double alpha) {
  in.check();
  return solve(in, aipw_coef(in), "aipw", alpha);
}

EstimateReport acw_estimate(const EifInputs& in, double alpha) {
  in.check();
  check_q(in);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(in.r.size());
  std::size_t borrowed = 0;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const double w = in.r(i) == 1.0 ? (1.0 - in.a(i)) : in.r_hat;
    if (w == 0.0) continue;
    if (in.r(i) == 0.0) ++borrowed;
    const double d = in.q_dr(i) * (1.0 - in.pi_a(i)) + in.r_hat;
    guard(d, i);
    c(i) = w * in.q_dr(i) / d;
  }
  auto rep = solve(in, c, "acw", alpha);
  rep.n_borrowed = borrowed;
  if (borrowed > 0) {
    // All ECs count as comparable: pi_b = 1, r_b = r_hat.
    EifInputs all = in;
    all.pi_b = Eigen::VectorXd::Ones(in.r.size());
    all.r_b = in.r_hat;
    BiasSelection s;
    s.b_tilde = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(in.n_external()));
    rep.efficiency_gain = efficiency_gain(all, s);
  }
  return rep;
}

EstimateReport acw_alasso_estimate(const EifInputs& in, const BiasSelection& selection,
                                   double alpha) {
  in.check();
  const auto mask = selected_mask(in, selection);
  std::size_t borrowed = 0;
  for (bool m : mask) borrowed += m ? 1 : 0;
  if (borrowed == 0) {
    auto rep = solve(in, aipw_coef(in), "acw_alasso", alpha);
    rep.bypassed = true;
    return rep;
  }
  check_q(in);
  if (in.pi_b.size() != in.r.size()) throw std::invalid_argument("EifInputs: pi_b is required");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(in.r.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    double w = 0.0;
    if (in.r(i) == 1.0) {
      w = 1.0 - in.a(i);
    } else if (mask[static_cast<std::size_t>(i)]) {
      w = in.r_b;
    }
    if (w == 0.0) continue;
    const double d = in.q_dr(i) * (1.0 - in.pi_a(i)) + in.pi_b(i) * in.r_b;
    guard(d, i);
    c(i) = w * in.q_dr(i) / d;
  }
  auto rep = solve(in, c, "acw_alasso", alpha);
  rep.n_borrowed = in.r_b > 0.0 ? borrowed : 0;
  rep.efficiency_gain = efficiency_gain(in, selection);
  return rep;
}

double eif_variance(const Eigen::VectorXd& influence_values, std::size_t n) {
  if (n == 0) throw std::invalid_argument("eif_variance: n must be positive");
  return influence_values.squaredNorm() / static_cast<double>(n);
}

Interval confidence_interval(double tau_hat, double variance, double alpha) {
  if (!(variance >= 0.0)) throw std::invalid_argument("confidence_interval: negative variance");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("confidence_interval: alpha outside (0,1]");
  const double z = alpha >= 1.0 ? 0.0 : normal_quantile(1.0 - alpha / 2.0);
  const double half = z * std::sqrt(variance);
  return {tau_hat - half, tau_hat + half};
}

TestDecision hypothesis_test(const EstimateReport& report, double null_value, Side side,
                             double alpha) {
  TestDecision d;
  d.side = side;
  const double diff = report.tau_hat - null_value;
  const double se = report.std_error();
  if (se == 0.0) {
    if (diff == 0.0) throw NumericalError("hypothesis_test: zero variance at the null value");
    d.z = std::copysign(std::numeric_limits<double>::infinity(), diff);
  } else {
    d.z = diff / se;
  }
  switch (side) {
    case Side::kTwoSided: d.p_value = 2.0 * normal_cdf(-std::abs(d.z)); break;
    case Side::kGreater: d.p_value = normal_cdf(-d.z); break;
    case Side::kLess: d.p_value = normal_cdf(d.z); break;
  }
  d.p_value = std::min(1.0, d.p_value);
  d.reject = d.p_value < alpha;
  return d;
}

double efficiency_gain(const EifInputs& in, const BiasSelection& selection) {
  if ((selection.b_tilde.array() == 0.0).count() == 0) return 0.0;
  if (in.r_b == 0.0 || in.control_residual_variance == 0.0) return 0.0;
  if (in.pi_b.size() != in.r.size() || in.q_dr.size() != in.r.size()) return 0.0;
  const double n = static_cast<double>(in.size());
  const double p_r = static_cast<double>(in.n_rpct()) / n;
  double s = 0.0;
  for (Eigen::Index i = 0; i < in.r.size(); ++i) {
    const double q = in.q_dr(i);
    const double num = in.r_b * in.pi_b(i);
    if (num == 0.0) continue;
    const double e = q / (1.0 + q);
    const double d = q * (1.0 - in.pi_a(i)) + num;
    s += e * num / d;
  }
  return std::max(0.0, s / n * in.control_residual_variance / (p_r * p_r));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("normal_quantile: p outside [0,1]");
  }
  // Acklam's rational approximation followed by one Halley step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double lo = 0.02425;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - lo) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

nlohmann::json to_json(const EstimateReport& r, bool with_influence) {
  nlohmann::json j{{"estimator", r.estimator},
                   {"tau_hat", r.tau_hat},
                   {"variance", r.variance},
                   {"std_error", r.std_error()},
                   {"ci_low", r.ci_low},
                   {"ci_high", r.ci_high},
                   {"alpha", r.alpha},
                   {"n", r.n},
                   {"n_borrowed", r.n_borrowed},
                   {"efficiency_gain", r.efficiency_gain},
                   {"bypassed", r.bypassed}};
  if (with_influence) {
    j["influence_values"] = std::vector<double>(r.influence_values.data(),
                                                r.influence_values.data() + r.influence_values.size());
  }
  return j;
}

void write_influence_csv(std::ostream& out, const EstimateReport& report) {
  out << "record_id,influence\n";
  for (Eigen::Index i = 0; i < report.influence_values.size(); ++i) {
    out << i << ',' << format_double(report.influence_values(i)) << '\n';
  }
}

}  // namespace ecborrow
