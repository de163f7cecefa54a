#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ecborrow/calibration.hpp"
#include "ecborrow/error.hpp"

using namespace ecborrow;

namespace {

CalibrationProblem scalar_problem(std::initializer_list<double> g, double target) {
  CalibrationProblem p;
  p.ec_basis.resize(static_cast<Eigen::Index>(g.size()), 1);
  Eigen::Index i = 0;
  for (double v : g) p.ec_basis(i++, 0) = v;
  p.target_moments = Eigen::VectorXd::Constant(1, target);
  return p;
}

double entropy(const Eigen::VectorXd& q) { return (q.array() * q.array().log()).sum(); }

// Random EC basis with a target inside the hull (Dirichlet mixture of rows).
CalibrationProblem random_problem(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_dist(20, 200), k_dist(1, 5);
  std::normal_distribution<double> z;
  std::gamma_distribution<double> gamma(1.0);
  const int n = n_dist(rng), k = k_dist(rng);
  CalibrationProblem p;
  p.ec_basis.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) p.ec_basis(i, j) = z(rng) * (1.0 + j);
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = gamma(rng);
  w /= w.sum();
  p.target_moments = p.ec_basis.transpose() * w;
  return p;
}

}  // namespace

TEST(Calibration, RowsAtTargetGiveUniformWeights) {
  CalibrationProblem p;
  p.ec_basis = Eigen::MatrixXd::Ones(4, 2);
  p.ec_basis.col(1).setConstant(-2.0);
  p.target_moments = Eigen::Vector2d(1.0, -2.0);
  const auto w = solve_calibration(p);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(w.weights(i), 0.25, 1e-12);
}

TEST(Calibration, TwoPointForcedWeights) {
  const auto w = solve_calibration(scalar_problem({0.0, 1.0}, 0.75));
  EXPECT_NEAR(w.weights(0), 0.25, 1e-9);
  EXPECT_NEAR(w.weights(1), 0.75, 1e-9);
}

TEST(Calibration, ThreePointMatchesSimplexGrid) {
  const auto w = solve_calibration(scalar_problem({0.0, 1.0, 2.0}, 0.5));
  // Feasible segment of the simplex: q = (0.5 + t, 0.5 - 2t, t), 0 < t < 0.25.
  double best_t = 0.0, best = 1e300;
  const int steps = 250000;
  for (int s = 1; s < steps; ++s) {
    const double t = 0.25 * s / steps;
    const double q0 = 0.5 + t, q1 = 0.5 - 2 * t, q2 = t;
    const double f = q0 * std::log(q0) + q1 * std::log(q1) + q2 * std::log(q2);
    if (f < best) {
      best = f;
      best_t = t;
    }
  }
  EXPECT_NEAR(w.weights(0), 0.5 + best_t, 1e-4);
  EXPECT_NEAR(w.weights(1), 0.5 - 2 * best_t, 1e-4);
  EXPECT_NEAR(w.weights(2), best_t, 1e-4);
}

TEST(Calibration, OutsideHullIsInfeasible) {
  EXPECT_THROW(solve_calibration(scalar_problem({0.0, 1.0}, 1.5)), InfeasibleError);
}

TEST(Calibration, IterationBudgetExhausted) {
  std::mt19937_64 rng(3);
  auto p = random_problem(rng);
  p.target_moments = 0.7 * p.ec_basis.colwise().mean().transpose() + 0.3 * p.ec_basis.row(0).transpose();
  CalibrationOptions o;
  o.max_iter = 1;
  EXPECT_THROW(solve_calibration(p, o), ConvergenceError);
}

TEST(Calibration, ExponentialFamilyForm) {
  std::mt19937_64 rng(4);
  const auto p = random_problem(rng);
  const auto w = solve_calibration(p);
  EXPECT_NEAR(w.weights.sum(), 1.0, 1e-12);
  EXPECT_TRUE((w.weights.array() > 0.0).all());
  const Eigen::Index n = p.ec_basis.rows();
  for (Eigen::Index i = 1; i < n; ++i) {
    const double lhs = std::log(w.weights(i)) - std::log(w.weights(0));
    const double rhs = w.dual.dot(p.ec_basis.row(i) - p.ec_basis.row(0));
    EXPECT_NEAR(lhs, rhs, 1e-8);
  }
  const Eigen::VectorXd again = evaluate_weights(w, p.ec_basis);
  EXPECT_LE((again - w.weights).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Calibration, RandomFeasibleProblemsAreOptimal) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = random_problem(rng);
    const auto w = solve_calibration(p);
    const Eigen::VectorXd moments = p.ec_basis.transpose() * w.weights;
    EXPECT_LE((moments - p.target_moments).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(w.residual, 1e-8);
    EXPECT_LE(w.dual_residual, 1e-8);
    EXPECT_NEAR(w.objective, entropy(w.weights), 1e-10);

    const Eigen::Index n = p.ec_basis.rows(), k = p.ec_basis.cols();
    Eigen::MatrixXd a(k + 1, n);
    a.topRows(k) = p.ec_basis.transpose();
    a.row(k).setOnes();
    const Eigen::MatrixXd proj =
        Eigen::MatrixXd::Identity(n, n) - a.transpose() * (a * a.transpose()).ldlt().solve(a);
    for (int c = 0; c < 5; ++c) {
      Eigen::VectorXd d(n);
      for (Eigen::Index i = 0; i < n; ++i) d(i) = z(rng);
      d = proj * d;
      double scale = 1.0;
      const double ratio = (-d.array() / w.weights.array()).maxCoeff();
      if (ratio > 0.0) scale = 0.9 / ratio;
      const Eigen::VectorXd q = w.weights + scale * d;
      ASSERT_TRUE((q.array() > 0.0).all());
      EXPECT_LE(entropy(w.weights), entropy(q) + 1e-10);
    }
  }
}

TEST(Calibration, AffineInvariance) {
  std::mt19937_64 rng(6);
  const auto p = random_problem(rng);
  const auto w = solve_calibration(p);
  CalibrationProblem t = p;
  Eigen::VectorXd c(p.ec_basis.cols()), d(p.ec_basis.cols());
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    c(j) = j % 2 ? -2.5 : 0.4;
    d(j) = 3.0 - j;
  }
  t.ec_basis = (p.ec_basis.array().rowwise() * c.transpose().array()).rowwise() + d.transpose().array();
  t.target_moments = p.target_moments.cwiseProduct(c) + d;
  const auto wt = solve_calibration(t);
  EXPECT_LE((w.weights - wt.weights).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Calibration, FromCovariatesUsesTrialMean) {
  Eigen::MatrixXd ec(3, 1), rpct(2, 1);
  ec << 0, 1, 2;
  rpct << 0.5, 1.5;
  const auto p = CalibrationProblem::from_covariates(ec, rpct, BasisSpec::polynomial(2));
  ASSERT_EQ(p.ec_basis.cols(), 2);
  EXPECT_NEAR(p.target_moments(0), 1.0, 1e-15);
  EXPECT_NEAR(p.target_moments(1), 1.25, 1e-15);
  const auto w = solve_calibration(p);
  EXPECT_LE((evaluate_weights_at(w, ec) - w.weights).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DensityRatioScale, Examples) {
  CalibrationWeights u;
  u.weights = Eigen::VectorXd::Constant(100, 0.01);
  const auto s = density_ratio_scale(u, 50);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(s(i), 0.5, 1e-15);
  EXPECT_NEAR(s.sum(), 50.0, 1e-12);

  CalibrationWeights w;
  w.weights = Eigen::Vector2d(0.25, 0.75);
  const auto s2 = density_ratio_scale(w, 2);
  EXPECT_DOUBLE_EQ(s2(0), 0.5);
  EXPECT_DOUBLE_EQ(s2(1), 1.5);
  EXPECT_DOUBLE_EQ(s2.sum(), 2.0);
}

TEST(Calibration, WeightsCsv) {
  const auto w = solve_calibration(scalar_problem({0.0, 1.0}, 0.75));
  std::ostringstream out;
  const std::vector<std::size_t> ids{7, 9};
  write_weights_csv(out, ids, w, 2, 1);
  const auto text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "record_id,weight,density_ratio_weight,group");
  const auto last = text.substr(text.find("\n9,") + 3);
  EXPECT_NEAR(std::stod(last), 0.75, 1e-9);
  EXPECT_NEAR(std::stod(last.substr(last.find(',') + 1)), 1.5, 1e-9);
}
