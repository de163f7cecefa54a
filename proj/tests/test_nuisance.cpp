#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ecborrow/error.hpp"
#include "ecborrow/nuisance.hpp"
#include "ecborrow/random.hpp"

using namespace ecborrow;

namespace {

Eigen::MatrixXd gaussian(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = z(rng);
  return m;
}

Eigen::MatrixXd with_ones(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

BoostingConfig small_boosting() {
  BoostingConfig c;
  c.tree_grid = {20, 40, 80};
  c.depth_grid = {1, 2};
  c.folds = 3;
  c.min_leaf = 3;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(Ols, ExactInterpolation) {
  Eigen::MatrixXd x(2, 1);
  x << 0, 1;
  Eigen::VectorXd y(2);
  y << 1, 3;
  const auto m = fit_ols(x, y);
  ASSERT_EQ(m.coefficients.size(), 2);
  EXPECT_NEAR(m.coefficients(0), 1.0, 1e-12);
  EXPECT_NEAR(m.coefficients(1), 2.0, 1e-12);
}

TEST(Ols, ConstantResponse) {
  Eigen::MatrixXd x(3, 1);
  x << -1, 0, 2;
  const auto m = fit_ols(x, Eigen::VectorXd::Constant(3, 5.0));
  EXPECT_NEAR(m.coefficients(0), 5.0, 1e-12);
  EXPECT_NEAR(m.coefficients(1), 0.0, 1e-12);
}

TEST(Ols, MatchesNormalEquations) {
  const Eigen::MatrixXd x = gaussian(10, 3, 5);
  const Eigen::VectorXd y = gaussian(10, 1, 6).col(0);
  const Eigen::MatrixXd d = with_ones(x);
  const Eigen::VectorXd oracle = (d.transpose() * d).ldlt().solve(d.transpose() * y);
  const auto m = fit_ols(x, y);
  EXPECT_LE((m.coefficients - oracle).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::VectorXd resid = y - m.predict(x);
  EXPECT_LE((d.transpose() * resid).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Ols, PolynomialBasisDimension) {
  const Eigen::MatrixXd x = gaussian(40, 3, 7);
  const auto basis = BasisSpec::tail_powers(3, 2, 3);
  EXPECT_EQ(basis.dimension(3), 7u);
  const Eigen::MatrixXd g = basis.expand(x);
  EXPECT_NEAR(g(4, 3), std::pow(x(4, 1), 2), 1e-14);
  EXPECT_NEAR(g(4, 6), std::pow(x(4, 2), 3), 1e-14);
  const auto m = fit_ols(x, gaussian(40, 1, 8).col(0), basis);
  EXPECT_EQ(m.coefficients.size(), 8);
}

TEST(Ols, RidgeFallbackOnCollinearDesign) {
  Eigen::MatrixXd x = gaussian(20, 2, 9);
  x.col(1) = x.col(0);
  const Eigen::VectorXd y = x.col(0) * 2.0;
  const auto m = fit_ols(x, y);
  EXPECT_TRUE(m.ridge_used);
  EXPECT_LE((m.predict(x) - y).cwiseAbs().maxCoeff(), 1e-5);
  OlsOptions strict;
  strict.ridge_fallback = false;
  EXPECT_THROW(fit_ols(x, y, {}, strict), NumericalError);
}

TEST(Ols, LeverageMatchesHatMatrix) {
  const Eigen::MatrixXd x = gaussian(15, 2, 10);
  const Eigen::MatrixXd d = with_ones(x);
  const Eigen::MatrixXd hat = d * (d.transpose() * d).inverse() * d.transpose();
  const Eigen::VectorXd h = ols_leverage(x, x);
  for (int i = 0; i < 15; ++i) EXPECT_NEAR(h(i), hat(i, i), 1e-10);
}

TEST(Logistic, SymmetricRows) {
  Eigen::MatrixXd x(2, 1);
  x << 1.0, 1.0;
  Eigen::VectorXd y(2);
  y << 0, 1;
  const auto m = fit_logistic(x, y);
  EXPECT_NEAR(m.predict_proba(x)(0), 0.5, 1e-9);
}

TEST(Logistic, InterceptOnlyIsLogitOfProportion) {
  Eigen::MatrixXd x(5, 0);
  Eigen::VectorXd y(5);
  y << 1, 0, 1, 1, 0;
  const auto m = fit_logistic(x, y);
  ASSERT_EQ(m.coefficients.size(), 1);
  EXPECT_NEAR(m.coefficients(0), std::log(0.6 / 0.4), 1e-9);
  EXPECT_TRUE(m.converged);
}

TEST(Logistic, SeparationFlagged) {
  Eigen::MatrixXd x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  const auto m = fit_logistic(x, y);
  EXPECT_TRUE(m.separated);
  const Eigen::VectorXd p = m.predict_proba(x);
  EXPECT_TRUE((p.array() > 0.0).all() && (p.array() < 1.0).all());
}

TEST(Logistic, ScoreEquationsHold) {
  const Eigen::MatrixXd x = gaussian(200, 3, 12);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u;
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) {
    const double eta = 0.3 + 0.8 * x(i, 0) - 0.5 * x(i, 2);
    y(i) = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  const auto m = fit_logistic(x, y);
  ASSERT_FALSE(m.separated);
  const Eigen::VectorXd score = with_ones(x).transpose() * (y - m.predict_proba(x));
  EXPECT_LE(score.norm(), 1e-8);
  EXPECT_LE(m.gradient_norm, 1e-8);
}

TEST(Boosting, ConstantResponse) {
  const Eigen::MatrixXd x = gaussian(30, 2, 14);
  const auto m = fit_boosted_trees(x, Eigen::VectorXd::Constant(30, 2.5), small_boosting());
  EXPECT_TRUE(m.degenerate);
  const Eigen::MatrixXd fresh = gaussian(7, 2, 15);
  const Eigen::VectorXd p = predict_mu(m, fresh, PredictMode::kInSample);
  for (int i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(p(i), 2.5);
}

TEST(Boosting, StepFunctionHeldOutFit) {
  auto step = [](const Eigen::MatrixXd& x) {
    Eigen::VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) y(i) = x(i, 0) > 0 ? 1.0 : -1.0;
    return y;
  };
  const Eigen::MatrixXd x = gaussian(200, 3, 16);
  const auto m = fit_boosted_trees(x, step(x), small_boosting());
  const Eigen::MatrixXd xt = gaussian(500, 3, 17);
  const Eigen::VectorXd yt = step(xt);
  const double var = (yt.array() - yt.mean()).square().mean();
  const double mse = (predict_mu(m, xt, PredictMode::kInSample) - yt).squaredNorm() / 500.0;
  EXPECT_LT(mse, var / 10.0);
}

TEST(Boosting, TrainingLossNonIncreasing) {
  const Eigen::MatrixXd x = gaussian(80, 2, 18);
  const Eigen::VectorXd y = x.col(0).array().sin() + 0.3 * gaussian(80, 1, 19).col(0).array();
  const auto e = boost(x, y, 60, 2, 0.1, 3);
  double prev = (y.array() - e.intercept).square().sum();
  for (int t = 1; t <= 60; ++t) {
    const double loss = (e.predict(x, t) - y).squaredNorm();
    EXPECT_LE(loss, prev + 1e-12);
    prev = loss;
  }
}

TEST(Boosting, PredictionIsSumOfLeaves) {
  const Eigen::MatrixXd x = gaussian(50, 2, 20);
  const auto e = boost(x, x.col(1), 10, 2, 0.2, 3);
  for (int i = 0; i < 5; ++i) {
    double s = e.intercept;
    for (const auto& tree : e.trees) {
      int node = 0;
      while (tree.nodes[node].feature >= 0) {
        const auto& nd = tree.nodes[node];
        node = x(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      s += e.shrinkage * tree.nodes[node].value;
    }
    EXPECT_NEAR(e.predict_row(x.row(i)), s, 1e-12);
  }
}

TEST(Boosting, ZeroTreesPredictsMean) {
  const Eigen::MatrixXd x = gaussian(20, 1, 21);
  const Eigen::VectorXd y = gaussian(20, 1, 22).col(0);
  const auto e = boost(x, y, 0, 2, 0.1, 3);
  EXPECT_NEAR(e.predict(x)(3), y.mean(), 1e-12);
}

TEST(Boosting, FoldIsolation) {
  const Eigen::MatrixXd x = gaussian(60, 2, 23);
  Eigen::VectorXd y = x.col(0) + 0.5 * gaussian(60, 1, 24).col(0);
  const auto cfg = small_boosting();
  const auto base = fit_boosted_trees(x, y, cfg);
  const Eigen::VectorXd before = predict_mu(base, x, PredictMode::kCrossFitted);
  for (int i = 0; i < 60; ++i)
    if (base.fold_assignment[static_cast<std::size_t>(i)] == 1) y(i) += 10.0 * (i % 3 - 1);
  const auto perturbed = fit_boosted_trees(x, y, cfg);
  const Eigen::VectorXd after = predict_mu(perturbed, x, PredictMode::kCrossFitted);
  for (int i = 0; i < 60; ++i) {
    if (base.fold_assignment[static_cast<std::size_t>(i)] == 1) {
      EXPECT_EQ(before(i), after(i));
    }
  }
}

TEST(Boosting, CrossFittedEqualsRefitWithoutFold) {
  const Eigen::MatrixXd x = gaussian(45, 2, 25);
  const Eigen::VectorXd y = x.col(0).array().square().matrix() + gaussian(45, 1, 26).col(0);
  const auto cfg = small_boosting();
  const auto model = fit_boosted_trees(x, y, cfg);
  const Eigen::VectorXd cf = predict_mu(model, x, PredictMode::kCrossFitted);
  for (int k = 0; k < cfg.folds; ++k) {
    std::vector<int> train, held;
    for (int i = 0; i < 45; ++i)
      (model.fold_assignment[static_cast<std::size_t>(i)] == k ? held : train).push_back(i);
    Eigen::MatrixXd xs(static_cast<Eigen::Index>(train.size()), 2);
    Eigen::VectorXd ys(static_cast<Eigen::Index>(train.size()));
    for (std::size_t r = 0; r < train.size(); ++r) {
      xs.row(static_cast<Eigen::Index>(r)) = x.row(train[r]);
      ys(static_cast<Eigen::Index>(r)) = y(train[r]);
    }
    auto sub = cfg;
    sub.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(k) + 1);
    const auto refit = fit_boosted_trees(xs, ys, sub);
    for (int i : held) EXPECT_NEAR(cf(i), refit.full.predict_row(x.row(i)), 1e-12);
  }
}

TEST(Boosting, OffsetIsAdded) {
  const Eigen::MatrixXd x = gaussian(40, 1, 27);
  const Eigen::VectorXd base = 3.0 * x.col(0);
  const Eigen::VectorXd y = base + Eigen::VectorXd::Constant(40, 1.0);
  const auto m = fit_boosted_trees(x, y, small_boosting(), &base);
  const Eigen::VectorXd p = predict_mu(m, x, PredictMode::kInSample, &base);
  EXPECT_LE((p - y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(predict_mu(m, x, PredictMode::kInSample), std::invalid_argument);
}

TEST(PredictMu, LinearExample) {
  LinearModel m;
  m.coefficients = Eigen::Vector2d(1.0, 2.0);
  Eigen::MatrixXd x(1, 1);
  x << 3.0;
  EXPECT_DOUBLE_EQ(predict_mu(m, x)(0), 7.0);
  EXPECT_THROW(predict_mu(m, Eigen::MatrixXd::Ones(1, 2)), std::invalid_argument);
}

TEST(VarianceRatio, Examples) {
  const std::vector<double> a{1, -1}, b{2, -2};
  EXPECT_DOUBLE_EQ(estimate_variance_ratio(a, b).value, 0.25);
  EXPECT_DOUBLE_EQ(estimate_variance_ratio(b, b).value, 1.0);
  const std::vector<double> zeros{0, 0, 0};
  EXPECT_THROW(estimate_variance_ratio(a, zeros), NumericalError);
  EXPECT_THROW(estimate_variance_ratio({}, b), std::invalid_argument);
}

TEST(VarianceRatio, PermutationAndScaling) {
  std::vector<double> a{0.3, -1.2, 2.0, 0.7}, b{1.1, -0.4, 0.9};
  const double base = estimate_variance_ratio(a, b).value;
  std::vector<double> ap(a.rbegin(), a.rend()), bp{b[2], b[0], b[1]};
  EXPECT_NEAR(estimate_variance_ratio(ap, bp).value, base, 1e-14);
  for (auto& v : a) v *= 3.0;
  EXPECT_NEAR(estimate_variance_ratio(a, b).value, 9.0 * base, 1e-12);
}
