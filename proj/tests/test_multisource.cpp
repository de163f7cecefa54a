#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

#include "ecborrow/error.hpp"
#include "ecborrow/multisource.hpp"
#include "ecborrow/simulation.hpp"

using namespace ecborrow;

namespace {

EstimateReport report(double tau, double variance) {
  EstimateReport r;
  r.tau_hat = tau;
  r.variance = variance;
  return r;
}

Eigen::MatrixXd random_spd(int k, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(k, k + 2);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k + 2; ++j) a(i, j) = z(rng);
  return a * a.transpose() / (k + 2) + 0.01 * Eigen::MatrixXd::Identity(k, k);
}

PipelineConfig linear_config() {
  PipelineConfig c;
  c.estimators = {kAipw, kAcw, kAcwAlasso};
  c.seed = 3;
  return c;
}

TrialDataset small_trial(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.n_c = 60;
  cfg.n_t = 120;
  cfg.n_e = 160;
  cfg.p = 4;
  cfg.fill_missing_coefficients();
  return generate_dataset(cfg, seed, 0.0).data;
}

// ECs relabelled: first half group 1, second half group 2, or both groups
// holding identical copies.
TrialDataset two_groups(const TrialDataset& d, bool duplicate, double shift_group2 = 0.0) {
  std::vector<SubjectRecord> out;
  std::vector<SubjectRecord> ecs;
  for (const auto& r : d.records()) (r.source == kTrialSource ? out : ecs).push_back(r);
  if (duplicate) {
    for (auto r : ecs) out.push_back(r);
    for (auto r : ecs) {
      r.source = 2;
      r.outcome += shift_group2;
      out.push_back(r);
    }
  } else {
    for (std::size_t i = 0; i < ecs.size(); ++i) {
      auto r = ecs[i];
      r.source = i < ecs.size() / 2 ? 1 : 2;
      if (r.source == 2) r.outcome += shift_group2;
      out.push_back(r);
    }
  }
  return TrialDataset(out, d.covariate_names());
}

}  // namespace

TEST(Combine, Examples) {
  auto p = combine({report(1, 1), report(2, 1)}, Eigen::Matrix2d::Identity());
  EXPECT_NEAR(p.weights(0), 0.5, 1e-15);
  EXPECT_NEAR(p.tau_star, 1.5, 1e-15);
  Eigen::Matrix2d d = Eigen::Matrix2d::Zero();
  d.diagonal() << 1.0, 4.0;
  p = combine({report(1, 1), report(2, 4)}, d);
  EXPECT_NEAR(p.weights(0), 0.8, 1e-12);
  EXPECT_NEAR(p.weights(1), 0.2, 1e-12);
  EXPECT_NEAR(p.variance_star, 0.8, 1e-12);
}

TEST(Combine, OptimalAgainstSimplexLine) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 2 + rep % 3;
    const Eigen::MatrixXd s = random_spd(k, rng);
    std::vector<EstimateReport> reps;
    for (int j = 0; j < k; ++j) reps.push_back(report(j, s(j, j)));
    const auto p = combine(reps, s);
    EXPECT_NEAR(p.weights.sum(), 1.0, 1e-12);
    EXPECT_LE(p.variance_star, s.diagonal().minCoeff() + 1e-12);
    // Any other weights summing to one do no better.
    std::normal_distribution<double> z;
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd w(k);
      for (int j = 0; j < k; ++j) w(j) = z(rng);
      w.array() += (1.0 - w.sum()) / k;
      EXPECT_LE(p.variance_star, w.dot(s * w) + 1e-12);
    }
  }
}

TEST(Combine, PermutationEquivariance) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd s = random_spd(3, rng);
  const auto p = combine({report(0.1, 1), report(0.7, 1), report(-0.2, 1)}, s);
  Eigen::PermutationMatrix<3> perm;
  perm.indices() << 2, 0, 1;
  const Eigen::MatrixXd sp = perm.transpose() * s * perm;
  const std::vector<EstimateReport> rp{report(-0.2, 1), report(0.1, 1), report(0.7, 1)};
  const auto q = combine(rp, sp);
  EXPECT_NEAR(q.tau_star, p.tau_star, 1e-12);
  EXPECT_NEAR(q.weights(0), p.weights(2), 1e-12);
  EXPECT_NEAR(q.weights(1), p.weights(0), 1e-12);
}

TEST(Combine, SingularCovariance) {
  const Eigen::Matrix2d s = Eigen::Matrix2d::Ones();
  const auto p = combine({report(1, 1), report(1, 1)}, s);
  EXPECT_TRUE(p.regularized);
  EXPECT_NEAR(p.weights(0), 0.5, 1e-9);
  CombineOptions strict;
  strict.regularize = false;
  EXPECT_THROW(combine({report(1, 1), report(1, 1)}, s, strict), NumericalError);
}

TEST(Combine, NegativeWeightsFlagged) {
  Eigen::Matrix2d s;
  s << 1.0, 1.5, 1.5, 4.0;
  const auto p = combine({report(0, 1), report(1, 4)}, s);
  EXPECT_TRUE(p.negative_weights);
  EXPECT_NEAR(p.weights.sum(), 1.0, 1e-12);
}

TEST(Covariance, CrossProductOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  const std::size_t n = 25;
  std::vector<Eigen::VectorXd> psi(3, Eigen::VectorXd(n));
  for (auto& v : psi)
    for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = z(rng);
  const auto s = estimate_covariance(psi, n);
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < 3; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += psi[j](static_cast<Eigen::Index>(i)) * psi[k](static_cast<Eigen::Index>(i));
      EXPECT_NEAR(s(j, k), acc / n, 1e-12);
    }
    EXPECT_NEAR(s(j, j), eif_variance(psi[j], n), 1e-12);
  }
}

TEST(Covariance, SharedTrialSupportOnly) {
  // Rows 0-1 trial, 2-3 group 1, 4-5 group 2.
  const std::vector<std::size_t> rows1{0, 1, 2, 3}, rows2{0, 1, 4, 5};
  const Eigen::Vector4d a(1.0, -2.0, 0.5, 0.5), b(3.0, 1.0, -1.0, 2.0);
  const auto ea = extend_influence(a, rows1, 6), eb = extend_influence(b, rows2, 6);
  const auto s = estimate_covariance({ea, eb}, 6);
  const double scale = 6.0 / 4.0;
  EXPECT_NEAR(s(0, 1), scale * scale * (1.0 * 3.0 + -2.0 * 1.0) / 6.0, 1e-12);
  EXPECT_NEAR(s(0, 0) / 6.0, a.squaredNorm() / 16.0, 1e-12);
}

TEST(Pooled, SingleGroupEqualsSingleSource) {
  const auto d = small_trial(11);
  const auto cfg = linear_config();
  const auto single = run_pipeline(d, cfg);
  std::vector<GroupEstimate> groups;
  const auto pooled = estimate_pooled(d, cfg, kAcwAlasso, &groups);
  ASSERT_EQ(groups.size(), 1u);
  const auto* s = single.find(kAcwAlasso);
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(pooled.tau_star, s->tau_hat);
  EXPECT_EQ(pooled.variance_star, s->variance);
  EXPECT_EQ(pooled.ci_low, s->ci_low);
  EXPECT_EQ(pooled.ci_high, s->ci_high);
  for (const auto& name : cfg.estimators) {
    EXPECT_EQ(groups[0].result.find(name)->tau_hat, single.find(name)->tau_hat);
    EXPECT_EQ(groups[0].result.find(name)->variance, single.find(name)->variance);
  }
}

TEST(Pooled, IdenticalGroupsSplitEvenly) {
  const auto d = two_groups(small_trial(12), true);
  std::vector<GroupEstimate> groups;
  const auto p = estimate_pooled(d, linear_config(), kAcwAlasso, &groups);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(p.per_group[0].tau_hat, p.per_group[1].tau_hat);
  EXPECT_NEAR(p.weights(0), 0.5, 1e-6);
  EXPECT_NEAR(p.weights(1), 0.5, 1e-6);
  EXPECT_LE(p.variance_star, p.covariance.diagonal().minCoeff() + 1e-15);
  for (int k = 0; k < 2; ++k)
    EXPECT_NEAR(p.covariance(k, k), p.per_group[static_cast<std::size_t>(k)].variance, 1e-14);
  const auto j = to_json(p);
  EXPECT_EQ(j.at("per_group").size(), 2u);
  EXPECT_EQ(j.at("per_group")[1].at("group"), 2);
}

TEST(Pooled, FullyBiasedGroupFallsBackToAipw) {
  const auto d = two_groups(small_trial(13), false, 50.0);
  std::vector<GroupEstimate> groups;
  estimate_pooled(d, linear_config(), kAcwAlasso, &groups);
  const auto& g2 = groups[1].result;
  EXPECT_TRUE(g2.find(kAcwAlasso)->bypassed);
  EXPECT_EQ(g2.find(kAcwAlasso)->tau_hat, g2.find(kAipw)->tau_hat);
}

TEST(Pooled, EmptyGroupRejected) {
  const auto d = small_trial(14);
  EXPECT_THROW(estimate_per_group(d, 7, linear_config()), DataError);
}
