#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "fixtures.hpp"
#include "stcal/spatial.hpp"

using namespace stcal;

TEST(Correlation, DiagonalAndDecay) {
  auto net = fixtures::random_network(6, 1);
  Matrix h = correlation_matrix(net, 0.01);
  for (Eigen::Index i = 0; i < h.rows(); ++i) EXPECT_EQ(h(i, i), 1.0);
  EXPECT_NEAR(h(0, 1), std::exp(-0.01 * net.distances()(0, 1)), 1e-15);
  EXPECT_TRUE(h.isApprox(h.transpose(), 0.0));
  EXPECT_THROW(correlation_matrix(net, 0.0), std::invalid_argument);
}

TEST(Correlation, PracticalRangeDecay) {
  auto net = fixtures::random_network(10, 2);
  const double maxd = net.max_distance();
  const double phi = decay_for_practical_range(maxd / 2.0);
  EXPECT_NEAR(phi, -std::log(0.05) * 2.0 / maxd, 1e-15);
  Matrix d(2, 2);
  d << 0.0, maxd / 2.0, maxd / 2.0, 0.0;
  EXPECT_NEAR(correlation_matrix(d, phi)(0, 1), 0.05, 1e-12);
}

TEST(Correlation, LargeDecayIsIdentity) {
  auto net = fixtures::random_network(8, 3);
  Matrix h = correlation_matrix(net, 1e6);
  EXPECT_TRUE(h.isApprox(Matrix::Identity(8, 8), 1e-12));
}

TEST(Correlation, PositiveDefiniteOnLargeNetwork) {
  auto net = fixtures::random_network(68, 4);
  for (double phi : {1e-4, 1e-3, 0.005, 0.02, 0.1, 1.0}) {
    Matrix h = correlation_matrix(net, phi);
    auto llt = factor_correlation(h);
    Matrix L = llt.matrixL();
    Matrix recon = L * L.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> es(recon);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0) << "phi=" << phi;
  }
}

TEST(SpreadSkill, Examples) {
  Vector s2(2);
  s2 << 4.0, 9.0;
  Vector d = spread_skill_scale(1.0, 0.0, s2);
  EXPECT_EQ(d(0), 1.0);
  EXPECT_EQ(d(1), 1.0);
  d = spread_skill_scale(0.0, 1.0, s2);
  EXPECT_EQ(d(0), 2.0);
  EXPECT_EQ(d(1), 3.0);
  Vector one = Vector::Ones(1);
  EXPECT_NEAR(spread_skill_scale(0.5, 2.0, one)(0), std::sqrt(2.5), 1e-15);
  EXPECT_THROW(spread_skill_scale(0.5, 2.0, -one), std::invalid_argument);
  EXPECT_THROW(spread_skill_scale(-0.5, 2.0, one), std::invalid_argument);
}

TEST(Covariance, Assemble) {
  Matrix eye = Matrix::Identity(3, 3);
  EXPECT_TRUE(assemble_covariance(2.0, eye).isApprox(2.0 * eye, 0.0));
  auto net = fixtures::random_network(4, 5);
  Matrix h = correlation_matrix(net, 0.01);
  Vector s2 = Vector::Constant(4, 3.7);
  EXPECT_EQ(assemble_covariance(spread_skill_scale(1.0, 0.0, s2), h), h);
  Matrix h2(2, 2);
  h2 << 1.0, 0.5, 0.5, 1.0;
  EXPECT_NEAR(assemble_covariance(1.0 / 4.0, h2)(0, 1), 0.125, 1e-15);
}

TEST(Covariance, SpreadSkillWithoutSlopeIsScaledCorrelation) {
  auto net = fixtures::random_network(7, 6);
  Matrix h = correlation_matrix(net, 0.004);
  Random rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const double b0 = 0.1 + 3.0 * rng.uniform();
    Vector s2 = Vector::Constant(7, 0.0);
    for (Eigen::Index i = 0; i < 7; ++i) s2(i) = 5.0 * rng.uniform();
    Matrix a = assemble_covariance(spread_skill_scale(b0, 0.0, s2), h);
    Matrix b = assemble_covariance(b0, h);
    for (Eigen::Index i = 0; i < 7; ++i)
      for (Eigen::Index j = 0; j < 7; ++j) EXPECT_DOUBLE_EQ(a(i, j), b(i, j));
  }
}

TEST(Kriging, ExactAtStation) {
  auto net = fixtures::random_network(5, 7);
  Vector eps(5);
  eps << 0.3, -1.2, 0.8, 0.1, -0.4;
  const auto& s = net.station(2);
  auto k = krige_latent(net, {{s.latitude, s.longitude}}, 0.01, 2.0, eps);
  EXPECT_NEAR(k.mean(0), eps(2), 1e-6);
  EXPECT_NEAR(k.cov(0, 0), 0.0, 1e-6);
}

TEST(Kriging, FarAwayIsUnconditional) {
  auto net = fixtures::random_network(5, 8);
  Vector eps = Vector::LinSpaced(5, -1.0, 1.0);
  auto k = krige_latent(net, {{60.0, 100.0}}, 0.05, 1.7, eps);
  EXPECT_NEAR(k.mean(0), 0.0, 1e-12);
  EXPECT_NEAR(k.cov(0, 0), 1.7, 1e-12);
}

TEST(Kriging, MatchesJointConditioning) {
  Random rng(9);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 2 + rep % 4, n0 = 1 + rep % 3;
    auto net = fixtures::random_network(n, 100 + rep, -20.0, -18.0, -45.0, -43.0);
    std::vector<std::pair<double, double>> targets;
    for (int k = 0; k < n0; ++k) targets.emplace_back(-20.0 + 2.0 * rng.uniform(), -45.0 + 2.0 * rng.uniform());
    const double phi = 0.005 + 0.02 * rng.uniform();
    const double sigma2 = 0.5 + rng.uniform();
    Vector eps(n);
    for (int i = 0; i < n; ++i) eps(i) = rng.normal();

    // joint covariance over stations then targets, from planar coordinates
    std::vector<std::pair<double, double>> xy;
    for (int i = 0; i < n; ++i) xy.emplace_back(net.coordinates()(i, 0), net.coordinates()(i, 1));
    for (auto& t : targets) xy.push_back(net.project(t.first, t.second));
    const int N = n + n0;
    Matrix sig(N, N);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b)
        sig(a, b) = sigma2 * std::exp(-phi * std::hypot(xy[a].first - xy[b].first, xy[a].second - xy[b].second));
    std::vector<int> ia, ib;
    for (int k = 0; k < n0; ++k) ia.push_back(n + k);
    for (int i = 0; i < n; ++i) ib.push_back(i);
    auto oracle = fixtures::condition(Vector::Zero(N), sig, ia, ib, eps);
    auto got = krige_latent(net, targets, phi, sigma2, eps);
    EXPECT_LT((got.mean - oracle.mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((got.cov - oracle.cov).cwiseAbs().maxCoeff(), 1e-8);
  }
}
