#include <gtest/gtest.h>

#include <cmath>

#include "stcal/transform.hpp"

using namespace stcal;

TEST(BoxCox, Examples) {
  EXPECT_NEAR(box_cox(4.0, 0.5), 2.0, 1e-14);
  EXPECT_NEAR(box_cox(std::exp(1.0), 0.0), 1.0, 1e-14);
  EXPECT_NEAR(box_cox(7.3, 1.0), 6.3, 1e-14);
  EXPECT_THROW(box_cox(0.0, 0.5), std::invalid_argument);
  EXPECT_THROW(box_cox(-1.0, 0.5), std::invalid_argument);
}

TEST(BoxCox, InverseExamples) {
  EXPECT_NEAR(*box_cox_inverse(2.0, 0.5), 4.0, 1e-14);
  EXPECT_FALSE(box_cox_inverse(-3.0, 0.5).has_value());
  for (double lam : {-1.0, 0.0, 0.5, 2.0}) EXPECT_NEAR(*box_cox_inverse(0.0, lam), 1.0, 1e-15);
}

TEST(BoxCox, CensoredThreshold) {
  EXPECT_NEAR(censored_threshold(1.0, 0.5), 0.0, 1e-15);
  EXPECT_NEAR(censored_threshold(0.5, 0.0), std::log(0.5), 1e-15);
  EXPECT_NEAR(censored_threshold(0.0, 0.5), -2.0, 1e-15);
  // the c = 0 value is the limit of BC(c, lambda) as c -> 0+
  EXPECT_NEAR(censored_threshold(1e-8, 0.5), -2.0, 1e-3);
  EXPECT_TRUE(std::isinf(censored_threshold(0.0, 0.0)));
  EXPECT_TRUE(std::isinf(censored_threshold(0.0, -0.5)));
}

TEST(BoxCox, JacobianTerm) {
  Matrix v(1, 3);
  v << 2.0, 4.0, 0.0;
  auto obs = ObservationPanel::from_values({0}, v, 0.0);
  EXPECT_NEAR(jacobian_log_term(obs, 0.5), -0.5 * (std::log(2.0) + std::log(4.0)), 1e-12);
  EXPECT_NEAR(jacobian_log_term(obs, 0.5), -1.0397, 1e-4);
  EXPECT_EQ(jacobian_log_term(obs, 1.0), 0.0);
  Matrix z = Matrix::Zero(2, 2);
  auto all_censored = ObservationPanel::from_values({0, 1}, z, 0.0);
  EXPECT_EQ(jacobian_log_term(all_censored, 0.3), 0.0);
}

TEST(BoxCox, RoundTrip) {
  for (double lam : {-1.0, -0.5, 0.0, 0.3, 0.5, 1.0, 2.0}) {
    for (double y = 0.01; y <= 100.0; y *= 1.37) {
      auto back = box_cox_inverse(box_cox(y, lam), lam);
      ASSERT_TRUE(back.has_value());
      EXPECT_NEAR(*back / y, 1.0, 1e-10) << "y=" << y << " lambda=" << lam;
    }
  }
}

TEST(BoxCox, ContinuousAtZero) {
  for (double y = 0.1; y <= 50.0; y += 0.7) EXPECT_LT(std::abs(box_cox(y, 1e-8) - std::log(y)), 1e-6);
}

TEST(BoxCox, Monotone) {
  for (double lam : {-1.0, 0.0, 0.5, 2.0}) {
    double prev = -std::numeric_limits<double>::infinity();
    for (double y = 0.05; y < 60.0; y += 0.05) {
      const double v = box_cox(y, lam);
      EXPECT_GT(v, prev);
      prev = v;
    }
  }
}

TEST(BoxCox, CensorMassMatchesNormalProbability) {
  Random rng(11);
  const double lam = 0.5, c = 0.0, mu = -1.2, sd = 1.0;
  const double lower = censored_threshold(c, lam);
  const int n = 100000;
  int at_c = 0;
  for (int k = 0; k < n; ++k) at_c += observe(rng.normal(mu, sd), lam, c) == c;
  const double p = normal_cdf((lower - mu) / sd);
  const double se = std::sqrt(p * (1 - p) / n);
  EXPECT_LT(std::abs(at_c / double(n) - p), 3 * se);
}

TEST(BoxCox, CensorMassPositiveThreshold) {
  Random rng(12);
  const double lam = 0.3, c = 0.5, mu = 0.0, sd = 1.5;
  const double lower = censored_threshold(c, lam);
  const int n = 100000;
  int at_c = 0;
  for (int k = 0; k < n; ++k) {
    const double y = observe(rng.normal(mu, sd), lam, c);
    ASSERT_GE(y, c);
    at_c += y == c;
  }
  const double p = normal_cdf((lower - mu) / sd);
  EXPECT_LT(std::abs(at_c / double(n) - p), 3 * std::sqrt(p * (1 - p) / n));
}
