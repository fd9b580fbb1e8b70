#include <gtest/gtest.h>

#include <algorithm>

#include "stcal/mcmc.hpp"

using namespace stcal;

namespace {

// Asymptotic Kolmogorov distribution tail P(K > x).
double kolmogorov_q(double x) {
  if (x < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k < 100; ++k) s += (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
  return std::clamp(2.0 * s, 0.0, 1.0);
}

}  // namespace

TEST(Ram, StandardNormalTarget) {
  Random rng(1);
  RamState st(2, 1.0);
  Vector x = Vector::Zero(2);
  auto logp = [](const Vector& v) { return -0.5 * v.squaredNorm(); };
  double lp = logp(x);
  const int N = 100000;
  Matrix draws(N, 2);
  for (int i = 0; i < N; ++i) {
    auto mv = ram_step(st, x, lp, logp, rng);
    x = mv.point;
    lp = mv.log_target;
    draws.row(i) = x.transpose();
  }
  EXPECT_NEAR(st.acceptance_rate(), 0.234, 0.05);
  Vector mean = draws.colwise().mean();
  Matrix c = (draws.rowwise() - mean.transpose()).transpose() * (draws.rowwise() - mean.transpose()) / (N - 1);
  EXPECT_LT((c - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.1);
  // symmetric target from a symmetric start: mean near zero (effective sample size well above 1e3)
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.1);
}

TEST(Ram, FactorStaysLowerTriangularPositive) {
  Random rng(2);
  RamState st(3, 0.5);
  Vector x = Vector::Zero(3);
  Matrix prec(3, 3);
  prec << 4, 1, 0, 1, 2, 0.5, 0, 0.5, 1;
  auto logp = [&](const Vector& v) { return -0.5 * v.dot(prec * v); };
  double lp = logp(x);
  for (int i = 0; i < 1000000; ++i) {
    auto mv = ram_step(st, x, lp, logp, rng);
    x = mv.point;
    lp = mv.log_target;
    if (i % 50000 == 0 || i == 999999) {
      for (int r = 0; r < 3; ++r) {
        ASSERT_GT(st.S(r, r), 0.0);
        for (int c = r + 1; c < 3; ++c) ASSERT_EQ(st.S(r, c), 0.0);
      }
    }
  }
}

TEST(Ram, LateAdaptationIsFrozen) {
  Random rng(3);
  RamState st(1, 1.0);
  st.iteration = 100000000;
  Matrix before = st.S;
  Vector x = Vector::Zero(1);
  auto logp = [](const Vector& v) { return -0.5 * v.squaredNorm(); };
  ram_step(st, x, logp(x), logp, rng);
  EXPECT_NEAR(st.S(0, 0), before(0, 0), 1e-4);
}

TEST(Ram, NanTargetIsRejected) {
  Random rng(4);
  RamState st(1, 1.0);
  Vector x = Vector::Zero(1);
  auto mv = ram_step(st, x, 0.0, [](const Vector&) { return std::nan(""); }, rng);
  EXPECT_FALSE(mv.accepted);
  EXPECT_EQ(st.nan_targets, 1);
  EXPECT_EQ(mv.point, x);
}

TEST(Ram, KolmogorovSmirnovAgainstTarget) {
  Random rng(5);
  RamState st(1, 1.0);
  Vector x = Vector::Zero(1);
  auto logp = [](const Vector& v) { return -0.5 * v.squaredNorm(); };
  double lp = 0.0;
  const int thin = 25, N = 100000;
  for (int i = 0; i < 2000; ++i) {
    auto mv = ram_step(st, x, lp, logp, rng);
    x = mv.point;
    lp = mv.log_target;
  }
  std::vector<double> s;
  s.reserve(N);
  for (int i = 0; i < N * thin; ++i) {
    auto mv = ram_step(st, x, lp, logp, rng);
    x = mv.point;
    lp = mv.log_target;
    if (i % thin == 0) s.push_back(x(0));
  }
  std::sort(s.begin(), s.end());
  double dmax = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = normal_cdf(s[i]);
    dmax = std::max({dmax, (i + 1.0) / s.size() - f, f - double(i) / s.size()});
  }
  EXPECT_GT(kolmogorov_q(dmax * std::sqrt(double(s.size()))), 0.01);
}

TEST(TruncatedNormal, NoBoundIsPlainNormal) {
  Random rng(6);
  const int N = 100000;
  double s = 0, ss = 0;
  for (int i = 0; i < N; ++i) {
    const double v = sample_truncated_normal(2.0, 1.5, std::numeric_limits<double>::infinity(), rng);
    s += v;
    ss += v * v;
  }
  const double mean = s / N, var = ss / N - mean * mean;
  EXPECT_LT(std::abs(mean - 2.0), 3 * 1.5 / std::sqrt(N));
  EXPECT_LT(std::abs(var - 2.25), 3 * 2.25 * std::sqrt(2.0 / N));
}

TEST(TruncatedNormal, HalfNormalMean) {
  Random rng(7);
  const int N = 100000;
  double s = 0, ss = 0;
  for (int i = 0; i < N; ++i) {
    const double v = sample_truncated_normal(0.0, 1.0, 0.0, rng);
    ASSERT_LE(v, 0.0);
    s += v;
    ss += v * v;
  }
  const double mean = s / N;
  const double sd = std::sqrt(1.0 - 2.0 / kPi);
  EXPECT_NEAR(-std::sqrt(2.0 / kPi), -0.7979, 1e-4);
  EXPECT_LT(std::abs(mean + std::sqrt(2.0 / kPi)), 3 * sd / std::sqrt(N));
}

TEST(TruncatedNormal, DeepTailMatchesMillsRatio) {
  Random rng(8);
  for (double b : {-4.5, -6.0, -8.0}) {
    const double mu = 1.0, sd = 2.0, bound = mu + b * sd;
    const int N = 100000;
    double s = 0, ss = 0;
    for (int i = 0; i < N; ++i) {
      const double v = sample_truncated_normal(mu, sd, bound, rng);
      ASSERT_LE(v, bound);
      s += v;
      ss += v * v;
    }
    // E[Z | Z <= b] = -pdf(b)/cdf(b); Var = 1 - b pdf/cdf - (pdf/cdf)^2
    const double ratio = normal_pdf(b) / normal_cdf(b);
    const double zmean = -ratio, zvar = 1.0 - b * ratio - ratio * ratio;
    const double mean = s / N;
    EXPECT_LT(std::abs(mean - (mu + sd * zmean)), 3 * sd * std::sqrt(zvar / N)) << "b=" << b;
  }
}

TEST(TruncatedNormal, LowerAndIntervalVariants) {
  Random rng(9);
  const int N = 50000;
  double s = 0;
  for (int i = 0; i < N; ++i) {
    const double v = sample_truncated_normal_lower(0.0, 1.0, 0.0, rng);
    ASSERT_GE(v, 0.0);
    s += v;
  }
  EXPECT_LT(std::abs(s / N - std::sqrt(2.0 / kPi)), 3 * std::sqrt(1 - 2 / kPi) / std::sqrt(N));
  for (auto [a, b] : {std::pair{-1.0, 0.5}, {5.0, 5.3}, {6.0, 20.0}, {-7.0, -6.5}, {0.2, 3.0}}) {
    double m = 0;
    for (int i = 0; i < N; ++i) {
      const double v = sample_truncated_normal_interval(0.0, 1.0, a, b, rng);
      ASSERT_GE(v, a);
      ASSERT_LE(v, b);
      m += v;
    }
    // E[Z | a<=Z<=b] = (pdf(a)-pdf(b)) / (cdf(b)-cdf(a)), evaluated on the side with precision
    const double mass = a > 0 ? normal_sf(a) - normal_sf(b) : normal_cdf(b) - normal_cdf(a);
    const double want = (normal_pdf(a) - normal_pdf(b)) / mass;
    EXPECT_LT(std::abs(m / N - want), 3.0 * (b - a) / std::sqrt(12.0 * N) + 1e-3) << a << "," << b;
  }
}

TEST(Augment, DiagonalCovarianceRespectsBound) {
  Random rng(10);
  const int T = 50, n = 3;
  Matrix raw(T, n);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < n; ++i) raw(t, i) = rng.uniform() < 0.3 ? 0.0 : 1.0 + rng.uniform();
  auto obs = ObservationPanel::from_values(std::vector<HourStamp>(T, 0), raw, 0.0);
  Matrix mean = Matrix::Constant(T, n, -1.0), sd = Matrix::Ones(T, n);
  Matrix x = raw;
  const double lower = -2.0;
  LatentGeometry geom(Matrix::Identity(n, n));
  LatentField field{mean, sd, obs, lower};
  for (int sweep = 0; sweep < 20; ++sweep) {
    augment_latents(x, field, geom, rng);
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < n; ++i) {
        if (obs.state(t, i) == CellState::Censored) ASSERT_LE(x(t, i), lower);
        if (obs.state(t, i) == CellState::Observed) ASSERT_EQ(x(t, i), raw(t, i));
      }
  }
}

TEST(Augment, NoFlaggedCellsIsNoOp) {
  Random rng(11);
  Matrix raw = Matrix::Constant(4, 2, 3.0);
  auto obs = ObservationPanel::from_values(std::vector<HourStamp>(4, 0), raw, 0.0);
  Matrix mean = Matrix::Zero(4, 2), sd = Matrix::Ones(4, 2), x = raw;
  LatentGeometry geom(Matrix::Identity(2, 2));
  augment_latents(x, {mean, sd, obs, -1.0}, geom, rng);
  EXPECT_EQ(x, raw);
}

// Bivariate oracle by numerical integration of the truncated conditional.
TEST(Augment, BivariateConditionalMoments) {
  Random rng(12);
  const double rho = 0.9, lower = -0.5, x2 = 0.3;
  Matrix raw(1, 2);
  raw << 0.0, 1.0;  // site 0 censored, site 1 observed
  auto obs = ObservationPanel::from_values({0}, raw, 0.0);
  Matrix h(2, 2);
  h << 1, rho, rho, 1;
  Matrix mean = Matrix::Zero(1, 2), sd = Matrix::Ones(1, 2);
  Matrix x(1, 2);
  x << lower - 1.0, x2;
  LatentGeometry geom(h);
  const int N = 100000;
  double s = 0, ss = 0;
  for (int k = 0; k < N; ++k) {
    augment_latents(x, {mean, sd, obs, lower}, geom, rng);
    s += x(0, 0);
    ss += x(0, 0) * x(0, 0);
  }
  // integrate z * N(z; rho x2, 1 - rho^2) over z <= lower by the trapezoid rule
  const double cm = rho * x2, cs = std::sqrt(1 - rho * rho);
  double z0 = 0, z1 = 0, z2 = 0;
  const int K = 200000;
  const double a = cm - 12 * cs, step = (lower - a) / K;
  for (int k = 0; k <= K; ++k) {
    const double z = a + k * step, w = (k == 0 || k == K) ? 0.5 : 1.0;
    const double p = w * normal_pdf((z - cm) / cs) / cs;
    z0 += p;
    z1 += p * z;
    z2 += p * z * z;
  }
  const double om = z1 / z0, ov = z2 / z0 - om * om;
  const double em = s / N, ev = ss / N - em * em;
  EXPECT_LT(std::abs(em - om), 3 * std::sqrt(ov / N));
  EXPECT_LT(std::abs(ev - ov), 3 * ov * std::sqrt(2.0 / N) * 1.5);
}

TEST(Augment, MissingCellsDrawnFromConditional) {
  Random rng(13);
  const double rho = 0.6;
  Matrix raw(1, 2);
  raw << std::nan(""), 2.0;
  auto obs = ObservationPanel::from_values({0}, raw, 0.0);
  Matrix h(2, 2);
  h << 1, rho, rho, 1;
  Matrix mean(1, 2), sd(1, 2);
  mean << 1.0, 1.5;
  sd << 2.0, 0.5;
  Matrix x = raw;
  x(0, 0) = 0.0;
  LatentGeometry geom(h);
  const int N = 50000;
  double s = 0;
  for (int k = 0; k < N; ++k) {
    augment_latents(x, {mean, sd, obs, -10.0}, geom, rng);
    s += x(0, 0);
  }
  const double want = 1.0 + 2.0 * rho * (2.0 - 1.5) / 0.5;
  const double csd = 2.0 * std::sqrt(1 - rho * rho);
  EXPECT_LT(std::abs(s / N - want), 3 * csd / std::sqrt(N));
}

TEST(Rhat, IdenticalChainsGiveOne) {
  std::vector<double> c = {1, 2, 3, 4, 5, 2, 1};
  EXPECT_EQ(rhat({c, c}), 1.0);
  EXPECT_THROW(rhat({{1, 1, 1}, {1, 1, 1}}), NumericalError);
  EXPECT_THROW(rhat({c}), std::invalid_argument);
}

TEST(Rhat, SameDistributionIsNearOne) {
  Random rng(14);
  std::vector<std::vector<double>> ch(2, std::vector<double>(10000));
  for (auto& c : ch)
    for (auto& v : c) v = rng.normal();
  EXPECT_LT(rhat(ch), 1.05);
}

TEST(Rhat, DisjointMeansAreFlagged) {
  Random rng(15);
  std::vector<std::vector<double>> ch(2, std::vector<double>(1000));
  for (auto& v : ch[0]) v = rng.normal();
  for (auto& v : ch[1]) v = 10.0 + rng.normal();
  EXPECT_GT(rhat(ch), 1.1);
}
