#pragma once

#include <string>
#include <vector>

#include <algorithm>
#include <cmath>

#include "stcal/dlm.hpp"
#include "stcal/domain.hpp"
#include "stcal/random.hpp"

namespace fixtures {

/// Random stations over a box roughly the size of a Brazilian state.
inline stcal::StationNetwork random_network(int n, std::uint64_t seed, double lat0 = -23.0, double lat1 = -14.0,
                                            double lon0 = -51.0, double lon1 = -40.0) {
  stcal::Random rng(seed);
  std::vector<stcal::Station> s;
  for (int i = 0; i < n; ++i) {
    stcal::Station st;
    st.id = "S" + std::to_string(i);
    st.latitude = lat0 + (lat1 - lat0) * rng.uniform();
    st.longitude = lon0 + (lon1 - lon0) * rng.uniform();
    st.elevation = 300.0 + 900.0 * rng.uniform();
    st.roughness_length = 0.01 + 0.5 * rng.uniform();
    s.push_back(st);
  }
  return stcal::StationNetwork(std::move(s));
}

/// Joint-Gaussian conditioning by explicit inversion: x_a | x_b.
struct Conditional {
  stcal::Vector mean;
  stcal::Matrix cov;
};

inline Conditional condition(const stcal::Vector& mu, const stcal::Matrix& sigma, const std::vector<int>& a,
                             const std::vector<int>& b, const stcal::Vector& xb) {
  const auto na = static_cast<Eigen::Index>(a.size()), nb = static_cast<Eigen::Index>(b.size());
  stcal::Matrix saa(na, na), sab(na, nb), sbb(nb, nb);
  stcal::Vector ma(na), mb(nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    ma(i) = mu(a[i]);
    for (Eigen::Index j = 0; j < na; ++j) saa(i, j) = sigma(a[i], a[j]);
    for (Eigen::Index j = 0; j < nb; ++j) sab(i, j) = sigma(a[i], b[j]);
  }
  for (Eigen::Index i = 0; i < nb; ++i) {
    mb(i) = mu(b[i]);
    for (Eigen::Index j = 0; j < nb; ++j) sbb(i, j) = sigma(b[i], b[j]);
  }
  stcal::Matrix sbb_inv = sbb.inverse();
  return {ma + sab * sbb_inv * (xb - mb), saa - sab * sbb_inv * sab.transpose()};
}

/// Asymptotic Kolmogorov tail P(K > x).
inline double kolmogorov_q(double x) {
  if (x < 0.2) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) s += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * x * x);
  return std::clamp(s, 0.0, 1.0);
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic, with the usual small-sample correction).
inline double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
}

/**
 * Closed-form posterior of a static Bayesian linear model with normal-gamma
 * prior: theta | phi ~ N(m0, (C0 / s0) / phi), phi ~ Gamma(n0/2, d0/2),
 * s0 = d0 / n0, x_t = F_t G^t theta + N(0, I / phi). Returns the posterior
 * mean and Student-t scale of theta_T = G^T theta and its degrees of freedom.
 */
struct ConjugatePosterior {
  stcal::Vector mean;
  stcal::Matrix scale;
  double dof{};
};

inline ConjugatePosterior conjugate_static_posterior(const std::vector<stcal::Matrix>& F, const stcal::Matrix& x,
                                                     const stcal::Matrix& G, const stcal::Vector& m0,
                                                     const stcal::Matrix& C0, double n0, double d0) {
  const auto r = m0.size();
  const double s0 = d0 / n0;
  stcal::Matrix p0 = (C0 / s0).inverse();
  stcal::Matrix prec = p0;
  stcal::Vector b = p0 * m0;
  double xx = 0.0;
  stcal::Matrix Gt = stcal::Matrix::Identity(r, r);
  for (std::size_t t = 0; t < F.size(); ++t) {
    Gt = G * Gt;
    const stcal::Matrix A = F[t] * Gt;
    const stcal::Vector xt = x.row(static_cast<Eigen::Index>(t)).transpose();
    prec += A.transpose() * A;
    b += A.transpose() * xt;
    xx += xt.squaredNorm();
  }
  const stcal::Vector m1 = prec.ldlt().solve(b);
  const double n1 = n0 + static_cast<double>(x.size());
  const double d1 = d0 + xx + m0.dot(p0 * m0) - m1.dot(prec * m1);
  const stcal::Matrix c1 = (d1 / n1) * prec.inverse();
  return {Gt * m1, Gt * c1 * Gt.transpose(), n1};
}

}  // namespace fixtures
