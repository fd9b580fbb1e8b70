#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/linalg.hpp"

namespace stcal {

/// Diagonal jitter used when a correlation matrix fails to factor.
inline constexpr double kCorrelationJitter = 1e-8;

/// Decay rate whose correlation falls to 0.05 at `range` km.
inline double decay_for_practical_range(double range_km) {
  if (!(range_km > 0.0)) throw std::invalid_argument("practical range must be positive");
  return -std::log(0.05) / range_km;
}

/// Exponential correlation exp(-phi d) for a distance matrix.
inline Matrix correlation_matrix(const Matrix& distances, double phi) {
  if (!(phi > 0.0) || !std::isfinite(phi)) throw std::invalid_argument("spatial decay must be positive and finite");
  if (!distances.allFinite()) throw DataError("non-finite distance in correlation matrix");
  Matrix h = (-phi * distances.array()).exp().matrix();
  h.diagonal().setOnes();
  return h;
}

inline Matrix correlation_matrix(const StationNetwork& net, double phi) {
  return correlation_matrix(net.distances(), phi);
}

inline Eigen::LLT<Matrix> factor_correlation(const Matrix& h) {
  return factor_spd(h, kCorrelationJitter, "correlation matrix");
}

/// Diagonal of D_t: sqrt(beta0 + beta1 * S^2) per site.
inline Vector spread_skill_scale(double beta0, double beta1, const Eigen::Ref<const Vector>& ensemble_var) {
  if (beta0 < 0.0 || beta1 < 0.0) throw std::invalid_argument("spread-skill coefficients must be non-negative");
  if ((ensemble_var.array() < 0.0).any()) throw std::invalid_argument("negative ensemble variance");
  return (beta0 + beta1 * ensemble_var.array()).sqrt().matrix();
}

/// sigma^2 H (GOP; DGOP with sigma^2 = 1/phi_t).
inline Matrix assemble_covariance(double sigma2, const Matrix& h) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("variance must be positive");
  return sigma2 * h;
}

/// D H D (SEMOS / STEMOS).
inline Matrix assemble_covariance(const Vector& d, const Matrix& h) {
  if (d.size() != h.rows() || h.rows() != h.cols()) throw std::invalid_argument("covariance dimension mismatch");
  return d.asDiagonal() * h * d.asDiagonal();
}

/// Gaussian conditional of a latent residual field at new sites.
struct KrigingResult {
  Vector mean;
  Matrix cov;
};

/**
 * @brief Simple kriging with unit marginal variance.
 *
 * `h` is the n x n correlation among observed sites, `h0` the n x n0 cross
 * correlation, `h00` the n0 x n0 correlation among targets.
 */
inline KrigingResult krige_unit(const Matrix& h, const Matrix& h0, const Matrix& h00, const Vector& residuals) {
  if (h.rows() != residuals.size() || h0.rows() != h.rows() || h00.rows() != h0.cols()) {
    throw std::invalid_argument("kriging dimension mismatch");
  }
  auto llt = factor_correlation(h);
  Matrix w = llt.solve(h0);  // n x n0
  KrigingResult out;
  out.mean = w.transpose() * residuals;
  out.cov = h00 - h0.transpose() * w;
  symmetrize(out.cov);
  for (Eigen::Index k = 0; k < out.cov.rows(); ++k) out.cov(k, k) = std::max(out.cov(k, k), 0.0);
  return out;
}

/**
 * @brief Krige residuals with covariance sigma^2 * exp(-phi d) to new sites.
 *
 * `targets` holds (lat, lon) pairs. A target on top of a station reproduces
 * that station's residual with zero variance.
 */
inline KrigingResult krige_latent(const StationNetwork& net, const std::vector<std::pair<double, double>>& targets,
                                  double phi, double sigma2, const Vector& residuals) {
  const auto n = static_cast<Eigen::Index>(net.size());
  const auto n0 = static_cast<Eigen::Index>(targets.size());
  Matrix h = correlation_matrix(net, phi);
  Matrix h0(n, n0);
  Matrix h00(n0, n0);
  std::vector<std::pair<double, double>> xy;
  xy.reserve(targets.size());
  for (Eigen::Index k = 0; k < n0; ++k) {
    const auto& [lat, lon] = targets[static_cast<std::size_t>(k)];
    h0.col(k) = (-phi * net.distances_to(lat, lon).array()).exp().matrix();
    xy.push_back(net.project(lat, lon));
  }
  for (Eigen::Index a = 0; a < n0; ++a) {
    for (Eigen::Index b = 0; b < n0; ++b) {
      const auto& p = xy[static_cast<std::size_t>(a)];
      const auto& q = xy[static_cast<std::size_t>(b)];
      h00(a, b) = std::exp(-phi * std::hypot(p.first - q.first, p.second - q.second));
    }
  }
  auto out = krige_unit(h, h0, h00, residuals);
  out.cov *= sigma2;
  return out;
}

}  // namespace stcal
