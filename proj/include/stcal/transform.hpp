#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include "stcal/domain.hpp"
#include "stcal/errors.hpp"

namespace stcal {

/// |lambda| below this is treated as the log case.
inline constexpr double kLambdaZero = 1e-12;

/// Box-Cox transform of a positive value.
inline double box_cox(double y, double lambda) {
  if (!(y > 0.0)) throw std::invalid_argument("box_cox needs y > 0");
  if (std::abs(lambda) < kLambdaZero) return std::log(y);
  // expm1 keeps the small-lambda branch accurate
  return std::expm1(lambda * std::log(y)) / lambda;
}

/// Inverse Box-Cox; nullopt when lambda*x + 1 <= 0 (below the support).
inline std::optional<double> box_cox_inverse(double x, double lambda) {
  if (std::abs(lambda) < kLambdaZero) return std::exp(x);
  const double base = lambda * x + 1.0;
  if (!(base > 0.0)) return std::nullopt;
  return std::exp(std::log1p(lambda * x) / lambda);
}

/**
 * @brief Latent-scale censor threshold BC(c, lambda).
 *
 * For c = 0 this is the c -> 0+ limit: -1/lambda when lambda > 0 and -inf
 * otherwise.
 */
inline double censored_threshold(double c, double lambda) {
  if (c < 0.0) throw std::invalid_argument("censor threshold must be >= 0");
  if (c == 0.0) {
    if (lambda > kLambdaZero) return -1.0 / lambda;
    return -std::numeric_limits<double>::infinity();
  }
  return box_cox(c, lambda);
}

/// Map a latent value to the observed scale, censoring at c.
inline double observe(double x, double lambda, double c) {
  auto y = box_cox_inverse(x, lambda);
  if (!y || *y <= c) return c;
  return *y;
}

/// Sum of log y over observed (uncensored, non-missing) cells.
inline double sum_log_observed(const ObservationPanel& obs) {
  double s = 0.0;
  for (Eigen::Index t = 0; t < obs.hours(); ++t)
    for (Eigen::Index i = 0; i < obs.sites(); ++i)
      if (obs.state(t, i) == CellState::Observed) s += std::log(obs.values(t, i));
  return s;
}

/// (lambda - 1) * sum of log y over observed cells.
inline double jacobian_log_term(const ObservationPanel& obs, double lambda) {
  return (lambda - 1.0) * sum_log_observed(obs);
}

}  // namespace stcal
