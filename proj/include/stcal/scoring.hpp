#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "stcal/errors.hpp"
#include "stcal/linalg.hpp"
#include "stcal/random.hpp"
#include "stcal/timeutil.hpp"

namespace stcal {

/// Pairwise summation; order-stable and accurate.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 16) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const auto half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace detail {

inline void check_aligned(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("score inputs are not aligned");
}

}  // namespace detail

struct ErrorPair {
  double mae{};
  double rmse{};
};

/// MAE and RMSE over cases with a non-NaN actual.
inline ErrorPair mae_rmse(std::span<const double> actual, std::span<const double> forecast) {
  detail::check_aligned(actual, forecast);
  std::vector<double> abs_err, sq_err;
  for (std::size_t k = 0; k < actual.size(); ++k) {
    if (std::isnan(actual[k])) continue;
    const double e = forecast[k] - actual[k];
    abs_err.push_back(std::abs(e));
    sq_err.push_back(e * e);
  }
  if (abs_err.empty()) throw std::invalid_argument("no overlapping cases to score");
  const double m = static_cast<double>(abs_err.size());
  return {pairwise_sum(abs_err) / m, std::sqrt(pairwise_sum(sq_err) / m)};
}

/// Willmott's index of agreement.
inline double index_of_agreement(std::span<const double> actual, std::span<const double> forecast) {
  detail::check_aligned(actual, forecast);
  std::vector<double> y, f;
  for (std::size_t k = 0; k < actual.size(); ++k) {
    if (std::isnan(actual[k])) continue;
    y.push_back(actual[k]);
    f.push_back(forecast[k]);
  }
  if (y.empty()) throw std::invalid_argument("no overlapping cases to score");
  const double ybar = pairwise_sum(y) / static_cast<double>(y.size());
  std::vector<double> num(y.size()), den(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    num[k] = (y[k] - f[k]) * (y[k] - f[k]);
    const double a = std::abs(f[k] - ybar) + std::abs(y[k] - ybar);
    den[k] = a * a;
  }
  const double dsum = pairwise_sum(den);
  if (!(dsum > 0.0)) throw std::invalid_argument("index of agreement undefined: all values equal");
  return 1.0 - pairwise_sum(num) / dsum;
}

/// Mean interval score of central (1 - alpha) intervals.
inline double interval_score(std::span<const double> actual, std::span<const double> lo, std::span<const double> hi,
                             double alpha = 0.1) {
  detail::check_aligned(actual, lo);
  detail::check_aligned(actual, hi);
  std::vector<double> s;
  for (std::size_t k = 0; k < actual.size(); ++k) {
    if (lo[k] > hi[k]) throw std::invalid_argument("interval bounds are crossed");
    if (std::isnan(actual[k])) continue;
    double v = hi[k] - lo[k];
    if (actual[k] < lo[k]) v += 2.0 / alpha * (lo[k] - actual[k]);
    if (actual[k] > hi[k]) v += 2.0 / alpha * (actual[k] - hi[k]);
    s.push_back(v);
  }
  if (s.empty()) throw std::invalid_argument("no overlapping cases to score");
  return pairwise_sum(s) / static_cast<double>(s.size());
}

struct DicResult {
  double dic{};
  double p_d{};
};

inline DicResult dic(const Vector& loglik_draws, double loglik_at_estimate) {
  if (loglik_draws.size() < 2) throw std::invalid_argument("DIC needs at least two draws");
  if (!loglik_draws.allFinite() || !std::isfinite(loglik_at_estimate)) {
    throw NumericalError("non-finite log-likelihood in DIC");
  }
  std::vector<double> v(loglik_draws.data(), loglik_draws.data() + loglik_draws.size());
  const double mean = pairwise_sum(v) / static_cast<double>(v.size());
  DicResult r;
  r.p_d = 2.0 * loglik_at_estimate - 2.0 * mean;
  r.dic = -2.0 * mean + r.p_d;
  return r;
}

/// log CPO per column of an M x n matrix of log-likelihoods.
inline Vector log_cpo(const Matrix& log_lik) {
  const auto m = log_lik.rows();
  if (m < 1) throw std::invalid_argument("CPO needs at least one draw");
  Vector out(log_lik.cols());
  for (Eigen::Index i = 0; i < log_lik.cols(); ++i) {
    const double mx = (-log_lik.col(i)).maxCoeff();
    const double s = (-log_lik.col(i).array() - mx).exp().sum();
    out(i) = std::log(static_cast<double>(m)) - (mx + std::log(s));
  }
  return out;
}

/// LPML = (1/n) sum_i log CPO_i from log-likelihoods.
inline double lpml_from_log(const Matrix& log_lik) {
  if (!log_lik.allFinite()) throw NumericalError("non-finite log-likelihood in LPML");
  return log_cpo(log_lik).mean();
}

/// LPML from strictly positive likelihood values.
inline double lpml(const Matrix& lik) {
  if ((lik.array() <= 0.0).any()) throw std::invalid_argument("LPML needs strictly positive likelihoods");
  return lpml_from_log(lik.array().log().matrix());
}

/**
 * @brief Rank histogram (k + 1 bins) of actuals among k members per case.
 *
 * Ties between the actual and members are broken uniformly at random.
 */
inline std::vector<long> rank_histogram(std::span<const double> actual, const Matrix& members, Random& rng) {
  if (members.cols() < 1) throw std::invalid_argument("rank histogram needs k >= 1 members");
  if (static_cast<Eigen::Index>(actual.size()) != members.rows()) throw std::invalid_argument("rank inputs not aligned");
  std::vector<long> counts(static_cast<std::size_t>(members.cols() + 1), 0);
  for (std::size_t c = 0; c < actual.size(); ++c) {
    if (std::isnan(actual[c])) continue;
    long below = 0, ties = 0;
    for (Eigen::Index j = 0; j < members.cols(); ++j) {
      const double v = members(static_cast<Eigen::Index>(c), j);
      if (v < actual[c]) ++below;
      else if (v == actual[c]) ++ties;
    }
    long rank = below;
    if (ties > 0) rank += static_cast<long>(std::floor(rng.uniform() * static_cast<double>(ties + 1)));
    ++counts[static_cast<std::size_t>(std::min<long>(rank, members.cols()))];
  }
  return counts;
}

/// Chi-square uniformity p-value for histogram counts.
inline double uniformity_pvalue(const std::vector<long>& counts) {
  double total = 0.0;
  for (long c : counts) total += static_cast<double>(c);
  if (counts.size() < 2 || total <= 0.0) throw std::invalid_argument("empty histogram");
  const double expected = total / static_cast<double>(counts.size());
  double chi2 = 0.0;
  for (long c : counts) chi2 += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return boost::math::gamma_q(0.5 * static_cast<double>(counts.size() - 1), 0.5 * chi2);
}

/**
 * @brief Split of RMSE^2 into amplitude and phase errors.
 *
 * rmse^2 = bias^2 + (sd_f - sd_y)^2 + 2 sd_f sd_y (1 - r), population sds.
 */
struct RmseDecomposition {
  double bias{};
  double sd_forecast{};
  double sd_actual{};
  double correlation{};
  double amplitude{};
  double phase{};
  double mse{};

  double amplitude_share() const { return mse > 0.0 ? amplitude / mse : 0.0; }
  double phase_share() const { return mse > 0.0 ? phase / mse : 0.0; }
};

inline RmseDecomposition rmse_decomposition(std::span<const double> actual, std::span<const double> forecast) {
  detail::check_aligned(actual, forecast);
  std::vector<double> y, f;
  for (std::size_t k = 0; k < actual.size(); ++k) {
    if (std::isnan(actual[k])) continue;
    y.push_back(actual[k]);
    f.push_back(forecast[k]);
  }
  if (y.size() < 2) throw std::invalid_argument("RMSE decomposition needs at least two cases");
  const double m = static_cast<double>(y.size());
  const double my = pairwise_sum(y) / m, mf = pairwise_sum(f) / m;
  std::vector<double> vy(y.size()), vf(y.size()), cv(y.size()), se(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    vy[k] = (y[k] - my) * (y[k] - my);
    vf[k] = (f[k] - mf) * (f[k] - mf);
    cv[k] = (y[k] - my) * (f[k] - mf);
    se[k] = (f[k] - y[k]) * (f[k] - y[k]);
  }
  RmseDecomposition d;
  d.sd_actual = std::sqrt(pairwise_sum(vy) / m);
  d.sd_forecast = std::sqrt(pairwise_sum(vf) / m);
  if (!(d.sd_actual > 0.0) || !(d.sd_forecast > 0.0)) throw std::invalid_argument("zero-variance series");
  d.bias = mf - my;
  d.correlation = pairwise_sum(cv) / m / (d.sd_actual * d.sd_forecast);
  d.amplitude = d.bias * d.bias + (d.sd_forecast - d.sd_actual) * (d.sd_forecast - d.sd_actual);
  d.phase = 2.0 * d.sd_forecast * d.sd_actual * (1.0 - d.correlation);
  d.mse = pairwise_sum(se) / m;
  return d;
}

// ---------------------------------------------------------------------------
// Aggregated reports
// ---------------------------------------------------------------------------

/// One scored (site, hour) forecast.
struct ScoredCase {
  HourStamp time{};
  HourStamp origin{};
  std::string station;
  int horizon{};
  double actual{std::numeric_limits<double>::quiet_NaN()};
  double median{};
  double lo{};
  double hi{};
  std::vector<double> members;  // predictive members for the rank histogram
};

struct ScoreReport {
  std::string label;
  std::size_t cases{};
  double mae{};
  double rmse{};
  double d{};
  double interval_score{};
  std::vector<long> rank_histogram;
  double rank_pvalue{std::numeric_limits<double>::quiet_NaN()};
  RmseDecomposition decomposition;
};

inline ScoreReport score_cases(const std::vector<const ScoredCase*>& cases, const std::string& label, Random& rng,
                               double alpha = 0.1) {
  std::vector<double> y, med, lo, hi;
  std::size_t k = 0;
  for (auto* c : cases) {
    if (std::isnan(c->actual)) continue;
    y.push_back(c->actual);
    med.push_back(c->median);
    lo.push_back(c->lo);
    hi.push_back(c->hi);
    if (!c->members.empty()) k = c->members.size();
  }
  ScoreReport r;
  r.label = label;
  r.cases = y.size();
  if (y.empty()) return r;
  auto e = mae_rmse(y, med);
  r.mae = e.mae;
  r.rmse = e.rmse;
  r.d = index_of_agreement(y, med);
  r.interval_score = interval_score(y, lo, hi, alpha);
  if (y.size() >= 2) {
    try {
      r.decomposition = rmse_decomposition(y, med);
    } catch (const std::invalid_argument&) {
    }
  }
  if (k > 0) {
    Matrix m(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(k));
    std::size_t row = 0;
    for (auto* c : cases) {
      if (std::isnan(c->actual)) continue;
      if (c->members.size() != k) throw std::invalid_argument("inconsistent member count across cases");
      for (std::size_t j = 0; j < k; ++j) m(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = c->members[j];
      ++row;
    }
    r.rank_histogram = rank_histogram(y, m, rng);
    r.rank_pvalue = uniformity_pvalue(r.rank_histogram);
  }
  return r;
}

/// Overall report followed by summer, fall, winter and spring.
inline std::vector<ScoreReport> score_by_season(const std::vector<ScoredCase>& cases, std::uint64_t seed,
                                                double alpha = 0.1) {
  Random rng(seed);
  std::vector<ScoreReport> out;
  std::vector<const ScoredCase*> all;
  for (const auto& c : cases) all.push_back(&c);
  out.push_back(score_cases(all, "overall", rng, alpha));
  for (auto s : {Season::Summer, Season::Fall, Season::Winter, Season::Spring}) {
    std::vector<const ScoredCase*> sub;
    for (const auto& c : cases)
      if (season_of(c.time) == s) sub.push_back(&c);
    out.push_back(score_cases(sub, season_name(s), rng, alpha));
  }
  return out;
}

}  // namespace stcal
