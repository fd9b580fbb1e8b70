#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/linalg.hpp"
#include "stcal/random.hpp"

namespace stcal {

// ---------------------------------------------------------------------------
// Robust adaptive Metropolis
// ---------------------------------------------------------------------------

struct RamState {
  Matrix S;  // lower triangular, positive diagonal
  double target_acceptance{0.234};
  double gamma{0.66};
  long iteration{0};
  long accepted{0};
  long nan_targets{0};

  RamState() = default;
  RamState(Eigen::Index dim, double initial_scale, double target = 0.234, double gamma_adapt = 0.66)
      : S(initial_scale * Matrix::Identity(dim, dim)), target_acceptance(target), gamma(gamma_adapt) {}

  double acceptance_rate() const { return iteration > 0 ? static_cast<double>(accepted) / iteration : 0.0; }
};

struct RamMove {
  Vector point;
  double log_target{};
  bool accepted{false};
};

/**
 * @brief One RAM step from `current` (with cached target value `current_lp`).
 *
 * A NaN target is treated as a rejection and counted in `nan_targets`.
 */
template <class LogTarget>
RamMove ram_step(RamState& state, const Vector& current, double current_lp, LogTarget&& log_target, Random& rng) {
  const auto d = current.size();
  Vector u(d);
  for (Eigen::Index i = 0; i < d; ++i) u(i) = rng.normal();
  Vector proposal = current + state.S * u;
  const double lp = log_target(static_cast<const Vector&>(proposal));
  double alpha = 0.0;
  if (std::isnan(lp)) {
    ++state.nan_targets;
  } else if (lp > -std::numeric_limits<double>::infinity()) {
    alpha = std::min(1.0, std::exp(lp - current_lp));
  }
  RamMove out{current, current_lp, false};
  if (rng.uniform() < alpha) {
    out = {proposal, lp, true};
    ++state.accepted;
  }
  ++state.iteration;
  const double eta = std::pow(static_cast<double>(state.iteration), -state.gamma);
  const double un = u.squaredNorm();
  if (un > 0.0) {
    Vector su = state.S * u;
    Matrix m = state.S * state.S.transpose() + (eta * (alpha - state.target_acceptance) / un) * su * su.transpose();
    symmetrize(m);
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() == Eigen::Success) state.S = llt.matrixL();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Truncated normal
// ---------------------------------------------------------------------------

namespace detail {

// Standard normal restricted to [a, inf) with a > 0 far in the tail (Robert 1995).
inline double tail_normal(double a, Random& rng) {
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a + rng.exponential() / alpha;
    if (std::log(rng.uniform()) <= -0.5 * (z - alpha) * (z - alpha)) return z;
  }
}

// Standard normal restricted to [a, b], a > 4, via uniform or exponential proposals.
inline double tail_interval(double a, double b, Random& rng) {
  const double alpha = 0.5 * (a + std::sqrt(a * a + 4.0));
  if (b - a < 1.0 / alpha) {
    for (;;) {
      const double z = a + (b - a) * rng.uniform();
      if (std::log(rng.uniform()) <= 0.5 * (a * a - z * z)) return z;
    }
  }
  for (;;) {
    const double z = tail_normal(a, rng);
    if (z <= b) return z;
  }
}

inline constexpr double kTailSwitch = 4.0;

// Standard normal restricted to (-inf, b].
inline double std_upper(double b, Random& rng) {
  if (b == std::numeric_limits<double>::infinity()) return rng.normal();
  if (b < -kTailSwitch) return -tail_normal(-b, rng);
  const double p = rng.uniform() * normal_cdf(b);
  return std::min(normal_quantile(p), b);
}

// Standard normal restricted to [a, b].
inline double std_interval(double a, double b, Random& rng) {
  if (a > kTailSwitch) return tail_interval(a, b, rng);
  if (b < -kTailSwitch) return -tail_interval(-b, -a, rng);
  if (a >= 0.0) {
    // upper-tail form keeps precision for positive bounds
    const double sa = normal_sf(a), sb = normal_sf(b);
    const double p = sa - rng.uniform() * (sa - sb);
    return std::clamp(-normal_quantile(p), a, b);
  }
  const double fa = normal_cdf(a), fb = normal_cdf(b);
  const double p = fa + rng.uniform() * (fb - fa);
  return std::clamp(normal_quantile(p), a, b);
}

}  // namespace detail

/// Draw from N(mean, sd^2) restricted to (-inf, upper].
inline double sample_truncated_normal(double mean, double sd, double upper, Random& rng) {
  if (!(sd > 0.0)) throw std::invalid_argument("truncated normal needs sd > 0");
  return mean + sd * detail::std_upper((upper - mean) / sd, rng);
}

/// Draw from N(mean, sd^2) restricted to [lower, inf).
inline double sample_truncated_normal_lower(double mean, double sd, double lower, Random& rng) {
  if (!(sd > 0.0)) throw std::invalid_argument("truncated normal needs sd > 0");
  return mean - sd * detail::std_upper((mean - lower) / sd, rng);
}

/// Draw from N(mean, sd^2) restricted to [lower, upper].
inline double sample_truncated_normal_interval(double mean, double sd, double lower, double upper, Random& rng) {
  if (!(sd > 0.0)) throw std::invalid_argument("truncated normal needs sd > 0");
  if (!(lower < upper)) throw std::invalid_argument("truncation interval is empty");
  if (lower == -std::numeric_limits<double>::infinity()) return sample_truncated_normal(mean, sd, upper, rng);
  if (upper == std::numeric_limits<double>::infinity()) return sample_truncated_normal_lower(mean, sd, lower, rng);
  return mean + sd * detail::std_interval((lower - mean) / sd, (upper - mean) / sd, rng);
}

// ---------------------------------------------------------------------------
// Latent field geometry
// ---------------------------------------------------------------------------

/**
 * @brief Spatial correlation H with cached inverses of its sub-blocks.
 *
 * The latent covariance at time t is diag(sd_t) H diag(sd_t). Sub-blocks are
 * keyed by the set of non-missing sites.
 */
class LatentGeometry {
 public:
  explicit LatentGeometry(Matrix h) : h_(std::move(h)) {}

  const Matrix& correlation() const { return h_; }
  Eigen::Index sites() const { return h_.rows(); }

  /// Inverse of H restricted to `keep` (sorted site indices).
  const Matrix& inverse(const std::vector<Eigen::Index>& keep) {
    std::string key(static_cast<std::size_t>(sites()), '0');
    for (auto i : keep) key[static_cast<std::size_t>(i)] = '1';
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto k = static_cast<Eigen::Index>(keep.size());
    Matrix sub(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = 0; b < k; ++b) sub(a, b) = h_(keep[a], keep[b]);
    auto llt = factor_spd(sub, 1e-8, "spatial correlation");
    Matrix inv = llt.solve(Matrix::Identity(k, k));
    symmetrize(inv);
    return cache_.emplace(std::move(key), std::move(inv)).first->second;
  }

 private:
  Matrix h_;
  std::map<std::string, Matrix> cache_;
};

/// Inputs shared by augmentation and the conditional likelihood at one iteration.
struct LatentField {
  const Matrix& mean;  // T x n, F_t theta_t
  const Matrix& sd;    // T x n, per-site marginal sd
  const ObservationPanel& obs;
  double lower_threshold;  // latent censor bound
};

namespace detail {

inline std::vector<Eigen::Index> present_sites(const ObservationPanel& obs, Eigen::Index t) {
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(obs.sites()));
  for (Eigen::Index i = 0; i < obs.sites(); ++i)
    if (obs.state(t, i) != CellState::Missing) keep.push_back(i);
  return keep;
}

}  // namespace detail

/**
 * @brief One Gibbs sweep over censored and missing latent cells.
 *
 * Censored cells are drawn one at a time (ascending site index) from their
 * full conditional given the other non-missing sites, truncated above at the
 * latent threshold. Missing cells are then drawn jointly given all
 * non-missing sites; they do not enter any other conditional.
 */
inline void augment_latents(Matrix& x, const LatentField& field, LatentGeometry& geom, Random& rng) {
  const auto& obs = field.obs;
  const auto n = obs.sites();
  const double bound = field.lower_threshold;
  const Matrix& h = geom.correlation();
  for (Eigen::Index t = 0; t < obs.hours(); ++t) {
    bool any_censored = false, any_missing = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      any_censored |= obs.state(t, i) == CellState::Censored;
      any_missing |= obs.state(t, i) == CellState::Missing;
    }
    if (!any_censored && !any_missing) continue;
    const auto keep = detail::present_sites(obs, t);
    const auto k = static_cast<Eigen::Index>(keep.size());
    Vector z(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      const auto i = keep[a];
      z(a) = (x(t, i) - field.mean(t, i)) / field.sd(t, i);
    }
    if (any_censored) {
      if (!std::isfinite(bound)) throw NumericalError("censored cells with an unbounded latent threshold");
      const Matrix& inv = geom.inverse(keep);
      for (Eigen::Index a = 0; a < k; ++a) {
        const auto i = keep[a];
        if (obs.state(t, i) != CellState::Censored) continue;
        const double prec = inv(a, a);
        const double cond_mean = -(inv.row(a).dot(z) - prec * z(a)) / prec;
        const double cond_sd = 1.0 / std::sqrt(prec);
        const double zb = (bound - field.mean(t, i)) / field.sd(t, i);
        z(a) = sample_truncated_normal(cond_mean, cond_sd, zb, rng);
        x(t, i) = field.mean(t, i) + field.sd(t, i) * z(a);
      }
    }
    if (any_missing) {
      std::vector<Eigen::Index> miss;
      for (Eigen::Index i = 0; i < n; ++i)
        if (obs.state(t, i) == CellState::Missing) miss.push_back(i);
      const auto nm = static_cast<Eigen::Index>(miss.size());
      Vector zm(nm);
      if (k == 0) {
        Matrix hmm(nm, nm);
        for (Eigen::Index a = 0; a < nm; ++a)
          for (Eigen::Index b = 0; b < nm; ++b) hmm(a, b) = h(miss[a], miss[b]);
        zm = sample_mvn(Vector::Zero(nm), hmm, rng);
      } else {
        const Matrix& inv = geom.inverse(keep);
        Matrix hmk(nm, k), hmm(nm, nm);
        for (Eigen::Index a = 0; a < nm; ++a) {
          for (Eigen::Index b = 0; b < k; ++b) hmk(a, b) = h(miss[a], keep[b]);
          for (Eigen::Index b = 0; b < nm; ++b) hmm(a, b) = h(miss[a], miss[b]);
        }
        Matrix w = hmk * inv;
        Matrix cov = hmm - w * hmk.transpose();
        symmetrize(cov);
        zm = sample_mvn(w * z, cov, rng);
      }
      for (Eigen::Index a = 0; a < nm; ++a) {
        const auto i = miss[a];
        x(t, i) = field.mean(t, i) + field.sd(t, i) * zm(a);
      }
    }
  }
}

/**
 * @brief Per-site log density of each non-missing latent given the others at
 * the same hour, summed over time (latent scale, no Jacobian).
 */
inline Vector site_conditional_loglik(const Matrix& x, const LatentField& field, LatentGeometry& geom) {
  const auto& obs = field.obs;
  Vector out = Vector::Zero(obs.sites());
  for (Eigen::Index t = 0; t < obs.hours(); ++t) {
    const auto keep = detail::present_sites(obs, t);
    const auto k = static_cast<Eigen::Index>(keep.size());
    if (k == 0) continue;
    const Matrix& inv = geom.inverse(keep);
    Vector z(k);
    for (Eigen::Index a = 0; a < k; ++a) z(a) = (x(t, keep[a]) - field.mean(t, keep[a])) / field.sd(t, keep[a]);
    Vector lz = inv * z;
    for (Eigen::Index a = 0; a < k; ++a) {
      const double p = inv(a, a);
      out(keep[a]) += 0.5 * std::log(p) - std::log(field.sd(t, keep[a])) - 0.5 * kLogTwoPi - 0.5 * lz(a) * lz(a) / p;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Gelman-Rubin potential scale reduction for k >= 2 equal-length chains.
inline double rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("rhat needs at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 2) throw std::invalid_argument("rhat needs at least two draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("rhat chains must have equal length");
  const double m = static_cast<double>(chains.size());
  const double nn = static_cast<double>(n);
  std::vector<double> means;
  double within = 0.0;
  for (const auto& c : chains) {
    double mu = 0.0;
    for (double v : c) mu += v;
    mu /= nn;
    double ss = 0.0;
    for (double v : c) ss += (v - mu) * (v - mu);
    within += ss / (nn - 1.0);
    means.push_back(mu);
  }
  within /= m;
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= m;
  double between = 0.0;
  for (double mu : means) between += (mu - grand) * (mu - grand);
  between *= nn / (m - 1.0);
  if (!(within > 0.0)) throw NumericalError("rhat: zero within-chain variance");
  if (between == 0.0) return 1.0;
  const double var_plus = (nn - 1.0) / nn * within + between / nn;
  return std::sqrt(var_plus / within);
}

}  // namespace stcal
