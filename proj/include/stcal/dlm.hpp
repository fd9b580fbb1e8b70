#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/linalg.hpp"
#include "stcal/random.hpp"

namespace stcal {

inline constexpr Eigen::Index kStateDim = 8;

// ---------------------------------------------------------------------------
// Design and evolution
// ---------------------------------------------------------------------------

/// One site's regressors: (1, ensemble mean, z0, elevation, lat, lon, 1, 0).
inline void fill_design_row(Eigen::Ref<Vector> row, double ens_mean, const std::array<double, kNumCovariates>& z) {
  row(0) = 1.0;
  row(1) = ens_mean;
  row(2) = z[kRoughness];
  row(3) = z[kElevation];
  row(4) = z[kLatitude];
  row(5) = z[kLongitude];
  row(6) = 1.0;
  row(7) = 0.0;
}

/// n x 8 design at hour t (row i = site i).
inline Matrix build_design(const ForecastPanel& panel, const StationNetwork& net, Eigen::Index t) {
  const auto n = static_cast<Eigen::Index>(net.size());
  if (panel.n_sites != n) throw DataError("forecast panel and station network disagree on site count");
  if (t < 0 || t >= panel.hours()) throw DataError("design time index out of range");
  Matrix f(n, kStateDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto z = net.standardized(static_cast<std::size_t>(i));
    if (std::isnan(z[kRoughness])) {
      throw DataError("station '" + net.station(static_cast<std::size_t>(i)).id + "' has no roughness length");
    }
    Vector row(kStateDim);
    fill_design_row(row, panel.ensemble_mean(t, i), z);
    f.row(i) = row.transpose();
  }
  return f;
}

inline std::vector<Matrix> build_designs(const ForecastPanel& panel, const StationNetwork& net) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(panel.hours()));
  for (Eigen::Index t = 0; t < panel.hours(); ++t) out.push_back(build_design(panel, net, t));
  return out;
}

/// 2x2 rotation by 2 pi / period.
inline Matrix harmonic_block(int period) {
  const double w = 2.0 * kPi / static_cast<double>(period);
  Matrix g(2, 2);
  g << std::cos(w), std::sin(w), -std::sin(w), std::cos(w);
  return g;
}

/// blockdiag(I_6, harmonic rotation).
inline Matrix evolution_matrix(int period = 24) {
  Matrix g = Matrix::Identity(kStateDim, kStateDim);
  g.bottomRightCorner(2, 2) = harmonic_block(period);
  return g;
}

/**
 * @brief Evolution of the state and how its prior scale is inflated.
 *
 * Components are grouped into blocks; block b is discounted by
 * `block_discount[b]`. When `evolution_cov` is set, R_t = G C G' + W_t is used
 * instead (W_t indexed by t = 1..T at position t-1).
 */
struct DlmSpec {
  Matrix G;
  std::vector<int> block_of;
  std::vector<double> block_discount;
  double variance_discount{1.0};
  const std::vector<Matrix>* evolution_cov{nullptr};

  Eigen::Index dim() const { return G.rows(); }
};

/// Standard spec: components 1-6 discounted by delta_T, 7-8 by delta_S.
inline DlmSpec make_dlm_spec(const Discounts& d, int period = 24) {
  DlmSpec s;
  s.G = evolution_matrix(period);
  s.block_of = {0, 0, 0, 0, 0, 0, 1, 1};
  s.block_discount = {d.trend, d.seasonal};
  s.variance_discount = d.variance;
  return s;
}

/// Discount-implied evolution scale W given P = G C G'.
inline Matrix discount_evolution(const DlmSpec& spec, const Matrix& p) {
  const auto r = p.rows();
  Matrix w = Matrix::Zero(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) {
      const int bi = spec.block_of[static_cast<std::size_t>(i)];
      if (bi != spec.block_of[static_cast<std::size_t>(j)]) continue;
      const double delta = spec.block_discount[static_cast<std::size_t>(bi)];
      w(i, j) = (1.0 / delta - 1.0) * p(i, j);
    }
  }
  return w;
}

/// R_t from C_{t-1}.
inline Matrix evolve_scale(const DlmSpec& spec, const Matrix& c, Eigen::Index t) {
  Matrix p = spec.G * c * spec.G.transpose();
  if (spec.evolution_cov) {
    p += (*spec.evolution_cov)[static_cast<std::size_t>(t - 1)];
  } else {
    p += discount_evolution(spec, p);
  }
  symmetrize(p);
  return p;
}

// ---------------------------------------------------------------------------
// Forward filtering
// ---------------------------------------------------------------------------

/// Prior on theta_0 (and on the precision for the unknown-precision filter).
struct DlmPrior {
  Vector m0;
  Matrix C0;
  double n0{2.0};
  double d0{0.2};
};

inline DlmPrior default_prior(const Priors& p, Eigen::Index r = kStateDim) {
  return {Vector::Zero(r), p.theta0_scale * Matrix::Identity(r, r), p.n0, p.d0};
}

/**
 * @brief Output of a forward pass, indexed by t = 0..T.
 *
 * a/R at index 0 are unused. For the unknown-precision variant C and R are
 * Student-t scale matrices carrying s_t; n, d, kappa and kappa_bar are filled.
 */
struct FilterResult {
  bool unknown_precision{false};
  std::vector<Vector> a, m;
  std::vector<Matrix> R, C;
  std::vector<double> n, d, kappa, kappa_bar;
  double log_likelihood{0.0};

  Eigen::Index hours() const { return static_cast<Eigen::Index>(m.size()) - 1; }
  double s(Eigen::Index t) const { return d[static_cast<std::size_t>(t)] / n[static_cast<std::size_t>(t)]; }
};

/// Observations fed to a filter. `active` (T*n, nonzero = use) may be empty for "all".
struct DlmData {
  const std::vector<Matrix>& F;
  const Matrix& x;
  const std::vector<char>& active;

  Eigen::Index hours() const { return x.rows(); }
  Eigen::Index sites() const { return x.cols(); }
  bool is_active(Eigen::Index t, Eigen::Index i) const {
    return active.empty() || active[static_cast<std::size_t>(t * sites() + i)] != 0;
  }
};

namespace detail {

inline double log_mvt_density(const Eigen::LLT<Matrix>& q_llt, const Vector& e, double nu) {
  const double k = static_cast<double>(e.size());
  const Vector z = q_llt.matrixL().solve(e);
  return std::lgamma(0.5 * (nu + k)) - std::lgamma(0.5 * nu) - 0.5 * k * std::log(nu * kPi) -
         0.5 * log_det(q_llt) - 0.5 * (nu + k) * std::log1p(z.squaredNorm() / nu);
}

inline double log_mvn_density(const Eigen::LLT<Matrix>& q_llt, const Vector& e) {
  const Vector z = q_llt.matrixL().solve(e);
  return -0.5 * static_cast<double>(e.size()) * kLogTwoPi - 0.5 * log_det(q_llt) - 0.5 * z.squaredNorm();
}

/// Gather active rows for one step. Returns the active site indices.
inline std::vector<Eigen::Index> active_sites(const DlmData& data, Eigen::Index t) {
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(data.sites()));
  for (Eigen::Index i = 0; i < data.sites(); ++i)
    if (data.is_active(t, i)) idx.push_back(i);
  return idx;
}

/// Observation-noise kernel for the active sites (scale * diag(D) H diag(D)).
inline Matrix observation_block(const Matrix& h, const Matrix* scale, Eigen::Index t,
                                const std::vector<Eigen::Index>& idx) {
  const auto k = static_cast<Eigen::Index>(idx.size());
  Matrix v(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      double val = h(idx[a], idx[b]);
      if (scale) val *= (*scale)(t, idx[a]) * (*scale)(t, idx[b]);
      v(a, b) = val;
    }
  }
  return v;
}

}  // namespace detail

/**
 * @brief Discounted normal-gamma filter with unknown, slowly varying precision.
 *
 * Observation noise is H / phi_t; H is n x n and fixed.
 */
inline FilterResult forward_filter_unknown_precision(const DlmData& data, const DlmSpec& spec, const DlmPrior& prior,
                                                     const Matrix& h) {
  const auto T = data.hours();
  const auto r = spec.dim();
  const double dv = spec.variance_discount;
  FilterResult out;
  out.unknown_precision = true;
  out.a.resize(static_cast<std::size_t>(T + 1));
  out.R.resize(static_cast<std::size_t>(T + 1));
  out.m.resize(static_cast<std::size_t>(T + 1));
  out.C.resize(static_cast<std::size_t>(T + 1));
  out.n.resize(static_cast<std::size_t>(T + 1));
  out.d.resize(static_cast<std::size_t>(T + 1));
  out.kappa.assign(static_cast<std::size_t>(T + 1), 0.0);
  out.kappa_bar.assign(static_cast<std::size_t>(T + 1), 0.0);
  out.m[0] = prior.m0;
  out.C[0] = prior.C0;
  out.n[0] = prior.n0;
  out.d[0] = prior.d0;
  out.a[0] = Vector::Zero(r);
  out.R[0] = Matrix::Zero(r, r);

  for (Eigen::Index t = 1; t <= T; ++t) {
    const auto tp = static_cast<std::size_t>(t - 1);
    const auto tc = static_cast<std::size_t>(t);
    Vector a = spec.G * out.m[tp];
    Matrix R = evolve_scale(spec, out.C[tp], t);
    const double n_prev = out.n[tp];
    const double s_prev = out.d[tp] / n_prev;
    const double n_star = dv * n_prev;
    const double d_star = dv * out.d[tp];
    out.kappa[tc] = 0.5 * dv * n_prev;
    out.kappa_bar[tc] = 0.5 * (1.0 - dv) * n_prev;

    const auto idx = detail::active_sites(data, t - 1);
    const auto k = static_cast<Eigen::Index>(idx.size());
    if (k == 0) {
      out.m[tc] = a;
      out.C[tc] = R;
      out.n[tc] = n_star;
      out.d[tc] = d_star;
    } else {
      const Matrix& Ft = data.F[static_cast<std::size_t>(t - 1)];
      Matrix Fk(k, r);
      Vector xk(k);
      for (Eigen::Index j = 0; j < k; ++j) {
        Fk.row(j) = Ft.row(idx[j]);
        xk(j) = data.x(t - 1, idx[j]);
      }
      Matrix K = Fk * R;  // k x r
      Matrix Q = K * Fk.transpose() + s_prev * detail::observation_block(h, nullptr, 0, idx);
      auto llt = factor_spd(Q, 1e-10, "one-step forecast covariance");
      Vector e = xk - Fk * a;
      Vector qe = llt.solve(e);
      const double quad = e.dot(qe);
      out.log_likelihood += detail::log_mvt_density(llt, e, n_star);
      const double n_new = n_star + static_cast<double>(k);
      const double d_new = d_star + s_prev * quad;
      const double s_new = d_new / n_new;
      Matrix M = llt.matrixL().solve(K);  // k x r
      Matrix C = R - M.transpose() * M;
      C *= s_new / s_prev;
      symmetrize(C);
      out.m[tc] = a + K.transpose() * qe;
      out.C[tc] = std::move(C);
      out.n[tc] = n_new;
      out.d[tc] = d_new;
    }
    out.a[tc] = std::move(a);
    out.R[tc] = std::move(R);
  }
  return out;
}

/**
 * @brief Discounted Kalman filter with known observation covariance.
 *
 * V_t = diag(scale_t) H diag(scale_t); pass `scale == nullptr` for V_t = H.
 */
inline FilterResult forward_filter_known_covariance(const DlmData& data, const DlmSpec& spec, const DlmPrior& prior,
                                                    const Matrix& h, const Matrix* scale) {
  const auto T = data.hours();
  const auto r = spec.dim();
  FilterResult out;
  out.a.resize(static_cast<std::size_t>(T + 1));
  out.R.resize(static_cast<std::size_t>(T + 1));
  out.m.resize(static_cast<std::size_t>(T + 1));
  out.C.resize(static_cast<std::size_t>(T + 1));
  out.m[0] = prior.m0;
  out.C[0] = prior.C0;
  out.a[0] = Vector::Zero(r);
  out.R[0] = Matrix::Zero(r, r);

  for (Eigen::Index t = 1; t <= T; ++t) {
    const auto tp = static_cast<std::size_t>(t - 1);
    const auto tc = static_cast<std::size_t>(t);
    Vector a = spec.G * out.m[tp];
    Matrix R = evolve_scale(spec, out.C[tp], t);
    const auto idx = detail::active_sites(data, t - 1);
    const auto k = static_cast<Eigen::Index>(idx.size());
    if (k == 0) {
      out.m[tc] = a;
      out.C[tc] = R;
    } else {
      const Matrix& Ft = data.F[static_cast<std::size_t>(t - 1)];
      Matrix Fk(k, r);
      Vector xk(k);
      for (Eigen::Index j = 0; j < k; ++j) {
        Fk.row(j) = Ft.row(idx[j]);
        xk(j) = data.x(t - 1, idx[j]);
      }
      Matrix K = Fk * R;
      Matrix Q = K * Fk.transpose() + detail::observation_block(h, scale, t - 1, idx);
      auto llt = factor_spd(Q, 1e-10, "one-step forecast covariance");
      Vector e = xk - Fk * a;
      Vector qe = llt.solve(e);
      out.log_likelihood += detail::log_mvn_density(llt, e);
      Matrix M = llt.matrixL().solve(K);
      Matrix C = R - M.transpose() * M;
      symmetrize(C);
      out.m[tc] = a + K.transpose() * qe;
      out.C[tc] = std::move(C);
    }
    out.a[tc] = std::move(a);
    out.R[tc] = std::move(R);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward sampling
// ---------------------------------------------------------------------------

/// One joint draw of theta_{0:T} (rows) and, for the unknown-precision variant, phi_{0:T}.
struct BackwardDraw {
  Matrix theta;     // (T+1) x r
  Vector precision; // T+1, empty for the known-covariance variant
};

/// Precision path phi_{0:T} from the beta-gamma bridge.
inline Vector sample_precision_path(const FilterResult& f, double variance_discount, Random& rng) {
  const auto T = f.hours();
  Vector phi(T + 1);
  phi(T) = rng.gamma(0.5 * f.n[static_cast<std::size_t>(T)], 0.5 * f.d[static_cast<std::size_t>(T)]);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto tt = static_cast<std::size_t>(t);
    double eta = 0.0;
    if (variance_discount < 1.0) eta = rng.gamma(0.5 * (1.0 - variance_discount) * f.n[tt], 0.5 * f.d[tt]);
    phi(t) = variance_discount * phi(t + 1) + eta;
  }
  return phi;
}

inline BackwardDraw backward_sample(const FilterResult& f, const DlmSpec& spec, Random& rng) {
  const auto T = f.hours();
  const auto r = spec.dim();
  BackwardDraw out;
  out.theta.resize(T + 1, r);
  if (f.unknown_precision) out.precision = sample_precision_path(f, spec.variance_discount, rng);

  auto scale_at = [&](Eigen::Index t) {
    return f.unknown_precision ? 1.0 / (f.s(t) * out.precision(t)) : 1.0;
  };
  const auto tT = static_cast<std::size_t>(T);
  out.theta.row(T) = sample_mvn(f.m[tT], f.C[tT] * scale_at(T), rng).transpose();
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto tt = static_cast<std::size_t>(t);
    const auto tn = static_cast<std::size_t>(t + 1);
    const Matrix& Ct = f.C[tt];
    const Matrix& Rn = f.R[tn];
    auto rl = Eigen::LDLT<Matrix>(Rn);
    Matrix B = rl.solve(spec.G * Ct).transpose();  // C G' R^{-1}
    Vector diff = out.theta.row(t + 1).transpose() - f.a[tn];
    Vector mean = f.m[tt] + B * diff;
    Matrix cov = Ct - B * Rn * B.transpose();
    symmetrize(cov);
    out.theta.row(t) = sample_mvn(mean, cov * scale_at(t), rng).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forecasting
// ---------------------------------------------------------------------------

/// Mean and covariance of the state k steps after the filtered end state.
struct StateMoments {
  Vector mean;
  Matrix cov;
};

/**
 * @brief k-step state prior with constant evolution W = W_{T+1}.
 *
 * k = 0 returns (m_T, C_T) untouched.
 */
inline StateMoments propagate_state(const DlmSpec& spec, const Vector& m, const Matrix& c, int k) {
  StateMoments s{m, c};
  if (k <= 0) return s;
  const Matrix w = discount_evolution(spec, spec.G * c * spec.G.transpose());
  for (int h = 0; h < k; ++h) {
    s.mean = spec.G * s.mean;
    s.cov = spec.G * s.cov * spec.G.transpose() + w;
    symmetrize(s.cov);
  }
  return s;
}

/// Latent predictive mean/covariance at one future step given future design F (n x r).
inline StateMoments forecast_moments(const DlmSpec& spec, const Vector& m, const Matrix& c, const Matrix& F,
                                     const Matrix& obs_cov, int k) {
  if (k < 1) throw std::invalid_argument("forecast horizon must be >= 1");
  auto s = propagate_state(spec, m, c, k);
  StateMoments out;
  out.mean = F * s.mean;
  out.cov = F * s.cov * F.transpose() + obs_cov;
  symmetrize(out.cov);
  return out;
}

/**
 * @brief Per-draw state at the end of the fitted window, used to forecast.
 *
 * `c_unit` is the state covariance per unit precision (C_T / s_T for the
 * unknown-precision variant, C_T otherwise).
 */
struct EndState {
  Vector theta;
  Matrix c_unit;
  double dof{0.0};
  double precision{1.0};
};

/**
 * @brief Evolve one posterior state draw through k future steps.
 *
 * Calls `emit(h, theta, precision)` for h = 1..k. theta_{T+h} = G theta + w
 * with w ~ N(0, W/phi); the precision follows the discounted beta-gamma
 * evolution (held fixed when the variance discount is 1).
 */
template <class Emit>
void propagate_draw(const DlmSpec& spec, const EndState& end, int k, bool unknown_precision, Random& rng, Emit&& emit) {
  if (k <= 0) return;
  const Matrix w = discount_evolution(spec, spec.G * end.c_unit * spec.G.transpose());
  const Matrix root = psd_sqrt(w);
  const bool has_noise = w.cwiseAbs().maxCoeff() > 0.0;
  Vector theta = end.theta;
  double phi = end.precision;
  double dof = end.dof;
  const double dv = spec.variance_discount;
  for (int h = 1; h <= k; ++h) {
    if (unknown_precision && dv < 1.0) {
      const double g = rng.beta(0.5 * dv * dof, 0.5 * (1.0 - dv) * dof);
      phi = g * phi / dv;
      dof *= dv;
    }
    theta = spec.G * theta;
    if (has_noise) {
      Vector z(theta.size());
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
      const double sc = unknown_precision ? 1.0 / std::sqrt(phi) : 1.0;
      theta += sc * (root * z);
    }
    emit(h, static_cast<const Vector&>(theta), phi);
  }
}

}  // namespace stcal
