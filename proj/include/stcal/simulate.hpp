#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stcal/dlm.hpp"
#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/random.hpp"
#include "stcal/spatial.hpp"
#include "stcal/transform.hpp"

namespace stcal {

/// Jittered rectangular layout of n stations, `width_km` across, centred on (lat, lon).
inline StationNetwork simulate_network(int n, double width_km, Random& rng, double center_lat = -19.0,
                                       double center_lon = -44.0) {
  if (n < 2) throw std::invalid_argument("simulated network needs at least 2 sites");
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  const double dx = cols > 1 ? width_km / (cols - 1) : 0.0;
  const double dy = rows > 1 ? width_km / (rows - 1) : 0.0;
  const double km_lat = kEarthRadiusKm * kPi / 180.0;
  const double km_lon = km_lat * std::cos(center_lat * kPi / 180.0);
  std::vector<Station> out;
  for (int k = 0; k < n; ++k) {
    const int r = k / cols, c = k % cols;
    const double x = c * dx - width_km / 2 + 0.2 * dx * (rng.uniform() - 0.5);
    const double y = r * dy - width_km / 2 + 0.2 * dy * (rng.uniform() - 0.5);
    Station s;
    char id[16];
    std::snprintf(id, sizeof id, "SIM%02d", k + 1);
    s.id = id;
    s.latitude = center_lat + y / km_lat;
    s.longitude = center_lon + x / km_lon;
    s.elevation = 400.0 + 900.0 * rng.uniform();
    s.roughness_length = std::exp(std::log(0.1) + 0.8 * rng.normal());
    out.push_back(std::move(s));
  }
  return StationNetwork(std::move(out));
}

/**
 * @brief Ensemble forecasts: a smooth "nature" wind field, a per-member bias
 * and AR(1) member errors that are independent across sites.
 */
struct EnsembleSpec {
  int members{10};
  double level{6.5};        // m/s, mean of the nature field
  double diurnal{1.2};      // m/s amplitude of the daily cycle
  double spatial_sd{0.8};   // m/s site offsets
  double nature_ar{0.95};
  double nature_sd{0.35};   // innovation sd of the nature anomaly
  double member_bias_sd{0.4};
  double member_ar{0.8};
  double member_sd{0.45};   // innovation sd of member errors

  bool operator==(const EnsembleSpec&) const = default;
};

inline ForecastPanel simulate_ensemble(const StationNetwork& net, const std::vector<HourStamp>& times,
                                       const EnsembleSpec& e, Random& rng) {
  const auto n = static_cast<Eigen::Index>(net.size());
  const auto T = static_cast<Eigen::Index>(times.size());
  const auto m = static_cast<Eigen::Index>(e.members);
  Vector offset(n), anomaly = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) offset(i) = e.spatial_sd * rng.normal();
  Vector bias(m);
  for (Eigen::Index k = 0; k < m; ++k) bias(k) = e.member_bias_sd * rng.normal();
  Matrix err = Matrix::Zero(n, m);
  std::vector<double> members(static_cast<std::size_t>(T * n * m));
  for (Eigen::Index t = 0; t < T; ++t) {
    const double cycle = e.diurnal * std::sin(2.0 * kPi * hour_of_day(times[static_cast<std::size_t>(t)]) / 24.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      anomaly(i) = e.nature_ar * anomaly(i) + e.nature_sd * rng.normal();
      const double nature = e.level + offset(i) + cycle + anomaly(i);
      for (Eigen::Index k = 0; k < m; ++k) {
        err(i, k) = e.member_ar * err(i, k) + e.member_sd * rng.normal();
        members[static_cast<std::size_t>((t * n + i) * m + k)] = std::max(0.0, nature + bias(k) + err(i, k));
      }
    }
  }
  return ForecastPanel::from_members(times, n, m, std::move(members));
}

/// Rotation by 2 pi / period for a non-integer period.
inline Matrix harmonic_block_real(double period) {
  const double w = 2.0 * kPi / period;
  Matrix r(2, 2);
  r << std::cos(w), std::sin(w), -std::sin(w), std::cos(w);
  return r;
}

/**
 * @brief Parameters of a generating model.
 *
 * Coefficients are theta_t = G^t mean + e_t with e_t = rho G e_{t-1} + w,
 * w ~ N(0, diag(evolution_var)); rho is set separately for the trend
 * (components 1-6) and harmonic (7-8) blocks, rho = 1 being a random walk.
 * A nonzero `seasonal_beat` (hours) also turns the harmonic deviation by
 * 2 pi / beat per hour, i.e. a daily cycle whose phase drifts slowly.
 * Observation noise is sigma2 I (MOS), H / phi_t (DGOP) or D_t H D_t (STEMOS).
 *
 * With `discount_driven` the state instead follows the discount model itself:
 * w_t ~ N(0, W_t / phi_t) where W_t comes from the unit-scale covariance
 * recursion started at C_0 = I (it does not depend on the data).
 */
struct GeneratorSpec {
  ModelKind kind{ModelKind::MOS};
  double lambda{0.5};
  double censor{0.0};
  double sigma2{0.25};
  std::optional<double> phi_decay;  // default: practical range at half the maximum distance
  double beta0{0.3};
  double beta1{0.5};
  Vector theta_mean;
  Vector evolution_var;
  double trend_reversion{1.0};
  double seasonal_reversion{1.0};
  double seasonal_beat{0.0};
  Vector initial_deviation;  // e_0, zero when empty
  double variance_discount{0.99};
  double precision_dof{200.0};
  int harmonic_period{24};
  bool discount_driven{false};
  Discounts discounts{};
};

inline Vector default_theta_mean() {
  Vector th(kStateDim);
  th << -0.45, 0.3, 0.15, -0.1, 0.1, 0.05, 0.35, 0.2;
  return th;
}

/// Everything used to generate a dataset, for recovery checks and truth.json.
struct SimulationTruth {
  GeneratorSpec spec;
  double phi_decay{};
  Matrix theta;      // (T+1) x 8
  Vector precision;  // T+1 (DGOP), else empty
  Matrix latent;     // T x n
};

struct SimulatedData {
  StationNetwork network;
  ForecastPanel forecasts;
  ObservationPanel observations;
  SimulationTruth truth;
};

/// Hourly timestamps starting at 2020-01-01T00Z.
inline std::vector<HourStamp> simulation_times(int T, HourStamp start = parse_timestamp("2020-01-01T00:00:00Z")) {
  std::vector<HourStamp> t(static_cast<std::size_t>(T));
  for (int k = 0; k < T; ++k) t[static_cast<std::size_t>(k)] = start + k;
  return t;
}

/// Draw observations for a fixed network and ensemble from a generating model.
inline SimulatedData simulate_observations(const StationNetwork& net, const ForecastPanel& fc, const GeneratorSpec& g,
                                           Random& rng) {
  if (g.theta_mean.size() != kStateDim || g.evolution_var.size() != kStateDim) {
    throw std::invalid_argument("generator needs 8 coefficient means and evolution variances");
  }
  auto unit = [](double r) { return r > 0.0 && r <= 1.0; };
  if (!unit(g.trend_reversion) || !unit(g.seasonal_reversion)) throw std::invalid_argument("reversion must lie in (0, 1]");
  if ((g.evolution_var.array() < 0.0).any() || g.sigma2 < 0.0) throw std::invalid_argument("negative variance");
  const auto n = static_cast<Eigen::Index>(net.size());
  const auto T = fc.hours();
  SimulationTruth tr;
  tr.spec = g;
  tr.phi_decay = g.phi_decay ? *g.phi_decay : decay_for_practical_range(net.max_distance() / 2.0);
  const Matrix h = is_spatial(g.kind) ? correlation_matrix(net, tr.phi_decay) : Matrix::Identity(n, n);
  const Matrix hroot = psd_sqrt(h);
  const Matrix g2 = harmonic_block(g.harmonic_period);
  const Vector wsd = g.evolution_var.cwiseSqrt();

  tr.theta.resize(T + 1, kStateDim);
  tr.theta.row(0) = g.theta_mean.transpose();
  const bool dgop = g.kind == ModelKind::DGOP;
  if (dgop) {
    tr.precision.resize(T + 1);
    tr.precision(0) = 1.0 / g.sigma2;
  }
  tr.latent.resize(T, n);
  Matrix raw(T, n);
  Vector base = g.theta_mean;
  Vector dev = g.initial_deviation.size() == kStateDim ? g.initial_deviation : Vector::Zero(kStateDim);
  // mean-reverting blocks start in their stationary distribution
  for (int j = 0; j < kStateDim; ++j) {
    const double rho = j < 6 ? g.trend_reversion : g.seasonal_reversion;
    if (rho < 1.0) dev(j) += wsd(j) / std::sqrt(1.0 - rho * rho) * rng.normal();
  }
  const DlmSpec dspec = make_dlm_spec(g.discounts, g.harmonic_period);
  Matrix c_unit = Matrix::Identity(kStateDim, kStateDim);
  const Matrix turn = g.seasonal_beat > 0.0 ? Matrix(g2 * harmonic_block_real(g.seasonal_beat)) : g2;
  for (Eigen::Index t = 1; t <= T; ++t) {
    const Matrix F = build_design(fc, net, t - 1);
    if (dgop) {
      double phi = tr.precision(t - 1);
      if (g.variance_discount < 1.0) {
        const double gam = rng.beta(0.5 * g.variance_discount * g.precision_dof,
                                    0.5 * (1.0 - g.variance_discount) * g.precision_dof);
        phi = gam * phi / g.variance_discount;
      }
      tr.precision(t) = phi;
    }
    if (g.discount_driven) {
      const Matrix P = dspec.G * c_unit * dspec.G.transpose();
      const Matrix W = discount_evolution(dspec, P);
      const Matrix R = P + W;
      const Matrix K = F * R;
      const Matrix Q = K * F.transpose() + h;
      c_unit = R - K.transpose() * Q.llt().solve(K);
      symmetrize(c_unit);
      Vector zz(kStateDim);
      for (int j = 0; j < kStateDim; ++j) zz(j) = rng.normal();
      const double sc = dgop ? 1.0 / std::sqrt(tr.precision(t)) : std::sqrt(g.sigma2);
      dev = dspec.G * dev + sc * (psd_sqrt(W) * zz);
    } else {
      dev.head(6) *= g.trend_reversion;
      dev.tail(2) = g.seasonal_reversion * (turn * dev.tail(2));
      for (int j = 0; j < kStateDim; ++j) dev(j) += wsd(j) * rng.normal();
    }
    base.tail(2) = g2 * base.tail(2);
    const Vector cur = base + dev;
    tr.theta.row(t) = cur.transpose();
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
    Vector noise = hroot * z;
    if (g.kind == ModelKind::STEMOS || g.kind == ModelKind::SEMOS) {
      noise = noise.cwiseProduct(spread_skill_scale(g.beta0, g.beta1, fc.ensemble_var.row(t - 1).transpose()));
    } else if (dgop) {
      noise /= std::sqrt(tr.precision(t));
    } else {
      noise *= std::sqrt(g.sigma2);
    }
    Vector x = F * cur + noise;
    tr.latent.row(t - 1) = x.transpose();
    for (Eigen::Index i = 0; i < n; ++i) raw(t - 1, i) = observe(x(i), g.lambda, g.censor);
  }
  SimulatedData out{net, fc, ObservationPanel::from_values(fc.times, raw, g.censor), std::move(tr)};
  return out;
}

/// Generator settings of the three published scenarios (1 static MOS, 2 DGOP, 3 STEMOS).
inline GeneratorSpec scenario_generator(int scenario) {
  GeneratorSpec g;
  g.theta_mean = default_theta_mean();
  g.evolution_var = Vector::Zero(kStateDim);
  switch (scenario) {
    case 1:
      g.kind = ModelKind::MOS;
      g.sigma2 = 0.25;
      break;
    case 2:
      // the daily cycle drifts in phase with a 480 h beat, so a fixed
      // harmonic fitted on 240 h is out of phase at forecast time
      g.kind = ModelKind::DGOP;
      g.sigma2 = 0.04;
      g.trend_reversion = 0.995;
      g.seasonal_beat = 480.0;
      g.initial_deviation = Vector::Zero(kStateDim);
      g.initial_deviation(6) = 0.8;
      g.evolution_var << 0.02 * 0.02, 0.002 * 0.002, 0.0, 0.0, 0.0, 0.0, 0.01 * 0.01, 0.01 * 0.01;
      break;
    case 3:
      // as scenario 2 with spread-skill noise and observations centred on the
      // ensemble mean, so a static fit has nothing to correct
      g.kind = ModelKind::STEMOS;
      g.theta_mean << 0.56, 0.39, 0.15, -0.1, 0.1, 0.05, 0.0, 0.0;
      g.beta0 = 0.3;
      g.beta1 = 0.5;
      g.trend_reversion = 0.97;
      g.seasonal_beat = 480.0;
      g.initial_deviation = Vector::Zero(kStateDim);
      g.initial_deviation(6) = 2.0;
      g.evolution_var << 0.05 * 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.02 * 0.02, 0.02 * 0.02;
      break;
    default:
      throw ConfigError("scenario must be 1, 2 or 3");
  }
  return g;
}

struct ScenarioSpec {
  int scenario{1};
  int sites{20};
  int hours{480};
  double width_km{600.0};
  EnsembleSpec ensemble{};
  std::uint64_t seed{1};
  /// Seed of the network and ensemble, shared by all scenarios.
  std::uint64_t ensemble_seed{20240};
  std::optional<GeneratorSpec> generator;  // overrides the scenario preset
};

/// Scenario dataset; the network and ensemble depend only on `ensemble_seed`.
inline SimulatedData generate_scenario(const ScenarioSpec& s) {
  if (s.sites < 3 || s.hours < 48) throw ConfigError("scenario needs at least 3 sites and 48 hours");
  Random base(s.ensemble_seed);
  auto net = simulate_network(s.sites, s.width_km, base);
  auto fc = simulate_ensemble(net, simulation_times(s.hours), s.ensemble, base);
  Random rng(s.seed, static_cast<std::uint64_t>(s.scenario));
  GeneratorSpec g = s.generator ? *s.generator : scenario_generator(s.scenario);
  return simulate_observations(net, fc, g, rng);
}

/**
 * @brief DGOP-generated panel with known truth for parameter recovery.
 *
 * The state evolves exactly as the discount model assumes (see
 * GeneratorSpec::discount_driven).
 */
inline SimulatedData generate_recovery_dataset(int n, int T, double lambda, std::optional<double> phi_decay,
                                               const Discounts& d, std::uint64_t seed) {
  if (n < 3 || T < 48) throw std::invalid_argument("recovery dataset needs n >= 3 and T >= 48");
  Random rng(seed);
  auto net = simulate_network(n, 600.0, rng);
  auto fc = simulate_ensemble(net, simulation_times(T), EnsembleSpec{}, rng);
  GeneratorSpec g;
  g.kind = ModelKind::DGOP;
  g.lambda = lambda;
  g.phi_decay = phi_decay;
  g.sigma2 = 0.16;
  g.theta_mean = default_theta_mean();
  g.evolution_var = Vector::Zero(kStateDim);
  g.discount_driven = true;
  g.discounts = d;
  g.variance_discount = d.variance;
  return simulate_observations(net, fc, g, rng);
}

}  // namespace stcal
