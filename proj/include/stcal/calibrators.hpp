#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "stcal/dlm.hpp"
#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/sampler.hpp"
#include "stcal/scoring.hpp"
#include "stcal/spatial.hpp"
#include "stcal/transform.hpp"

namespace stcal {

/// A fitted model: posterior draws plus what is needed to forecast from the window end.
struct FittedModel {
  ModelConfig config;
  PosteriorDraws draws;
  FitSummary summary;
  HourStamp train_start{};
  HourStamp train_end{};  // last training hour
  StationNetwork network;  // carries the covariate standardization
  double censor_threshold{0.0};
};

struct FitOptions {
  int threads{1};
  bool keep_paths{false};
  std::function<void(int, int)> progress;
};

/// splitmix64 finalizer; derives independent seeds from (seed, key).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline void check_aligned(const ObservationPanel& obs, const ForecastPanel& fc, const StationNetwork& net) {
  if (obs.times != fc.times) throw DataError("observation and forecast panels cover different hours");
  if (obs.sites() != static_cast<Eigen::Index>(net.size()) || fc.n_sites != obs.sites()) {
    throw DataError("panels and station network disagree on site count");
  }
}

/**
 * @brief Fit one model on the window of `cfg.training_window_hours` hours
 * ending at row `last` (inclusive) of the panels.
 */
inline FittedModel fit(const ModelConfig& cfg, const ObservationPanel& obs, const ForecastPanel& fc,
                       const StationNetwork& net, Eigen::Index last, const FitOptions& opt = {}) {
  cfg.validate();
  check_aligned(obs, fc, net);
  const Eigen::Index W = cfg.training_window_hours;
  const Eigen::Index first = last - W + 1;
  if (first < 0 || last >= obs.hours()) throw DataError("training window falls outside the data span");
  auto o = obs.slice(first, W);
  auto f = fc.slice(first, W);
  for (Eigen::Index t = 0; t < W; ++t)
    for (Eigen::Index i = 0; i < f.n_sites; ++i)
      if (std::isnan(f.ensemble_mean(t, i))) throw DataError("ensemble forecast missing inside the training window");
  auto counts = o.counts();
  if (counts[static_cast<std::size_t>(CellState::Observed)] == 0) {
    throw DataError(counts[static_cast<std::size_t>(CellState::Censored)] > 0 ? "training window is entirely censored"
                                                                               : "training window has no observations");
  }
  if (counts[static_cast<std::size_t>(CellState::Observed)] < static_cast<std::size_t>(kStateDim) + 2) {
    throw DataError("insufficient data in the training window");
  }
  const auto designs = build_designs(f, net);
  FitInputs in{o, designs, f.ensemble_var, net.distances()};
  ChainOptions co;
  co.keep_paths = opt.keep_paths;
  co.progress = opt.progress;
  auto out = run_chains(cfg, in, opt.threads, co);
  FittedModel m;
  m.config = cfg;
  m.draws = std::move(out.draws);
  m.summary = std::move(out.summary);
  m.train_start = obs.times[static_cast<std::size_t>(first)];
  m.train_end = obs.times[static_cast<std::size_t>(last)];
  m.network = net;
  m.censor_threshold = obs.censor_threshold;
  return m;
}

/**
 * @brief Predictive distribution of Y for h = 1..horizon after the training window.
 *
 * Arrays are horizon x sites. `members` holds `member_count` predictive draws
 * per cell taken at evenly spaced posterior draws (for rank histograms);
 * `draws` holds every predictive draw when requested.
 */
struct ProbabilisticForecast {
  HourStamp origin{};
  int horizon{};
  std::vector<std::string> stations;
  std::vector<HourStamp> times;
  Matrix median, lo, hi;
  int member_count{};
  std::vector<double> members;
  Eigen::Index draw_count{};
  std::vector<double> draws;
  double censor_threshold{};

  Eigen::Index sites() const { return static_cast<Eigen::Index>(stations.size()); }
  double member(int h, Eigen::Index i, int j) const {
    return members[static_cast<std::size_t>((static_cast<Eigen::Index>(h) * sites() + i) * member_count + j)];
  }
  double draw(int h, Eigen::Index i, Eigen::Index d) const {
    return draws[static_cast<std::size_t>((static_cast<Eigen::Index>(h) * sites() + i) * draw_count + d)];
  }
};

struct PredictOptions {
  int member_count{9};
  bool keep_draws{false};
  double lower_level{0.05};
  double upper_level{0.95};
};

/// Linear-interpolation sample quantile of a sorted range.
inline double sorted_quantile(const std::vector<double>& s, double p) {
  if (s.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

/// Per-draw pieces shared by station and field prediction.
struct DrawContext {
  EndState end;
  double lambda{};
  double phi_decay{};
  double beta0{}, beta1{};
};

inline DrawContext draw_context(const FittedModel& m, Eigen::Index k) {
  const auto& d = m.draws;
  DrawContext c;
  c.end.theta = d.theta_at(k, d.hours);
  c.end.c_unit = d.final_scale[static_cast<std::size_t>(k)];
  c.end.dof = d.final_dof(k);
  c.end.precision = d.has_precision() ? d.precision_at(k, d.hours) : 1.0;
  c.lambda = d.lambda(k);
  c.phi_decay = d.phi_decay(k);
  if (d.has_beta()) {
    c.beta0 = d.beta(k, 0);
    c.beta1 = d.beta(k, 1);
  }
  return c;
}

inline void check_future(const FittedModel& m, const ForecastPanel& future, int horizon) {
  if (horizon < 1) throw std::invalid_argument("forecast horizon must be >= 1");
  if (future.n_sites != static_cast<Eigen::Index>(m.network.size())) {
    throw DataError("future forecasts do not match the fitted network");
  }
  if (future.hours() < horizon) throw DataError("missing future covariates: panel shorter than the horizon");
  for (int h = 1; h <= horizon; ++h) {
    if (future.times[static_cast<std::size_t>(h - 1)] != m.train_end + h) {
      throw DataError("missing future covariates for " + format_timestamp(m.train_end + h));
    }
    for (Eigen::Index i = 0; i < future.n_sites; ++i)
      if (std::isnan(future.ensemble_mean(h - 1, i)) || std::isnan(future.ensemble_var(h - 1, i))) {
        throw DataError("missing future covariates for " + format_timestamp(m.train_end + h));
      }
  }
}

/**
 * @brief Forecast `horizon` hours past the training window.
 *
 * For each retained draw: evolve the state, draw the latent field with the
 * draw's covariance, back-transform with censoring at c.
 */
inline ProbabilisticForecast predict(const FittedModel& m, const ForecastPanel& future, int horizon, Random& rng,
                                     const PredictOptions& opt = {}) {
  check_future(m, future, horizon);
  const auto& cfg = m.config;
  const auto& net = m.network;
  const auto n = static_cast<Eigen::Index>(net.size());
  const auto M = m.draws.count;
  if (M < 1) throw DataError("fitted model has no posterior draws");
  const bool unknown = uses_unknown_precision(cfg.kind);
  const bool spatial = is_spatial(cfg.kind);
  const auto spec = make_dlm_spec(cfg.effective_discounts(), cfg.harmonic_period);
  const double c = m.censor_threshold;

  std::vector<Matrix> designs;
  for (int h = 0; h < horizon; ++h) designs.push_back(build_design(future, net, h));

  // samples[(h * n + i) * M + k]
  std::vector<double> samples(static_cast<std::size_t>(horizon * n * M));
  Vector z(n);
  for (Eigen::Index k = 0; k < M; ++k) {
    auto ctx = draw_context(m, k);
    Matrix root;
    if (spatial) root = factor_correlation(correlation_matrix(net.distances(), ctx.phi_decay)).matrixL();
    propagate_draw(spec, ctx.end, horizon, unknown, rng, [&](int h, const Vector& theta, double phi) {
      for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
      Vector eps = spatial ? Vector(root * z) : z;
      if (unknown) {
        eps /= std::sqrt(phi);
      } else {
        eps = eps.cwiseProduct(spread_skill_scale(ctx.beta0, ctx.beta1, future.ensemble_var.row(h - 1).transpose()));
      }
      const Vector x = designs[static_cast<std::size_t>(h - 1)] * theta + eps;
      for (Eigen::Index i = 0; i < n; ++i) {
        samples[static_cast<std::size_t>(((h - 1) * n + i) * M + k)] = observe(x(i), ctx.lambda, c);
      }
    });
  }

  ProbabilisticForecast out;
  out.origin = m.train_end;
  out.horizon = horizon;
  out.censor_threshold = c;
  for (const auto& s : net.stations()) out.stations.push_back(s.id);
  for (int h = 1; h <= horizon; ++h) out.times.push_back(m.train_end + h);
  out.median.resize(horizon, n);
  out.lo.resize(horizon, n);
  out.hi.resize(horizon, n);
  out.member_count = static_cast<int>(std::min<Eigen::Index>(opt.member_count, M));
  out.members.resize(static_cast<std::size_t>(horizon * n * out.member_count));
  std::vector<double> buf(static_cast<std::size_t>(M));
  for (int h = 0; h < horizon; ++h) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto base = static_cast<std::size_t>((h * n + i) * M);
      for (int j = 0; j < out.member_count; ++j) {
        const auto pick = static_cast<std::size_t>((2 * j + 1) * M / (2 * out.member_count));
        out.members[static_cast<std::size_t>((h * n + i) * out.member_count + j)] = samples[base + pick];
      }
      std::copy(samples.begin() + static_cast<std::ptrdiff_t>(base),
                samples.begin() + static_cast<std::ptrdiff_t>(base) + M, buf.begin());
      std::sort(buf.begin(), buf.end());
      out.median(h, i) = sorted_quantile(buf, 0.5);
      out.lo(h, i) = sorted_quantile(buf, opt.lower_level);
      out.hi(h, i) = sorted_quantile(buf, opt.upper_level);
    }
  }
  if (opt.keep_draws) {
    out.draw_count = M;
    out.draws = std::move(samples);
  }
  return out;
}

/// Rectangular latitude/longitude grid.
struct GridSpec {
  double lat_min{}, lat_max{}, lon_min{}, lon_max{};
  double resolution{0.1};  // degrees

  bool operator==(const GridSpec&) const = default;

  std::vector<std::pair<double, double>> points() const {
    if (!(resolution > 0.0) || lat_max < lat_min || lon_max < lon_min) throw ConfigError("invalid grid specification");
    std::vector<std::pair<double, double>> out;
    const int nlat = static_cast<int>(std::floor((lat_max - lat_min) / resolution + 1e-9)) + 1;
    const int nlon = static_cast<int>(std::floor((lon_max - lon_min) / resolution + 1e-9)) + 1;
    for (int a = 0; a < nlat; ++a)
      for (int b = 0; b < nlon; ++b) out.emplace_back(lat_min + a * resolution, lon_min + b * resolution);
    return out;
  }
};

/// Ensemble mean and variance at field targets for one forecast hour (NaN: use the nearest station).
struct TargetEnsemble {
  Vector mean;
  Vector var;
};

struct FieldForecast {
  HourStamp time{};
  std::vector<std::pair<double, double>> points;
  Vector median, lo, hi;

  Vector margin() const { return 0.5 * (hi - lo); }
};

/**
 * @brief Wind field at arbitrary points for horizon h.
 *
 * Per draw, the station latent field at T+h is drawn as in `predict`, and the
 * targets follow from simple kriging of the standardized residuals. Target
 * elevation and roughness come from the nearest station; the ensemble mean
 * and variance come from `ens` when given, else from the nearest station.
 */
inline FieldForecast predict_field(const FittedModel& m, const ForecastPanel& future, int h,
                                   const std::vector<std::pair<double, double>>& points, Random& rng,
                                   const TargetEnsemble* ens = nullptr, const PredictOptions& opt = {}) {
  const auto& cfg = m.config;
  if (!is_spatial(cfg.kind)) {
    throw ConfigError(std::string(model_name(cfg.kind)) + " has no spatial component");
  }
  check_future(m, future, h);
  if (points.empty()) throw std::invalid_argument("no field targets");
  const auto& net = m.network;
  const auto n = static_cast<Eigen::Index>(net.size());
  const auto n0 = static_cast<Eigen::Index>(points.size());
  const auto M = m.draws.count;
  if (ens && (ens->mean.size() != n0 || ens->var.size() != n0)) throw DataError("target ensemble size mismatch");
  const bool unknown = uses_unknown_precision(cfg.kind);
  const auto spec = make_dlm_spec(cfg.effective_discounts(), cfg.harmonic_period);
  const double c = m.censor_threshold;

  const Vector s2 = future.ensemble_var.row(h - 1).transpose();
  Matrix F0(n0, kStateDim);
  Vector s20(n0);
  Matrix d0(n, n0);
  for (Eigen::Index k = 0; k < n0; ++k) {
    const auto [lat, lon] = points[static_cast<std::size_t>(k)];
    const auto near = net.nearest_station(lat, lon);
    const auto& st = net.station(near);
    auto zc = net.standardized(lat, lon, st.elevation, st.roughness_length);
    if (std::isnan(zc[kRoughness])) throw DataError("station '" + st.id + "' has no roughness length");
    double fbar = future.ensemble_mean(h - 1, static_cast<Eigen::Index>(near));
    double var = s2(static_cast<Eigen::Index>(near));
    if (ens && !std::isnan(ens->mean(k))) fbar = ens->mean(k);
    if (ens && !std::isnan(ens->var(k))) var = ens->var(k);
    Vector row(kStateDim);
    fill_design_row(row, fbar, zc);
    F0.row(k) = row.transpose();
    s20(k) = var;
    d0.col(k) = net.distances_to(lat, lon);
  }

  std::vector<double> samples(static_cast<std::size_t>(n0 * M));
  Vector z(n), z0(n0);
  for (Eigen::Index k = 0; k < M; ++k) {
    auto ctx = draw_context(m, k);
    const Matrix H = correlation_matrix(net.distances(), ctx.phi_decay);
    const auto llt = factor_correlation(H);
    const Matrix root = llt.matrixL();
    const Matrix h0 = (-ctx.phi_decay * d0.array()).exp().matrix();
    const Matrix w = llt.solve(h0);
    const Vector resid_var = (Vector::Ones(n0) - (h0.cwiseProduct(w)).colwise().sum().transpose()).cwiseMax(0.0);
    propagate_draw(spec, ctx.end, h, unknown, rng, [&](int step, const Vector& theta, double phi) {
      if (step != h) return;
      for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
      for (Eigen::Index i = 0; i < n0; ++i) z0(i) = rng.normal();
      const Vector u = root * z;  // standardized station residuals
      Vector u0 = w.transpose() * u + resid_var.cwiseSqrt().cwiseProduct(z0);
      if (unknown) {
        u0 /= std::sqrt(phi);
      } else {
        u0 = u0.cwiseProduct(spread_skill_scale(ctx.beta0, ctx.beta1, s20));
      }
      const Vector x0 = F0 * theta + u0;
      for (Eigen::Index i = 0; i < n0; ++i) samples[static_cast<std::size_t>(i * M + k)] = observe(x0(i), ctx.lambda, c);
    });
  }

  FieldForecast out;
  out.time = m.train_end + h;
  out.points = points;
  out.median.resize(n0);
  out.lo.resize(n0);
  out.hi.resize(n0);
  std::vector<double> buf(static_cast<std::size_t>(M));
  for (Eigen::Index i = 0; i < n0; ++i) {
    std::copy(samples.begin() + i * M, samples.begin() + (i + 1) * M, buf.begin());
    std::sort(buf.begin(), buf.end());
    out.median(i) = sorted_quantile(buf, 0.5);
    out.lo(i) = sorted_quantile(buf, opt.lower_level);
    out.hi(i) = sorted_quantile(buf, opt.upper_level);
  }
  return out;
}

/// One refit-and-predict step of a rolling evaluation.
struct OriginResult {
  HourStamp origin{};
  ProbabilisticForecast forecast;
  Matrix actuals;  // horizon x n, NaN where missing
  FitSummary summary;
};

struct RollingOptions {
  int horizon{24};
  int threads{1};
  PredictOptions predict{};
  std::function<void(std::size_t, std::size_t)> progress;  // (done, total)
};

/**
 * @brief Refit at each origin (row index of the last training hour) and forecast.
 *
 * Each origin gets seeds derived from the configured seed and the origin
 * timestamp, so results do not depend on the schedule or thread count.
 */
inline std::vector<OriginResult> rolling_calibration(const ModelConfig& cfg, const ObservationPanel& obs,
                                                     const ForecastPanel& fc, const StationNetwork& net,
                                                     const std::vector<Eigen::Index>& origins,
                                                     const RollingOptions& opt = {}) {
  check_aligned(obs, fc, net);
  for (auto o : origins) {
    if (o - cfg.training_window_hours + 1 < 0 || o + opt.horizon >= obs.hours()) {
      throw DataError("origin schedule out of range: each origin needs " + std::to_string(cfg.training_window_hours) +
                      " h of history and " + std::to_string(opt.horizon) + " h of future");
    }
  }
  std::vector<OriginResult> out(origins.size());
  std::vector<std::exception_ptr> errs(origins.size());
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= origins.size()) return;
      try {
        const auto o = origins[j];
        const auto stamp = static_cast<std::uint64_t>(obs.times[static_cast<std::size_t>(o)]);
        ModelConfig c = cfg;
        c.mcmc.seed = mix_seed(cfg.mcmc.seed, stamp);
        auto fitted = fit(c, obs, fc, net, o);
        Random rng(mix_seed(c.mcmc.seed, 1));
        auto future = fc.slice(o + 1, opt.horizon);
        auto& r = out[j];
        r.origin = fitted.train_end;
        r.forecast = predict(fitted, future, opt.horizon, rng, opt.predict);
        r.actuals = obs.values.middleRows(o + 1, opt.horizon);
        r.summary = fitted.summary;
      } catch (...) {
        errs[j] = std::current_exception();
      }
      const auto d = ++done;
      if (opt.progress) {
        std::lock_guard<std::mutex> lock(mu);
        opt.progress(d, origins.size());
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(origins.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Flatten rolling results into scorable cases.
inline std::vector<ScoredCase> to_cases(const std::vector<OriginResult>& results) {
  std::vector<ScoredCase> out;
  for (const auto& r : results) {
    const auto& f = r.forecast;
    for (int h = 0; h < f.horizon; ++h) {
      for (Eigen::Index i = 0; i < f.sites(); ++i) {
        ScoredCase c;
        c.time = f.times[static_cast<std::size_t>(h)];
        c.origin = r.origin;
        c.station = f.stations[static_cast<std::size_t>(i)];
        c.horizon = h + 1;
        c.actual = r.actuals(h, i);
        c.median = f.median(h, i);
        c.lo = f.lo(h, i);
        c.hi = f.hi(h, i);
        for (int j = 0; j < f.member_count; ++j) c.members.push_back(f.member(h, i, j));
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

}  // namespace stcal
