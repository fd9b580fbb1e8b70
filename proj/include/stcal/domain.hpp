#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stcal/errors.hpp"
#include "stcal/linalg.hpp"
#include "stcal/timeutil.hpp"

namespace stcal {

inline constexpr double kEarthRadiusKm = 6371.0088;

/**
 * @brief A weather station.
 *
 * Coordinates in degrees, elevation in meters. The roughness length is
 * optional at construction time; it is required before a design matrix can be
 * built.
 */
struct Station {
  std::string id;
  double latitude{};
  double longitude{};
  double elevation{};
  std::optional<double> roughness_length;
};

inline void validate(const Station& s) {
  if (s.id.empty()) throw DataError("station with empty id");
  if (!std::isfinite(s.latitude) || !std::isfinite(s.longitude) || !std::isfinite(s.elevation)) {
    throw DataError("station '" + s.id + "': non-finite coordinate");
  }
  if (s.latitude < -90.0 || s.latitude > 90.0) throw DataError("station '" + s.id + "': latitude out of range");
  if (s.longitude < -180.0 || s.longitude > 180.0) {
    throw DataError("station '" + s.id + "': longitude out of range");
  }
  if (s.roughness_length && !(*s.roughness_length > 0.0)) {
    throw DataError("station '" + s.id + "': roughness length must be positive");
  }
}

/// Indices of the static covariates inside the standardized covariate block.
enum Covariate : int { kRoughness = 0, kElevation = 1, kLatitude = 2, kLongitude = 3 };
inline constexpr int kNumCovariates = 4;

/**
 * @brief Z-score constants for the static site covariates.
 *
 * A covariate with zero spread across the network keeps sd = 1 so it maps to 0.
 */
struct CovariateScaler {
  std::array<double, kNumCovariates> mean{};
  std::array<double, kNumCovariates> sd{1.0, 1.0, 1.0, 1.0};
  std::array<bool, kNumCovariates> constant{false, false, false, false};

  double apply(int which, double raw) const {
    if (constant[which] && raw == mean[which]) return 0.0;
    return (raw - mean[which]) / sd[which];
  }
};

/**
 * @brief Ordered set of stations with derived geometry.
 *
 * Distances use a local equirectangular projection about the network
 * centroid followed by Euclidean distance, in kilometers.
 */
class StationNetwork {
 public:
  StationNetwork() = default;

  explicit StationNetwork(std::vector<Station> stations) : stations_(std::move(stations)) {
    if (stations_.size() < 2) throw DataError("a station network needs at least 2 stations");
    std::unordered_set<std::string> ids;
    for (const auto& s : stations_) {
      validate(s);
      if (!ids.insert(s.id).second) throw DataError("duplicate station id '" + s.id + "'");
    }
    const auto n = static_cast<Eigen::Index>(stations_.size());
    double lat0 = 0.0, lon0 = 0.0;
    for (const auto& s : stations_) {
      lat0 += s.latitude;
      lon0 += s.longitude;
    }
    center_lat_ = lat0 / static_cast<double>(n);
    center_lon_ = lon0 / static_cast<double>(n);
    coords_.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto xy = project(stations_[i].latitude, stations_[i].longitude);
      coords_(i, 0) = xy.first;
      coords_(i, 1) = xy.second;
    }
    distances_.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      distances_(i, i) = 0.0;
      for (Eigen::Index j = 0; j < i; ++j) {
        const double d = (coords_.row(i) - coords_.row(j)).norm();
        distances_(i, j) = d;
        distances_(j, i) = d;
      }
    }
    compute_scaler();
  }

  std::size_t size() const { return stations_.size(); }
  const std::vector<Station>& stations() const { return stations_; }
  const Station& station(std::size_t i) const { return stations_.at(i); }
  const Matrix& distances() const { return distances_; }
  const Matrix& coordinates() const { return coords_; }
  const CovariateScaler& scaler() const { return scaler_; }

  double max_distance() const { return distances_.maxCoeff(); }

  double min_offdiagonal_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < distances_.rows(); ++i)
      for (Eigen::Index j = 0; j < i; ++j) best = std::min(best, distances_(i, j));
    return best;
  }

  std::optional<std::size_t> index_of(const std::string& id) const {
    for (std::size_t i = 0; i < stations_.size(); ++i)
      if (stations_[i].id == id) return i;
    return std::nullopt;
  }

  /// Project a point to the network's planar frame (km east, km north of the centroid).
  std::pair<double, double> project(double lat, double lon) const {
    constexpr double deg = kPi / 180.0;
    const double x = kEarthRadiusKm * (lon - center_lon_) * deg * std::cos(center_lat_ * deg);
    const double y = kEarthRadiusKm * (lat - center_lat_) * deg;
    return {x, y};
  }

  /// Distances (km) from an arbitrary point to every station.
  Vector distances_to(double lat, double lon) const {
    auto xy = project(lat, lon);
    Vector d(coords_.rows());
    for (Eigen::Index i = 0; i < coords_.rows(); ++i) {
      d(i) = std::hypot(coords_(i, 0) - xy.first, coords_(i, 1) - xy.second);
    }
    return d;
  }

  std::size_t nearest_station(double lat, double lon) const {
    Vector d = distances_to(lat, lon);
    Eigen::Index best = 0;
    d.minCoeff(&best);
    return static_cast<std::size_t>(best);
  }

  /**
   * @brief Standardized (roughness, elevation, latitude, longitude) of a site.
   *
   * Roughness is NaN when unknown.
   */
  std::array<double, kNumCovariates> standardized(double lat, double lon, double elevation,
                                                  std::optional<double> roughness) const {
    return {roughness ? scaler_.apply(kRoughness, *roughness) : std::numeric_limits<double>::quiet_NaN(),
            scaler_.apply(kElevation, elevation), scaler_.apply(kLatitude, lat),
            scaler_.apply(kLongitude, lon)};
  }

  std::array<double, kNumCovariates> standardized(std::size_t i) const {
    const auto& s = stations_.at(i);
    return standardized(s.latitude, s.longitude, s.elevation, s.roughness_length);
  }

  /// Same stations in a different order (perm[k] = old index placed at k).
  StationNetwork permuted(const std::vector<std::size_t>& perm) const {
    std::vector<Station> out;
    out.reserve(perm.size());
    for (auto k : perm) out.push_back(stations_.at(k));
    return StationNetwork(std::move(out));
  }

 private:
  void compute_scaler() {
    std::array<std::vector<double>, kNumCovariates> cols;
    for (const auto& s : stations_) {
      if (s.roughness_length) cols[kRoughness].push_back(*s.roughness_length);
      cols[kElevation].push_back(s.elevation);
      cols[kLatitude].push_back(s.latitude);
      cols[kLongitude].push_back(s.longitude);
    }
    for (int c = 0; c < kNumCovariates; ++c) {
      const auto& v = cols[c];
      if (v.empty()) continue;
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      const bool flat = std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
      scaler_.mean[c] = flat ? v.front() : mean;
      scaler_.sd[c] = (sd > 1e-12 && !flat) ? sd : 1.0;
      scaler_.constant[c] = flat;
    }
  }

  std::vector<Station> stations_;
  double center_lat_{};
  double center_lon_{};
  Matrix coords_;
  Matrix distances_;
  CovariateScaler scaler_;
};

inline StationNetwork build_network(std::vector<Station> stations) { return StationNetwork(std::move(stations)); }

/// Per-cell ensemble mean and sample variance (divisor m-1, zero when m = 1).
inline std::pair<Matrix, Matrix> ensemble_summaries(const std::vector<double>& members, Eigen::Index T,
                                                    Eigen::Index n, Eigen::Index m) {
  if (m < 1) throw DataError("ensemble needs at least one member");
  if (static_cast<Eigen::Index>(members.size()) != T * n * m) throw DataError("ensemble array has wrong size");
  Matrix mean(T, n), var(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double* cell = members.data() + (t * n + i) * m;
      double s = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) {
        if (std::isnan(cell[k])) {
          throw DataError("NaN ensemble member at t=" + std::to_string(t) + ", site=" + std::to_string(i));
        }
        s += cell[k];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) ss += (cell[k] - mu) * (cell[k] - mu);
      mean(t, i) = mu;
      var(t, i) = m > 1 ? ss / static_cast<double>(m - 1) : 0.0;
    }
  }
  return {mean, var};
}

/**
 * @brief Ensemble wind-speed forecasts, T hours x n sites x m members.
 */
struct ForecastPanel {
  std::vector<HourStamp> times;
  Eigen::Index n_sites{};
  Eigen::Index n_members{};
  std::vector<double> members;
  Matrix ensemble_mean;
  Matrix ensemble_var;

  Eigen::Index hours() const { return static_cast<Eigen::Index>(times.size()); }

  double member(Eigen::Index t, Eigen::Index i, Eigen::Index k) const {
    return members[static_cast<std::size_t>((t * n_sites + i) * n_members + k)];
  }

  static ForecastPanel from_members(std::vector<HourStamp> times, Eigen::Index n, Eigen::Index m,
                                    std::vector<double> members) {
    ForecastPanel p;
    p.n_sites = n;
    p.n_members = m;
    const auto T = static_cast<Eigen::Index>(times.size());
    for (double v : members) {
      if (!std::isnan(v) && v < 0.0) throw DataError("negative ensemble member value");
    }
    auto [mean, var] = ensemble_summaries(members, T, n, m);
    p.times = std::move(times);
    p.members = std::move(members);
    p.ensemble_mean = std::move(mean);
    p.ensemble_var = std::move(var);
    return p;
  }

  /// Rows [start, start + count) as a new panel.
  ForecastPanel slice(Eigen::Index start, Eigen::Index count) const {
    if (start < 0 || count < 0 || start + count > hours()) throw DataError("forecast slice out of range");
    ForecastPanel p;
    p.n_sites = n_sites;
    p.n_members = n_members;
    p.times.assign(times.begin() + start, times.begin() + start + count);
    const auto stride = static_cast<std::size_t>(n_sites * n_members);
    p.members.assign(members.begin() + static_cast<std::ptrdiff_t>(start * stride),
                     members.begin() + static_cast<std::ptrdiff_t>((start + count) * stride));
    p.ensemble_mean = ensemble_mean.middleRows(start, count);
    p.ensemble_var = ensemble_var.middleRows(start, count);
    return p;
  }

  ForecastPanel select_sites(const std::vector<std::size_t>& keep) const {
    ForecastPanel p;
    p.times = times;
    p.n_sites = static_cast<Eigen::Index>(keep.size());
    p.n_members = n_members;
    p.members.reserve(static_cast<std::size_t>(hours() * p.n_sites * n_members));
    for (Eigen::Index t = 0; t < hours(); ++t)
      for (auto i : keep)
        for (Eigen::Index k = 0; k < n_members; ++k) p.members.push_back(member(t, static_cast<Eigen::Index>(i), k));
    p.ensemble_mean.resize(hours(), p.n_sites);
    p.ensemble_var.resize(hours(), p.n_sites);
    for (Eigen::Index j = 0; j < p.n_sites; ++j) {
      p.ensemble_mean.col(j) = ensemble_mean.col(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(j)]));
      p.ensemble_var.col(j) = ensemble_var.col(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(j)]));
    }
    return p;
  }
};

enum class CellState : std::uint8_t { Observed, Censored, Missing };

/**
 * @brief Observed wind speeds with a censoring / missingness mask.
 *
 * Cells at or below the censor threshold are stored as exactly `c` and
 * flagged censored. Missing cells hold NaN.
 */
struct ObservationPanel {
  std::vector<HourStamp> times;
  Matrix values;  // T x n
  std::vector<CellState> mask;
  double censor_threshold{0.0};

  Eigen::Index hours() const { return values.rows(); }
  Eigen::Index sites() const { return values.cols(); }

  CellState state(Eigen::Index t, Eigen::Index i) const {
    return mask[static_cast<std::size_t>(t * sites() + i)];
  }

  /// Build from raw values; NaN means missing, values <= c become censored.
  static ObservationPanel from_values(std::vector<HourStamp> times, Matrix raw, double c) {
    if (static_cast<Eigen::Index>(times.size()) != raw.rows()) throw DataError("observation times/rows mismatch");
    ObservationPanel p;
    p.times = std::move(times);
    p.censor_threshold = c;
    p.values = std::move(raw);
    p.mask.resize(static_cast<std::size_t>(p.values.size()));
    for (Eigen::Index t = 0; t < p.values.rows(); ++t) {
      for (Eigen::Index i = 0; i < p.values.cols(); ++i) {
        auto& v = p.values(t, i);
        auto& s = p.mask[static_cast<std::size_t>(t * p.values.cols() + i)];
        if (std::isnan(v)) {
          s = CellState::Missing;
        } else if (v <= c) {
          s = CellState::Censored;
          v = c;
        } else {
          s = CellState::Observed;
        }
      }
    }
    return p;
  }

  std::array<std::size_t, 3> counts() const {
    std::array<std::size_t, 3> out{0, 0, 0};
    for (auto s : mask) ++out[static_cast<std::size_t>(s)];
    return out;
  }

  void validate() const {
    if (static_cast<Eigen::Index>(mask.size()) != values.size()) throw DataError("observation mask size mismatch");
    for (Eigen::Index t = 0; t < hours(); ++t) {
      for (Eigen::Index i = 0; i < sites(); ++i) {
        const double v = values(t, i);
        switch (state(t, i)) {
          case CellState::Observed:
            if (!(v > censor_threshold)) throw DataError("observed value not above censor threshold");
            break;
          case CellState::Censored:
            if (v != censor_threshold) throw DataError("censored cell does not hold the threshold value");
            break;
          case CellState::Missing:
            break;
        }
      }
    }
  }

  ObservationPanel slice(Eigen::Index start, Eigen::Index count) const {
    if (start < 0 || count < 0 || start + count > hours()) throw DataError("observation slice out of range");
    ObservationPanel p;
    p.times.assign(times.begin() + start, times.begin() + start + count);
    p.values = values.middleRows(start, count);
    p.censor_threshold = censor_threshold;
    p.mask.assign(mask.begin() + static_cast<std::ptrdiff_t>(start * sites()),
                  mask.begin() + static_cast<std::ptrdiff_t>((start + count) * sites()));
    return p;
  }

  ObservationPanel select_sites(const std::vector<std::size_t>& keep) const {
    ObservationPanel p;
    p.times = times;
    p.censor_threshold = censor_threshold;
    p.values.resize(hours(), static_cast<Eigen::Index>(keep.size()));
    p.mask.resize(static_cast<std::size_t>(hours()) * keep.size());
    for (Eigen::Index t = 0; t < hours(); ++t) {
      for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(keep[j]);
        p.values(t, static_cast<Eigen::Index>(j)) = values(t, i);
        p.mask[static_cast<std::size_t>(t) * keep.size() + j] = state(t, i);
      }
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

enum class ModelKind { MOS, GOP, SEMOS, DMOS, DGOP, STEMOS };

inline constexpr std::array<ModelKind, 6> kAllModels{ModelKind::MOS,  ModelKind::GOP,  ModelKind::SEMOS,
                                                     ModelKind::DMOS, ModelKind::DGOP, ModelKind::STEMOS};

inline const char* model_name(ModelKind k) {
  switch (k) {
    case ModelKind::MOS: return "MOS";
    case ModelKind::GOP: return "GOP";
    case ModelKind::SEMOS: return "SEMOS";
    case ModelKind::DMOS: return "DMOS";
    case ModelKind::DGOP: return "DGOP";
    case ModelKind::STEMOS: return "STEMOS";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (auto k : kAllModels)
    if (s == model_name(k)) return k;
  throw ConfigError("unknown model kind '" + s + "' (expected MOS, GOP, SEMOS, DMOS, DGOP or STEMOS)");
}

inline bool is_dynamic(ModelKind k) { return k == ModelKind::DMOS || k == ModelKind::DGOP || k == ModelKind::STEMOS; }
inline bool is_spatial(ModelKind k) {
  return k == ModelKind::GOP || k == ModelKind::SEMOS || k == ModelKind::DGOP || k == ModelKind::STEMOS;
}
/// Spread-skill covariance D H D with known-covariance filtering.
inline bool uses_spread_skill(ModelKind k) { return k == ModelKind::SEMOS || k == ModelKind::STEMOS; }
/// Normal-gamma filtering with an unknown observational precision path.
inline bool uses_unknown_precision(ModelKind k) { return !uses_spread_skill(k); }

struct Discounts {
  double trend{0.99};
  double seasonal{0.95};
  double variance{0.99};

  bool operator==(const Discounts&) const = default;
};

struct McmcSettings {
  int iterations{12500};
  int burn_in{500};
  int thin{5};
  std::uint64_t seed{1};
  int chains{1};

  bool operator==(const McmcSettings&) const = default;

  int retained() const { return iterations > burn_in ? (iterations - burn_in + thin - 1) / thin : 0; }
};

/**
 * @brief Prior hyperparameters.
 *
 * Defaults: theta_0 scale I_8 with n_0 = 2, d_0 = 0.2 (normal-gamma family)
 * or theta_0 ~ N(0, I_8) (spread-skill family); phi ~ Gamma(2, rate max(d)/6);
 * lambda ~ N(1, 10); beta ~ N+(0, 10 I_2).
 */
struct Priors {
  double theta0_scale{1.0};
  double n0{2.0};
  double d0{0.2};
  double lambda_mean{1.0};
  double lambda_var{10.0};
  double phi_shape{2.0};
  std::optional<double> phi_rate;  // defaults to max(d) / 6
  double beta_var{10.0};

  bool operator==(const Priors&) const = default;
};

/// How censored latents follow a proposed Box-Cox parameter inside the Metropolis step.
enum class CensoredMove { Shift, Fixed };

struct ModelConfig {
  ModelKind kind{ModelKind::DGOP};
  Discounts discounts{};
  int training_window_hours{240};
  McmcSettings mcmc{};
  Priors priors{};
  int harmonic_period{24};
  std::optional<double> fixed_lambda;
  std::optional<double> fixed_phi;
  CensoredMove censored_move{CensoredMove::Shift};
  double ram_target_acceptance{0.234};
  double ram_gamma{0.66};
  double initial_lambda{1.0};

  bool operator==(const ModelConfig&) const = default;

  /// Discounts actually used by the filter for this model kind.
  Discounts effective_discounts() const {
    if (!is_dynamic(kind)) return {1.0, 1.0, 1.0};
    Discounts d = discounts;
    if (kind != ModelKind::DGOP) d.variance = 1.0;
    return d;
  }

  void validate(int state_dim = 8) const {
    auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in_unit(discounts.trend) || !in_unit(discounts.seasonal) || !in_unit(discounts.variance)) {
      throw ConfigError("discount factors must lie in (0, 1]");
    }
    if (mcmc.iterations <= 0) throw ConfigError("mcmc.iterations must be positive");
    if (mcmc.burn_in < 0 || mcmc.burn_in >= mcmc.iterations) throw ConfigError("mcmc.burn_in must be < iterations");
    if (mcmc.thin < 1) throw ConfigError("mcmc.thin must be >= 1");
    if (mcmc.chains < 1) throw ConfigError("mcmc.chains must be >= 1");
    if (training_window_hours < state_dim) throw ConfigError("training window shorter than the state dimension");
    if (harmonic_period < 2) throw ConfigError("harmonic_period must be >= 2");
    if (!(ram_target_acceptance > 0.0 && ram_target_acceptance < 1.0)) throw ConfigError("bad RAM target");
    if (!(ram_gamma > 0.5 && ram_gamma <= 1.0)) throw ConfigError("RAM adaptation exponent must be in (0.5, 1]");
    if (fixed_phi && !(*fixed_phi > 0.0)) throw ConfigError("fixed_phi must be positive");
    if (!(priors.n0 > 0.0 && priors.d0 > 0.0)) throw ConfigError("n0 and d0 must be positive");
  }
};

/// A latent cell that is imputed by data augmentation.
struct AugmentedCell {
  Eigen::Index t{};
  Eigen::Index site{};
  CellState state{CellState::Censored};
};

/**
 * @brief Retained MCMC draws.
 *
 * `theta` is draws x (T+1) x r flattened; `precision` is draws x (T+1) for the
 * normal-gamma family and empty otherwise; `beta` is draws x 2 for the
 * spread-skill family and empty otherwise. `final_scale`/`final_dof` hold the
 * end-of-window filter scale needed to forecast ahead.
 */
struct PosteriorDraws {
  Eigen::Index count{};
  Eigen::Index hours{};
  Eigen::Index state_dim{};
  std::vector<double> theta;
  std::vector<double> precision;
  Matrix beta;
  Vector phi_decay;
  Vector lambda;
  std::vector<AugmentedCell> augmented_cells;
  Matrix latent_x;  // draws x augmented cells
  std::vector<Matrix> final_scale;
  Vector final_dof;
  Vector final_scale_factor;  // s_T (normal-gamma) or 1
  Vector log_likelihood;
  Matrix site_log_likelihood;  // draws x n

  bool has_precision() const { return !precision.empty(); }
  bool has_beta() const { return beta.size() > 0; }

  Eigen::Map<const Vector> theta_at(Eigen::Index draw, Eigen::Index t) const {
    return {theta.data() + (draw * (hours + 1) + t) * state_dim, state_dim};
  }
  double precision_at(Eigen::Index draw, Eigen::Index t) const {
    return precision[static_cast<std::size_t>(draw * (hours + 1) + t)];
  }

  void check_invariants() const {
    if (phi_decay.size() != count || lambda.size() != count) throw NumericalError("draw count mismatch");
    if (static_cast<Eigen::Index>(theta.size()) != count * (hours + 1) * state_dim) {
      throw NumericalError("theta draw count mismatch");
    }
    if (has_precision() && static_cast<Eigen::Index>(precision.size()) != count * (hours + 1)) {
      throw NumericalError("precision draw count mismatch");
    }
    if (has_beta() && beta.rows() != count) throw NumericalError("beta draw count mismatch");
    if ((phi_decay.array() <= 0.0).any()) throw NumericalError("non-positive spatial decay draw");
    if (has_beta() && (beta.array() < 0.0).any()) throw NumericalError("negative spread-skill draw");
  }
};

}  // namespace stcal
