#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/timeutil.hpp"

namespace stcal {

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

namespace csv {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

/// Row-by-row reader that checks the header and tags errors with path:line.
class Reader {
 public:
  Reader(const std::string& path, std::vector<std::string> header) : path_(path), in_(path) {
    if (!in_) throw DataError(path + ": cannot open file");
    if (!std::getline(in_, line_)) throw DataError(path + ": empty file (expected header '" + join(header) + "')");
    line_no_ = 1;
    auto got = split(line_);
    std::vector<std::string> have(got.begin(), got.end());
    if (!have.empty() && have[0].size() >= 3 && have[0].compare(0, 3, "\xEF\xBB\xBF") == 0) have[0].erase(0, 3);
    if (have != header) {
      throw DataError(path + ":1: header mismatch: expected '" + join(header) + "', found '" + line_ + "'");
    }
    width_ = header.size();
  }

  /// Next non-blank row; false at end of file.
  bool next() {
    while (std::getline(in_, line_)) {
      ++line_no_;
      if (line_.find_first_not_of(" \t\r") == std::string::npos) continue;
      fields_ = split(line_);
      if (fields_.size() != width_) {
        fail("expected " + std::to_string(width_) + " fields, found " + std::to_string(fields_.size()));
      }
      return true;
    }
    return false;
  }

  std::string_view field(std::size_t k) const { return fields_[k]; }

  double number(std::size_t k, const char* name) const {
    auto f = fields_[k];
    if (f.empty()) fail(std::string("empty ") + name);
    double v{};
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size()) fail(std::string("bad number for ") + name + ": '" + std::string(f) + "'");
    return v;
  }

  std::optional<double> optional_number(std::size_t k, const char* name) const {
    auto f = fields_[k];
    if (f.empty() || f == "NA" || f == "NaN" || f == "nan") return std::nullopt;
    return number(k, name);
  }

  long integer(std::size_t k, const char* name) const {
    auto f = fields_[k];
    long v{};
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || p != f.data() + f.size()) {
      fail(std::string("bad integer for ") + name + ": '" + std::string(f) + "'");
    }
    return v;
  }

  HourStamp timestamp(std::size_t k) const {
    try {
      return parse_timestamp(fields_[k]);
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_ + ":" + std::to_string(line_no_) + ": " + what);
  }

  std::size_t line() const { return line_no_; }
  const std::string& path() const { return path_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + v[k];
    return s;
  }

  std::string path_;
  std::ifstream in_;
  std::string line_;
  std::size_t line_no_{0};
  std::size_t width_{0};
  std::vector<std::string_view> fields_;
};

/// Shortest text that reads back to the same double.
inline std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  return out;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Stations, observations, ensembles
// ---------------------------------------------------------------------------

inline std::vector<Station> read_stations(const std::string& path) {
  csv::Reader r(path, {"id", "lat", "lon", "elev", "z0"});
  std::vector<Station> out;
  std::set<std::string> seen;
  while (r.next()) {
    Station s;
    s.id = std::string(r.field(0));
    if (s.id.empty()) r.fail("empty station id");
    if (!seen.insert(s.id).second) r.fail("duplicate station id '" + s.id + "'");
    s.latitude = r.number(1, "lat");
    s.longitude = r.number(2, "lon");
    s.elevation = r.number(3, "elev");
    s.roughness_length = r.optional_number(4, "z0");
    try {
      validate(s);
    } catch (const std::exception& e) {
      r.fail(e.what());
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError(path + ": no stations");
  return out;
}

inline void write_stations(const std::string& path, const StationNetwork& net) {
  auto out = csv::open_out(path);
  out << "id,lat,lon,elev,z0\n";
  for (const auto& s : net.stations()) {
    out << s.id << ',' << csv::num(s.latitude) << ',' << csv::num(s.longitude) << ',' << csv::num(s.elevation) << ','
        << (s.roughness_length ? csv::num(*s.roughness_length) : "") << '\n';
  }
}

inline const char* flag_name(CellState s) {
  switch (s) {
    case CellState::Observed: return "observed";
    case CellState::Censored: return "censored_at_c";
    case CellState::Missing: return "missing";
  }
  return "?";
}

/// One parsed observation row.
struct ObservationRow {
  HourStamp time{};
  std::string station;
  double value{};
  CellState flag{CellState::Observed};
};

inline std::vector<ObservationRow> read_observation_rows(const std::string& path) {
  csv::Reader r(path, {"timestamp", "station_id", "wind_ms", "flag"});
  std::vector<ObservationRow> out;
  while (r.next()) {
    ObservationRow row;
    row.time = r.timestamp(0);
    row.station = std::string(r.field(1));
    const auto flag = r.field(3);
    auto v = r.optional_number(2, "wind_ms");
    if (flag == "missing" || (!v && (flag.empty() || flag == "observed"))) {
      row.flag = CellState::Missing;
      row.value = std::numeric_limits<double>::quiet_NaN();
    } else if (flag == "censored_at_c") {
      row.flag = CellState::Censored;
      row.value = v ? *v : 0.0;
    } else if (flag == "observed" || flag.empty()) {
      if (*v < 0.0) r.fail("negative wind speed");
      row.flag = CellState::Observed;
      row.value = *v;
    } else {
      r.fail("unknown flag '" + std::string(flag) + "' (expected observed, censored_at_c or missing)");
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_observations(const std::string& path, const ObservationPanel& obs, const StationNetwork& net) {
  auto out = csv::open_out(path);
  out << "timestamp,station_id,wind_ms,flag\n";
  for (Eigen::Index t = 0; t < obs.hours(); ++t) {
    for (Eigen::Index i = 0; i < obs.sites(); ++i) {
      const auto s = obs.state(t, i);
      out << format_timestamp(obs.times[static_cast<std::size_t>(t)]) << ',' << net.station(static_cast<std::size_t>(i)).id
          << ',' << (s == CellState::Missing ? "" : csv::num(obs.values(t, i))) << ',' << flag_name(s) << '\n';
    }
  }
}

struct EnsembleRow {
  HourStamp time{};
  std::string station;
  long member{};
  double value{};
};

inline std::vector<EnsembleRow> read_ensemble_rows(const std::string& path) {
  csv::Reader r(path, {"timestamp", "station_id", "member_index", "forecast_ms"});
  std::vector<EnsembleRow> out;
  while (r.next()) {
    EnsembleRow row;
    row.time = r.timestamp(0);
    row.station = std::string(r.field(1));
    row.member = r.integer(2, "member_index");
    if (row.member < 0) r.fail("negative member_index");
    row.value = r.number(3, "forecast_ms");
    if (!(row.value >= 0.0)) r.fail("forecast_ms must be a non-negative number");
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_ensemble(const std::string& path, const ForecastPanel& fc, const StationNetwork& net) {
  auto out = csv::open_out(path);
  out << "timestamp,station_id,member_index,forecast_ms\n";
  for (Eigen::Index t = 0; t < fc.hours(); ++t)
    for (Eigen::Index i = 0; i < fc.n_sites; ++i)
      for (Eigen::Index k = 0; k < fc.n_members; ++k)
        out << format_timestamp(fc.times[static_cast<std::size_t>(t)]) << ',' << net.station(static_cast<std::size_t>(i)).id
            << ',' << k << ',' << csv::num(fc.member(t, i, k)) << '\n';
}

/**
 * @brief Ensemble panel for given stations and hours from ensemble rows.
 *
 * Member indices must form 0..m-1; every (hour, station, member) must be present.
 */
inline ForecastPanel assemble_ensemble(const std::vector<EnsembleRow>& rows, const StationNetwork& net,
                                       const std::vector<HourStamp>& times, const std::string& path = "ensemble") {
  std::map<HourStamp, std::size_t> tix;
  for (std::size_t t = 0; t < times.size(); ++t) tix[times[t]] = t;
  long m = 0;
  for (const auto& r : rows) m = std::max(m, r.member + 1);
  if (m == 0) throw DataError(path + ": no ensemble rows");
  const auto n = static_cast<Eigen::Index>(net.size());
  const auto T = static_cast<Eigen::Index>(times.size());
  std::vector<double> members(static_cast<std::size_t>(T * n * m), std::numeric_limits<double>::quiet_NaN());
  std::map<std::string, std::size_t> six;
  for (std::size_t i = 0; i < net.size(); ++i) six[net.station(i).id] = i;
  for (const auto& r : rows) {
    auto ti = tix.find(r.time);
    auto si = six.find(r.station);
    if (ti == tix.end() || si == six.end()) continue;
    members[(ti->second * static_cast<std::size_t>(n) + si->second) * static_cast<std::size_t>(m) +
            static_cast<std::size_t>(r.member)] = r.value;
  }
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < n; ++i)
      for (long k = 0; k < m; ++k)
        if (std::isnan(members[static_cast<std::size_t>((t * n + i) * m + k)])) {
          throw DataError(path + ": no forecast for " + format_timestamp(times[static_cast<std::size_t>(t)]) + ", station '" +
                          net.station(static_cast<std::size_t>(i)).id + "', member " + std::to_string(k));
        }
  return ForecastPanel::from_members(times, n, m, std::move(members));
}

// ---------------------------------------------------------------------------
// Gridded forecasts
// ---------------------------------------------------------------------------

/// Regular lat/lon grid of ensemble forecasts; values indexed (t, a, b, k).
struct GriddedForecast {
  std::vector<HourStamp> times;
  std::vector<double> lats;  // ascending
  std::vector<double> lons;  // ascending
  Eigen::Index members{};
  std::vector<double> values;

  double at(std::size_t t, std::size_t a, std::size_t b, Eigen::Index k) const {
    return values[((t * lats.size() + a) * lons.size() + b) * static_cast<std::size_t>(members) + static_cast<std::size_t>(k)];
  }

  /// Bilinear interpolation at (lat, lon); throws outside the grid hull.
  double interpolate(std::size_t t, double lat, double lon, Eigen::Index k) const {
    auto locate = [](const std::vector<double>& axis, double v, const char* what) {
      if (axis.size() < 2 || v < axis.front() - 1e-12 || v > axis.back() + 1e-12) {
        throw DataError(std::string("point outside the grid hull (") + what + " " + csv::num(v) + ")");
      }
      auto it = std::upper_bound(axis.begin(), axis.end(), v);
      std::size_t j = it == axis.begin() ? 0 : static_cast<std::size_t>(it - axis.begin()) - 1;
      j = std::min(j, axis.size() - 2);
      const double w = std::clamp((v - axis[j]) / (axis[j + 1] - axis[j]), 0.0, 1.0);
      return std::pair{j, w};
    };
    auto [a, wa] = locate(lats, lat, "latitude");
    auto [b, wb] = locate(lons, lon, "longitude");
    return (1 - wa) * (1 - wb) * at(t, a, b, k) + (1 - wa) * wb * at(t, a, b + 1, k) + wa * (1 - wb) * at(t, a + 1, b, k) +
           wa * wb * at(t, a + 1, b + 1, k);
  }
};

inline std::vector<double> regular_axis(std::set<double> values, const std::string& path, const char* what) {
  std::vector<double> axis(values.begin(), values.end());
  if (axis.size() < 2) throw DataError(path + ": grid needs at least 2 " + what + " values");
  const double step = axis[1] - axis[0];
  for (std::size_t j = 1; j < axis.size(); ++j) {
    if (std::abs((axis[j] - axis[j - 1]) - step) > 1e-9) throw DataError(path + ": irregular " + what + " spacing");
  }
  return axis;
}

/// Read a flat grid file with header time,lat,lon,member,value.
inline GriddedForecast read_grid(const std::string& path) {
  csv::Reader r(path, {"time", "lat", "lon", "member", "value"});
  struct Row {
    HourStamp t;
    double lat, lon;
    long k;
    double v;
  };
  std::vector<Row> rows;
  std::set<HourStamp> ts;
  std::set<double> la, lo;
  long m = 0;
  while (r.next()) {
    Row row{r.timestamp(0), r.number(1, "lat"), r.number(2, "lon"), r.integer(3, "member"), r.number(4, "value")};
    if (row.k < 0) r.fail("negative member");
    if (!(row.v >= 0.0)) r.fail("grid values must be non-negative");
    ts.insert(row.t);
    la.insert(row.lat);
    lo.insert(row.lon);
    m = std::max(m, row.k + 1);
    rows.push_back(row);
  }
  if (rows.empty()) throw DataError(path + ": no grid rows");
  GriddedForecast g;
  g.times.assign(ts.begin(), ts.end());
  g.lats = regular_axis(la, path, "latitude");
  g.lons = regular_axis(lo, path, "longitude");
  g.members = m;
  g.values.assign(g.times.size() * g.lats.size() * g.lons.size() * static_cast<std::size_t>(m),
                  std::numeric_limits<double>::quiet_NaN());
  auto index = [](const std::vector<double>& axis, double v) {
    return static_cast<std::size_t>(std::lower_bound(axis.begin(), axis.end(), v) - axis.begin());
  };
  for (const auto& row : rows) {
    const auto t = static_cast<std::size_t>(std::lower_bound(g.times.begin(), g.times.end(), row.t) - g.times.begin());
    const auto pos = ((t * g.lats.size() + index(g.lats, row.lat)) * g.lons.size() + index(g.lons, row.lon)) *
                         static_cast<std::size_t>(m) + static_cast<std::size_t>(row.k);
    g.values[pos] = row.v;
  }
  for (double v : g.values)
    if (std::isnan(v)) throw DataError(path + ": grid has missing (time, lat, lon, member) entries");
  return g;
}

/// Bilinear interpolation of every member and hour to the station locations.
inline ForecastPanel bilinear_to_stations(const GriddedForecast& g, const StationNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.size());
  const auto T = g.times.size();
  std::vector<double> members(T * static_cast<std::size_t>(n * g.members));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = net.station(static_cast<std::size_t>(i));
    for (std::size_t t = 0; t < T; ++t) {
      for (Eigen::Index k = 0; k < g.members; ++k) {
        double v;
        try {
          v = g.interpolate(t, s.latitude, s.longitude, k);
        } catch (const DataError& e) {
          throw DataError("station '" + s.id + "': " + e.what());
        }
        members[(t * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)) * static_cast<std::size_t>(g.members) +
                static_cast<std::size_t>(k)] = std::max(0.0, v);
      }
    }
  }
  return ForecastPanel::from_members(g.times, n, g.members, std::move(members));
}

// ---------------------------------------------------------------------------
// Roughness length
// ---------------------------------------------------------------------------

struct FluxRecord {
  HourStamp time{};
  std::string station;
  double temp_k{};
  double pressure_pa{};
  double ustar{};
  double obukhov_l{};
  double wind_ms{};
};

inline std::vector<FluxRecord> read_flux(const std::string& path) {
  csv::Reader r(path, {"timestamp", "station_id", "temp_k", "pressure_pa", "ustar", "obukhov_l", "wind_ms"});
  std::vector<FluxRecord> out;
  while (r.next()) {
    FluxRecord f{r.timestamp(0), std::string(r.field(1)), r.number(2, "temp_k"), r.number(3, "pressure_pa"),
                 r.number(4, "ustar"), r.number(5, "obukhov_l"), r.number(6, "wind_ms")};
    if (!(f.ustar > 0.0)) r.fail("ustar must be positive");
    if (f.obukhov_l == 0.0) r.fail("obukhov_l must be non-zero");
    if (!(f.pressure_pa > 0.0)) r.fail("pressure_pa must be positive");
    if (f.wind_ms < 0.0) r.fail("negative wind_ms");
    out.push_back(std::move(f));
  }
  return out;
}

/// Neutral-stability roughness length from one record (stability correction taken as 0).
inline double roughness_from_record(double wind, double ustar, double von_karman = 0.40, double height = 10.0) {
  if (!(ustar > 0.0)) throw std::invalid_argument("ustar must be positive");
  return height * std::exp(-wind * von_karman / ustar);
}

struct RoughnessEstimate {
  double z0{};
  /// Median by (month 1..12, hour 0..23); NaN where no neutral records exist.
  std::array<std::array<double, 24>, 12> table{};
  std::size_t neutral_records{};
  std::size_t flagged_zero_wind{};
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

/**
 * @brief Site roughness length: neutral records (|L| > 500 m) only, median per
 * (month, hour) cell, then the median over the filled cells.
 *
 * Zero-wind records give the degenerate z0 = height; they are counted in
 * `flagged_zero_wind` and left out.
 */
inline RoughnessEstimate roughness_length(const std::vector<FluxRecord>& records, double von_karman = 0.40,
                                          double height = 10.0, double neutral_l = 500.0) {
  std::array<std::array<std::vector<double>, 24>, 12> cells;
  RoughnessEstimate out;
  for (const auto& r : records) {
    if (!(std::abs(r.obukhov_l) > neutral_l)) continue;
    if (r.wind_ms == 0.0) {
      ++out.flagged_zero_wind;
      continue;
    }
    ++out.neutral_records;
    cells[month_of(r.time) - 1][static_cast<std::size_t>(hour_of_day(r.time))].push_back(
        roughness_from_record(r.wind_ms, r.ustar, von_karman, height));
  }
  if (out.neutral_records == 0) throw DataError("no neutral-stability flux records (|L| > 500 m)");
  std::vector<double> filled;
  for (std::size_t mo = 0; mo < 12; ++mo) {
    for (std::size_t h = 0; h < 24; ++h) {
      out.table[mo][h] = median_of(cells[mo][h]);
      if (!std::isnan(out.table[mo][h])) filled.push_back(out.table[mo][h]);
    }
  }
  out.z0 = median_of(filled);
  return out;
}

/// Group flux records by station and estimate each station's z0.
inline std::map<std::string, RoughnessEstimate> roughness_by_station(const std::vector<FluxRecord>& records,
                                                                     double von_karman = 0.40) {
  std::map<std::string, std::vector<FluxRecord>> by;
  for (const auto& r : records) by[r.station].push_back(r);
  std::map<std::string, RoughnessEstimate> out;
  for (const auto& [id, rs] : by) {
    try {
      out[id] = roughness_length(rs, von_karman);
    } catch (const DataError& e) {
      throw DataError("station '" + id + "': " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Panels
// ---------------------------------------------------------------------------

/// Rows of `fc` at exactly `times`; every hour must be present.
inline ForecastPanel select_times(const ForecastPanel& fc, const std::vector<HourStamp>& times, const std::string& what) {
  std::vector<double> members;
  members.reserve(times.size() * static_cast<std::size_t>(fc.n_sites * fc.n_members));
  const auto stride = static_cast<std::size_t>(fc.n_sites * fc.n_members);
  for (auto t : times) {
    auto it = std::lower_bound(fc.times.begin(), fc.times.end(), t);
    if (it == fc.times.end() || *it != t) throw DataError(what + ": no forecast for " + format_timestamp(t));
    const auto row = static_cast<std::size_t>(it - fc.times.begin());
    members.insert(members.end(), fc.members.begin() + static_cast<std::ptrdiff_t>(row * stride),
                   fc.members.begin() + static_cast<std::ptrdiff_t>((row + 1) * stride));
  }
  return ForecastPanel::from_members(times, fc.n_sites, fc.n_members, std::move(members));
}

struct PanelPaths {
  std::string stations;
  std::string observations;
  std::string ensemble;
};

struct LoadedPanels {
  StationNetwork network;
  ObservationPanel observations;
  ForecastPanel forecasts;
  std::vector<std::string> dropped;  // stations below the availability threshold
};

struct LoadOptions {
  double censor_threshold{0.0};
  double availability_min{0.70};
  std::function<void(const std::string&)> warn;
  const GriddedForecast* grid{nullptr};                     // ensemble interpolated from here when set
  const std::map<std::string, double>* roughness{nullptr};  // fills blank z0 values
};

/**
 * @brief Load the CSVs into aligned panels on the hourly grid spanning the
 * observation file.
 *
 * Stations with less than `availability_min` non-missing hours are dropped
 * (reported through `warn`). Readings at or below c are censored.
 */
inline LoadedPanels load_panels(const PanelPaths& paths, const LoadOptions& opt) {
  const double censor_threshold = opt.censor_threshold;
  const double availability_min = opt.availability_min;
  const auto& warn = opt.warn;
  auto stations = read_stations(paths.stations);
  if (opt.roughness) {
    for (auto& s : stations) {
      if (s.roughness_length) continue;
      auto it = opt.roughness->find(s.id);
      if (it != opt.roughness->end()) s.roughness_length = it->second;
    }
  }
  auto orows = read_observation_rows(paths.observations);
  if (orows.empty()) throw DataError(paths.observations + ": no observation rows");
  std::map<std::string, std::size_t> six;
  for (std::size_t i = 0; i < stations.size(); ++i) six[stations[i].id] = i;
  HourStamp t0 = orows.front().time, t1 = t0;
  for (const auto& r : orows) {
    if (!six.count(r.station)) throw DataError(paths.observations + ": unknown station_id '" + r.station + "'");
    t0 = std::min(t0, r.time);
    t1 = std::max(t1, r.time);
  }
  const auto T = static_cast<Eigen::Index>(t1 - t0 + 1);
  std::vector<HourStamp> times(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) times[static_cast<std::size_t>(t)] = t0 + t;
  Matrix raw = Matrix::Constant(T, static_cast<Eigen::Index>(stations.size()), std::numeric_limits<double>::quiet_NaN());
  std::vector<char> seen(static_cast<std::size_t>(raw.size()), 0);
  for (const auto& r : orows) {
    const auto t = static_cast<Eigen::Index>(r.time - t0);
    const auto i = static_cast<Eigen::Index>(six[r.station]);
    auto& s = seen[static_cast<std::size_t>(t * raw.cols() + i)];
    if (s) {
      throw DataError(paths.observations + ": duplicate observation for " + format_timestamp(r.time) + ", station '" +
                      r.station + "'");
    }
    s = 1;
    if (r.flag == CellState::Censored) {
      raw(t, i) = censor_threshold;
    } else {
      raw(t, i) = r.value;
    }
  }
  std::vector<std::size_t> keep;
  std::vector<std::string> dropped;
  for (std::size_t i = 0; i < stations.size(); ++i) {
    const auto avail = static_cast<double>((raw.col(static_cast<Eigen::Index>(i)).array() == raw.col(static_cast<Eigen::Index>(i)).array()).count()) /
                       static_cast<double>(T);
    if (avail + 1e-12 < availability_min) {
      dropped.push_back(stations[i].id);
      if (warn) {
        char msg[160];
        std::snprintf(msg, sizeof msg, "station '%s' dropped: %.1f%% data availability is below %.0f%%",
                      stations[i].id.c_str(), 100.0 * avail, 100.0 * availability_min);
        warn(msg);
      }
    } else {
      keep.push_back(i);
    }
  }
  if (keep.size() < 2) throw DataError("fewer than 2 stations meet the data-availability threshold");
  std::vector<Station> kept;
  Matrix kraw(T, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    kept.push_back(stations[keep[j]]);
    kraw.col(static_cast<Eigen::Index>(j)) = raw.col(static_cast<Eigen::Index>(keep[j]));
  }
  StationNetwork net(std::move(kept));
  auto obs = ObservationPanel::from_values(times, std::move(kraw), censor_threshold);
  ForecastPanel fc;
  if (opt.grid) {
    fc = select_times(bilinear_to_stations(*opt.grid, net), times, "grid");
  } else {
    fc = assemble_ensemble(read_ensemble_rows(paths.ensemble), net, times, paths.ensemble);
  }
  return {std::move(net), std::move(obs), std::move(fc), std::move(dropped)};
}

inline LoadedPanels load_panels(const PanelPaths& paths, double censor_threshold = 0.0, double availability_min = 0.70,
                                const std::function<void(const std::string&)>& warn = {}) {
  LoadOptions opt;
  opt.censor_threshold = censor_threshold;
  opt.availability_min = availability_min;
  opt.warn = warn;
  return load_panels(paths, opt);
}

}  // namespace stcal
