#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stcal/calibrators.hpp"
#include "stcal/domain.hpp"
#include "stcal/errors.hpp"
#include "stcal/simulate.hpp"
#include "stcal/timeutil.hpp"

namespace stcal {

using json = nlohmann::ordered_json;

struct DataConfig {
  std::string stations;
  std::string observations;
  std::optional<std::string> ensemble;
  std::optional<std::string> grid;  // flat grid CSV, interpolated to stations when `ensemble` is absent
  std::optional<std::string> flux;  // fills stations whose z0 is blank
  double censor_threshold{0.0};
  double availability_min{0.70};

  bool operator==(const DataConfig&) const = default;
};

struct ForecastConfig {
  int horizon{24};
  int members{9};
  double level{0.90};
  std::optional<GridSpec> grid;
  int field_horizon{24};

  bool operator==(const ForecastConfig&) const = default;
};

/// Rolling origins (last training hours), every `step_hours` between first and last.
struct ScheduleConfig {
  std::optional<std::string> first_origin;
  std::optional<std::string> last_origin;
  int step_hours{24};

  bool operator==(const ScheduleConfig&) const = default;
};

struct ScenarioConfig {
  std::string type{"scenario"};  // "scenario" or "recovery"
  int scenario{1};
  int sites{20};
  int hours{480};
  double width_km{600.0};
  std::uint64_t ensemble_seed{20240};
  EnsembleSpec ensemble{};
  double lambda{0.5};                // recovery only
  std::optional<double> phi_decay;   // recovery only; default: half-max-distance practical range

  bool operator==(const ScenarioConfig&) const = default;
};

struct SensitivitySetup {
  std::string label;
  Discounts discounts;

  bool operator==(const SensitivitySetup&) const = default;
};

inline std::vector<SensitivitySetup> default_sensitivity_setups() {
  return {{"A", {0.99, 0.99, 0.99}}, {"B", {0.99, 0.95, 0.99}}, {"C", {0.99, 0.99, 0.90}},
          {"D", {0.99, 0.95, 0.90}}, {"E", {0.95, 0.99, 0.99}}, {"F", {0.90, 0.99, 0.99}}};
}

struct SensitivityConfig {
  std::vector<ModelKind> models{ModelKind::DGOP};
  std::vector<SensitivitySetup> setups = default_sensitivity_setups();

  bool operator==(const SensitivityConfig&) const = default;
};

/// Everything one CLI invocation needs.
struct RunConfig {
  std::uint64_t seed{};
  int threads{1};
  ModelConfig model{};
  std::optional<DataConfig> data;
  std::optional<std::string> fit_end;
  ForecastConfig forecast{};
  ScheduleConfig schedule{};
  ScenarioConfig scenario{};
  SensitivityConfig sensitivity{};
  std::string output{"out"};

  bool operator==(const RunConfig&) const = default;

  /// Model config with the run seed applied.
  ModelConfig seeded_model() const {
    ModelConfig m = model;
    m.mcmc.seed = seed;
    return m;
  }
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

/// Object view that remembers consumed keys so leftovers can be rejected.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (has(key)) out = convert<T>(j_.at(key), path(key));
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    used_.insert(key);
    if (has(key)) {
      out = convert<T>(j_.at(key), path(key));
    } else {
      out.reset();
    }
  }

  template <class T>
  T require(const char* key) {
    used_.insert(key);
    if (!has(key)) throw ConfigError(path(key) + ": required field is missing");
    return convert<T>(j_.at(key), path(key));
  }

  Fields child(const char* key) {
    used_.insert(key);
    return Fields(j_.at(key), path(key));
  }

  void mark(const char* key) { used_.insert(key); }
  const std::string& where() const { return where_; }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(path(it.key()) + ": unknown key");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        throw ConfigError(where + ": integer out of range");
      }
      return static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline void check_timestamp(const std::optional<std::string>& s, const std::string& where) {
  if (!s) return;
  try {
    parse_timestamp(*s);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline Discounts parse_discounts(Fields f) {
  Discounts d;
  f.get("trend", d.trend);
  f.get("seasonal", d.seasonal);
  f.get("variance", d.variance);
  f.finish();
  return d;
}

inline ModelKind parse_kind(const json& v, const std::string& where) {
  const auto s = Fields::convert<std::string>(v, where);
  try {
    return parse_model_kind(s);
  } catch (const std::exception&) {
    throw ConfigError(where + ": unknown model '" + s + "' (expected MOS, GOP, SEMOS, DMOS, DGOP or STEMOS)");
  }
}

inline ModelConfig parse_model(Fields f) {
  ModelConfig m;
  for (const char* k : {"kind", "discounts", "mcmc", "priors"}) f.mark(k);
  if (f.has("kind")) m.kind = parse_kind(f.raw("kind"), f.path("kind"));
  if (f.has("discounts")) m.discounts = parse_discounts(f.child("discounts"));
  f.get("training_window_hours", m.training_window_hours);
  if (f.has("mcmc")) {
    auto g = f.child("mcmc");
    g.get("iterations", m.mcmc.iterations);
    g.get("burn_in", m.mcmc.burn_in);
    g.get("thin", m.mcmc.thin);
    g.get("chains", m.mcmc.chains);
    g.finish();
  }
  if (f.has("priors")) {
    auto g = f.child("priors");
    g.get("theta0_scale", m.priors.theta0_scale);
    g.get("n0", m.priors.n0);
    g.get("d0", m.priors.d0);
    g.get("lambda_mean", m.priors.lambda_mean);
    g.get("lambda_var", m.priors.lambda_var);
    g.get("phi_shape", m.priors.phi_shape);
    g.get("phi_rate", m.priors.phi_rate);
    g.get("beta_var", m.priors.beta_var);
    g.finish();
  }
  f.get("harmonic_period", m.harmonic_period);
  f.get("fixed_lambda", m.fixed_lambda);
  f.get("fixed_phi", m.fixed_phi);
  if (f.has("censored_move")) {
    const auto s = f.require<std::string>("censored_move");
    if (s == "shift") {
      m.censored_move = CensoredMove::Shift;
    } else if (s == "fixed") {
      m.censored_move = CensoredMove::Fixed;
    } else {
      throw ConfigError(f.path("censored_move") + ": expected \"shift\" or \"fixed\"");
    }
  } else {
    f.mark("censored_move");
  }
  f.get("ram_target_acceptance", m.ram_target_acceptance);
  f.get("ram_gamma", m.ram_gamma);
  f.get("initial_lambda", m.initial_lambda);
  f.finish();
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(f.where() + ": " + e.what());
  }
  return m;
}

inline GridSpec parse_grid(Fields f) {
  GridSpec g;
  g.lat_min = f.require<double>("lat_min");
  g.lat_max = f.require<double>("lat_max");
  g.lon_min = f.require<double>("lon_min");
  g.lon_max = f.require<double>("lon_max");
  f.get("resolution", g.resolution);
  f.finish();
  try {
    (void)g.points();
  } catch (const ConfigError& e) {
    throw ConfigError(f.where() + ": " + e.what());
  }
  return g;
}

}  // namespace detail

/// Parse and validate a run configuration; every unknown key is an error.
inline RunConfig parse_run_config(const json& j) {
  using detail::Fields;
  Fields top(j, "");
  RunConfig c;
  c.seed = top.require<std::uint64_t>("seed");
  top.get("threads", c.threads);
  if (c.threads < 1) throw ConfigError("threads: must be >= 1");
  if (top.has("model")) c.model = detail::parse_model(top.child("model"));
  if (top.has("data")) {
    auto f = top.child("data");
    DataConfig d;
    d.stations = f.require<std::string>("stations");
    d.observations = f.require<std::string>("observations");
    f.get("ensemble", d.ensemble);
    f.get("grid", d.grid);
    f.get("flux", d.flux);
    f.get("censor_threshold", d.censor_threshold);
    f.get("availability_min", d.availability_min);
    f.finish();
    if (!d.ensemble && !d.grid) throw ConfigError("data: one of 'ensemble' or 'grid' is required");
    if (!(d.availability_min >= 0.0 && d.availability_min <= 1.0)) {
      throw ConfigError("data.availability_min: must lie in [0, 1]");
    }
    c.data = d;
  } else {
    top.mark("data");
  }
  if (top.has("fit")) {
    auto f = top.child("fit");
    f.get("end", c.fit_end);
    f.finish();
    detail::check_timestamp(c.fit_end, "fit.end");
  } else {
    top.mark("fit");
  }
  if (top.has("forecast")) {
    auto f = top.child("forecast");
    f.get("horizon", c.forecast.horizon);
    f.get("members", c.forecast.members);
    f.get("level", c.forecast.level);
    if (f.has("grid")) c.forecast.grid = detail::parse_grid(f.child("grid"));
    else f.mark("grid");
    f.get("field_horizon", c.forecast.field_horizon);
    f.finish();
    if (c.forecast.horizon < 1) throw ConfigError("forecast.horizon: must be >= 1");
    if (c.forecast.members < 1) throw ConfigError("forecast.members: must be >= 1");
    if (!(c.forecast.level > 0.0 && c.forecast.level < 1.0)) throw ConfigError("forecast.level: must lie in (0, 1)");
    if (c.forecast.field_horizon < 1 || c.forecast.field_horizon > c.forecast.horizon) {
      throw ConfigError("forecast.field_horizon: must lie in [1, horizon]");
    }
  } else {
    top.mark("forecast");
  }
  if (top.has("schedule")) {
    auto f = top.child("schedule");
    f.get("first_origin", c.schedule.first_origin);
    f.get("last_origin", c.schedule.last_origin);
    f.get("step_hours", c.schedule.step_hours);
    f.finish();
    detail::check_timestamp(c.schedule.first_origin, "schedule.first_origin");
    detail::check_timestamp(c.schedule.last_origin, "schedule.last_origin");
    if (c.schedule.step_hours < 1) throw ConfigError("schedule.step_hours: must be >= 1");
  } else {
    top.mark("schedule");
  }
  if (top.has("scenario")) {
    auto f = top.child("scenario");
    auto& s = c.scenario;
    f.get("type", s.type);
    f.get("scenario", s.scenario);
    f.get("sites", s.sites);
    f.get("hours", s.hours);
    f.get("width_km", s.width_km);
    f.get("ensemble_seed", s.ensemble_seed);
    if (f.has("ensemble")) {
      auto e = f.child("ensemble");
      e.get("members", s.ensemble.members);
      e.get("level", s.ensemble.level);
      e.get("diurnal", s.ensemble.diurnal);
      e.get("spatial_sd", s.ensemble.spatial_sd);
      e.get("nature_ar", s.ensemble.nature_ar);
      e.get("nature_sd", s.ensemble.nature_sd);
      e.get("member_bias_sd", s.ensemble.member_bias_sd);
      e.get("member_ar", s.ensemble.member_ar);
      e.get("member_sd", s.ensemble.member_sd);
      e.finish();
    } else {
      f.mark("ensemble");
    }
    f.get("lambda", s.lambda);
    f.get("phi_decay", s.phi_decay);
    f.finish();
    if (s.type != "scenario" && s.type != "recovery") {
      throw ConfigError("scenario.type: expected \"scenario\" or \"recovery\"");
    }
    if (s.type == "scenario" && (s.scenario < 1 || s.scenario > 3)) throw ConfigError("scenario.scenario: must be 1, 2 or 3");
    if (s.sites < 3 || s.hours < 48) throw ConfigError("scenario: needs at least 3 sites and 48 hours");
    if (!(s.width_km > 0.0)) throw ConfigError("scenario.width_km: must be positive");
    if (s.ensemble.members < 1) throw ConfigError("scenario.ensemble.members: must be >= 1");
    if (s.phi_decay && !(*s.phi_decay > 0.0)) throw ConfigError("scenario.phi_decay: must be positive");
  } else {
    top.mark("scenario");
  }
  if (top.has("sensitivity")) {
    auto f = top.child("sensitivity");
    if (f.has("models")) {
      const auto& arr = f.raw("models");
      if (!arr.is_array() || arr.empty()) throw ConfigError("sensitivity.models: expected a non-empty array");
      c.sensitivity.models.clear();
      for (std::size_t k = 0; k < arr.size(); ++k) {
        const auto where = "sensitivity.models[" + std::to_string(k) + "]";
        auto kind = detail::parse_kind(arr[k], where);
        if (!is_dynamic(kind)) throw ConfigError(where + ": discount sensitivity needs a dynamic model");
        c.sensitivity.models.push_back(kind);
      }
    } else {
      f.mark("models");
    }
    if (f.has("setups")) {
      const auto& arr = f.raw("setups");
      if (!arr.is_array() || arr.empty()) throw ConfigError("sensitivity.setups: expected a non-empty array");
      c.sensitivity.setups.clear();
      for (std::size_t k = 0; k < arr.size(); ++k) {
        const auto where = "sensitivity.setups[" + std::to_string(k) + "]";
        Fields g(arr[k], where);
        SensitivitySetup s;
        s.label = g.require<std::string>("label");
        s.discounts.trend = g.require<double>("trend");
        s.discounts.seasonal = g.require<double>("seasonal");
        g.get("variance", s.discounts.variance);
        g.finish();
        auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
        if (!in_unit(s.discounts.trend) || !in_unit(s.discounts.seasonal) || !in_unit(s.discounts.variance)) {
          throw ConfigError(where + ": discount factors must lie in (0, 1]");
        }
        c.sensitivity.setups.push_back(s);
      }
    } else {
      f.mark("setups");
    }
    f.finish();
  } else {
    top.mark("sensitivity");
  }
  top.get("output", c.output);
  top.finish();
  return c;
}

/// Parse from text; JSON syntax errors become ConfigErrors carrying `source`.
inline RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  return parse_run_config(text, path);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const Discounts& d) {
  return json{{"trend", d.trend}, {"seasonal", d.seasonal}, {"variance", d.variance}};
}

inline json to_json(const ModelConfig& m) {
  json j;
  j["kind"] = model_name(m.kind);
  j["discounts"] = to_json(m.discounts);
  j["training_window_hours"] = m.training_window_hours;
  j["mcmc"] = json{{"iterations", m.mcmc.iterations}, {"burn_in", m.mcmc.burn_in}, {"thin", m.mcmc.thin},
                   {"chains", m.mcmc.chains}};
  json p{{"theta0_scale", m.priors.theta0_scale}, {"n0", m.priors.n0},          {"d0", m.priors.d0},
         {"lambda_mean", m.priors.lambda_mean},   {"lambda_var", m.priors.lambda_var}, {"phi_shape", m.priors.phi_shape}};
  if (m.priors.phi_rate) p["phi_rate"] = *m.priors.phi_rate;
  p["beta_var"] = m.priors.beta_var;
  j["priors"] = p;
  j["harmonic_period"] = m.harmonic_period;
  if (m.fixed_lambda) j["fixed_lambda"] = *m.fixed_lambda;
  if (m.fixed_phi) j["fixed_phi"] = *m.fixed_phi;
  j["censored_move"] = m.censored_move == CensoredMove::Shift ? "shift" : "fixed";
  j["ram_target_acceptance"] = m.ram_target_acceptance;
  j["ram_gamma"] = m.ram_gamma;
  j["initial_lambda"] = m.initial_lambda;
  return j;
}

inline json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["model"] = to_json(c.model);
  if (c.data) {
    const auto& d = *c.data;
    json dj{{"stations", d.stations}, {"observations", d.observations}};
    if (d.ensemble) dj["ensemble"] = *d.ensemble;
    if (d.grid) dj["grid"] = *d.grid;
    if (d.flux) dj["flux"] = *d.flux;
    dj["censor_threshold"] = d.censor_threshold;
    dj["availability_min"] = d.availability_min;
    j["data"] = dj;
  }
  if (c.fit_end) j["fit"] = json{{"end", *c.fit_end}};
  json f{{"horizon", c.forecast.horizon}, {"members", c.forecast.members}, {"level", c.forecast.level}};
  if (c.forecast.grid) {
    const auto& g = *c.forecast.grid;
    f["grid"] = json{{"lat_min", g.lat_min}, {"lat_max", g.lat_max}, {"lon_min", g.lon_min}, {"lon_max", g.lon_max},
                     {"resolution", g.resolution}};
  }
  f["field_horizon"] = c.forecast.field_horizon;
  j["forecast"] = f;
  json s;
  if (c.schedule.first_origin) s["first_origin"] = *c.schedule.first_origin;
  if (c.schedule.last_origin) s["last_origin"] = *c.schedule.last_origin;
  s["step_hours"] = c.schedule.step_hours;
  j["schedule"] = s;
  const auto& sc = c.scenario;
  const auto& e = sc.ensemble;
  json sj{{"type", sc.type},
          {"scenario", sc.scenario},
          {"sites", sc.sites},
          {"hours", sc.hours},
          {"width_km", sc.width_km},
          {"ensemble_seed", sc.ensemble_seed},
          {"ensemble",
           {{"members", e.members},
            {"level", e.level},
            {"diurnal", e.diurnal},
            {"spatial_sd", e.spatial_sd},
            {"nature_ar", e.nature_ar},
            {"nature_sd", e.nature_sd},
            {"member_bias_sd", e.member_bias_sd},
            {"member_ar", e.member_ar},
            {"member_sd", e.member_sd}}},
          {"lambda", sc.lambda}};
  if (sc.phi_decay) sj["phi_decay"] = *sc.phi_decay;
  j["scenario"] = sj;
  json models = json::array();
  for (auto k : c.sensitivity.models) models.push_back(model_name(k));
  json setups = json::array();
  for (const auto& s : c.sensitivity.setups) {
    setups.push_back(json{{"label", s.label},
                          {"trend", s.discounts.trend},
                          {"seasonal", s.discounts.seasonal},
                          {"variance", s.discounts.variance}});
  }
  j["sensitivity"] = json{{"models", models}, {"setups", setups}};
  j["output"] = c.output;
  return j;
}

inline std::string serialize(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace stcal
