// Batch front end: fit, forecast, score, simulate, sensitivity.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "stcal/stcal.hpp"

namespace fs = std::filesystem;
using namespace stcal;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

void log(const std::string& msg) { std::cerr << "stcal: " << msg << '\n'; }

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* o = cmd->add_option("--config", c.config, "run configuration (JSON)");
  if (config_required) o->required();
  cmd->add_option("--seed", c.seed, "override the configured seed");
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
}

/// Config from --config (or defaults when absent) with command-line overrides applied.
RunConfig resolve(const Common& c, bool need_seed) {
  RunConfig run;
  if (!c.config.empty()) {
    run = load_run_config(c.config);
  } else if (!c.seed) {
    if (need_seed) throw ConfigError("a seed is required: pass --config with a \"seed\" or --seed");
  }
  if (c.seed) run.seed = *c.seed;
  if (c.threads) run.threads = *c.threads;
  if (!c.out.empty()) run.output = c.out;
  return run;
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(dir + ": cannot create output directory: " + ec.message());
  return fs::path(dir);
}

std::ofstream open_file(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError(p.string() + ": cannot open for writing");
  return out;
}

void wrote(const fs::path& p) { std::cout << p.string() << '\n'; }

LoadedPanels load_data(const RunConfig& run) {
  if (!run.data) throw ConfigError("data: this command needs a \"data\" block with input paths");
  const auto& d = *run.data;
  LoadOptions opt;
  opt.censor_threshold = d.censor_threshold;
  opt.availability_min = d.availability_min;
  opt.warn = [](const std::string& w) { log("warning: " + w); };
  std::optional<GriddedForecast> grid;
  if (!d.ensemble) {
    grid = read_grid(*d.grid);
    opt.grid = &*grid;
  }
  std::map<std::string, double> z0;
  if (d.flux) {
    for (const auto& [id, est] : roughness_by_station(read_flux(*d.flux))) z0[id] = est.z0;
    opt.roughness = &z0;
  }
  auto p = load_panels({d.stations, d.observations, d.ensemble.value_or("")}, opt);
  const auto c = p.observations.counts();
  log("loaded " + std::to_string(p.network.size()) + " stations x " + std::to_string(p.observations.hours()) +
      " hours (" + std::to_string(c[0]) + " observed, " + std::to_string(c[1]) + " censored, " + std::to_string(c[2]) +
      " missing)");
  return p;
}

Eigen::Index row_of(const ObservationPanel& obs, const std::string& stamp, const char* what) {
  const auto t = parse_timestamp(stamp);
  if (obs.times.empty() || t < obs.times.front() || t > obs.times.back()) {
    throw DataError(std::string(what) + ": " + stamp + " is outside the observation span");
  }
  return static_cast<Eigen::Index>(t - obs.times.front());
}

std::vector<Eigen::Index> schedule_origins(const RunConfig& run, const ObservationPanel& obs) {
  const Eigen::Index lo = run.model.training_window_hours - 1;
  const Eigen::Index hi = obs.hours() - 1 - run.forecast.horizon;
  if (hi < lo) {
    throw DataError("not enough data for one origin: need " + std::to_string(run.model.training_window_hours) +
                    " h of training plus " + std::to_string(run.forecast.horizon) + " h of verification");
  }
  const auto first = run.schedule.first_origin ? row_of(obs, *run.schedule.first_origin, "schedule.first_origin") : lo;
  const auto last = run.schedule.last_origin ? row_of(obs, *run.schedule.last_origin, "schedule.last_origin") : hi;
  if (first < lo || last > hi || first > last) {
    throw DataError("schedule: origins must lie between " + format_timestamp(obs.times[static_cast<std::size_t>(lo)]) +
                    " and " + format_timestamp(obs.times[static_cast<std::size_t>(hi)]));
  }
  std::vector<Eigen::Index> out;
  for (auto o = first; o <= last; o += run.schedule.step_hours) out.push_back(o);
  return out;
}

PredictOptions predict_options(const RunConfig& run) {
  PredictOptions p;
  p.member_count = run.forecast.members;
  p.lower_level = 0.5 * (1.0 - run.forecast.level);
  p.upper_level = 1.0 - p.lower_level;
  return p;
}

std::function<void(int, int)> iteration_progress(const std::string& label) {
  return [label](int done, int total) {
    if (done == total || done % std::max(1, total / 10) == 0) {
      log(label + ": iteration " + std::to_string(done) + "/" + std::to_string(total));
    }
  };
}

// ---------------------------------------------------------------------------

int cmd_fit(const Common& c) {
  const auto run = resolve(c, true);
  auto data = load_data(run);
  const auto last = run.fit_end ? row_of(data.observations, *run.fit_end, "fit.end") : data.observations.hours() - 1;
  FitOptions opt;
  opt.threads = run.threads;
  opt.progress = iteration_progress(model_name(run.model.kind));
  log("fitting " + std::string(model_name(run.model.kind)) + " on the " + std::to_string(run.model.training_window_hours) +
      " h ending " + format_timestamp(data.observations.times[static_cast<std::size_t>(last)]));
  auto m = fit(run.seeded_model(), data.observations, data.forecasts, data.network, last, opt);
  log("DIC " + csv::num(m.summary.dic) + ", LPML " + csv::num(m.summary.lpml) + ", RAM acceptance " +
      csv::num(m.summary.ram_acceptance));
  write_archive(run.output, m, run);
  wrote(fs::path(run.output));
  return 0;
}

void write_forecast_csv(const fs::path& p, const ProbabilisticForecast& f) {
  auto out = open_file(p);
  out << "origin,timestamp,station_id,horizon,median,lo90,hi90";
  for (int j = 1; j <= f.member_count; ++j) out << ",m" << j;
  out << '\n';
  for (int h = 0; h < f.horizon; ++h) {
    for (Eigen::Index i = 0; i < f.sites(); ++i) {
      out << format_timestamp(f.origin) << ',' << format_timestamp(f.times[static_cast<std::size_t>(h)]) << ','
          << f.stations[static_cast<std::size_t>(i)] << ',' << h + 1 << ',' << csv::num(f.median(h, i)) << ','
          << csv::num(f.lo(h, i)) << ',' << csv::num(f.hi(h, i));
      for (int j = 0; j < f.member_count; ++j) out << ',' << csv::num(f.member(h, i, j));
      out << '\n';
    }
  }
}

/// Grid ensemble mean/variance at field targets; NaN outside the grid (nearest station used instead).
std::optional<TargetEnsemble> target_ensemble(const RunConfig& run, HourStamp when,
                                              const std::vector<std::pair<double, double>>& points) {
  if (!run.data || !run.data->grid) return std::nullopt;
  const auto g = read_grid(*run.data->grid);
  auto it = std::find(g.times.begin(), g.times.end(), when);
  if (it == g.times.end()) return std::nullopt;
  const auto t = static_cast<std::size_t>(it - g.times.begin());
  TargetEnsemble e{Vector::Constant(static_cast<Eigen::Index>(points.size()), std::nan("")),
                   Vector::Constant(static_cast<Eigen::Index>(points.size()), std::nan(""))};
  for (std::size_t p = 0; p < points.size(); ++p) {
    std::vector<double> v;
    try {
      for (Eigen::Index k = 0; k < g.members; ++k) v.push_back(std::max(0.0, g.interpolate(t, points[p].first, points[p].second, k)));
    } catch (const DataError&) {
      continue;
    }
    double mu = 0.0, ss = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(v.size());
    for (double x : v) ss += (x - mu) * (x - mu);
    e.mean(static_cast<Eigen::Index>(p)) = mu;
    e.var(static_cast<Eigen::Index>(p)) = v.size() > 1 ? ss / static_cast<double>(v.size() - 1) : 0.0;
  }
  return e;
}

int cmd_forecast(const Common& c, const std::string& archive_dir, const std::string& future_path) {
  auto loaded = load_archive(archive_dir);
  RunConfig run = loaded.run;
  if (!c.config.empty()) {
    auto over = load_run_config(c.config);
    run.forecast = over.forecast;
    run.data = over.data;
    run.seed = over.seed;
  }
  if (c.seed) run.seed = *c.seed;
  if (!c.out.empty()) run.output = c.out;
  const auto& m = loaded.model;
  const int H = run.forecast.horizon;
  std::vector<HourStamp> times;
  for (int h = 1; h <= H; ++h) times.push_back(m.train_end + h);
  auto future = assemble_ensemble(read_ensemble_rows(future_path), m.network, times, future_path);
  const auto dir = ensure_dir(run.output);
  Random rng(mix_seed(run.seed, 1));
  log("forecasting " + std::to_string(H) + " h from " + format_timestamp(m.train_end) + " with " +
      std::to_string(m.draws.count) + " posterior draws");
  auto f = predict(m, future, H, rng, predict_options(run));
  write_forecast_csv(dir / "forecast.csv", f);
  wrote(dir / "forecast.csv");
  if (run.forecast.grid) {
    if (!is_spatial(m.config.kind)) {
      throw ConfigError(std::string("forecast.grid: ") + model_name(m.config.kind) + " has no spatial component");
    }
    const auto pts = run.forecast.grid->points();
    const int h = run.forecast.field_horizon;
    auto ens = target_ensemble(run, m.train_end + h, pts);
    Random frng(mix_seed(run.seed, 2));
    auto field = predict_field(m, future, h, pts, frng, ens ? &*ens : nullptr, predict_options(run));
    auto out = open_file(dir / "field.csv");
    out << "lat,lon,median,lo90,hi90\n";
    for (std::size_t p = 0; p < pts.size(); ++p) {
      const auto k = static_cast<Eigen::Index>(p);
      out << csv::num(pts[p].first) << ',' << csv::num(pts[p].second) << ',' << csv::num(field.median(k)) << ','
          << csv::num(field.lo(k)) << ',' << csv::num(field.hi(k)) << '\n';
    }
    wrote(dir / "field.csv");
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<ScoredCase> read_forecast_cases(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw DataError(path + ": cannot open file");
  std::string first;
  if (!std::getline(probe, first)) throw DataError(path + ": empty file");
  auto cols = csv::split(first);
  std::vector<std::string> header(cols.begin(), cols.end());
  const std::vector<std::string> fixed{"origin", "timestamp", "station_id", "horizon", "median", "lo90", "hi90"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    throw DataError(path + ":1: header must start with origin,timestamp,station_id,horizon,median,lo90,hi90");
  }
  const auto k = header.size() - fixed.size();
  for (std::size_t j = 0; j < k; ++j) {
    if (header[fixed.size() + j] != "m" + std::to_string(j + 1)) throw DataError(path + ":1: bad member column '" + header[fixed.size() + j] + "'");
  }
  csv::Reader r(path, header);
  std::vector<ScoredCase> out;
  while (r.next()) {
    ScoredCase c;
    c.origin = r.timestamp(0);
    c.time = r.timestamp(1);
    c.station = std::string(r.field(2));
    c.horizon = static_cast<int>(r.integer(3, "horizon"));
    c.median = r.number(4, "median");
    c.lo = r.number(5, "lo90");
    c.hi = r.number(6, "hi90");
    if (c.lo > c.hi) r.fail("lo90 exceeds hi90");
    for (std::size_t j = 0; j < k; ++j) c.members.push_back(r.number(fixed.size() + j, "member"));
    out.push_back(std::move(c));
  }
  if (out.empty()) throw DataError(path + ": no forecast rows");
  return out;
}

json report_json(const ScoreReport& r) {
  json j{{"label", r.label}, {"cases", r.cases}};
  if (r.cases == 0) return j;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["d"] = r.d;
  j["interval_score"] = r.interval_score;
  if (!r.rank_histogram.empty()) {
    j["rank_histogram"] = r.rank_histogram;
    j["rank_uniformity_pvalue"] = r.rank_pvalue;
  }
  const auto& d = r.decomposition;
  j["rmse_decomposition"] = json{{"bias", d.bias},           {"sd_forecast", d.sd_forecast}, {"sd_actual", d.sd_actual},
                                 {"correlation", d.correlation}, {"amplitude", d.amplitude},     {"phase", d.phase},
                                 {"mse", d.mse}};
  return j;
}

int cmd_score(const Common& c, const std::string& forecast_path, const std::string& actuals_path) {
  const auto run = resolve(c, true);
  const double cthr = run.data ? run.data->censor_threshold : 0.0;
  auto cases = read_forecast_cases(forecast_path);
  std::map<std::pair<HourStamp, std::string>, double> actual;
  for (const auto& row : read_observation_rows(actuals_path)) {
    double v = row.value;
    if (row.flag == CellState::Censored) v = cthr;
    if (row.flag == CellState::Observed && v <= cthr) v = cthr;
    actual[{row.time, row.station}] = v;
  }
  std::size_t matched = 0;
  for (auto& cs : cases) {
    auto it = actual.find({cs.time, cs.station});
    if (it != actual.end() && !std::isnan(it->second)) {
      cs.actual = it->second;
      ++matched;
    }
  }
  log("scoring " + std::to_string(matched) + " of " + std::to_string(cases.size()) + " forecasts with a verifying observation");
  if (matched == 0) throw DataError(actuals_path + ": no observation matches any forecast (timestamp, station_id)");
  const auto reports = score_by_season(cases, mix_seed(run.seed, 3), 1.0 - run.forecast.level);
  const auto dir = ensure_dir(run.output);

  json rep{{"forecast", forecast_path}, {"actuals", actuals_path}, {"level", run.forecast.level}};
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_json(r));
  rep["reports"] = arr;
  archive::write_text(dir / "report.json", rep.dump(2) + "\n");
  wrote(dir / "report.json");

  auto seasons = open_file(dir / "seasons.csv");
  seasons << "group,cases,mae,rmse,d,is\n";
  for (const auto& r : reports) {
    seasons << r.label << ',' << r.cases;
    if (r.cases) seasons << ',' << csv::num(r.mae) << ',' << csv::num(r.rmse) << ',' << csv::num(r.d) << ',' << csv::num(r.interval_score);
    else seasons << ",,,,";
    seasons << '\n';
  }
  wrote(dir / "seasons.csv");

  auto ranks = open_file(dir / "rank_histogram.csv");
  ranks << "group,rank,count\n";
  for (const auto& r : reports)
    for (std::size_t b = 0; b < r.rank_histogram.size(); ++b) ranks << r.label << ',' << b + 1 << ',' << r.rank_histogram[b] << '\n';
  wrote(dir / "rank_histogram.csv");

  auto dec = open_file(dir / "rmse_decomposition.csv");
  dec << "group,rmse,bias,sd_forecast,sd_actual,correlation,amplitude,phase,amplitude_share,phase_share\n";
  for (const auto& r : reports) {
    if (!r.cases) continue;
    const auto& d = r.decomposition;
    dec << r.label << ',' << csv::num(r.rmse) << ',' << csv::num(d.bias) << ',' << csv::num(d.sd_forecast) << ','
        << csv::num(d.sd_actual) << ',' << csv::num(d.correlation) << ',' << csv::num(d.amplitude) << ','
        << csv::num(d.phase) << ',' << csv::num(d.amplitude_share()) << ',' << csv::num(d.phase_share()) << '\n';
  }
  wrote(dir / "rmse_decomposition.csv");
  return 0;
}

// ---------------------------------------------------------------------------

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

int cmd_simulate(const Common& c) {
  const auto run = resolve(c, true);
  const auto& s = run.scenario;
  SimulatedData data;
  if (s.type == "recovery") {
    log("simulating a recovery dataset: " + std::to_string(s.sites) + " sites x " + std::to_string(s.hours) + " h");
    data = generate_recovery_dataset(s.sites, s.hours, s.lambda, s.phi_decay, run.model.discounts, run.seed);
  } else {
    log("simulating scenario " + std::to_string(s.scenario) + ": " + std::to_string(s.sites) + " sites x " +
        std::to_string(s.hours) + " h");
    ScenarioSpec spec;
    spec.scenario = s.scenario;
    spec.sites = s.sites;
    spec.hours = s.hours;
    spec.width_km = s.width_km;
    spec.ensemble = s.ensemble;
    spec.seed = run.seed;
    spec.ensemble_seed = s.ensemble_seed;
    data = generate_scenario(spec);
  }
  const auto dir = ensure_dir(run.output);
  write_stations((dir / "stations.csv").string(), data.network);
  write_observations((dir / "observations.csv").string(), data.observations, data.network);
  write_ensemble((dir / "ensemble.csv").string(), data.forecasts, data.network);
  const auto& t = data.truth;
  const auto& g = t.spec;
  json truth{{"type", s.type},
             {"seed", run.seed},
             {"model", model_name(g.kind)},
             {"lambda", g.lambda},
             {"censor_threshold", g.censor},
             {"sigma2", g.sigma2},
             {"phi_decay", t.phi_decay},
             {"beta", {g.beta0, g.beta1}},
             {"theta_mean", vec_json(g.theta_mean)},
             {"evolution_var", vec_json(g.evolution_var)},
             {"trend_reversion", g.trend_reversion},
             {"seasonal_reversion", g.seasonal_reversion},
             {"seasonal_beat", g.seasonal_beat},
             {"variance_discount", g.variance_discount},
             {"precision_dof", g.precision_dof},
             {"harmonic_period", g.harmonic_period},
             {"discount_driven", g.discount_driven},
             {"discounts", to_json(g.discounts)},
             {"theta", mat_json(t.theta)},
             {"precision", vec_json(t.precision)},
             {"latent", mat_json(t.latent)}};
  if (s.type == "scenario") truth["scenario"] = s.scenario;
  archive::write_text(dir / "truth.json", truth.dump(1) + "\n");
  for (const char* f : {"stations.csv", "observations.csv", "ensemble.csv", "truth.json"}) wrote(dir / f);
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_sensitivity(const Common& c) {
  const auto run = resolve(c, true);
  auto data = load_data(run);
  const auto origins = schedule_origins(run, data.observations);
  const auto dir = ensure_dir(run.output);
  auto out = open_file(dir / "sensitivity.csv");
  out << "model,setup,delta_T,delta_S,delta_V,origins,mae,rmse,d,is,dic,lpml\n";
  for (auto kind : run.sensitivity.models) {
    for (const auto& setup : run.sensitivity.setups) {
      ModelConfig cfg = run.seeded_model();
      cfg.kind = kind;
      cfg.discounts = setup.discounts;
      log(std::string(model_name(kind)) + " setup " + setup.label + ": " + std::to_string(origins.size()) + " origins");
      RollingOptions ro;
      ro.horizon = run.forecast.horizon;
      ro.threads = run.threads;
      ro.predict = predict_options(run);
      ro.progress = [&](std::size_t done, std::size_t total) {
        log("  origin " + std::to_string(done) + "/" + std::to_string(total));
      };
      auto results = rolling_calibration(cfg, data.observations, data.forecasts, data.network, origins, ro);
      auto cases = to_cases(results);
      std::vector<const ScoredCase*> ptrs;
      for (const auto& cs : cases) ptrs.push_back(&cs);
      Random rng(mix_seed(run.seed, 3));
      const auto r = score_cases(ptrs, "overall", rng, 1.0 - run.forecast.level);
      double dic = 0.0, lpml = 0.0;
      for (const auto& res : results) {
        dic += res.summary.dic;
        lpml += res.summary.lpml;
      }
      dic /= static_cast<double>(results.size());
      lpml /= static_cast<double>(results.size());
      out << model_name(kind) << ',' << setup.label << ',' << csv::num(setup.discounts.trend) << ','
          << csv::num(setup.discounts.seasonal) << ','
          << (kind == ModelKind::DGOP ? csv::num(setup.discounts.variance) : std::string("-")) << ','
          << results.size() << ',' << csv::num(r.mae) << ',' << csv::num(r.rmse) << ',' << csv::num(r.d) << ','
          << csv::num(r.interval_score) << ',' << csv::num(dic) << ',' << csv::num(lpml) << '\n';
      out.flush();
    }
  }
  wrote(dir / "sensitivity.csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal calibration of ensemble wind-speed forecasts"};
  app.require_subcommand(1);
  Common common;
  std::string archive_dir, future_path, forecast_path, actuals_path;

  auto* fit_cmd = app.add_subcommand("fit", "fit a model and write a fitted-model archive");
  add_common(fit_cmd, common, true);
  auto* fc_cmd = app.add_subcommand("forecast", "forecast from an archive and future ensemble forecasts");
  add_common(fc_cmd, common, false);
  fc_cmd->add_option("--archive", archive_dir, "fitted-model archive directory")->required();
  fc_cmd->add_option("--future", future_path, "ensemble CSV covering the forecast hours")->required();
  auto* score_cmd = app.add_subcommand("score", "score forecasts against observations");
  add_common(score_cmd, common, false);
  score_cmd->add_option("--forecast", forecast_path, "forecast CSV")->required();
  score_cmd->add_option("--actuals", actuals_path, "observations CSV")->required();
  auto* sim_cmd = app.add_subcommand("simulate", "write a simulated dataset and its truth");
  add_common(sim_cmd, common, true);
  auto* sens_cmd = app.add_subcommand("sensitivity", "rolling evaluation over discount-factor setups");
  add_common(sens_cmd, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*fit_cmd) return cmd_fit(common);
    if (*fc_cmd) return cmd_forecast(common, archive_dir, future_path);
    if (*score_cmd) return cmd_score(common, forecast_path, actuals_path);
    if (*sim_cmd) return cmd_simulate(common);
    if (*sens_cmd) return cmd_sensitivity(common);
  } catch (const ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return 2;
  } catch (const DataError& e) {
    log(std::string("data error: ") + e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    log(std::string("data error: ") + e.what());
    return 3;
  } catch (const NumericalError& e) {
    log(std::string("numerical failure: ") + e.what());
    return 4;
  } catch (const std::exception& e) {
    log(std::string("failure: ") + e.what());
    return 4;
  }
  return 0;
}
