#include <gtest/gtest.h>

#include <filesystem>

#include "stcal/archive.hpp"
#include "stcal/config.hpp"
#include "stcal/simulate.hpp"

using namespace stcal;
namespace fs = std::filesystem;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_run_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunConfig random_config(std::uint64_t seed) {
  Random rng(seed);
  RunConfig c;
  c.seed = rng.engine()();
  c.threads = 1 + static_cast<int>(rng.uniform() * 4);
  c.model.kind = kAllModels[static_cast<std::size_t>(rng.uniform() * 6)];
  c.model.discounts = {0.9 + 0.1 * rng.uniform(), 0.9 + 0.1 * rng.uniform(), 0.9 + 0.1 * rng.uniform()};
  c.model.training_window_hours = 48 + static_cast<int>(rng.uniform() * 400);
  c.model.mcmc.iterations = 1000 + static_cast<int>(rng.uniform() * 1000);
  c.model.mcmc.burn_in = static_cast<int>(rng.uniform() * 500);
  c.model.mcmc.thin = 1 + static_cast<int>(rng.uniform() * 5);
  c.model.priors.lambda_var = rng.uniform() * 20.0 + 0.1;
  if (rng.uniform() < 0.5) c.model.priors.phi_rate = rng.uniform() * 100.0 + 1.0;
  if (rng.uniform() < 0.5) c.model.fixed_lambda = rng.uniform();
  c.model.censored_move = rng.uniform() < 0.5 ? CensoredMove::Shift : CensoredMove::Fixed;
  c.model.ram_gamma = 0.51 + 0.49 * rng.uniform();
  if (rng.uniform() < 0.7) {
    DataConfig d{"s.csv", "o.csv", std::nullopt, std::nullopt, std::nullopt, rng.uniform(), rng.uniform()};
    if (rng.uniform() < 0.5) d.ensemble = "e.csv"; else d.grid = "g.csv";
    if (rng.uniform() < 0.5) d.flux = "f.csv";
    c.data = d;
  }
  if (rng.uniform() < 0.5) c.fit_end = format_timestamp(400000 + static_cast<HourStamp>(rng.uniform() * 1000));
  c.forecast.horizon = 1 + static_cast<int>(rng.uniform() * 48);
  c.forecast.field_horizon = 1;
  c.forecast.level = 0.5 + 0.4 * rng.uniform();
  if (rng.uniform() < 0.5) c.forecast.grid = GridSpec{-21.0 + rng.uniform(), -18.0, -46.0, -43.0 + rng.uniform(), 0.25};
  if (rng.uniform() < 0.5) c.schedule.first_origin = "2020-01-11T00:00:00Z";
  c.schedule.step_hours = 1 + static_cast<int>(rng.uniform() * 48);
  c.scenario.type = rng.uniform() < 0.5 ? "scenario" : "recovery";
  c.scenario.scenario = 1 + static_cast<int>(rng.uniform() * 3);
  c.scenario.width_km = 100.0 + 1000.0 * rng.uniform();
  c.scenario.ensemble.member_sd = rng.uniform();
  if (rng.uniform() < 0.5) c.scenario.phi_decay = 0.001 + rng.uniform() * 0.01;
  c.sensitivity.models = {ModelKind::DMOS, ModelKind::STEMOS};
  c.sensitivity.setups = {{"x", {0.9 + 0.1 * rng.uniform(), 0.95, 1.0}}};
  c.output = "dir" + std::to_string(seed);
  return c;
}

}  // namespace

TEST(RunConfig, ParseSerializeRoundTrip) {
  for (std::uint64_t s = 1; s <= 50; ++s) {
    const auto c = random_config(s);
    const auto text = serialize(c);
    const auto back = parse_run_config(text, "round-trip");
    EXPECT_TRUE(back == c) << text;
    EXPECT_EQ(serialize(back), text);
  }
}

TEST(RunConfig, MinimalConfigTakesDefaults) {
  auto c = parse_run_config(R"({"seed": 7})", "x");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.model, ModelConfig{});
  EXPECT_EQ(c.seeded_model().mcmc.seed, 7u);
  EXPECT_EQ(c.sensitivity.setups.size(), 6u);
}

TEST(RunConfig, SeedIsMandatory) {
  auto msg = config_error(R"({"model": {"kind": "DGOP"}})");
  EXPECT_NE(msg.find("seed: required"), std::string::npos) << msg;
  EXPECT_NE(config_error(R"({"seed": -3})").find("non-negative integer"), std::string::npos);
}

TEST(RunConfig, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_NE(config_error(R"({"seed": 1, "sed": 2})").find("sed: unknown key"), std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "model": {"discounts": {"trend": 0.9, "trnd": 1}}})")
                .find("model.discounts.trnd: unknown key"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "model": {"mcmc": {"iters": 1}}})").find("model.mcmc.iters"), std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "forecast": {"grid": {"lat_min": 0, "lat_max": 1, "lon_min": 0, "lon_max": 1, "res": 1}}})")
                .find("forecast.grid.res"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "sensitivity": {"setups": [{"label": "a", "trend": 0.9, "seasonal": 0.9, "x": 1}]}})")
                .find("sensitivity.setups[0].x"),
            std::string::npos);
}

TEST(RunConfig, ValuesValidatedWithPaths) {
  EXPECT_NE(config_error(R"({"seed": 1, "model": {"kind": "EMOS"}})").find("model.kind: unknown model 'EMOS'"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "model": {"discounts": {"trend": 1.5}}})").find("(0, 1]"), std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "model": {"training_window_hours": 24.5}})").find("expected an integer"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "data": {"stations": "s", "observations": "o"}})").find("'ensemble' or 'grid'"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "fit": {"end": "yesterday"}})").find("fit.end"), std::string::npos);
  EXPECT_NE(config_error(R"({"seed": 1, "sensitivity": {"models": ["MOS"]}})").find("dynamic"), std::string::npos);
  EXPECT_NE(config_error("{\"seed\": 1,").find("invalid JSON"), std::string::npos);
}

TEST(Archive, ReloadedModelForecastsIdentically) {
  auto data = generate_recovery_dataset(5, 96, 0.5, std::nullopt, Discounts{}, 3);
  RunConfig run;
  run.seed = 11;
  run.model.kind = ModelKind::DGOP;
  run.model.training_window_hours = 72;
  run.model.mcmc = {60, 20, 2, 11, 1};
  auto m = fit(run.seeded_model(), data.observations, data.forecasts, data.network, 71);

  const auto dir = (fs::temp_directory_path() / ("stcal_archive_" + std::to_string(::getpid()))).string();
  write_archive(dir, m, run);
  auto loaded = load_archive(dir);
  EXPECT_EQ(loaded.run.seed, 11u);
  EXPECT_EQ(loaded.model.config, m.config);
  EXPECT_EQ(loaded.model.train_end, m.train_end);
  EXPECT_EQ(loaded.model.draws.count, m.draws.count);
  EXPECT_EQ(loaded.model.summary.dic, m.summary.dic);

  auto future = data.forecasts.slice(72, 24);
  Random r1(5), r2(5);
  auto a = predict(m, future, 24, r1);
  auto b = predict(loaded.model, future, 24, r2);
  EXPECT_EQ(a.median, b.median);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_EQ(a.members, b.members);

  // a second write of the reloaded model is byte-identical, except the loglik table it never had
  const auto dir2 = dir + "_b";
  write_archive(dir2, loaded.model, loaded.run);
  for (const char* f : {"config.json", "stations.csv", "standardization.json", "summary.json", "draws_lambda.csv",
                        "draws_phi.csv", "draws_theta_T.csv", "draws_precision_T.csv", "draws_final_scale.csv",
                        "draws_final_dof.csv"}) {
    EXPECT_EQ(archive::read_text(fs::path(dir) / f), archive::read_text(fs::path(dir2) / f)) << f;
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Archive, MissingOrCorruptFilesAreDataErrors) {
  const auto dir = (fs::temp_directory_path() / ("stcal_archive_bad_" + std::to_string(::getpid()))).string();
  EXPECT_THROW(load_archive(dir), DataError);
  fs::create_directories(dir);
  archive::write_text(fs::path(dir) / "config.json", "{\"seed\": 1}");
  EXPECT_THROW(load_archive(dir), DataError);
  fs::remove_all(dir);
}
