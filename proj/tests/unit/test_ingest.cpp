#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "stcal/ingest.hpp"

using namespace stcal;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("stcal_ingest_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& body) const {
    auto p = (path / name).string();
    std::ofstream(p) << body;
    return p;
  }
};

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Csv, EmptyFileIsStructuredError) {
  TempDir d;
  auto p = d.file("stations.csv", "");
  auto msg = message_of([&] { read_stations(p); });
  EXPECT_NE(msg.find("empty file"), std::string::npos) << msg;
  EXPECT_NE(msg.find(p), std::string::npos);
}

TEST(Csv, MalformedRowsReportLineNumbers) {
  TempDir d;
  auto p = d.file("stations.csv", "id,lat,lon,elev,z0\nA,-19,-44,800,0.1\nB,-19.5,oops,700,\n");
  auto msg = message_of([&] { read_stations(p); });
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("lon"), std::string::npos) << msg;

  p = d.file("obs.csv", "timestamp,station_id,wind_ms,flag\n2020-01-01T00:00:00Z,A,1.0\n");
  msg = message_of([&] { read_observation_rows(p); });
  EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;

  p = d.file("obs2.csv", "timestamp,station_id,wind_ms\n");
  msg = message_of([&] { read_observation_rows(p); });
  EXPECT_NE(msg.find("header"), std::string::npos) << msg;
}

TEST(Csv, StationsOptionalRoughness) {
  TempDir d;
  auto p = d.file("stations.csv", "id,lat,lon,elev,z0\nA,-19,-44,800,0.1\nB,-19.5,-44.5,700,\n");
  auto s = read_stations(p);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(*s[0].roughness_length, 0.1);
  EXPECT_FALSE(s[1].roughness_length.has_value());
}

namespace {

// Three stations, 10 hours; C has only 6 of 10 readings.
struct Files {
  std::string stations, observations, ensemble;
};

Files write_small(const TempDir& d) {
  std::string st = "id,lat,lon,elev,z0\nA,-19,-44,800,0.1\nB,-19.5,-44.5,700,0.2\nC,-18.5,-43.5,900,0.05\n";
  std::string ob = "timestamp,station_id,wind_ms,flag\n";
  std::string en = "timestamp,station_id,member_index,forecast_ms\n";
  for (int t = 0; t < 10; ++t) {
    const auto ts = format_timestamp(parse_timestamp("2020-03-01T00:00:00Z") + t);
    ob += ts + ",A," + (t == 3 ? "0.0" : std::to_string(1.0 + t)) + ",observed\n";
    ob += ts + ",B," + (t == 5 ? "," + std::string("missing") : std::to_string(2.0 + 0.5 * t) + ",observed") + "\n";
    if (t < 6) ob += ts + ",C,3.0,observed\n";
    for (const char* s : {"A", "B", "C"})
      for (int k = 0; k < 2; ++k) en += ts + "," + s + "," + std::to_string(k) + "," + std::to_string(1.5 + k + 0.1 * t) + "\n";
  }
  return {d.file("stations.csv", st), d.file("obs.csv", ob), d.file("ens.csv", en)};
}

}  // namespace

TEST(LoadPanels, AvailabilityCensoringAndMissing) {
  TempDir d;
  auto f = write_small(d);
  std::vector<std::string> warnings;
  auto p = load_panels({f.stations, f.observations, f.ensemble}, 0.0, 0.70,
                       [&](const std::string& w) { warnings.push_back(w); });
  ASSERT_EQ(p.network.size(), 2u);
  ASSERT_EQ(p.dropped, std::vector<std::string>{"C"});
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("60.0%"), std::string::npos) << warnings[0];
  EXPECT_EQ(p.observations.hours(), 10);
  EXPECT_EQ(p.observations.state(3, 0), CellState::Censored);
  EXPECT_EQ(p.observations.state(5, 1), CellState::Missing);
  EXPECT_EQ(p.observations.state(4, 0), CellState::Observed);
  EXPECT_EQ(p.forecasts.n_members, 2);
  EXPECT_EQ(p.forecasts.n_sites, 2);
  EXPECT_NEAR(p.forecasts.ensemble_mean(2, 1), 2.0 + 0.2, 1e-12);
}

TEST(LoadPanels, IncompleteEnsembleIsError) {
  TempDir d;
  auto f = write_small(d);
  std::ifstream in(f.ensemble);
  std::string all((std::istreambuf_iterator<char>(in)), {}), line;
  all.erase(all.rfind("2020-03-01T09:00:00Z,B,1"));
  auto p = d.file("ens_cut.csv", all);
  auto msg = message_of([&] { load_panels({f.stations, f.observations, p}); });
  EXPECT_NE(msg.find("station 'B'"), std::string::npos) << msg;
}

TEST(LoadPanels, WriteThenReadRoundTrip) {
  TempDir d;
  auto net = fixtures::random_network(4, 11);
  Random rng(3);
  const Eigen::Index T = 30, m = 3;
  std::vector<HourStamp> times;
  for (Eigen::Index t = 0; t < T; ++t) times.push_back(parse_timestamp("2019-06-30T12:00:00Z") + t);
  Matrix raw(T, 4);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double u = rng.uniform();
      raw(t, i) = u < 0.1 ? std::numeric_limits<double>::quiet_NaN() : (u < 0.2 ? 0.0 : 10.0 * rng.uniform() / 3.0);
    }
  auto obs = ObservationPanel::from_values(times, raw, 0.0);
  std::vector<double> mem(static_cast<std::size_t>(T * 4 * m));
  for (auto& v : mem) v = rng.uniform() * 7.0 / 3.0;
  auto fc = ForecastPanel::from_members(times, 4, m, mem);

  const auto ps = (d.path / "s.csv").string(), po = (d.path / "o.csv").string(), pe = (d.path / "e.csv").string();
  write_stations(ps, net);
  write_observations(po, obs, net);
  write_ensemble(pe, fc, net);
  auto back = load_panels({ps, po, pe}, 0.0, 0.0);

  ASSERT_EQ(back.network.size(), net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    EXPECT_EQ(back.network.station(i).id, net.station(i).id);
    EXPECT_EQ(back.network.station(i).latitude, net.station(i).latitude);
    EXPECT_EQ(back.network.station(i).longitude, net.station(i).longitude);
    EXPECT_EQ(*back.network.station(i).roughness_length, *net.station(i).roughness_length);
  }
  EXPECT_EQ(back.observations.times, obs.times);
  EXPECT_EQ(back.observations.mask, obs.mask);
  for (Eigen::Index k = 0; k < obs.values.size(); ++k) {
    const double a = obs.values.data()[k], b = back.observations.values.data()[k];
    EXPECT_TRUE((std::isnan(a) && std::isnan(b)) || a == b);
  }
  EXPECT_EQ(back.forecasts.members, fc.members);

  // writing the re-read panels again gives the same bytes
  const auto po2 = (d.path / "o2.csv").string();
  write_observations(po2, back.observations, back.network);
  std::ifstream a(po), b(po2);
  EXPECT_EQ(std::string((std::istreambuf_iterator<char>(a)), {}), std::string((std::istreambuf_iterator<char>(b)), {}));
}

namespace {

GriddedForecast affine_grid(double a, double b, double c) {
  GriddedForecast g;
  g.times = {0, 1};
  for (int j = 0; j < 5; ++j) g.lats.push_back(-22.0 + 0.5 * j);
  for (int j = 0; j < 6; ++j) g.lons.push_back(-46.0 + 0.5 * j);
  g.members = 2;
  for (std::size_t t = 0; t < 2; ++t)
    for (double la : g.lats)
      for (double lo : g.lons)
        for (int k = 0; k < 2; ++k) g.values.push_back(a + b * la + c * lo + k + static_cast<double>(t));
  return g;
}

}  // namespace

TEST(Bilinear, NodeCenterAndConstant) {
  GriddedForecast g;
  g.times = {0};
  g.lats = {0.0, 1.0};
  g.lons = {10.0, 11.0};
  g.members = 1;
  g.values = {1.0, 2.0, 3.0, 4.0};
  EXPECT_EQ(g.interpolate(0, 0.0, 11.0, 0), 2.0);
  EXPECT_EQ(g.interpolate(0, 1.0, 10.0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g.interpolate(0, 0.5, 10.5, 0), 2.5);
  g.values = {7.0, 7.0, 7.0, 7.0};
  EXPECT_DOUBLE_EQ(g.interpolate(0, 0.3, 10.9, 0), 7.0);
}

TEST(Bilinear, ExactForAffineFields) {
  auto g = affine_grid(100.0, 1.5, 0.75);
  Random rng(5);
  for (int r = 0; r < 200; ++r) {
    const double la = -22.0 + 2.0 * rng.uniform(), lo = -46.0 + 2.5 * rng.uniform();
    EXPECT_NEAR(g.interpolate(1, la, lo, 1), 100.0 + 1.5 * la + 0.75 * lo + 2.0, 1e-12);
  }
}

TEST(Bilinear, StationsOutsideHullRejected) {
  auto g = affine_grid(100.0, 1.5, 0.75);
  std::vector<Station> s{{"IN", -21.0, -45.0, 500.0, 0.1}, {"OUT", -21.0, -40.0, 500.0, 0.1}};
  auto msg = message_of([&] { bilinear_to_stations(g, StationNetwork(s)); });
  EXPECT_NE(msg.find("'OUT'"), std::string::npos) << msg;
  s.pop_back();
  s.push_back({"IN2", -20.25, -44.1, 400.0, 0.2});
  auto fc = bilinear_to_stations(g, StationNetwork(s));
  EXPECT_EQ(fc.n_members, 2);
  EXPECT_NEAR(fc.member(1, 1, 0), 100.0 + 1.5 * -20.25 + 0.75 * -44.1 + 1.0, 1e-12);
}

TEST(Bilinear, ReadGridChecksSpacing) {
  TempDir d;
  std::string body = "time,lat,lon,member,value\n";
  for (double la : {-20.0, -19.5, -19.0})
    for (double lo : {-45.0, -44.5})
      body += "2020-01-01T00:00:00Z," + csv::num(la) + "," + csv::num(lo) + ",0," + csv::num(3.0 + la - lo) + "\n";
  auto g = read_grid(d.file("grid.csv", body));
  EXPECT_EQ(g.lats.size(), 3u);
  EXPECT_NEAR(g.interpolate(0, -19.25, -44.75, 0), 3.0 - 19.25 + 44.75, 1e-12);

  std::string bad = "time,lat,lon,member,value\n";
  for (double la : {-20.0, -19.5, -18.0})
    for (double lo : {-45.0, -44.5}) bad += "2020-01-01T00:00:00Z," + csv::num(la) + "," + csv::num(lo) + ",0,1\n";
  auto msg = message_of([&] { read_grid(d.file("bad.csv", bad)); });
  EXPECT_NE(msg.find("irregular latitude"), std::string::npos) << msg;
}

TEST(Roughness, FormulaValues) {
  EXPECT_NEAR(roughness_from_record(5.0, 0.4), 10.0 * std::exp(-5.0), 1e-15);
  EXPECT_NEAR(roughness_from_record(5.0, 0.4), 0.0673794699908546, 1e-12);
  EXPECT_EQ(roughness_from_record(0.0, 0.3), 10.0);
  EXPECT_LT(roughness_from_record(4.0, 0.3), roughness_from_record(4.0, 0.6));
}

TEST(Roughness, NeutralFilterMediansAndOrderInvariance) {
  std::vector<FluxRecord> rs;
  Random rng(9);
  const HourStamp t0 = parse_timestamp("2018-01-01T00:00:00Z");
  for (HourStamp t = 0; t < 24 * 400; t += 1) {
    FluxRecord f{t0 + t, "A", 295.0, 90000.0, 0.2 + 0.3 * rng.uniform(), rng.uniform() < 0.5 ? 800.0 : 50.0,
                 1.0 + 6.0 * rng.uniform()};
    if (t % 97 == 0) f.wind_ms = 0.0;
    rs.push_back(f);
  }
  rs.push_back({t0 + 3, "A", 295.0, 90000.0, 0.3, -900.0, 0.0});
  auto est = roughness_length(rs);
  EXPECT_GT(est.z0, 0.0);
  EXPECT_GT(est.flagged_zero_wind, 0u);
  EXPECT_LT(est.z0, 10.0);

  // independent recomputation of the cell medians
  std::vector<double> filled;
  for (unsigned mo = 1; mo <= 12; ++mo)
    for (int h = 0; h < 24; ++h) {
      std::vector<double> v;
      for (const auto& r : rs)
        if (std::abs(r.obukhov_l) > 500.0 && r.wind_ms > 0.0 && month_of(r.time) == mo && hour_of_day(r.time) == h)
          v.push_back(10.0 * std::exp(-r.wind_ms * 0.4 / r.ustar));
      if (v.empty()) {
        EXPECT_TRUE(std::isnan(est.table[mo - 1][static_cast<std::size_t>(h)]));
        continue;
      }
      std::sort(v.begin(), v.end());
      const double med = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
      EXPECT_DOUBLE_EQ(est.table[mo - 1][static_cast<std::size_t>(h)], med);
      EXPECT_GT(med, 0.0);
      filled.push_back(med);
    }
  EXPECT_EQ(filled.size(), 288u);
  std::sort(filled.begin(), filled.end());
  const auto k = filled.size() / 2;
  EXPECT_DOUBLE_EQ(est.z0, filled.size() % 2 ? filled[k] : 0.5 * (filled[k - 1] + filled[k]));

  std::reverse(rs.begin(), rs.end());
  EXPECT_EQ(roughness_length(rs).z0, est.z0);
}

TEST(Roughness, NoNeutralRecordsIsError) {
  std::vector<FluxRecord> rs{{0, "A", 290.0, 1e5, 0.3, 100.0, 3.0}, {1, "A", 290.0, 1e5, 0.3, -20.0, 3.0}};
  EXPECT_THROW(roughness_length(rs), DataError);
}

TEST(Roughness, ReadFluxValidates) {
  TempDir d;
  auto ok = d.file("f.csv",
                   "timestamp,station_id,temp_k,pressure_pa,ustar,obukhov_l,wind_ms\n"
                   "2020-01-01T05:00:00Z,A,293.1,91000,0.4,900,5\n");
  auto rs = read_flux(ok);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_NEAR(roughness_length(rs).z0, 10.0 * std::exp(-5.0), 1e-15);
  auto bad = d.file("g.csv",
                    "timestamp,station_id,temp_k,pressure_pa,ustar,obukhov_l,wind_ms\n"
                    "2020-01-01T05:00:00Z,A,293.1,91000,0,900,5\n");
  auto msg = message_of([&] { read_flux(bad); });
  EXPECT_NE(msg.find(":2: ustar"), std::string::npos) << msg;
}
