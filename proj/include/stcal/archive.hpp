#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stcal/calibrators.hpp"
#include "stcal/config.hpp"
#include "stcal/ingest.hpp"

namespace stcal {

/**
 * @brief Fitted-model archive: a directory holding
 *
 *   config.json             run configuration (model, seed, paths)
 *   stations.csv            the fitted network
 *   standardization.json    covariate z-score constants
 *   summary.json            fit diagnostics and window bounds
 *   draws_<group>.csv       one table per parameter group: iteration, values...
 *
 * Only the end-of-window state is kept from theta and the precision path;
 * that is all forecasting needs. Numbers are written in shortest round-trip
 * form, so a reloaded model forecasts bit-identically.
 */
namespace archive {

namespace fs = std::filesystem;

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError(p.string() + ": cannot open for writing");
  out << text;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError(p.string() + ": missing archive file");
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

/// One draws table: header iteration,<names...>, one row per retained draw.
inline void write_table(const fs::path& p, const std::vector<std::string>& names, const std::vector<long>& iterations,
                        const std::function<double(Eigen::Index, std::size_t)>& value) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError(p.string() + ": cannot open for writing");
  out << "iteration";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t k = 0; k < iterations.size(); ++k) {
    out << iterations[k];
    for (std::size_t c = 0; c < names.size(); ++c) out << ',' << csv::num(value(static_cast<Eigen::Index>(k), c));
    out << '\n';
  }
}

/// Rows of a draws table as (iteration, values); checks the header.
inline std::vector<std::vector<double>> read_table(const fs::path& p, const std::vector<std::string>& names) {
  std::vector<std::string> header{"iteration"};
  header.insert(header.end(), names.begin(), names.end());
  csv::Reader r(p.string(), header);
  std::vector<std::vector<double>> rows;
  while (r.next()) {
    std::vector<double> row;
    for (std::size_t c = 0; c < names.size(); ++c) row.push_back(r.number(c + 1, names[c].c_str()));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<std::string> numbered(const std::string& stem, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index k = 1; k <= count; ++k) out.push_back(stem + std::to_string(k));
  return out;
}

inline std::vector<std::string> scale_names(Eigen::Index r) {
  std::vector<std::string> out;
  for (Eigen::Index a = 1; a <= r; ++a)
    for (Eigen::Index b = 1; b <= r; ++b) out.push_back("c" + std::to_string(a) + "_" + std::to_string(b));
  return out;
}

}  // namespace archive

/// Sampler iteration (1-based) of each retained draw.
inline std::vector<long> retained_iterations(const McmcSettings& s, Eigen::Index count) {
  std::vector<long> it;
  const long per_chain = std::max(1, s.retained());
  for (Eigen::Index k = 0; k < count; ++k) {
    it.push_back(static_cast<long>(s.burn_in) + (static_cast<long>(k) % per_chain) * s.thin + 1);
  }
  return it;
}

inline void write_archive(const std::string& dir, const FittedModel& m, const RunConfig& run) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DataError(dir + ": cannot create archive directory: " + ec.message());
  const auto& d = m.draws;
  const auto M = d.count;
  const auto r = d.state_dim;

  RunConfig cfg = run;
  cfg.model = m.config;
  cfg.seed = m.config.mcmc.seed;
  // run-time settings that do not affect the draws; left out so the archive depends only on the fit
  cfg.threads = RunConfig{}.threads;
  cfg.output = RunConfig{}.output;
  archive::write_text(root / "config.json", serialize(cfg));
  write_stations((root / "stations.csv").string(), m.network);

  const auto& sc = m.network.scaler();
  json st;
  const char* names[kNumCovariates] = {"z0", "elev", "lat", "lon"};
  for (int c = 0; c < kNumCovariates; ++c) {
    st[names[c]] = json{{"mean", sc.mean[c]}, {"sd", sc.sd[c]}, {"constant", sc.constant[static_cast<std::size_t>(c)]}};
  }
  archive::write_text(root / "standardization.json", st.dump(2) + "\n");

  json rh = json::object();
  for (const auto& [k, v] : m.summary.rhat) rh[k] = v;
  json sum{{"model", model_name(m.config.kind)},
           {"train_start", format_timestamp(m.train_start)},
           {"train_end", format_timestamp(m.train_end)},
           {"censor_threshold", m.censor_threshold},
           {"draws", M},
           {"state_dim", r},
           {"dic", m.summary.dic},
           {"p_d", m.summary.p_d},
           {"lpml", m.summary.lpml},
           {"ram_acceptance", m.summary.ram_acceptance},
           {"nan_targets", m.summary.nan_targets},
           {"rhat", rh}};
  archive::write_text(root / "summary.json", sum.dump(2) + "\n");

  const auto it = retained_iterations(m.config.mcmc, M);
  archive::write_table(root / "draws_lambda.csv", {"lambda"}, it, [&](Eigen::Index k, std::size_t) { return d.lambda(k); });
  archive::write_table(root / "draws_phi.csv", {"phi"}, it, [&](Eigen::Index k, std::size_t) { return d.phi_decay(k); });
  if (d.has_beta()) {
    archive::write_table(root / "draws_beta.csv", {"beta0", "beta1"}, it,
                         [&](Eigen::Index k, std::size_t c) { return d.beta(k, static_cast<Eigen::Index>(c)); });
  }
  archive::write_table(root / "draws_theta_T.csv", archive::numbered("theta", r), it, [&](Eigen::Index k, std::size_t c) {
    return d.theta_at(k, d.hours)(static_cast<Eigen::Index>(c));
  });
  if (d.has_precision()) {
    archive::write_table(root / "draws_precision_T.csv", {"precision"}, it,
                         [&](Eigen::Index k, std::size_t) { return d.precision_at(k, d.hours); });
  }
  archive::write_table(root / "draws_final_scale.csv", archive::scale_names(r), it, [&](Eigen::Index k, std::size_t c) {
    const auto& s = d.final_scale[static_cast<std::size_t>(k)];
    return s(static_cast<Eigen::Index>(c) / r, static_cast<Eigen::Index>(c) % r);
  });
  archive::write_table(root / "draws_final_dof.csv", {"dof", "scale_factor"}, it, [&](Eigen::Index k, std::size_t c) {
    return c == 0 ? d.final_dof(k) : d.final_scale_factor(k);
  });
  if (d.log_likelihood.size() == M) {
    archive::write_table(root / "draws_loglik.csv", {"loglik"}, it,
                         [&](Eigen::Index k, std::size_t) { return d.log_likelihood(k); });
  }
}

struct LoadedArchive {
  RunConfig run;
  FittedModel model;
};

/// Rebuild a fitted model that forecasts exactly like the one archived.
inline LoadedArchive load_archive(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw DataError(dir + ": not an archive directory");
  LoadedArchive out;
  out.run = parse_run_config(archive::read_text(root / "config.json"), (root / "config.json").string());
  auto& m = out.model;
  m.config = out.run.seeded_model();
  m.network = StationNetwork(read_stations((root / "stations.csv").string()));

  const auto st = archive::read_json(root / "standardization.json");
  const char* names[kNumCovariates] = {"z0", "elev", "lat", "lon"};
  const auto& sc = m.network.scaler();
  for (int c = 0; c < kNumCovariates; ++c) {
    if (!st.contains(names[c]) || st[names[c]].value("mean", 0.0) != sc.mean[c] || st[names[c]].value("sd", 0.0) != sc.sd[c]) {
      throw DataError(dir + ": standardization.json does not match stations.csv (" + names[c] + ")");
    }
  }

  const auto sum = archive::read_json(root / "summary.json");
  try {
    if (sum.at("model").get<std::string>() != model_name(m.config.kind)) throw DataError("model kind mismatch");
    m.train_start = parse_timestamp(sum.at("train_start").get<std::string>());
    m.train_end = parse_timestamp(sum.at("train_end").get<std::string>());
    m.censor_threshold = sum.at("censor_threshold").get<double>();
    m.summary.dic = sum.at("dic").get<double>();
    m.summary.p_d = sum.at("p_d").get<double>();
    m.summary.lpml = sum.at("lpml").get<double>();
    m.summary.ram_acceptance = sum.at("ram_acceptance").get<double>();
    m.summary.nan_targets = sum.at("nan_targets").get<long>();
    for (auto it = sum.at("rhat").begin(); it != sum.at("rhat").end(); ++it) m.summary.rhat[it.key()] = it.value().get<double>();
  } catch (const json::exception& e) {
    throw DataError((root / "summary.json").string() + ": " + e.what());
  }
  const auto M = static_cast<Eigen::Index>(sum.at("draws").get<long>());
  const auto r = static_cast<Eigen::Index>(sum.at("state_dim").get<long>());

  auto& d = m.draws;
  d.count = M;
  d.hours = 0;
  d.state_dim = r;
  auto column = [&](const std::vector<std::vector<double>>& rows, std::size_t c, const char* what) {
    if (static_cast<Eigen::Index>(rows.size()) != M) throw DataError(dir + ": " + what + " has the wrong number of draws");
    Vector v(M);
    for (Eigen::Index k = 0; k < M; ++k) v(k) = rows[static_cast<std::size_t>(k)][c];
    return v;
  };
  d.lambda = column(archive::read_table(root / "draws_lambda.csv", {"lambda"}), 0, "draws_lambda.csv");
  d.phi_decay = column(archive::read_table(root / "draws_phi.csv", {"phi"}), 0, "draws_phi.csv");
  if (uses_spread_skill(m.config.kind)) {
    auto rows = archive::read_table(root / "draws_beta.csv", {"beta0", "beta1"});
    d.beta.resize(M, 2);
    d.beta.col(0) = column(rows, 0, "draws_beta.csv");
    d.beta.col(1) = column(rows, 1, "draws_beta.csv");
  }
  auto th = archive::read_table(root / "draws_theta_T.csv", archive::numbered("theta", r));
  if (static_cast<Eigen::Index>(th.size()) != M) throw DataError(dir + ": draws_theta_T.csv has the wrong number of draws");
  for (const auto& row : th) d.theta.insert(d.theta.end(), row.begin(), row.end());
  if (uses_unknown_precision(m.config.kind)) {
    auto p = column(archive::read_table(root / "draws_precision_T.csv", {"precision"}), 0, "draws_precision_T.csv");
    d.precision.assign(p.data(), p.data() + M);
  }
  auto fs_rows = archive::read_table(root / "draws_final_scale.csv", archive::scale_names(r));
  if (static_cast<Eigen::Index>(fs_rows.size()) != M) throw DataError(dir + ": draws_final_scale.csv has the wrong number of draws");
  for (const auto& row : fs_rows) {
    Matrix s(r, r);
    for (Eigen::Index c = 0; c < r * r; ++c) s(c / r, c % r) = row[static_cast<std::size_t>(c)];
    d.final_scale.push_back(std::move(s));
  }
  auto dof = archive::read_table(root / "draws_final_dof.csv", {"dof", "scale_factor"});
  d.final_dof = column(dof, 0, "draws_final_dof.csv");
  d.final_scale_factor = column(dof, 1, "draws_final_dof.csv");
  if (fs::exists(root / "draws_loglik.csv")) {
    d.log_likelihood = column(archive::read_table(root / "draws_loglik.csv", {"loglik"}), 0, "draws_loglik.csv");
  }
  try {
    d.check_invariants();
  } catch (const std::exception& e) {
    throw DataError(dir + ": " + e.what());
  }
  return out;
}

}  // namespace stcal
