#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "stcal/dlm.hpp"
#include "stcal/domain.hpp"
#include "stcal/mcmc.hpp"
#include "stcal/scoring.hpp"
#include "stcal/spatial.hpp"
#include "stcal/transform.hpp"

namespace stcal {

/// Everything a chain needs to see of the training window.
struct FitInputs {
  const ObservationPanel& obs;
  const std::vector<Matrix>& designs;  // T entries, n x 8
  const Matrix& ensemble_var;          // T x n
  const Matrix& distances;             // n x n (km)
};

struct FitSummary {
  double dic{};
  double p_d{};
  double lpml{};
  double ram_acceptance{};
  long nan_targets{};
  double seconds{};
  std::map<std::string, double> rhat;
};

struct ChainOutput {
  PosteriorDraws draws;
  FitSummary summary;
};

/// Default Gamma rate for the spatial decay: max(d) / 6.
inline double default_phi_rate(const Matrix& distances, const Priors& p) {
  return p.phi_rate ? *p.phi_rate : distances.maxCoeff() / 6.0;
}

/**
 * @brief Gibbs sampler for one model kind on one training window.
 *
 * A scan is: augment censored/missing latents; RAM update of the static
 * parameters on the likelihood with theta and the precision path integrated
 * out by the forward filter; FFBS draw of the states given the accepted
 * parameters. The last two steps form one blocked draw.
 */
class GibbsSampler {
 public:
  enum Slot { kLogPhi, kLambda, kLogBeta0, kLogBeta1 };

  GibbsSampler(const ModelConfig& cfg, const FitInputs& in, std::uint64_t seed, std::uint64_t stream = 0)
      : cfg_(cfg), in_(in), rng_(seed, stream), spec_(make_dlm_spec(cfg.effective_discounts(), cfg.harmonic_period)) {
    cfg_.validate();
    const auto& obs = in_.obs;
    T_ = obs.hours();
    n_ = obs.sites();
    if (static_cast<Eigen::Index>(in_.designs.size()) != T_) throw DataError("design count does not match window");
    if (in_.distances.rows() != n_) throw DataError("distance matrix does not match site count");
    auto counts = obs.counts();
    if (counts[static_cast<std::size_t>(CellState::Observed)] == 0) {
      throw DataError("training window has no uncensored observations");
    }
    has_censored_ = counts[static_cast<std::size_t>(CellState::Censored)] > 0;
    active_.resize(static_cast<std::size_t>(T_ * n_));
    log_y_ = Matrix::Zero(T_, n_);
    site_log_y_ = Vector::Zero(n_);
    for (Eigen::Index t = 0; t < T_; ++t) {
      for (Eigen::Index i = 0; i < n_; ++i) {
        const auto s = obs.state(t, i);
        active_[static_cast<std::size_t>(t * n_ + i)] = s != CellState::Missing;
        if (s == CellState::Observed) {
          log_y_(t, i) = std::log(obs.values(t, i));
          site_log_y_(i) += log_y_(t, i);
        } else {
          cells_.push_back({t, i, s});
        }
      }
    }
    sum_log_y_ = site_log_y_.sum();
    phi_rate_ = default_phi_rate(in_.distances, cfg_.priors);
    prior_ = default_prior(cfg_.priors);

    if (is_spatial(cfg_.kind) && !cfg_.fixed_phi) slots_.push_back(kLogPhi);
    if (!cfg_.fixed_lambda) slots_.push_back(kLambda);
    if (uses_spread_skill(cfg_.kind)) {
      slots_.push_back(kLogBeta0);
      slots_.push_back(kLogBeta1);
    }
    if (cfg_.fixed_lambda && has_censored_ && !std::isfinite(censored_threshold(obs.censor_threshold, *cfg_.fixed_lambda))) {
      throw ConfigError("fixed lambda leaves censored cells with no latent mass");
    }
    Vector init_scale(static_cast<Eigen::Index>(slots_.size()));
    for (std::size_t k = 0; k < slots_.size(); ++k) init_scale(static_cast<Eigen::Index>(k)) = slots_[k] == kLambda ? 0.02 : 0.1;
    ram_ = RamState(init_scale.size(), 1.0, cfg_.ram_target_acceptance, cfg_.ram_gamma);
    ram_.S = init_scale.asDiagonal();
    initialize();
  }

  // -- state access ---------------------------------------------------------
  double lambda() const { return lambda_; }
  double phi() const { return phi_; }
  double beta0() const { return beta0_; }
  double beta1() const { return beta1_; }
  const Matrix& latent() const { return x_; }
  const BackwardDraw& states() const { return draw_; }
  const FilterResult& filter() const { return filter_; }
  const RamState& ram() const { return ram_; }
  const std::vector<AugmentedCell>& augmented_cells() const { return cells_; }
  Random& rng() { return rng_; }

  /// One full Gibbs scan.
  void iterate() {
    augment();
    // current log target after augmentation (latents moved)
    Vector v = encode();
    auto cur = evaluate(v, true);
    if (!std::isfinite(cur.log_target)) throw NumericalError("log target is not finite at the current state");
    if (!slots_.empty()) {
      Proposal best = cur;
      auto target = [&](const Vector& p) {
        Proposal pr = evaluate(p, false);
        candidate_ = std::move(pr);
        return candidate_.log_target;
      };
      auto mv = ram_step(ram_, v, cur.log_target, target, rng_);
      if (mv.accepted) best = std::move(candidate_);
      adopt(best);
    } else {
      adopt(cur);
    }
    draw_ = backward_sample(filter_, spec_, rng_);
    ++iteration_;
  }

  /// Latent-field view for the current state (mean F theta and marginal sd).
  void current_field(Matrix& mean, Matrix& sd) const { field_from(draw_.theta, draw_.precision, beta0_, beta1_, mean, sd); }

  void field_from(const Matrix& theta, const Vector& precision, double b0, double b1, Matrix& mean, Matrix& sd) const {
    mean.resize(T_, n_);
    sd.resize(T_, n_);
    for (Eigen::Index t = 0; t < T_; ++t) {
      mean.row(t) = (in_.designs[static_cast<std::size_t>(t)] * theta.row(t + 1).transpose()).transpose();
      if (uses_unknown_precision(cfg_.kind)) {
        sd.row(t).setConstant(1.0 / std::sqrt(precision(t + 1)));
      } else {
        sd.row(t) = spread_skill_scale(b0, b1, in_.ensemble_var.row(t).transpose()).transpose();
      }
    }
  }

  Matrix correlation(double phi) const {
    if (!is_spatial(cfg_.kind)) return Matrix::Identity(n_, n_);
    return correlation_matrix(in_.distances, phi);
  }

  /// Per-site conditional log-likelihood (with Jacobian) at the current state.
  Vector site_loglik() {
    Matrix mean, sd;
    current_field(mean, sd);
    return site_loglik_at(x_, mean, sd, lambda_, *geom_);
  }

  Vector site_loglik_at(const Matrix& x, const Matrix& mean, const Matrix& sd, double lambda, LatentGeometry& geom) const {
    LatentField field{mean, sd, in_.obs, censored_threshold(in_.obs.censor_threshold, lambda)};
    Vector out = site_conditional_loglik(x, field, geom);
    out += (lambda - 1.0) * site_log_y_;
    return out;
  }

  /// Observed-cell latent values for a given lambda.
  double observed_latent(Eigen::Index t, Eigen::Index i, double lambda) const {
    const double ly = log_y_(t, i);
    if (std::abs(lambda) < kLambdaZero) return ly;
    return std::expm1(lambda * ly) / lambda;
  }

  const DlmSpec& spec() const { return spec_; }
  const Matrix& ensemble_var() const { return in_.ensemble_var; }
  Eigen::Index hours() const { return T_; }
  Eigen::Index sites() const { return n_; }

 private:
  struct Proposal {
    double log_target{-std::numeric_limits<double>::infinity()};
    double lambda{}, phi{}, beta0{}, beta1{};
    double lower{};
    Matrix x;
    Matrix h;
    FilterResult filter;
  };

  void initialize() {
    lambda_ = cfg_.fixed_lambda ? *cfg_.fixed_lambda : cfg_.initial_lambda;
    phi_ = cfg_.fixed_phi ? *cfg_.fixed_phi : 6.0 / in_.distances.maxCoeff();
    beta0_ = 1.0;
    beta1_ = 1.0;
    lower_ = censored_threshold(in_.obs.censor_threshold, lambda_);
    if (has_censored_ && !std::isfinite(lower_)) throw ConfigError("initial lambda leaves censored cells with no latent mass");
    x_.resize(T_, n_);
    for (Eigen::Index t = 0; t < T_; ++t) {
      for (Eigen::Index i = 0; i < n_; ++i) {
        switch (in_.obs.state(t, i)) {
          case CellState::Observed: x_(t, i) = observed_latent(t, i, lambda_); break;
          case CellState::Censored: x_(t, i) = lower_ - 0.1; break;
          case CellState::Missing: x_(t, i) = 0.0; break;
        }
      }
    }
    h_ = correlation(phi_);
    geom_ = std::make_unique<LatentGeometry>(h_);
    auto p = evaluate(encode(), true);
    if (!std::isfinite(p.log_target)) throw NumericalError("log target is not finite at the initial state");
    adopt(p);
    draw_ = backward_sample(filter_, spec_, rng_);
  }

  void augment() {
    if (cells_.empty()) return;
    Matrix mean, sd;
    current_field(mean, sd);
    LatentField field{mean, sd, in_.obs, lower_};
    augment_latents(x_, field, *geom_, rng_);
  }

  Vector encode() const {
    Vector v(static_cast<Eigen::Index>(slots_.size()));
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      double val = 0.0;
      switch (slots_[k]) {
        case kLogPhi: val = std::log(phi_); break;
        case kLambda: val = lambda_; break;
        case kLogBeta0: val = std::log(beta0_); break;
        case kLogBeta1: val = std::log(beta1_); break;
      }
      v(static_cast<Eigen::Index>(k)) = val;
    }
    return v;
  }

  /// Collapsed log target at parameter vector v (latents follow the censored-move policy).
  Proposal evaluate(const Vector& v, bool is_current) const {
    Proposal p;
    p.lambda = lambda_;
    p.phi = phi_;
    p.beta0 = beta0_;
    p.beta1 = beta1_;
    double log_jac = 0.0;
    for (std::size_t k = 0; k < slots_.size(); ++k) {
      const double val = v(static_cast<Eigen::Index>(k));
      switch (slots_[k]) {
        case kLogPhi: p.phi = std::exp(val); log_jac += val; break;
        case kLambda: p.lambda = val; break;
        case kLogBeta0: p.beta0 = std::exp(val); log_jac += val; break;
        case kLogBeta1: p.beta1 = std::exp(val); log_jac += val; break;
      }
    }
    if (!(p.phi > 0.0) || !std::isfinite(p.phi) || !std::isfinite(p.beta0) || !std::isfinite(p.beta1) ||
        !(p.beta0 > 0.0)) {
      return p;
    }
    p.lower = censored_threshold(in_.obs.censor_threshold, p.lambda);
    if (has_censored_ && !std::isfinite(p.lower)) return p;

    // latents under the proposed transformation
    if (is_current) {
      p.x = x_;
    } else {
      p.x = x_;
      const double shift = p.lower - lower_;
      for (const auto& c : cells_) {
        if (c.state == CellState::Censored) {
          if (cfg_.censored_move == CensoredMove::Shift) {
            p.x(c.t, c.site) += shift;
          } else if (p.x(c.t, c.site) > p.lower) {
            return p;
          }
        }
      }
      if (p.lambda != lambda_) {
        for (Eigen::Index t = 0; t < T_; ++t)
          for (Eigen::Index i = 0; i < n_; ++i)
            if (in_.obs.state(t, i) == CellState::Observed) p.x(t, i) = observed_latent(t, i, p.lambda);
      }
    }

    p.h = (is_current || p.phi == phi_) ? h_ : correlation(p.phi);
    DlmData data{in_.designs, p.x, active_};
    try {
      if (uses_unknown_precision(cfg_.kind)) {
        p.filter = forward_filter_unknown_precision(data, spec_, prior_, p.h);
      } else {
        Matrix scale(T_, n_);
        for (Eigen::Index t = 0; t < T_; ++t)
          scale.row(t) = spread_skill_scale(p.beta0, p.beta1, in_.ensemble_var.row(t).transpose()).transpose();
        p.filter = forward_filter_known_covariance(data, spec_, prior_, p.h, &scale);
      }
    } catch (const NumericalError&) {
      if (is_current) throw;
      p.log_target = -std::numeric_limits<double>::infinity();
      return p;
    }
    double lp = p.filter.log_likelihood + (p.lambda - 1.0) * sum_log_y_;
    const auto& pr = cfg_.priors;
    if (!cfg_.fixed_lambda) lp += -0.5 * (p.lambda - pr.lambda_mean) * (p.lambda - pr.lambda_mean) / pr.lambda_var;
    if (is_spatial(cfg_.kind) && !cfg_.fixed_phi) lp += (pr.phi_shape - 1.0) * std::log(p.phi) - phi_rate_ * p.phi;
    if (uses_spread_skill(cfg_.kind)) lp += -0.5 * (p.beta0 * p.beta0 + p.beta1 * p.beta1) / pr.beta_var;
    p.log_target = lp + log_jac;
    return p;
  }

  void adopt(Proposal& p) {
    const bool phi_changed = p.phi != phi_;
    lambda_ = p.lambda;
    phi_ = p.phi;
    beta0_ = p.beta0;
    beta1_ = p.beta1;
    lower_ = p.lower;
    x_ = std::move(p.x);
    filter_ = std::move(p.filter);
    if (phi_changed || !geom_) {
      h_ = std::move(p.h);
      geom_ = std::make_unique<LatentGeometry>(h_);
    }
  }

 public:
  // exposed for diagnostics
  long iteration() const { return iteration_; }

 private:
  ModelConfig cfg_;
  FitInputs in_;
  Random rng_;
  DlmSpec spec_;
  DlmPrior prior_;
  Eigen::Index T_{}, n_{};
  bool has_censored_{false};
  std::vector<char> active_;
  std::vector<AugmentedCell> cells_;
  Matrix log_y_;
  Vector site_log_y_;
  double sum_log_y_{};
  double phi_rate_{};
  std::vector<Slot> slots_;
  RamState ram_;
  Proposal candidate_;

  double lambda_{1.0}, phi_{1.0}, beta0_{1.0}, beta1_{1.0}, lower_{};
  Matrix x_;
  Matrix h_;
  std::unique_ptr<LatentGeometry> geom_;
  FilterResult filter_;
  BackwardDraw draw_;
  long iteration_{0};
};

struct ChainOptions {
  bool keep_paths{true};
  std::function<void(int, int)> progress;
};

/**
 * @brief Run one chain and collect the retained draws plus DIC / LPML.
 */
inline ChainOutput run_chain(const ModelConfig& cfg, const FitInputs& in, std::uint64_t seed, std::uint64_t stream,
                             const ChainOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  GibbsSampler s(cfg, in, seed, stream);
  const auto& mc = cfg.mcmc;
  const int kept = mc.retained();
  const auto T = s.hours();
  const auto n = s.sites();
  const auto r = kStateDim;
  const bool unknown = uses_unknown_precision(cfg.kind);
  const auto& cells = s.augmented_cells();

  ChainOutput out;
  auto& d = out.draws;
  d.count = kept;
  d.hours = opt.keep_paths ? T : 0;
  d.state_dim = r;
  d.phi_decay.resize(kept);
  d.lambda.resize(kept);
  if (uses_spread_skill(cfg.kind)) d.beta.resize(kept, 2);
  d.augmented_cells = cells;
  d.latent_x.resize(kept, static_cast<Eigen::Index>(cells.size()));
  d.final_scale.reserve(static_cast<std::size_t>(kept));
  d.final_dof.resize(kept);
  d.final_scale_factor.resize(kept);
  d.log_likelihood.resize(kept);
  d.site_log_likelihood.resize(kept, n);
  const auto path_len = opt.keep_paths ? T + 1 : 1;
  d.theta.reserve(static_cast<std::size_t>(kept * path_len * r));
  if (unknown) d.precision.reserve(static_cast<std::size_t>(kept * path_len));

  Matrix theta_sum = Matrix::Zero(T + 1, r);
  Vector prec_sum = Vector::Zero(T + 1);
  Vector latent_sum = Vector::Zero(static_cast<Eigen::Index>(cells.size()));
  double lambda_sum = 0.0, phi_sum = 0.0, b0_sum = 0.0, b1_sum = 0.0;

  Eigen::Index k = 0;
  for (int it = 0; it < mc.iterations; ++it) {
    s.iterate();
    if (opt.progress) opt.progress(it + 1, mc.iterations);
    if (it < mc.burn_in || (it - mc.burn_in) % mc.thin != 0) continue;
    const auto& st = s.states();
    const auto& f = s.filter();
    if (opt.keep_paths) {
      for (Eigen::Index t = 0; t <= T; ++t)
        for (Eigen::Index j = 0; j < r; ++j) d.theta.push_back(st.theta(t, j));
      if (unknown)
        for (Eigen::Index t = 0; t <= T; ++t) d.precision.push_back(st.precision(t));
    } else {
      for (Eigen::Index j = 0; j < r; ++j) d.theta.push_back(st.theta(T, j));
      if (unknown) d.precision.push_back(st.precision(T));
    }
    d.phi_decay(k) = s.phi();
    d.lambda(k) = s.lambda();
    if (d.has_beta()) {
      d.beta(k, 0) = s.beta0();
      d.beta(k, 1) = s.beta1();
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      d.latent_x(k, static_cast<Eigen::Index>(c)) = s.latent()(cells[c].t, cells[c].site);
    }
    const auto tT = static_cast<std::size_t>(T);
    if (unknown) {
      d.final_scale.push_back(f.C[tT] / f.s(T));
      d.final_dof(k) = f.n[tT];
      d.final_scale_factor(k) = f.s(T);
    } else {
      d.final_scale.push_back(f.C[tT]);
      d.final_dof(k) = 0.0;
      d.final_scale_factor(k) = 1.0;
    }
    Vector sl = s.site_loglik();
    d.site_log_likelihood.row(k) = sl.transpose();
    d.log_likelihood(k) = sl.sum();

    theta_sum += st.theta;
    if (unknown) prec_sum += st.precision;
    for (std::size_t c = 0; c < cells.size(); ++c) latent_sum(static_cast<Eigen::Index>(c)) += d.latent_x(k, static_cast<Eigen::Index>(c));
    lambda_sum += s.lambda();
    phi_sum += s.phi();
    b0_sum += s.beta0();
    b1_sum += s.beta1();
    ++k;
  }
  if (k != kept) throw NumericalError("retained draw count mismatch");
  d.check_invariants();

  // likelihood at the posterior mean
  const double kk = static_cast<double>(kept);
  const Matrix theta_bar = theta_sum / kk;
  const Vector prec_bar = prec_sum / kk;
  const double lambda_bar = lambda_sum / kk;
  const double phi_bar = phi_sum / kk;
  Matrix mean, sd;
  s.field_from(theta_bar, prec_bar, b0_sum / kk, b1_sum / kk, mean, sd);
  Matrix x_bar(T, n);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < n; ++i)
      if (in.obs.state(t, i) == CellState::Observed) x_bar(t, i) = s.observed_latent(t, i, lambda_bar);
  for (std::size_t c = 0; c < cells.size(); ++c) x_bar(cells[c].t, cells[c].site) = latent_sum(static_cast<Eigen::Index>(c)) / kk;
  LatentGeometry geom(s.correlation(phi_bar));
  const double ll_bar = s.site_loglik_at(x_bar, mean, sd, lambda_bar, geom).sum();

  auto dd = dic(d.log_likelihood, ll_bar);
  out.summary.dic = dd.dic;
  out.summary.p_d = dd.p_d;
  out.summary.lpml = lpml_from_log(d.site_log_likelihood);
  out.summary.ram_acceptance = s.ram().acceptance_rate();
  out.summary.nan_targets = s.ram().nan_targets;
  out.summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Scalar traces used for convergence checks.
inline std::map<std::string, std::vector<double>> scalar_traces(const PosteriorDraws& d) {
  std::map<std::string, std::vector<double>> out;
  out["lambda"] = {d.lambda.data(), d.lambda.data() + d.lambda.size()};
  out["phi"] = {d.phi_decay.data(), d.phi_decay.data() + d.phi_decay.size()};
  if (d.has_beta()) {
    for (int j = 0; j < 2; ++j) {
      std::vector<double> v(static_cast<std::size_t>(d.count));
      for (Eigen::Index k = 0; k < d.count; ++k) v[static_cast<std::size_t>(k)] = d.beta(k, j);
      out[j == 0 ? "beta0" : "beta1"] = std::move(v);
    }
  }
  const auto T = d.hours;
  for (Eigen::Index j = 0; j < d.state_dim; ++j) {
    std::vector<double> v(static_cast<std::size_t>(d.count));
    for (Eigen::Index k = 0; k < d.count; ++k) v[static_cast<std::size_t>(k)] = d.theta_at(k, T)(j);
    out["theta_T" + std::to_string(j + 1)] = std::move(v);
  }
  return out;
}

/**
 * @brief Run `cfg.mcmc.chains` chains (streams 0..k-1) and attach R-hat.
 *
 * Draws of the first chain are returned; extra chains only feed R-hat.
 */
inline ChainOutput run_chains(const ModelConfig& cfg, const FitInputs& in, int threads, const ChainOptions& opt = {}) {
  const int k = cfg.mcmc.chains;
  std::vector<ChainOutput> outs(static_cast<std::size_t>(k));
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(k));
  auto job = [&](int c) {
    try {
      ChainOptions o = opt;
      if (c != 0) o.progress = nullptr;
      outs[static_cast<std::size_t>(c)] = run_chain(cfg, in, cfg.mcmc.seed, static_cast<std::uint64_t>(c), o);
    } catch (...) {
      errs[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  if (threads > 1 && k > 1) {
    std::vector<std::thread> pool;
    for (int c = 0; c < k; ++c) pool.emplace_back(job, c);
    for (auto& t : pool) t.join();
  } else {
    for (int c = 0; c < k; ++c) job(c);
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  std::vector<std::map<std::string, std::vector<double>>> traces;
  if (k >= 2)
    for (const auto& o : outs) traces.push_back(scalar_traces(o.draws));
  ChainOutput out = std::move(outs.front());
  if (k >= 2) {
    for (const auto& [name, v] : traces.front()) {
      std::vector<std::vector<double>> chains;
      for (const auto& t : traces) chains.push_back(t.at(name));
      try {
        out.summary.rhat[name] = rhat(chains);
      } catch (const NumericalError&) {
        // constant trace (parameter held fixed): no diagnostic
      }
    }
  }
  return out;
}

}  // namespace stcal
