#pragma once

// Monte Carlo data-generating process and experiment runner.
//
// The DGP mirrors the estimated model: an outcome with entity and year
// effects, an endogenous regressor driven by a shift-share instrument
// r_t * k_i, a control, and an unobserved confounder loading on both.
//
// Random numbers: boost::random::mt19937_64 with boost's normal and uniform
// distributions (portable output). Replication r draws from its own stream
// seeded with splitmix64(seed + (r + 1) * 0x9E3779B97F4A7C15).

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "panelkit/diagnostics.hpp"
#include "panelkit/errors.hpp"
#include "panelkit/panel.hpp"
#include "panelkit/regression.hpp"

namespace panelkit {

struct DgpConfig {
  std::size_t n_entities = 78;
  std::size_t n_periods = 25;
  int first_period = 1991;
  double beta_true = 0.005;
  double pi_first_stage = 0.5;
  double rho_confound = -0.01;  // covariance the confounder induces between d and y errors
  double entity_effect_sd = 1.0;
  double time_effect_sd = 0.5;
  double outcome_noise_sd = 0.05;
  double endogenous_noise_sd = 1.0;
  double confounder_sd = 1.0;
  double control_coef_outcome = 0.3;
  double control_coef_endogenous = 0.2;
  double rate_mean = 4.0;
  double rate_sd = 2.0;
  double instrument_noise_sd = 0.0;  // idiosyncratic component added to r_t * k_i
  std::uint64_t seed = 20230917;

  void validate() const {
    if (n_entities < 2) throw ConfigError("n_entities must be >= 2");
    if (n_periods < 2) throw ConfigError("n_periods must be >= 2");
    for (double v : {entity_effect_sd, time_effect_sd, outcome_noise_sd, endogenous_noise_sd,
                     confounder_sd, rate_sd, instrument_noise_sd})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("standard deviations must be >= 0");
    for (double v : {beta_true, pi_first_stage, rho_confound, control_coef_outcome,
                     control_coef_endogenous, rate_mean})
      if (!std::isfinite(v)) throw ConfigError("DGP coefficients must be finite");
  }
};

namespace sim_columns {
inline const std::string outcome = "outcome";
inline const std::string endogenous = "endogenous";
inline const std::string instrument = "instrument";
inline const std::string control = "control";
inline const std::string confounder = "confounder";
}  // namespace sim_columns

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t replication_seed(std::uint64_t seed, std::size_t rep) {
  return splitmix64(seed + (static_cast<std::uint64_t>(rep) + 1) * 0x9E3779B97F4A7C15ull);
}

/// One synthetic panel. Deterministic in cfg (including cfg.seed).
inline PanelDataset simulate_dgp(const DgpConfig& cfg) {
  cfg.validate();
  boost::random::mt19937_64 rng(cfg.seed);
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  boost::random::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](double sd) { return sd * normal(rng); };

  const std::size_t N = cfg.n_entities, T = cfg.n_periods;
  std::vector<std::string> ids;
  const std::size_t width = std::to_string(N).size();
  for (std::size_t i = 0; i < N; ++i) {
    std::string num = std::to_string(i + 1);
    ids.push_back("E" + std::string(width - num.size(), '0') + num);
  }
  std::vector<int> years;
  for (std::size_t t = 0; t < T; ++t) years.push_back(cfg.first_period + static_cast<int>(t));
  PanelDataset shape(ids, years);

  std::vector<double> mu(N), alpha(N), share(N), gamma(T), lambda(T), rate(T);
  for (std::size_t i = 0; i < N; ++i) {
    mu[i] = draw(cfg.entity_effect_sd);
    alpha[i] = draw(cfg.entity_effect_sd);
    share[i] = unit(rng);
  }
  for (std::size_t t = 0; t < T; ++t) {
    gamma[t] = draw(cfg.time_effect_sd);
    lambda[t] = draw(cfg.time_effect_sd);
    rate[t] = cfg.rate_mean + draw(cfg.rate_sd);
  }

  const double load = std::sqrt(std::abs(cfg.rho_confound));
  const double load_y = cfg.rho_confound < 0 ? -load : load;
  const std::size_t cells = N * T;
  std::vector<double> y(cells), d(cells), z(cells), x(cells), c(cells);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t k = shape.cell(i, t);
      x[k] = normal(rng);
      c[k] = draw(cfg.confounder_sd);
      const double eps = draw(cfg.outcome_noise_sd);
      const double v = draw(cfg.endogenous_noise_sd);
      const double eta = draw(cfg.instrument_noise_sd);
      z[k] = rate[t] * share[i] + eta;
      d[k] = cfg.pi_first_stage * z[k] + cfg.control_coef_endogenous * x[k] + alpha[i] +
             lambda[t] + load * c[k] + v;
      y[k] = cfg.beta_true * d[k] + cfg.control_coef_outcome * x[k] + mu[i] + gamma[t] +
             load_y * c[k] + eps;
    }
  }
  return shape.with_column(sim_columns::outcome, std::move(y))
      .with_column(sim_columns::endogenous, std::move(d))
      .with_column(sim_columns::instrument, std::move(z), "r_t * k_i")
      .with_column(sim_columns::control, std::move(x))
      .with_column(sim_columns::confounder, std::move(c), "unobservable; oracle runs only");
}

/// The model fitted in every replication: two-way FE, one control.
inline ModelSpec simulation_model(const CovarianceSettings& cov = {}) {
  ModelSpec spec;
  spec.dependent = sim_columns::outcome;
  spec.endogenous = sim_columns::endogenous;
  spec.instruments = {sim_columns::instrument};
  spec.exogenous = {sim_columns::control};
  spec.covariance = cov;
  return spec;
}

struct ExperimentOptions {
  std::size_t reps = 500;
  std::size_t threads = 0;  // 0: hardware concurrency
  CovarianceSettings covariance;
  double ar_level = 0.95;
  bool confidence_sets = true;
  GridPolicy grid;
};

/// Per-replication outcomes.
struct Replication {
  double fe_beta = 0, fe_se = 0;
  double iv_beta = 0, iv_se = 0;
  double first_stage_f = 0;
  double lm_stat = 0, lm_p = 1;
  double ar_p_true = 1, ar_p_zero = 1;
  bool ar_covers = false, ar_bounded = false, ar_unbounded = false;
  double ar_length = 0;
  bool ok = false;
  std::string error;
};

inline Replication run_replication(const DgpConfig& cfg, const ExperimentOptions& opt) {
  Replication r;
  try {
    const PanelDataset ds = simulate_dgp(cfg);
    const ModelSpec spec = simulation_model(opt.covariance);
    const PreparedModel m = prepare_model(spec, ds);
    const EstimationResult fe = fe_ols(m, opt.covariance);
    const TslsResult iv = tsls_fit(m, opt.covariance);
    r.fe_beta = fe.coefficient(sim_columns::endogenous);
    r.fe_se = fe.std_error(sim_columns::endogenous);
    r.iv_beta = iv.second_stage.coefficient(sim_columns::endogenous);
    r.iv_se = iv.second_stage.std_error(sim_columns::endogenous);
    r.first_stage_f = first_stage_f(iv.first_stage, spec.instruments).statistic;
    const LmTest lm = underid_lm(m, opt.covariance);
    r.lm_stat = lm.statistic;
    r.lm_p = lm.p_value;
    const ArProfile profile(m, opt.covariance);
    r.ar_p_true = profile.test(cfg.beta_true).p_value;
    r.ar_p_zero = profile.test(0.0).p_value;
    if (opt.confidence_sets) {
      const double center = opt.grid.center.value_or(r.iv_beta);
      const ArConfidenceSet set = ar_confidence_set(profile, center, r.iv_se, opt.ar_level, opt.grid);
      r.ar_covers = set.contains(cfg.beta_true);
      r.ar_unbounded = set.unbounded;
      r.ar_bounded = !set.empty() && !set.unbounded;
      if (r.ar_bounded)
        for (const auto& iv_ : set.intervals) r.ar_length += iv_.length();
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

struct EstimatorSummary {
  double mean = 0, median = 0;
  double mean_bias = 0, median_bias = 0;
  double rmse = 0;
  double mc_se = 0;   // standard error of the mean across replications
  double mean_se = 0; // average reported standard error
  double rejection_rate_true = 0;  // two-sided t test of beta = beta_true at 5%
};

struct ExperimentReport {
  DgpConfig config;
  std::size_t reps = 0;
  std::size_t successes = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;  // first few, in replication order
  bool failure_threshold_exceeded = false;    // more than 1% failed

  EstimatorSummary fe;
  EstimatorSummary iv;
  double first_stage_f_mean = 0, first_stage_f_median = 0;
  double share_f_above_10 = 0;
  double underid_lm_rejection_rate = 0;
  double ar_rejection_rate_true = 0;
  double ar_rejection_rate_zero = 0;
  double ar_level = 0.95;
  double ar_coverage = 0;
  double ar_unbounded_share = 0;
  double ar_mean_length = 0;  // over bounded sets
  double wall_clock_seconds = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline EstimatorSummary summarize(const std::vector<double>& est, const std::vector<double>& se,
                                  double truth, double t_crit) {
  EstimatorSummary s;
  const double n = static_cast<double>(est.size());
  if (est.empty()) return s;
  double sum = 0, sum_se = 0, sq = 0, rej = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    sum += est[i];
    sum_se += se[i];
    sq += (est[i] - truth) * (est[i] - truth);
    if (std::abs(est[i] - truth) > t_crit * se[i]) rej += 1;
  }
  s.mean = sum / n;
  s.median = median_of(est);
  s.mean_bias = s.mean - truth;
  s.median_bias = s.median - truth;
  s.rmse = std::sqrt(sq / n);
  s.mean_se = sum_se / n;
  s.rejection_rate_true = rej / n;
  if (est.size() > 1) {
    double var = 0;
    for (double e : est) var += (e - s.mean) * (e - s.mean);
    s.mc_se = std::sqrt(var / (n - 1.0) / n);
  }
  return s;
}

}  // namespace detail

/// Aggregates replications in index order, so the result does not depend
/// on which worker produced which replication.
inline ExperimentReport aggregate(const DgpConfig& cfg, const ExperimentOptions& opt,
                                  const std::vector<Replication>& reps) {
  ExperimentReport rep;
  rep.config = cfg;
  rep.reps = reps.size();
  rep.ar_level = opt.ar_level;
  std::vector<double> fe_b, fe_s, iv_b, iv_s, fs;
  double lm_rej = 0, ar_rej_true = 0, ar_rej_zero = 0, covers = 0, unbounded = 0, f10 = 0;
  double len_sum = 0, n_bounded = 0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++rep.failures;
      if (rep.failure_messages.size() < 10) rep.failure_messages.push_back(r.error);
      continue;
    }
    ++rep.successes;
    fe_b.push_back(r.fe_beta);
    fe_s.push_back(r.fe_se);
    iv_b.push_back(r.iv_beta);
    iv_s.push_back(r.iv_se);
    fs.push_back(r.first_stage_f);
    if (r.first_stage_f > 10.0) f10 += 1;
    if (r.lm_p < 0.05) lm_rej += 1;
    if (r.ar_p_true < 0.05) ar_rej_true += 1;
    if (r.ar_p_zero < 0.05) ar_rej_zero += 1;
    if (r.ar_covers) covers += 1;
    if (r.ar_unbounded) unbounded += 1;
    if (r.ar_bounded) {
      len_sum += r.ar_length;
      n_bounded += 1;
    }
  }
  rep.failure_threshold_exceeded =
      static_cast<double>(rep.failures) > 0.01 * static_cast<double>(rep.reps);
  if (rep.successes == 0) return rep;

  const double n = static_cast<double>(rep.successes);
  // t critical value at 5% with the residual dof of a two-way FE fit of the DGP.
  const double dof = static_cast<double>(cfg.n_entities * cfg.n_periods) -
                     static_cast<double>(cfg.n_entities) - static_cast<double>(cfg.n_periods - 1) - 2.0;
  const double t_crit = dof > 0 ? boost::math::quantile(boost::math::complement(
                                      boost::math::students_t_distribution<double>(dof), 0.025))
                                : 1.959963984540054;
  rep.fe = detail::summarize(fe_b, fe_s, cfg.beta_true, t_crit);
  rep.iv = detail::summarize(iv_b, iv_s, cfg.beta_true, t_crit);
  double fsum = 0;
  for (double f : fs) fsum += f;
  rep.first_stage_f_mean = fsum / n;
  rep.first_stage_f_median = detail::median_of(fs);
  rep.share_f_above_10 = f10 / n;
  rep.underid_lm_rejection_rate = lm_rej / n;
  rep.ar_rejection_rate_true = ar_rej_true / n;
  rep.ar_rejection_rate_zero = ar_rej_zero / n;
  if (opt.confidence_sets) {
    rep.ar_coverage = covers / n;
    rep.ar_unbounded_share = unbounded / n;
    rep.ar_mean_length = n_bounded > 0 ? len_sum / n_bounded : 0.0;
  }
  return rep;
}

/// Runs `opt.reps` independent replications (possibly on several threads)
/// and aggregates them. Failed replications are counted, never dropped
/// silently.
inline ExperimentReport run_experiment(const DgpConfig& cfg, const ExperimentOptions& opt) {
  cfg.validate();
  if (opt.reps < 1) throw ConfigError("replication count must be >= 1");
  const auto start = std::chrono::steady_clock::now();

  std::vector<Replication> reps(opt.reps);
  std::size_t workers = opt.threads ? opt.threads : std::thread::hardware_concurrency();
  workers = std::clamp<std::size_t>(workers, 1, opt.reps);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < opt.reps; i = next++) {
      DgpConfig c = cfg;
      c.seed = replication_seed(cfg.seed, i);
      reps[i] = run_replication(c, opt);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  ExperimentReport rep = aggregate(cfg, opt, reps);
  rep.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace panelkit
