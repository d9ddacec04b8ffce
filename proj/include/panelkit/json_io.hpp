#pragma once

// JSON views of results, experiment configs, and reports. Non-finite
// numbers are written as strings ("inf", "-inf", "nan") since JSON has no
// literal for them.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <string>

#include "panelkit/errors.hpp"
#include "panelkit/instrument.hpp"
#include "panelkit/result.hpp"
#include "panelkit/simulation.hpp"

namespace panelkit {

using json = nlohmann::ordered_json;

inline json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline json to_json(const ArConfidenceSet& s) {
  json iv = json::array();
  for (const auto& i : s.intervals) iv.push_back({number(i.lower), number(i.upper)});
  return {{"level", s.level},
          {"shape", s.shape()},
          {"intervals", iv},
          {"unbounded", s.unbounded},
          {"disjoint", s.disjoint},
          {"searched_half_width", number(s.searched_half_width)}};
}

inline json to_json(const DiagnosticsBundle& d) {
  json ar = json::array();
  for (const auto& t : d.ar_tests)
    ar.push_back({{"beta0", t.beta0},
                  {"statistic", number(t.statistic)},
                  {"dof", {t.dof_num, t.dof_den}},
                  {"p_value", number(t.p_value)}});
  json out = {{"label", d.label},
              {"first_stage_f",
               {{"statistic", number(d.first_stage_f.statistic)},
                {"dof", {d.first_stage_f.dof_num, d.first_stage_f.dof_den}},
                {"p_value", number(d.first_stage_f.p_value)}}},
              {"underid_lm",
               {{"statistic", number(d.underid_lm.statistic)},
                {"dof", d.underid_lm.dof},
                {"p_value", number(d.underid_lm.p_value)}}},
              {"ar_tests", ar}};
  if (d.ar_set) out["ar_confidence_set"] = to_json(*d.ar_set);
  return out;
}

inline json to_json(const EstimationResult& r) {
  json coefs = json::array();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const auto& n = r.names[i];
    coefs.push_back({{"name", n},
                     {"estimate", number(r.coefficient(n))},
                     {"std_error", number(r.std_error(n))},
                     {"t", number(r.t_stat(n))},
                     {"p_value", number(r.p_value(n))}});
  }
  json vcov = json::array();
  for (Eigen::Index i = 0; i < r.vcov.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.vcov.cols(); ++j) row.push_back(number(r.vcov(i, j)));
    vcov.push_back(row);
  }
  json out = {{"estimator", to_string(r.tag)},
              {"covariance", to_string(r.covariance.kind)},
              {"coefficients", coefs},
              {"vcov", vcov},
              {"n_obs", r.n_obs},
              {"n_entities", r.n_entities},
              {"n_periods", r.n_periods},
              {"dof_model", r.dof_model},
              {"dof_residual", r.dof_residual},
              {"r_squared_within", number(r.r_squared_within)},
              {"dropped_singletons", r.dropped_singletons}};
  if (r.diagnostics) out["diagnostics"] = to_json(*r.diagnostics);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration

/// Reads a DgpConfig from a flat JSON object. Unknown keys are errors.
inline DgpConfig dgp_from_json(const json& j, const std::set<std::string>& also_allowed = {}) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  DgpConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  };
  static const std::set<std::string> known = {
      "n_entities", "n_periods", "first_period", "beta_true", "pi_first_stage",
      "rho_confound", "entity_effect_sd", "time_effect_sd", "outcome_noise_sd",
      "endogenous_noise_sd", "confounder_sd", "control_coef_outcome",
      "control_coef_endogenous", "rate_mean", "rate_sd", "instrument_noise_sd", "seed"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k) && !also_allowed.count(k)) throw ConfigError("unknown config key '" + k + "'");
  get("n_entities", c.n_entities);
  get("n_periods", c.n_periods);
  get("first_period", c.first_period);
  get("beta_true", c.beta_true);
  get("pi_first_stage", c.pi_first_stage);
  get("rho_confound", c.rho_confound);
  get("entity_effect_sd", c.entity_effect_sd);
  get("time_effect_sd", c.time_effect_sd);
  get("outcome_noise_sd", c.outcome_noise_sd);
  get("endogenous_noise_sd", c.endogenous_noise_sd);
  get("confounder_sd", c.confounder_sd);
  get("control_coef_outcome", c.control_coef_outcome);
  get("control_coef_endogenous", c.control_coef_endogenous);
  get("rate_mean", c.rate_mean);
  get("rate_sd", c.rate_sd);
  get("instrument_noise_sd", c.instrument_noise_sd);
  get("seed", c.seed);
  return c;
}

inline json to_json(const DgpConfig& c) {
  return {{"n_entities", c.n_entities},
          {"n_periods", c.n_periods},
          {"first_period", c.first_period},
          {"beta_true", c.beta_true},
          {"pi_first_stage", c.pi_first_stage},
          {"rho_confound", c.rho_confound},
          {"entity_effect_sd", c.entity_effect_sd},
          {"time_effect_sd", c.time_effect_sd},
          {"outcome_noise_sd", c.outcome_noise_sd},
          {"endogenous_noise_sd", c.endogenous_noise_sd},
          {"confounder_sd", c.confounder_sd},
          {"control_coef_outcome", c.control_coef_outcome},
          {"control_coef_endogenous", c.control_coef_endogenous},
          {"rate_mean", c.rate_mean},
          {"rate_sd", c.rate_sd},
          {"instrument_noise_sd", c.instrument_noise_sd},
          {"seed", c.seed}};
}

inline json to_json(const EstimatorSummary& s) {
  return {{"mean", number(s.mean)},
          {"median", number(s.median)},
          {"mean_bias", number(s.mean_bias)},
          {"median_bias", number(s.median_bias)},
          {"rmse", number(s.rmse)},
          {"mc_se", number(s.mc_se)},
          {"mean_std_error", number(s.mean_se)},
          {"rejection_rate_true_beta", number(s.rejection_rate_true)}};
}

inline json to_json(const ExperimentReport& r, bool include_timing = false) {
  json out = {{"config", to_json(r.config)},
              {"replications", r.reps},
              {"successes", r.successes},
              {"failures", r.failures},
              {"failure_messages", r.failure_messages},
              {"failure_threshold_exceeded", r.failure_threshold_exceeded},
              {"fe_ols", to_json(r.fe)},
              {"fe_2sls", to_json(r.iv)},
              {"first_stage_f_mean", number(r.first_stage_f_mean)},
              {"first_stage_f_median", number(r.first_stage_f_median)},
              {"share_first_stage_f_above_10", number(r.share_f_above_10)},
              {"underid_lm_rejection_rate", number(r.underid_lm_rejection_rate)},
              {"ar_rejection_rate_true_beta", number(r.ar_rejection_rate_true)},
              {"ar_rejection_rate_zero", number(r.ar_rejection_rate_zero)},
              {"ar_level", r.ar_level},
              {"ar_coverage", number(r.ar_coverage)},
              {"ar_unbounded_share", number(r.ar_unbounded_share)},
              {"ar_mean_length_bounded", number(r.ar_mean_length)}};
  if (include_timing) out["wall_clock_seconds"] = r.wall_clock_seconds;
  return out;
}

/// Human-readable experiment summary (no timing, so it is reproducible).
inline std::string format_report_text(const ExperimentReport& r) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(6);
  o << "Monte Carlo experiment: " << r.config.n_entities << " entities x " << r.config.n_periods
    << " periods, beta_true = " << r.config.beta_true << ", seed = " << r.config.seed << '\n';
  o << "replications: " << r.reps << " (" << r.successes << " ok, " << r.failures << " failed)\n";
  if (r.failure_threshold_exceeded) o << "FAILED: more than 1% of replications failed\n";
  auto est = [&](const char* label, const EstimatorSummary& s) {
    o << label << ": mean " << s.mean << ", median " << s.median << ", bias " << s.mean_bias
      << ", RMSE " << s.rmse << ", MC s.e. " << s.mc_se << ", mean s.e. " << s.mean_se
      << ", rejects true beta " << s.rejection_rate_true << '\n';
  };
  est("FE-OLS ", r.fe);
  est("FE-2SLS", r.iv);
  o << "first-stage F: mean " << r.first_stage_f_mean << ", median " << r.first_stage_f_median
    << ", share > 10 " << r.share_f_above_10 << '\n';
  o << "under-id LM rejection rate (5%): " << r.underid_lm_rejection_rate << '\n';
  o << "AR rejection rate at true beta (5%): " << r.ar_rejection_rate_true
    << ", at beta = 0: " << r.ar_rejection_rate_zero << '\n';
  char level[32];
  std::snprintf(level, sizeof(level), "%g", r.ar_level * 100.0);
  o << "AR " << level << "% set: coverage " << r.ar_coverage << ", unbounded share "
    << r.ar_unbounded_share << ", mean bounded length " << r.ar_mean_length << '\n';
  return o.str();
}

inline json to_json(const InstrumentSeries& s) {
  json kbar = json::object();
  for (const auto& [id, v] : s.kopen_bar) kbar[id] = number(v);
  json flagged = json::array();
  for (const auto& [id, year] : s.renormalized_cells) flagged.push_back({id, year});
  json prov = json::object();
  for (const auto& [k, v] : s.provenance) prov[k] = v;
  return {{"provenance", prov},
          {"openness_range", {number(s.openness_min), number(s.openness_max)}},
          {"kopen_bar", kbar},
          {"renormalized_cells", flagged}};
}

}  // namespace panelkit
