#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "panelkit/distributions.hpp"
#include "panelkit/errors.hpp"

namespace panelkit {

enum class CovarianceKind { classical, hc1, cluster };

inline const char* to_string(CovarianceKind k) {
  switch (k) {
    case CovarianceKind::classical: return "classical";
    case CovarianceKind::hc1: return "hc1";
    case CovarianceKind::cluster: return "cluster";
  }
  return "?";
}

inline std::optional<CovarianceKind> parse_covariance_kind(const std::string& s) {
  if (s == "classical") return CovarianceKind::classical;
  if (s == "hc1" || s == "robust") return CovarianceKind::hc1;
  if (s == "cluster") return CovarianceKind::cluster;
  return std::nullopt;
}

struct CovarianceSettings {
  CovarianceKind kind = CovarianceKind::hc1;
  bool small_sample = true;  // n/(n-k) for HC1, G/(G-1)(n-1)/(n-k) for cluster
};

enum class EstimatorTag { fe_ols, fe_2sls, first_stage };

inline const char* to_string(EstimatorTag t) {
  switch (t) {
    case EstimatorTag::fe_ols: return "FE-OLS";
    case EstimatorTag::fe_2sls: return "FE-2SLS";
    case EstimatorTag::first_stage: return "first-stage";
  }
  return "?";
}

struct ObservationKey {
  std::string entity;
  int period = 0;
};

// ---------------------------------------------------------------------------
// Diagnostics payload. Kleibergen-Paap statistics are only provided through
// their single-endogenous equivalences: the rk Wald F is the robust
// first-stage F, the rk LM is the robust first-stage LM.

struct FirstStageF {
  double statistic = 0.0;
  std::size_t dof_num = 0;
  std::size_t dof_den = 0;
  double p_value = 1.0;
};

struct LmTest {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
};

struct ArTest {
  double beta0 = 0.0;
  double statistic = 0.0;  // Wald / q
  std::size_t dof_num = 0;
  std::size_t dof_den = 0;
  double p_value = 1.0;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool bounded() const { return std::isfinite(lower) && std::isfinite(upper); }
  bool contains(double x) const { return x >= lower && x <= upper; }
  double length() const { return upper - lower; }
};

struct ArConfidenceSet {
  double level = 0.95;
  std::vector<Interval> intervals;
  bool unbounded = false;
  bool disjoint = false;
  double searched_half_width = 0.0;  // final grid half-width around the center

  bool empty() const { return intervals.empty(); }
  bool whole_line() const {
    return intervals.size() == 1 && std::isinf(intervals[0].lower) &&
           std::isinf(intervals[0].upper);
  }
  bool contains(double x) const {
    for (const auto& iv : intervals)
      if (iv.contains(x)) return true;
    return false;
  }
  /// "empty", "bounded", "unbounded", "whole-line", or "disjoint".
  std::string shape() const {
    if (empty()) return "empty";
    if (whole_line()) return "whole-line";
    if (disjoint) return "disjoint";
    if (unbounded) return "unbounded";
    return "bounded";
  }
};

struct DiagnosticsBundle {
  FirstStageF first_stage_f;
  LmTest underid_lm;
  std::vector<ArTest> ar_tests;
  std::optional<ArConfidenceSet> ar_set;
  std::string label = "KP rk statistics via single-endogenous equivalences";
};

// ---------------------------------------------------------------------------

struct EstimationResult {
  EstimatorTag tag = EstimatorTag::fe_ols;
  std::vector<std::string> names;  // reported coefficients, in reporting order
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;
  CovarianceSettings covariance;

  std::size_t n_obs = 0;
  std::size_t n_entities = 0;
  std::size_t n_periods = 0;
  std::size_t n_clusters = 0;
  std::size_t dof_model = 0;
  std::size_t dof_residual = 0;
  double r_squared_within = 0.0;
  double rss = 0.0;

  std::vector<ObservationKey> residual_keys;
  Eigen::VectorXd residuals;
  std::vector<std::string> dropped_singletons;

  std::optional<DiagnosticsBundle> diagnostics;

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }
  bool has(const std::string& name) const { return index_of(name).has_value(); }

  std::size_t require(const std::string& name) const {
    auto i = index_of(name);
    if (!i) throw ConfigError("coefficient '" + name + "' is not part of this result");
    return *i;
  }

  double coefficient(const std::string& name) const {
    return coef(static_cast<Eigen::Index>(require(name)));
  }
  double std_error(const std::string& name) const {
    const auto i = static_cast<Eigen::Index>(require(name));
    return std::sqrt(std::max(vcov(i, i), 0.0));
  }
  double t_stat(const std::string& name) const {
    return coefficient(name) / std_error(name);
  }
  /// Two-sided p-value from the t distribution with dof_residual.
  double p_value(const std::string& name) const {
    return dist::t_two_sided(t_stat(name), static_cast<double>(dof_residual));
  }
};

}  // namespace panelkit
