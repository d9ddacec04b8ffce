#pragma once

// Weak-instrument and identification diagnostics for a single endogenous
// regressor: first-stage F, under-identification LM, Anderson-Rubin test,
// and the AR confidence set by grid inversion.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "panelkit/distributions.hpp"
#include "panelkit/errors.hpp"
#include "panelkit/regression.hpp"
#include "panelkit/result.hpp"

namespace panelkit {

class GridError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

namespace detail {

/// x' V^{-1} x for a symmetric positive (semi)definite V. Returns +inf when
/// V is numerically singular and x is nonzero.
inline double quadratic_form_inverse(const Eigen::VectorXd& x, const Eigen::MatrixXd& V) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    return x.squaredNorm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  const double scale = V.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.vectorD().minCoeff() <= 1e-14 * scale)
    return x.squaredNorm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return x.dot(ldlt.solve(x));
}

inline Eigen::MatrixXd residualize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& X) {
  if (X.cols() == 0) return A;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  return A - X * qr.solve(A);
}

}  // namespace detail

/// Robust Wald test that the excluded-instrument coefficients are jointly
/// zero, divided by the number of restrictions. Uses the covariance the
/// first stage was estimated with; p-value from F(q, dof_residual).
inline FirstStageF first_stage_f(const EstimationResult& first_stage,
                                 const std::vector<std::string>& excluded) {
  if (excluded.empty()) throw ConfigError("no excluded instruments given");
  const auto q = static_cast<Eigen::Index>(excluded.size());
  Eigen::VectorXd b(q);
  Eigen::MatrixXd V(q, q);
  std::vector<Eigen::Index> idx;
  for (const auto& name : excluded) {
    auto i = first_stage.index_of(name);
    if (!i) throw ConfigError("excluded instrument '" + name + "' is not in the first stage");
    idx.push_back(static_cast<Eigen::Index>(*i));
  }
  for (Eigen::Index a = 0; a < q; ++a) {
    b(a) = first_stage.coef(idx[static_cast<std::size_t>(a)]);
    for (Eigen::Index c = 0; c < q; ++c)
      V(a, c) = first_stage.vcov(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(c)]);
  }
  FirstStageF out;
  out.statistic = detail::quadratic_form_inverse(b, V) / static_cast<double>(q);
  out.dof_num = static_cast<std::size_t>(q);
  out.dof_den = first_stage.dof_residual;
  out.p_value = dist::f_sf(out.statistic, static_cast<double>(q),
                           static_cast<double>(out.dof_den));
  return out;
}

/// Score (LM) test of the excluded instruments in the first stage. The null
/// is under-identification (instruments uncorrelated with the endogenous
/// regressor). Restricted residuals u = M_X d and partialled instruments
/// Z~ = M_X Z give LM = s' S^{-1} s with s = Z~'u; S is sigma^2 Z~'Z~ with
/// sigma^2 = u'u/n (classical), sum u_i^2 z_i z_i' (robust), or the
/// cluster sum of Z~_g'u_g outer products.
inline LmTest underid_lm(const PreparedModel& m, const CovarianceSettings& cov) {
  if (m.endog.size() == 0) throw ConfigError("under-identification test needs an endogenous regressor");
  if (m.instruments.cols() == 0) throw ConfigError("under-identification test needs instruments");
  check_instrument_variation(m);
  Eigen::MatrixXd ud = detail::residualize(m.endog, m.exog);
  const Eigen::VectorXd u = ud.col(0);
  const Eigen::MatrixXd Z = detail::residualize(m.instruments, m.exog);
  const Eigen::VectorXd s = Z.transpose() * u;

  Eigen::MatrixXd S;
  switch (cov.kind) {
    case CovarianceKind::classical:
      S = (u.squaredNorm() / static_cast<double>(u.size())) * (Z.transpose() * Z);
      break;
    case CovarianceKind::hc1: {
      Eigen::MatrixXd scores = Z.array().colwise() * u.array();
      S = scores.transpose() * scores;
      break;
    }
    case CovarianceKind::cluster: {
      const std::size_t G = m.sample.n_entities();
      if (G < 2) throw EstimationError("cluster covariance needs at least 2 clusters");
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(G), Z.cols());
      for (Eigen::Index i = 0; i < Z.rows(); ++i)
        sums.row(static_cast<Eigen::Index>(m.clusters[static_cast<std::size_t>(i)])) += u(i) * Z.row(i);
      S = sums.transpose() * sums;
      break;
    }
  }
  LmTest out;
  out.statistic = detail::quadratic_form_inverse(s, S);
  out.dof = static_cast<std::size_t>(Z.cols());
  out.p_value = dist::chi2_sf(out.statistic, static_cast<double>(out.dof));
  return out;
}

inline LmTest underid_lm(const ModelSpec& spec, const PanelDataset& ds) {
  return underid_lm(prepare_model(spec, ds), spec.covariance);
}

/// Anderson-Rubin test of beta = beta0 by the direct route: regress
/// y - beta0 * d on [instruments, exogenous] and test the instruments
/// jointly (Wald / q, p-value from F(q, dof_residual)).
inline ArTest ar_test(const PreparedModel& m, const CovarianceSettings& cov, double beta0) {
  if (m.endog.size() == 0) throw ConfigError("AR test needs an endogenous regressor");
  check_instrument_variation(m);
  const Eigen::VectorXd y0 = m.y - beta0 * m.endog;
  RegressionDesign d = m.design(m.instruments, m.instrument_names, m.instrument_ref_norms);
  EstimationResult reduced = ols_fit(d, y0, cov);
  FirstStageF wald = first_stage_f(reduced, m.instrument_names);
  return {beta0, wald.statistic, wald.dof_num, wald.dof_den, wald.p_value};
}

inline ArTest ar_test(const ModelSpec& spec, const PanelDataset& ds, double beta0) {
  return ar_test(prepare_model(spec, ds), spec.covariance, beta0);
}

/// AR statistic as a closed-form function of beta0. The reduced-form
/// coefficients are linear in beta0 and their covariance is quadratic,
/// V(b) = V0 - b V1 + b^2 V2, so each evaluation costs O(q^3) after one
/// O(n k^2) setup. Agrees with ar_test() to rounding.
class ArProfile {
 public:
  ArProfile(const PreparedModel& m, const CovarianceSettings& cov) {
    if (m.endog.size() == 0) throw ConfigError("AR test needs an endogenous regressor");
    check_instrument_variation(m);
    RegressionDesign d = m.design(m.instruments, m.instrument_names, m.instrument_ref_norms);
    check_full_rank(d.X, d.names, d.reference_norms);
    const auto q = m.instruments.cols();
    q_ = static_cast<std::size_t>(q);
    const std::size_t n_params = d.absorbed + static_cast<std::size_t>(d.X.cols());
    dof_ = residual_dof(d.X.rows(), n_params);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
    Eigen::MatrixXd rhs(d.X.rows(), 2);
    rhs << m.y, m.endog;
    const Eigen::MatrixXd coef = qr.solve(rhs);
    const Eigen::MatrixXd bread = inverse_gram(qr);
    const Eigen::MatrixXd resid = rhs - d.X * coef;
    const Eigen::VectorXd ey = resid.col(0), ed = resid.col(1);
    cy_ = coef.col(0).head(q);
    cd_ = coef.col(1).head(q);

    const double n = static_cast<double>(d.X.rows());
    switch (cov.kind) {
      case CovarianceKind::classical: {
        const Eigen::MatrixXd Bzz = bread.topLeftCorner(q, q) / static_cast<double>(dof_);
        V0_ = ey.squaredNorm() * Bzz;
        V1_ = 2.0 * ey.dot(ed) * Bzz;
        V2_ = ed.squaredNorm() * Bzz;
        break;
      }
      case CovarianceKind::hc1: {
        const Eigen::MatrixXd G = d.X * bread.leftCols(q);  // rows: (B w_i)_Z'
        const double f = cov.small_sample ? n / static_cast<double>(dof_) : 1.0;
        const Eigen::MatrixXd Gy = G.array().colwise() * ey.array();
        const Eigen::MatrixXd Gd = G.array().colwise() * ed.array();
        V0_ = f * Gy.transpose() * Gy;
        V1_ = f * (Gy.transpose() * Gd + Gd.transpose() * Gy);
        V2_ = f * Gd.transpose() * Gd;
        break;
      }
      case CovarianceKind::cluster: {
        const Eigen::MatrixXd G = d.X * bread.leftCols(q);
        const std::size_t n_cl = m.sample.n_entities();
        if (n_cl < 2) throw EstimationError("cluster covariance needs at least 2 clusters");
        Eigen::MatrixXd Sy = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_cl), q);
        Eigen::MatrixXd Sd = Sy;
        for (Eigen::Index i = 0; i < G.rows(); ++i) {
          const auto g = static_cast<Eigen::Index>(m.clusters[static_cast<std::size_t>(i)]);
          Sy.row(g) += ey(i) * G.row(i);
          Sd.row(g) += ed(i) * G.row(i);
        }
        const double Gc = static_cast<double>(n_cl);
        const double f = cov.small_sample
                             ? (Gc / (Gc - 1.0)) * ((n - 1.0) / static_cast<double>(dof_))
                             : 1.0;
        V0_ = f * Sy.transpose() * Sy;
        V1_ = f * (Sy.transpose() * Sd + Sd.transpose() * Sy);
        V2_ = f * Sd.transpose() * Sd;
        break;
      }
    }
  }

  double statistic(double beta0) const {
    const Eigen::VectorXd c = cy_ - beta0 * cd_;
    const Eigen::MatrixXd V = V0_ - beta0 * V1_ + (beta0 * beta0) * V2_;
    return detail::quadratic_form_inverse(c, V) / static_cast<double>(q_);
  }

  ArTest test(double beta0) const {
    const double s = statistic(beta0);
    return {beta0, s, q_, dof_,
            dist::f_sf(s, static_cast<double>(q_), static_cast<double>(dof_))};
  }

  /// Largest statistic not rejected at significance `alpha`.
  double critical_value(double alpha) const {
    return dist::f_critical(alpha, static_cast<double>(q_), static_cast<double>(dof_));
  }

  std::size_t dof_num() const { return q_; }
  std::size_t dof_den() const { return dof_; }

 private:
  std::size_t q_ = 0;
  std::size_t dof_ = 0;
  Eigen::VectorXd cy_, cd_;
  Eigen::MatrixXd V0_, V1_, V2_;
};

/// Search grid for the AR confidence set. Without an explicit center the
/// 2SLS estimate is used; widths are in units of its standard error.
struct GridPolicy {
  std::optional<double> center;
  double half_width_se = 10.0;
  std::size_t steps = 2001;
  double expansion = 10.0;
  std::size_t max_expansions = 6;

  void validate() const {
    if (steps < 3 || steps % 2 == 0) throw GridError("grid step count must be odd and >= 3");
    if (!(half_width_se > 0.0) || !std::isfinite(half_width_se))
      throw GridError("grid half-width must be positive");
    if (!(expansion > 1.0) || !std::isfinite(expansion))
      throw GridError("grid expansion factor must exceed 1");
  }
};

/// Inverts the AR test over an expanding centered grid. Maximal runs of
/// non-rejected grid points become closed intervals whose finite endpoints
/// are refined by bisection to 1e-6 of `scale`. A run that reaches the grid
/// edge after the last allowed expansion is reported as unbounded.
inline ArConfidenceSet ar_confidence_set(const ArProfile& profile, double center, double scale,
                                         double level, const GridPolicy& grid = {}) {
  grid.validate();
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  double half = grid.half_width_se * scale;
  if (!(half > 0.0) || !std::isfinite(half) || !std::isfinite(center))
    throw GridError("AR grid has zero or non-finite width");

  const double crit = profile.critical_value(1.0 - level);
  auto accepted = [&](double b) { return profile.statistic(b) <= crit; };

  std::vector<double> points;
  auto add_grid = [&](double h) {
    const std::size_t half_steps = (grid.steps - 1) / 2;
    const double step = h / static_cast<double>(half_steps);
    for (std::size_t i = 0; i < grid.steps; ++i) {
      const double offset = (static_cast<double>(i) - static_cast<double>(half_steps)) * step;
      points.push_back(center + offset);
    }
  };
  add_grid(half);
  std::size_t expansions = 0;
  bool edge_open = accepted(center - half) || accepted(center + half);
  while (edge_open && expansions < grid.max_expansions) {
    half *= grid.expansion;
    ++expansions;
    add_grid(half);
    edge_open = accepted(center - half) || accepted(center + half);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::vector<char> ok(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) ok[i] = accepted(points[i]) ? 1 : 0;

  const double tol = 1e-6 * scale;
  auto refine = [&](double in, double out) {
    while (std::abs(out - in) > tol) {
      const double mid = 0.5 * (in + out);
      if (mid == in || mid == out) break;
      if (accepted(mid)) in = mid;
      else out = mid;
    }
    return in;
  };

  ArConfidenceSet set;
  set.level = level;
  set.searched_half_width = half;
  const double inf = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  while (i < points.size()) {
    if (!ok[i]) { ++i; continue; }
    std::size_t j = i;
    while (j + 1 < points.size() && ok[j + 1]) ++j;
    Interval iv;
    iv.lower = i == 0 ? -inf : refine(points[i], points[i - 1]);
    iv.upper = j + 1 == points.size() ? inf : refine(points[j], points[j + 1]);
    set.intervals.push_back(iv);
    i = j + 1;
  }
  for (const auto& iv : set.intervals)
    if (!iv.bounded()) set.unbounded = true;
  set.disjoint = set.intervals.size() > 1;
  return set;
}

inline ArConfidenceSet ar_confidence_set(const PreparedModel& m, const CovarianceSettings& cov,
                                         double level, const GridPolicy& grid = {}) {
  const TslsResult fit = tsls_fit(m, cov);
  const double center = grid.center.value_or(fit.second_stage.coefficient(m.endog_name));
  const double se = fit.second_stage.std_error(m.endog_name);
  return ar_confidence_set(ArProfile(m, cov), center, se, level, grid);
}

inline ArConfidenceSet ar_confidence_set(const ModelSpec& spec, const PanelDataset& ds,
                                         double level, const GridPolicy& grid = {}) {
  return ar_confidence_set(prepare_model(spec, ds), spec.covariance, level, grid);
}

struct DiagnosticsOptions {
  double ar_level = 0.95;
  std::vector<double> ar_nulls{0.0};
  GridPolicy grid;
  bool confidence_set = true;
};

/// Full diagnostics bundle for a fitted IV model.
inline DiagnosticsBundle iv_diagnostics(const PreparedModel& m, const TslsResult& fit,
                                        const CovarianceSettings& cov,
                                        const DiagnosticsOptions& opt = {}) {
  DiagnosticsBundle b;
  b.first_stage_f = first_stage_f(fit.first_stage, m.instrument_names);
  b.underid_lm = underid_lm(m, cov);
  const ArProfile profile(m, cov);
  for (double b0 : opt.ar_nulls) b.ar_tests.push_back(profile.test(b0));
  if (opt.confidence_set) {
    const double center = opt.grid.center.value_or(fit.second_stage.coefficient(m.endog_name));
    b.ar_set = ar_confidence_set(profile, center, fit.second_stage.std_error(m.endog_name),
                                 opt.ar_level, opt.grid);
  }
  return b;
}

}  // namespace panelkit
