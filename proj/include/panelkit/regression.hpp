#pragma once

// OLS, fixed-effects, and 2SLS estimation with classical, HC1, and
// entity-clustered covariance.
//
// Entity effects are absorbed by the within transformation; time effects
// enter as explicit drop-first dummies which are demeaned along with every
// other column. For unbalanced panels this is exactly the LSDV estimator.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "panelkit/errors.hpp"
#include "panelkit/panel.hpp"
#include "panelkit/result.hpp"

namespace panelkit {

inline constexpr double kRankTolerance = 1e-10;

struct FixedEffects {
  bool entity = true;
  bool time = true;
};

struct ModelSpec {
  std::string dependent;
  std::vector<std::string> exogenous;
  std::optional<std::string> endogenous;
  std::vector<std::string> instruments;
  FixedEffects fixed_effects;
  CovarianceSettings covariance;
  SampleFilter filter;

  bool is_iv() const { return endogenous.has_value(); }

  void validate() const {
    if (dependent.empty()) throw ConfigError("model has no dependent variable");
    if (endogenous && instruments.empty())
      throw ConfigError("endogenous regressor '" + *endogenous + "' has no instruments");
    if (!endogenous && !instruments.empty())
      throw ConfigError("instruments given without an endogenous regressor");
    std::set<std::string> seen;
    for (const auto& name : variables())
      if (!seen.insert(name).second)
        throw ConfigError("variable '" + name + "' appears in more than one role");
  }

  /// Every column the model touches, in role order.
  std::vector<std::string> variables() const {
    std::vector<std::string> out{dependent};
    if (endogenous) out.push_back(*endogenous);
    out.insert(out.end(), exogenous.begin(), exogenous.end());
    out.insert(out.end(), instruments.begin(), instruments.end());
    return out;
  }
};

/// A regression design after fixed-effect absorption.
struct RegressionDesign {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
  std::vector<bool> reported;          // false for nuisance columns (time dummies)
  Eigen::VectorXd reference_norms;     // column norms before absorption; empty = use X
  std::size_t absorbed = 0;            // parameters absorbed by demeaning
  std::vector<std::size_t> clusters;   // cluster index per row (entity position)
  std::size_t n_entities = 0;
  std::size_t n_periods = 0;
  std::vector<ObservationKey> keys;
  bool centered_tss = true;            // R^2 against the mean of y (no entity FE)
  std::vector<std::string> dropped_singletons;
};

// ---------------------------------------------------------------------------
// Rank detection

namespace detail {

inline Eigen::Index rank_of(const Eigen::MatrixXd& m) {
  if (m.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(kRankTolerance);
  return qr.rank();
}

}  // namespace detail

/// Throws CollinearityError naming a minimal dependent column set if `X`
/// is rank deficient at relative tolerance 1e-10. A column whose norm fell
/// below 1e-10 of its reference norm (absorbed by fixed effects) is
/// reported alone.
inline void check_full_rank(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                            const Eigen::VectorXd& reference_norms = {}) {
  const Eigen::Index p = X.cols();
  Eigen::MatrixXd scaled(X.rows(), p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double norm = X.col(j).norm();
    const double ref = reference_norms.size() == p ? reference_norms(j) : norm;
    if (!(norm > kRankTolerance * ref) || norm == 0.0)
      throw CollinearityError({names[static_cast<std::size_t>(j)]});
    scaled.col(j) = X.col(j) / norm;
  }
  if (detail::rank_of(scaled) == p) return;

  // Grow the column set until it first loses rank; the new column is then
  // spanned by the kept ones, and the nonzero weights identify the set.
  std::vector<Eigen::Index> kept;
  for (Eigen::Index j = 0; j < p; ++j) {
    Eigen::MatrixXd trial(scaled.rows(), static_cast<Eigen::Index>(kept.size()) + 1);
    for (std::size_t i = 0; i < kept.size(); ++i)
      trial.col(static_cast<Eigen::Index>(i)) = scaled.col(kept[i]);
    trial.col(trial.cols() - 1) = scaled.col(j);
    if (detail::rank_of(trial) == trial.cols()) {
      kept.push_back(j);
      continue;
    }
    Eigen::MatrixXd basis = trial.leftCols(trial.cols() - 1);
    Eigen::VectorXd w = basis.colPivHouseholderQr().solve(scaled.col(j));
    std::vector<std::string> set;
    for (std::size_t i = 0; i < kept.size(); ++i)
      if (std::abs(w(static_cast<Eigen::Index>(i))) > 1e-8)
        set.push_back(names[static_cast<std::size_t>(kept[i])]);
    set.push_back(names[static_cast<std::size_t>(j)]);
    throw CollinearityError(std::move(set));
  }
  throw CollinearityError(names);  // unreachable in exact arithmetic
}

/// Least-squares solution and (X'X)^{-1} from a pivoted QR of a design
/// already known to have full column rank.
struct LeastSquares {
  Eigen::VectorXd coef;
  Eigen::MatrixXd bread;  // (X'X)^{-1}
};

inline Eigen::MatrixXd inverse_gram(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
  const Eigen::Index p = qr.cols();
  Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  Eigen::MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd inner = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation();
  Eigen::MatrixXd out = perm * inner * perm.transpose();
  return 0.5 * (out + out.transpose());
}

inline LeastSquares least_squares(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  LeastSquares out;
  Eigen::MatrixXd sol = qr.solve(Y);
  out.coef = sol.col(0);
  out.bread = inverse_gram(qr);
  return out;
}

// ---------------------------------------------------------------------------
// Covariance estimators. `n_params` counts every estimated parameter,
// including effects absorbed by demeaning; dof_residual = n - n_params.

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

inline std::size_t residual_dof(Eigen::Index n, std::size_t n_params) {
  if (static_cast<std::size_t>(n) <= n_params)
    throw EstimationError("insufficient observations: n = " + std::to_string(n) +
                          " with " + std::to_string(n_params) + " parameters");
  return static_cast<std::size_t>(n) - n_params;
}

inline Eigen::MatrixXd classical_vcov(const Eigen::VectorXd& e, const Eigen::MatrixXd& bread,
                                      std::size_t dof) {
  return bread * (e.squaredNorm() / static_cast<double>(dof));
}

/// HC1: n/(n-k) * B (sum e_i^2 x_i x_i') B.
inline Eigen::MatrixXd hc1_vcov(const Eigen::VectorXd& e, const Eigen::MatrixXd& X,
                                const Eigen::MatrixXd& bread, std::size_t dof,
                                bool small_sample = true) {
  Eigen::MatrixXd scores = X.array().colwise() * e.array();
  Eigen::MatrixXd meat = scores.transpose() * scores;
  const double factor =
      small_sample ? static_cast<double>(X.rows()) / static_cast<double>(dof) : 1.0;
  return symmetrize(factor * bread * meat * bread);
}

/// Cluster-robust sandwich: G/(G-1) (n-1)/(n-k) * B (sum_g s_g s_g') B with
/// s_g = X_g' e_g. `n_params` defaults to the number of design columns.
inline Eigen::MatrixXd cluster_vcov(const Eigen::VectorXd& e, const Eigen::MatrixXd& X,
                                    std::span<const std::size_t> cluster_ids,
                                    std::optional<std::size_t> n_params = std::nullopt,
                                    bool small_sample = true) {
  if (static_cast<Eigen::Index>(cluster_ids.size()) != X.rows() || e.size() != X.rows())
    throw EstimationError("cluster ids, residuals, and design rows differ in length");
  std::vector<std::size_t> sorted(cluster_ids.begin(), cluster_ids.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const std::size_t G = sorted.size();
  if (G < 2) throw EstimationError("cluster covariance needs at least 2 clusters");

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(G), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto g = std::lower_bound(sorted.begin(), sorted.end(),
                                    cluster_ids[static_cast<std::size_t>(i)]) - sorted.begin();
    sums.row(g) += e(i) * X.row(i);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const Eigen::MatrixXd bread = inverse_gram(qr);
  const std::size_t k = n_params.value_or(static_cast<std::size_t>(X.cols()));
  const std::size_t dof = residual_dof(X.rows(), k);
  const double n = static_cast<double>(X.rows());
  const double factor = small_sample ? (static_cast<double>(G) / static_cast<double>(G - 1)) *
                                           ((n - 1.0) / static_cast<double>(dof))
                                     : 1.0;
  return symmetrize(factor * bread * (sums.transpose() * sums) * bread);
}

inline std::size_t count_clusters(const std::vector<std::size_t>& ids) {
  std::set<std::size_t> s(ids.begin(), ids.end());
  return s.size();
}

/// Dispatch on the covariance kind; `scores_design` is X for OLS and the
/// first-stage-fitted regressors for 2SLS.
inline Eigen::MatrixXd coefficient_vcov(const CovarianceSettings& cov, const Eigen::VectorXd& e,
                                        const Eigen::MatrixXd& scores_design,
                                        const Eigen::MatrixXd& bread, std::size_t n_params,
                                        const std::vector<std::size_t>& clusters) {
  const std::size_t dof = residual_dof(scores_design.rows(), n_params);
  switch (cov.kind) {
    case CovarianceKind::classical:
      return classical_vcov(e, bread, dof);
    case CovarianceKind::hc1:
      return hc1_vcov(e, scores_design, bread, dof, cov.small_sample);
    case CovarianceKind::cluster:
      if (clusters.size() != static_cast<std::size_t>(e.size()))
        throw EstimationError("cluster covariance requested without cluster ids");
      return cluster_vcov(e, scores_design, clusters, n_params, cov.small_sample);
  }
  throw EstimationError("unknown covariance kind");
}

// ---------------------------------------------------------------------------

namespace detail {

inline void fill_reported(EstimationResult& r, const RegressionDesign& d,
                          const Eigen::VectorXd& coef, const Eigen::MatrixXd& vcov) {
  std::vector<Eigen::Index> idx;
  for (std::size_t j = 0; j < d.names.size(); ++j)
    if (d.reported.empty() || d.reported[j]) idx.push_back(static_cast<Eigen::Index>(j));
  const auto m = static_cast<Eigen::Index>(idx.size());
  r.names.clear();
  r.coef.resize(m);
  r.vcov.resize(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    r.names.push_back(d.names[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])]);
    r.coef(a) = coef(idx[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < m; ++b)
      r.vcov(a, b) = vcov(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
  }
  r.dof_model = 0;
  for (const auto& n : r.names)
    if (n != "(intercept)") ++r.dof_model;
}

inline double total_sum_of_squares(const Eigen::VectorXd& y, bool centered) {
  if (!centered) return y.squaredNorm();
  return (y.array() - y.mean()).matrix().squaredNorm();
}

}  // namespace detail

/// Least squares on an absorbed design. Coefficients come from a pivoted
/// QR; the fit fails on rank deficiency rather than solving a near-singular
/// system.
inline EstimationResult ols_fit(const RegressionDesign& design, const Eigen::VectorXd& y,
                                const CovarianceSettings& cov) {
  if (y.size() != design.X.rows()) throw EstimationError("y and design differ in length");
  check_full_rank(design.X, design.names, design.reference_norms);
  const std::size_t n_params = design.absorbed + static_cast<std::size_t>(design.X.cols());
  const std::size_t dof = residual_dof(design.X.rows(), n_params);

  LeastSquares ls = least_squares(design.X, y);
  Eigen::VectorXd e = y - design.X * ls.coef;
  Eigen::MatrixXd vcov = coefficient_vcov(cov, e, design.X, ls.bread, n_params, design.clusters);

  EstimationResult r;
  r.tag = EstimatorTag::fe_ols;
  r.covariance = cov;
  detail::fill_reported(r, design, ls.coef, vcov);
  r.n_obs = static_cast<std::size_t>(y.size());
  r.n_entities = design.n_entities;
  r.n_periods = design.n_periods;
  r.n_clusters = count_clusters(design.clusters);
  r.dof_residual = dof;
  r.rss = e.squaredNorm();
  const double tss = detail::total_sum_of_squares(y, design.centered_tss);
  r.r_squared_within = tss > 0 ? 1.0 - r.rss / tss : 0.0;
  r.residual_keys = design.keys;
  r.residuals = std::move(e);
  r.dropped_singletons = design.dropped_singletons;
  return r;
}

// ---------------------------------------------------------------------------
// Model preparation from a ModelSpec and dataset

/// Absorbed blocks for one model: outcome, endogenous regressor,
/// exogenous block (controls, time dummies, intercept), and instruments.
struct PreparedModel {
  Sample sample;
  std::vector<ObservationKey> keys;
  std::vector<std::size_t> clusters;
  std::size_t absorbed = 0;
  bool entity_fe = true;

  Eigen::VectorXd y;
  std::string y_name;
  Eigen::VectorXd endog;  // empty when the model has no endogenous regressor
  std::string endog_name;
  double endog_ref_norm = 0.0;

  Eigen::MatrixXd exog;   // controls + time dummies + intercept
  std::vector<std::string> exog_names;
  std::vector<bool> exog_reported;
  Eigen::VectorXd exog_ref_norms;

  Eigen::MatrixXd instruments;
  std::vector<std::string> instrument_names;
  Eigen::VectorXd instrument_ref_norms;

  std::size_t n_obs() const { return sample.n_obs(); }
  std::size_t n_periods() const { return sample.periods.size(); }

  /// Design [leading columns, exog] with matching metadata.
  RegressionDesign design(const Eigen::MatrixXd& leading, const std::vector<std::string>& names,
                          const Eigen::VectorXd& ref_norms) const {
    RegressionDesign d;
    d.X.resize(exog.rows(), leading.cols() + exog.cols());
    d.X << leading, exog;
    d.names = names;
    d.names.insert(d.names.end(), exog_names.begin(), exog_names.end());
    d.reported.assign(names.size(), true);
    d.reported.insert(d.reported.end(), exog_reported.begin(), exog_reported.end());
    d.reference_norms.resize(d.X.cols());
    d.reference_norms << ref_norms, exog_ref_norms;
    d.absorbed = absorbed;
    d.clusters = clusters;
    d.n_entities = sample.n_entities();
    d.n_periods = n_periods();
    d.keys = keys;
    d.centered_tss = !entity_fe;
    d.dropped_singletons = sample.dropped_singletons;
    return d;
  }
};

inline PreparedModel prepare_model(const ModelSpec& spec, const PanelDataset& ds) {
  spec.validate();
  for (const auto& v : spec.variables())
    if (!ds.has_column(v)) throw ConfigError("model variable '" + v + "' is not in the dataset");

  SampleFilter f = spec.filter;
  for (const auto& v : spec.variables())
    if (std::find(f.complete_on.begin(), f.complete_on.end(), v) == f.complete_on.end())
      f.complete_on.push_back(v);

  PreparedModel m;
  m.entity_fe = spec.fixed_effects.entity;
  m.sample = select_sample(ds, f, spec.fixed_effects.entity);
  if (m.sample.n_obs() == 0) throw DataError("the estimation sample is empty");
  const auto n = static_cast<Eigen::Index>(m.sample.n_obs());

  for (std::size_t r = 0; r < m.sample.n_obs(); ++r) {
    const auto& k = m.sample.rows[r];
    m.keys.push_back({ds.entities()[k.entity], ds.periods()[k.period]});
    m.clusters.push_back(m.sample.entity_of_row[r]);
  }
  m.absorbed = spec.fixed_effects.entity ? m.sample.n_entities() : 0;

  auto norms = [](const Eigen::MatrixXd& a) {
    Eigen::VectorXd out(a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j) out(j) = a.col(j).norm();
    return out;
  };

  m.y_name = spec.dependent;
  m.y = gather(ds, m.sample, {spec.dependent}).col(0);
  if (spec.endogenous) {
    m.endog_name = *spec.endogenous;
    m.endog = gather(ds, m.sample, {*spec.endogenous}).col(0);
    m.endog_ref_norm = m.endog.norm();
  }

  Eigen::MatrixXd controls = gather(ds, m.sample, spec.exogenous);
  m.exog_names = spec.exogenous;
  m.exog_reported.assign(spec.exogenous.size(), true);
  Eigen::MatrixXd dummies(n, 0);
  if (spec.fixed_effects.time) {
    DummyBlock block = time_dummies(ds, m.sample);
    dummies = std::move(block.values);
    for (int year : block.periods) {
      m.exog_names.push_back("year=" + std::to_string(year));
      m.exog_reported.push_back(false);
    }
  }
  const bool intercept = !spec.fixed_effects.entity;
  m.exog.resize(n, controls.cols() + dummies.cols() + (intercept ? 1 : 0));
  m.exog.leftCols(controls.cols()) = controls;
  m.exog.middleCols(controls.cols(), dummies.cols()) = dummies;
  if (intercept) {
    m.exog.rightCols(1).setOnes();
    m.exog_names.push_back("(intercept)");
    m.exog_reported.push_back(true);
  }
  m.exog_ref_norms = norms(m.exog);

  m.instruments = gather(ds, m.sample, spec.instruments);
  m.instrument_names = spec.instruments;
  m.instrument_ref_norms = norms(m.instruments);

  if (spec.fixed_effects.entity) {
    Eigen::MatrixXd yy = m.y;
    demean_in_place(yy, m.sample);
    m.y = yy.col(0);
    if (spec.endogenous) {
      Eigen::MatrixXd dd = m.endog;
      demean_in_place(dd, m.sample);
      m.endog = dd.col(0);
    }
    demean_in_place(m.exog, m.sample);
    demean_in_place(m.instruments, m.sample);
  }
  return m;
}

/// Fixed-effects OLS of the model outcome on [endogenous, exogenous],
/// ignoring instruments. This is the FE column of the results table.
inline EstimationResult fe_ols(const PreparedModel& m, const CovarianceSettings& cov) {
  Eigen::MatrixXd leading(m.y.size(), m.endog.size() ? 1 : 0);
  std::vector<std::string> names;
  Eigen::VectorXd ref(leading.cols());
  if (m.endog.size()) {
    leading.col(0) = m.endog;
    names.push_back(m.endog_name);
    ref(0) = m.endog_ref_norm;
  }
  EstimationResult r = ols_fit(m.design(leading, names, ref), m.y, cov);
  r.tag = EstimatorTag::fe_ols;
  return r;
}

inline EstimationResult fe_ols(const ModelSpec& spec, const PanelDataset& ds) {
  return fe_ols(prepare_model(spec, ds), spec.covariance);
}

struct TslsResult {
  EstimationResult second_stage;
  EstimationResult first_stage;
};

inline void check_instrument_variation(const PreparedModel& m) {
  for (Eigen::Index j = 0; j < m.instruments.cols(); ++j) {
    const double norm = m.instruments.col(j).norm();
    if (!(norm > kRankTolerance * m.instrument_ref_norms(j)) || norm == 0.0)
      throw DegenerateInstrumentError(
          "instrument '" + m.instrument_names[static_cast<std::size_t>(j)] +
          "' has no variation after fixed-effect absorption");
  }
}

/// Two-stage least squares with a single endogenous regressor. The
/// second-stage covariance uses residuals built from the original
/// endogenous column, with the first-stage fitted values as the score
/// design.
inline TslsResult tsls_fit(const PreparedModel& m, const CovarianceSettings& cov) {
  if (m.endog.size() == 0 || m.instruments.cols() == 0)
    throw ConfigError("2SLS needs an endogenous regressor and at least one instrument");
  check_instrument_variation(m);

  RegressionDesign first = m.design(m.instruments, m.instrument_names, m.instrument_ref_norms);
  EstimationResult fs = ols_fit(first, m.endog, cov);
  fs.tag = EstimatorTag::first_stage;
  const Eigen::VectorXd fitted = m.endog - fs.residuals;

  Eigen::MatrixXd lead_hat(fitted.size(), 1);
  lead_hat.col(0) = fitted;
  Eigen::VectorXd ref(1);
  ref(0) = m.endog_ref_norm;
  RegressionDesign second = m.design(lead_hat, {m.endog_name}, ref);
  check_full_rank(second.X, second.names, second.reference_norms);

  const std::size_t n_params = second.absorbed + static_cast<std::size_t>(second.X.cols());
  const std::size_t dof = residual_dof(second.X.rows(), n_params);
  LeastSquares ls = least_squares(second.X, m.y);

  Eigen::MatrixXd X_orig = second.X;
  X_orig.col(0) = m.endog;
  Eigen::VectorXd e = m.y - X_orig * ls.coef;
  Eigen::MatrixXd vcov = coefficient_vcov(cov, e, second.X, ls.bread, n_params, second.clusters);

  EstimationResult r;
  r.tag = EstimatorTag::fe_2sls;
  r.covariance = cov;
  detail::fill_reported(r, second, ls.coef, vcov);
  r.n_obs = m.n_obs();
  r.n_entities = m.sample.n_entities();
  r.n_periods = m.n_periods();
  r.n_clusters = count_clusters(m.clusters);
  r.dof_residual = dof;
  r.rss = e.squaredNorm();
  const double tss = detail::total_sum_of_squares(m.y, second.centered_tss);
  r.r_squared_within = tss > 0 ? 1.0 - r.rss / tss : 0.0;
  r.residual_keys = m.keys;
  r.residuals = std::move(e);
  r.dropped_singletons = m.sample.dropped_singletons;
  return {std::move(r), std::move(fs)};
}

inline TslsResult tsls_fit(const ModelSpec& spec, const PanelDataset& ds) {
  if (!spec.is_iv()) throw ConfigError("2SLS needs an endogenous regressor");
  return tsls_fit(prepare_model(spec, ds), spec.covariance);
}

}  // namespace panelkit
