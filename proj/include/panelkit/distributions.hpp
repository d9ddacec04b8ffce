#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace panelkit::dist {

// Upper-tail probabilities. Non-finite statistics give NaN; the returned
// values are clamped to [0, 1].

inline double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

inline double chi2_sf(double x, double dof) {
  if (!std::isfinite(x) || dof <= 0) return std::numeric_limits<double>::quiet_NaN();
  if (x <= 0) return 1.0;
  return clamp01(boost::math::cdf(boost::math::complement(
      boost::math::chi_squared_distribution<double>(dof), x)));
}

inline double f_sf(double x, double dof1, double dof2) {
  if (!std::isfinite(x) || dof1 <= 0 || dof2 <= 0)
    return std::numeric_limits<double>::quiet_NaN();
  if (x <= 0) return 1.0;
  return clamp01(boost::math::cdf(boost::math::complement(
      boost::math::fisher_f_distribution<double>(dof1, dof2), x)));
}

/// Critical value c with P(F > c) = alpha.
inline double f_critical(double alpha, double dof1, double dof2) {
  return boost::math::quantile(boost::math::complement(
      boost::math::fisher_f_distribution<double>(dof1, dof2), alpha));
}

/// Two-sided p-value of a t statistic.
inline double t_two_sided(double t, double dof) {
  if (!std::isfinite(t) || dof <= 0) return std::numeric_limits<double>::quiet_NaN();
  return clamp01(2.0 * boost::math::cdf(boost::math::complement(
                           boost::math::students_t_distribution<double>(dof), std::abs(t))));
}

inline double normal_two_sided(double z) {
  if (!std::isfinite(z)) return std::numeric_limits<double>::quiet_NaN();
  return clamp01(2.0 * boost::math::cdf(boost::math::complement(
                           boost::math::normal_distribution<double>(), std::abs(z))));
}

}  // namespace panelkit::dist
