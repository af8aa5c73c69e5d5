#pragma once

#include <cmath>
#include <limits>

#include "ivts/common.hpp"

// Distribution functions needed by the test statistics: standard normal CDF
// and the regularized incomplete gamma (for chi-squared tail probabilities).

namespace ivts::prob {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Two-sided normal p-value for an asymptotically N(0,1) statistic.
inline double normal_pvalue_two_sided(double z) {
  return std::erfc(std::fabs(z) / std::sqrt(2.0));
}

namespace detail {

// Regularized lower incomplete gamma P(a, x) by series expansion (x < a+1)
// or continued fraction (x >= a+1).
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // Lentz continued fraction for Q(a, x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  const double q = std::exp(-x + a * std::log(x) - gln) * h;
  return 1.0 - q;
}

}  // namespace detail

/// Upper tail P(X > x) for X ~ chi-squared with df degrees of freedom.
inline double chi2_sf(double x, int df) {
  if (df <= 0) throw ValidationError("chi2_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return 1.0 - detail::gamma_p(0.5 * df, 0.5 * x);
}

}  // namespace ivts::prob
