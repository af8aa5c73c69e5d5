#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "ivts/statespace.hpp"

// Frequency-specific basic structural model (FS-BSM) for monthly series:
// trend with stochastic level and slope, trigonometric seasonality at the
// six monthly harmonics with two seasonal variance groups (harmonic 1 versus
// harmonics 2..6), and white-noise irregular. Univariate or bivariate.
//
// State ordering for dim = d (d = 1 or 2):
//   [ mu(1..d), beta(1..d),
//     g1(1..d), g1*(1..d), ..., g5(1..d), g5*(1..d),   harmonics 1..5
//     g6(1..d) ]                                        harmonic 6 (lambda = pi)
// giving m = 13 states for d = 1 and m = 26 for d = 2. The observation
// matrix loads +1 on the levels and -1 on every g (not g*) state, so the
// seasonal component entering the measurement is -(g1 + ... + g6).

namespace ivts::structural {

using statespace::ObservationPanel;
using statespace::SsmSpec;

struct FsBsmParams {
  int dim = 1;
  Eigen::MatrixXd irregular_cov;    // Sigma_eps
  Eigen::MatrixXd level_cov;        // Sigma_eta
  Eigen::MatrixXd slope_cov;        // Sigma_zeta
  Eigen::MatrixXd seasonal_cov_I;   // Sigma_omega, harmonic 1
  Eigen::MatrixXd seasonal_cov_II;  // Sigma_omega, harmonics 2..6

  static FsBsmParams univariate(double eps, double eta, double zeta, double om1,
                                double om2) {
    FsBsmParams p;
    p.dim = 1;
    p.irregular_cov = Eigen::MatrixXd::Constant(1, 1, eps);
    p.level_cov = Eigen::MatrixXd::Constant(1, 1, eta);
    p.slope_cov = Eigen::MatrixXd::Constant(1, 1, zeta);
    p.seasonal_cov_I = Eigen::MatrixXd::Constant(1, 1, om1);
    p.seasonal_cov_II = Eigen::MatrixXd::Constant(1, 1, om2);
    return p;
  }

  static FsBsmParams bivariate(const Eigen::Matrix2d& eps, const Eigen::Matrix2d& eta,
                               const Eigen::Matrix2d& zeta, const Eigen::Matrix2d& om1,
                               const Eigen::Matrix2d& om2) {
    FsBsmParams p;
    p.dim = 2;
    p.irregular_cov = eps;
    p.level_cov = eta;
    p.slope_cov = zeta;
    p.seasonal_cov_I = om1;
    p.seasonal_cov_II = om2;
    return p;
  }

  void validate() const {
    if (dim != 1 && dim != 2) throw ValidationError("FsBsmParams: dim must be 1 or 2");
    auto check = [&](const Eigen::MatrixXd& M, const char* name) {
      if (M.rows() != dim || M.cols() != dim)
        throw ValidationError(std::string("FsBsmParams: ") + name + " must be dim x dim");
      statespace::detail::require_symmetric_psd(M, name);
    };
    check(irregular_cov, "irregular_cov");
    check(level_cov, "level_cov");
    check(slope_cov, "slope_cov");
    check(seasonal_cov_I, "seasonal_cov_I");
    check(seasonal_cov_II, "seasonal_cov_II");
  }
};

/// Number of states: 2d trend + 2d per harmonic 1..5 + d at pi.
inline int fsbsm_state_dim(int dim) { return 13 * dim; }

namespace layout {
inline int level(int dim, int i) { return i; }
inline int slope(int dim, int i) { return dim + i; }
/// First state of harmonic j (1-based); j < 6 blocks hold [g, g*], j = 6 only g.
inline int harmonic(int dim, int j) { return 2 * dim + (j - 1) * 2 * dim; }
}  // namespace layout

/// Assembles the FS-BSM as a linear Gaussian state-space system. All states
/// carry a diffuse prior (trend and seasonal are nonstationary).
inline SsmSpec build_fsbsm(const FsBsmParams& params) {
  params.validate();
  const int d = params.dim;
  const int m = fsbsm_state_dim(d);

  SsmSpec s;
  s.Z = Eigen::MatrixXd::Zero(d, m);
  s.T = Eigen::MatrixXd::Zero(m, m);
  s.H = params.irregular_cov;
  s.Q = Eigen::MatrixXd::Zero(m, m);
  s.a1 = Eigen::VectorXd::Zero(m);
  s.P1 = Eigen::MatrixXd::Zero(m, m);
  s.diffuse.assign(m, true);

  for (int i = 0; i < d; ++i) {
    s.Z(i, layout::level(d, i)) = 1.0;
    s.T(layout::level(d, i), layout::level(d, i)) = 1.0;
    s.T(layout::level(d, i), layout::slope(d, i)) = 1.0;
    s.T(layout::slope(d, i), layout::slope(d, i)) = 1.0;
  }
  s.Q.block(0, 0, d, d) = params.level_cov;
  s.Q.block(d, d, d, d) = params.slope_cov;

  for (int j = 1; j <= 6; ++j) {
    const double lam = M_PI * j / 6.0;
    const double c = std::cos(lam);
    const double snl = std::sin(lam);
    const int base = layout::harmonic(d, j);
    const Eigen::MatrixXd& cov = (j == 1) ? params.seasonal_cov_I : params.seasonal_cov_II;
    for (int i = 0; i < d; ++i) s.Z(i, base + i) = -1.0;
    if (j < 6) {
      for (int i = 0; i < d; ++i) {
        s.T(base + i, base + i) = c;
        s.T(base + i, base + d + i) = snl;
        s.T(base + d + i, base + i) = -snl;
        s.T(base + d + i, base + d + i) = c;
      }
      s.Q.block(base, base, d, d) = cov;
      s.Q.block(base + d, base + d, d, d) = cov;
    } else {
      // cos(pi) = -1, sin(pi) = 0: the last harmonic keeps only the g state.
      for (int i = 0; i < d; ++i) s.T(base + i, base + i) = -1.0;
      s.Q.block(base, base, d, d) = cov;
    }
  }
  return s;
}

struct ComponentSet {
  Eigen::MatrixXd trend, slope, seasonal, irregular;  // T_obs x dim
  Eigen::MatrixXd trend_se, slope_se, seasonal_se;
};

/// Smoothed components with standard errors read off the smoothed state.
/// The irregular is the measurement residual, so trend + seasonal + irregular
/// reproduces the data at every observed cell.
inline ComponentSet extract_components(const SsmSpec& spec, const FsBsmParams& params,
                                       const ObservationPanel& data) {
  const int d = params.dim;
  const int n = data.rows();
  const auto filt = statespace::kalman_filter(spec, data);
  const auto sm = statespace::kalman_smoother(spec, data, filt);

  ComponentSet cs;
  cs.trend.resize(n, d);
  cs.slope.resize(n, d);
  cs.seasonal.resize(n, d);
  cs.irregular.resize(n, d);
  cs.trend_se.resize(n, d);
  cs.slope_se.resize(n, d);
  cs.seasonal_se.resize(n, d);

  // Seasonal contribution to series i is -(g1_i + ... + g6_i); expressed as
  // a selection vector so its smoothed variance follows directly.
  std::vector<Eigen::VectorXd> sel(d, Eigen::VectorXd::Zero(spec.state_dim()));
  for (int i = 0; i < d; ++i)
    for (int j = 1; j <= 6; ++j) sel[i](layout::harmonic(d, j) + i) = -1.0;

  for (int t = 0; t < n; ++t) {
    for (int i = 0; i < d; ++i) {
      const int li = layout::level(d, i);
      const int si = layout::slope(d, i);
      cs.trend(t, i) = sm.mean[t](li);
      cs.slope(t, i) = sm.mean[t](si);
      cs.seasonal(t, i) = sel[i].dot(sm.mean[t]);
      cs.trend_se(t, i) = std::sqrt(std::max(0.0, sm.cov[t](li, li)));
      cs.slope_se(t, i) = std::sqrt(std::max(0.0, sm.cov[t](si, si)));
      cs.seasonal_se(t, i) = std::sqrt(std::max(0.0, sel[i].dot(sm.cov[t] * sel[i])));
      const double y = data.values(t, i);
      cs.irregular(t, i) =
          is_missing(y) ? missing_value() : y - spec.Z.row(i) * sm.mean[t];
    }
  }
  return cs;
}

/// Subtracts the filtered (one-sided) seasonal component from the data.
inline ObservationPanel deseasonalize(const ObservationPanel& data, const SsmSpec& spec,
                                      const FsBsmParams& params) {
  const int d = params.dim;
  const auto filt = statespace::kalman_filter(spec, data);

  ObservationPanel out = data;
  for (int t = 0; t < data.rows(); ++t) {
    for (int i = 0; i < d; ++i) {
      if (is_missing(data.values(t, i))) continue;
      double seasonal = 0.0;
      for (int j = 1; j <= 6; ++j)
        seasonal -= filt.filtered_mean[t](layout::harmonic(d, j) + i);
      out.values(t, i) = data.values(t, i) - seasonal;
    }
  }
  return out;
}

}  // namespace ivts::structural
