#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "ivts/statespace.hpp"

// Multi-level dynamic factor model: one pervasive factor loading on every
// series plus one stationary AR(1) factor per region, with the zero pattern
// of the loading matrix enforced by the region map. Estimated by principal
// components in two steps (global PC, then per-region PC on the residuals,
// then regression-based dynamics), and refined through the Kalman smoother
// on the assembled state-space form.

namespace ivts::mldfm {

using statespace::ObservationPanel;
using statespace::SsmSpec;

enum class GlobalDynamics {
  integrated_random_walk,  // level + slope state, slope noise sigma2_xi
  random_walk,             // single level state with noise sigma2_xi
};

struct MlDfmSpec {
  std::vector<int> region_of;        // series -> region, 0-based, size N
  Eigen::MatrixXd loadings;          // N x (1 + R), zero pattern enforced
  GlobalDynamics global = GlobalDynamics::integrated_random_walk;
  double slope_noise_var = 0.0;      // sigma2_xi
  Eigen::VectorXd ar_coef;           // phi_1..phi_R
  Eigen::VectorXd ar_noise_var;      // sigma2_eta per region
  Eigen::VectorXd idio_var;          // sigma2_eps per series
  Eigen::VectorXd series_mean;       // standardization applied before fitting
  Eigen::VectorXd series_scale;
  bool phi_clipped = false;          // some AR coefficient hit the bound

  int n_series() const { return static_cast<int>(region_of.size()); }
  int n_regions() const {
    int r = 0;
    for (int g : region_of) r = std::max(r, g + 1);
    return r;
  }

  void validate() const {
    const int N = n_series();
    const int R = n_regions();
    if (N < 2) throw ValidationError("MlDfmSpec: need at least 2 series");
    if (loadings.rows() != N || loadings.cols() != 1 + R)
      throw ValidationError("MlDfmSpec: loading matrix must be N x (1+R)");
    if (ar_coef.size() != R || ar_noise_var.size() != R)
      throw ValidationError("MlDfmSpec: AR parameter length mismatch");
    if (idio_var.size() != N) throw ValidationError("MlDfmSpec: idio_var length mismatch");
    std::vector<int> count(R, 0);
    for (int i = 0; i < N; ++i) {
      const int g = region_of[i];
      if (g < 0 || g >= R) throw ValidationError("MlDfmSpec: region index out of range");
      ++count[g];
      for (int r = 0; r < R; ++r)
        if (r != g && loadings(i, 1 + r) != 0.0)
          throw ValidationError("MlDfmSpec: zero pattern violated at series " +
                                std::to_string(i));
    }
    for (int r = 0; r < R; ++r)
      if (count[r] == 0) throw ValidationError("MlDfmSpec: empty region " + std::to_string(r));
    for (int r = 0; r < R; ++r) {
      if (std::fabs(ar_coef(r)) >= 1.0)
        throw ValidationError("MlDfmSpec: |phi| must be < 1 for region " + std::to_string(r));
      if (ar_noise_var(r) < 0.0) throw ValidationError("MlDfmSpec: negative AR noise variance");
    }
    if (slope_noise_var < 0.0) throw ValidationError("MlDfmSpec: negative slope noise variance");
    if (idio_var.minCoeff() < 0.0) throw ValidationError("MlDfmSpec: negative idio variance");
  }
};

struct PcResult {
  Eigen::VectorXd factor;    // T
  Eigen::VectorXd loadings;  // N, unit mean square, positive mean
};

namespace detail {

inline Eigen::MatrixXd to_dense_complete(const ObservationPanel& y) {
  for (int t = 0; t < y.rows(); ++t)
    for (int j = 0; j < y.cols(); ++j)
      if (is_missing(y.values(t, j)))
        throw ValidationError("pc_extract: missing entry at (" + std::to_string(t) + "," +
                              std::to_string(j) + "); fill gaps upstream");
  return y.values;
}

/// First principal component of a demeaned data matrix, normalized so the
/// loadings have unit mean square and positive mean.
inline PcResult first_pc(const Eigen::MatrixXd& x) {
  const int N = static_cast<int>(x.cols());
  Eigen::MatrixXd centered = x;
  for (int j = 0; j < N; ++j) centered.col(j).array() -= x.col(j).mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd v = svd.matrixV().col(0);
  Eigen::VectorXd f = svd.matrixU().col(0) * svd.singularValues()(0);
  // loadings = sqrt(N) v so that mean(loadings^2) = 1; factor scaled to match.
  const double root_n = std::sqrt(static_cast<double>(N));
  Eigen::VectorXd load = v * root_n;
  f /= root_n;
  if (load.mean() < 0.0) {
    load = -load;
    f = -f;
  }
  return {f, load};
}

}  // namespace detail

/// First principal component of the (optionally standardized) panel.
inline PcResult pc_extract(const ObservationPanel& y, bool standardize) {
  if (y.cols() < 2) throw ValidationError("pc_extract: need at least 2 series");
  Eigen::MatrixXd x = detail::to_dense_complete(y);
  for (int j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - mu).square().sum() / (x.rows() - 1));
    if (sd <= 0.0)
      throw ValidationError("pc_extract: series " + std::to_string(j) + " has zero variance");
    if (standardize) x.col(j) = (x.col(j).array() - mu) / sd;
  }
  return detail::first_pc(x);
}

/// Two-step principal-components estimation: global PC on the standardized
/// panel, per-region PCs on the residuals, then OLS/variance plug-ins for
/// the factor dynamics and idiosyncratic variances.
inline MlDfmSpec two_step_estimate(const ObservationPanel& y, const std::vector<int>& regions,
                                   GlobalDynamics global = GlobalDynamics::integrated_random_walk) {
  const Eigen::MatrixXd raw = detail::to_dense_complete(y);
  const int T = static_cast<int>(raw.rows());
  const int N = static_cast<int>(raw.cols());
  if (static_cast<int>(regions.size()) != N)
    throw ValidationError("two_step_estimate: region map length mismatch");

  MlDfmSpec spec;
  spec.region_of = regions;
  spec.global = global;
  const int R = spec.n_regions();
  std::vector<std::vector<int>> members(R);
  for (int i = 0; i < N; ++i) members[regions[i]].push_back(i);
  for (int r = 0; r < R; ++r)
    if (members[r].size() < 2)
      throw ValidationError("two_step_estimate: region " + std::to_string(r) +
                            " has fewer than 2 series");

  // Standardize.
  spec.series_mean.resize(N);
  spec.series_scale.resize(N);
  Eigen::MatrixXd x(T, N);
  for (int j = 0; j < N; ++j) {
    const double mu = raw.col(j).mean();
    const double sd = std::sqrt((raw.col(j).array() - mu).square().sum() / (T - 1));
    if (sd <= 0.0)
      throw ValidationError("two_step_estimate: series " + std::to_string(j) +
                            " has zero variance");
    spec.series_mean(j) = mu;
    spec.series_scale(j) = sd;
    x.col(j) = (raw.col(j).array() - mu) / sd;
  }

  // Step 1: global factor and loadings, residual panel.
  const PcResult global_pc = detail::first_pc(x);
  Eigen::MatrixXd resid = x - global_pc.factor * global_pc.loadings.transpose();

  spec.loadings = Eigen::MatrixXd::Zero(N, 1 + R);
  spec.loadings.col(0) = global_pc.loadings;
  spec.ar_coef.resize(R);
  spec.ar_noise_var.resize(R);
  spec.idio_var.resize(N);
  Eigen::MatrixXd regional_factors(T, R);

  for (int r = 0; r < R; ++r) {
    const auto& idx = members[r];
    Eigen::MatrixXd sub(T, idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) sub.col(c) = resid.col(idx[c]);
    const PcResult pc = detail::first_pc(sub);
    regional_factors.col(r) = pc.factor;
    for (std::size_t c = 0; c < idx.size(); ++c)
      spec.loadings(idx[c], 1 + r) = pc.loadings(c);
  }

  // Step 2: idiosyncratic variances and factor dynamics.
  for (int i = 0; i < N; ++i) {
    Eigen::VectorXd eps = x.col(i) - global_pc.loadings(i) * global_pc.factor -
                          spec.loadings(i, 1 + regions[i]) * regional_factors.col(regions[i]);
    const double mu = eps.mean();
    spec.idio_var(i) = (eps.array() - mu).square().sum() / T;
  }

  for (int r = 0; r < R; ++r) {
    // OLS of the regional factor on a constant and its own lag.
    const Eigen::VectorXd f = regional_factors.col(r);
    const int n = T - 1;
    const Eigen::VectorXd yv = f.tail(n);
    const Eigen::VectorXd xv = f.head(n);
    const double xm = xv.mean(), ym = yv.mean();
    double sxx = 0.0, sxy = 0.0;
    for (int t = 0; t < n; ++t) {
      sxx += (xv(t) - xm) * (xv(t) - xm);
      sxy += (xv(t) - xm) * (yv(t) - ym);
    }
    double phi = sxx > 0.0 ? sxy / sxx : 0.0;
    if (std::fabs(phi) > 0.999) {
      phi = std::copysign(0.999, phi);
      spec.phi_clipped = true;
    }
    spec.ar_coef(r) = phi;
    const double a = ym - phi * xm;
    double rss = 0.0;
    for (int t = 0; t < n; ++t) {
      const double e = yv(t) - a - phi * xv(t);
      rss += e * e;
    }
    spec.ar_noise_var(r) = rss / n;
  }

  // Global dynamics noise: sample variance of the second difference under an
  // integrated random walk, of the first difference under a random walk.
  {
    const Eigen::VectorXd& f = global_pc.factor;
    const int order = global == GlobalDynamics::integrated_random_walk ? 2 : 1;
    Eigen::VectorXd d = f;
    for (int k = 0; k < order; ++k) {
      Eigen::VectorXd nd(d.size() - 1);
      for (int t = 0; t + 1 < d.size(); ++t) nd(t) = d(t + 1) - d(t);
      d = nd;
    }
    const double mu = d.mean();
    spec.slope_noise_var = (d.array() - mu).square().sum() / d.size();
  }

  spec.validate();
  return spec;
}

/// State-space form: state (F_g [, beta], F_s1..F_sR); the global block is a
/// diffuse (integrated) random walk, regional factors start at their
/// stationary law.
inline SsmSpec assemble_ssm(const MlDfmSpec& spec) {
  spec.validate();
  const int N = spec.n_series();
  const int R = spec.n_regions();
  const bool irw = spec.global == GlobalDynamics::integrated_random_walk;
  const int gdim = irw ? 2 : 1;
  const int m = gdim + R;

  SsmSpec s;
  s.Z = Eigen::MatrixXd::Zero(N, m);
  s.T = Eigen::MatrixXd::Zero(m, m);
  s.H = Eigen::MatrixXd::Zero(N, N);
  s.Q = Eigen::MatrixXd::Zero(m, m);
  s.a1 = Eigen::VectorXd::Zero(m);
  s.P1 = Eigen::MatrixXd::Zero(m, m);
  s.diffuse.assign(m, false);

  for (int i = 0; i < N; ++i) {
    s.Z(i, 0) = spec.loadings(i, 0);  // beta column, when present, stays zero
    s.Z(i, gdim + spec.region_of[i]) = spec.loadings(i, 1 + spec.region_of[i]);
    s.H(i, i) = spec.idio_var(i);
  }

  s.T(0, 0) = 1.0;
  if (irw) {
    s.T(0, 1) = 1.0;
    s.T(1, 1) = 1.0;
    s.Q(1, 1) = spec.slope_noise_var;
    s.diffuse[0] = s.diffuse[1] = true;
  } else {
    s.Q(0, 0) = spec.slope_noise_var;
    s.diffuse[0] = true;
  }
  for (int r = 0; r < R; ++r) {
    const int k = gdim + r;
    s.T(k, k) = spec.ar_coef(r);
    s.Q(k, k) = spec.ar_noise_var(r);
    const double denom = 1.0 - spec.ar_coef(r) * spec.ar_coef(r);
    s.P1(k, k) = spec.ar_noise_var(r) / denom;
  }
  return s;
}

struct FactorEstimate {
  Eigen::VectorXd global;            // T
  Eigen::VectorXd global_slope;      // T, empty for random-walk dynamics
  Eigen::MatrixXd regional;          // T x R
  Eigen::VectorXd global_se;
  Eigen::MatrixXd regional_se;
  Eigen::MatrixXd loadings;          // copy of the spec loadings
  Eigen::VectorXd ar_coef;
  Eigen::MatrixXd variance_share;    // N x 3: global, regional, idiosyncratic
};

/// Kalman-smoothed factor paths and per-series variance decomposition.
/// The panel is standardized with the spec's recorded moments first.
inline FactorEstimate extract_factors(const MlDfmSpec& spec, const ObservationPanel& y) {
  const Eigen::MatrixXd raw = detail::to_dense_complete(y);
  const int T = static_cast<int>(raw.rows());
  const int N = spec.n_series();
  const int R = spec.n_regions();
  if (raw.cols() != N) throw ValidationError("extract_factors: panel width mismatch");
  const bool irw = spec.global == GlobalDynamics::integrated_random_walk;
  const int gdim = irw ? 2 : 1;

  ObservationPanel std_panel;
  std_panel.values.resize(T, N);
  for (int j = 0; j < N; ++j)
    std_panel.values.col(j) =
        (raw.col(j).array() - spec.series_mean(j)) / spec.series_scale(j);

  const SsmSpec ssm = assemble_ssm(spec);
  const auto filt = statespace::kalman_filter(ssm, std_panel);
  const auto sm = statespace::kalman_smoother(ssm, std_panel, filt);

  FactorEstimate fe;
  fe.global.resize(T);
  fe.global_se.resize(T);
  if (irw) fe.global_slope.resize(T);
  fe.regional.resize(T, R);
  fe.regional_se.resize(T, R);
  for (int t = 0; t < T; ++t) {
    fe.global(t) = sm.mean[t](0);
    fe.global_se(t) = std::sqrt(std::max(0.0, sm.cov[t](0, 0)));
    if (irw) fe.global_slope(t) = sm.mean[t](1);
    for (int r = 0; r < R; ++r) {
      fe.regional(t, r) = sm.mean[t](gdim + r);
      fe.regional_se(t, r) = std::sqrt(std::max(0.0, sm.cov[t](gdim + r, gdim + r)));
    }
  }
  fe.loadings = spec.loadings;
  fe.ar_coef = spec.ar_coef;

  auto path_variance = [](const Eigen::VectorXd& f) {
    const double mu = f.mean();
    return (f.array() - mu).square().sum() / (f.size() - 1.0);
  };
  const double vg = path_variance(fe.global);
  fe.variance_share.resize(N, 3);
  for (int i = 0; i < N; ++i) {
    const int r = spec.region_of[i];
    const double vy = path_variance(std_panel.values.col(i));
    const double lg = spec.loadings(i, 0);
    const double lr = spec.loadings(i, 1 + r);
    fe.variance_share(i, 0) = lg * lg * vg / vy;
    fe.variance_share(i, 1) = lr * lr * path_variance(fe.regional.col(r)) / vy;
    fe.variance_share(i, 2) = spec.idio_var(i) / vy;
  }
  return fe;
}

}  // namespace ivts::mldfm
