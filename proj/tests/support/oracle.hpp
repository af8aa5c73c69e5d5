#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "ivts/statespace.hpp"

// Brute-force joint-Gaussian reference for small state-space instances.
// The joint law of all states and observed cells is built by direct
// covariance propagation; log-densities and conditional moments then come
// from dense linear algebra. Deliberately shares no code with the Kalman
// recursions it is used to check.

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ivts::statespace::ObservationPanel;
using ivts::statespace::SsmSpec;

struct JointModel {
  std::vector<std::pair<int, int>> cells;  // (t, series) of observed entries
  VectorXd x;                              // observed values, cell order
  VectorXd mean_x;
  MatrixXd cov_xx;
  std::vector<VectorXd> state_mean;        // per time step
  MatrixXd cov_sx;                         // stacked states (n*m) vs cells
  std::vector<std::vector<MatrixXd>> cov_ss;  // cov_ss[s][t] = Cov(a_{s+1}, a_{t+1}), s <= t
};

inline JointModel build_joint(const SsmSpec& spec, const ObservationPanel& data,
                              double kappa = ivts::statespace::kDiffuseKappa) {
  const int n = data.rows();
  const int m = spec.state_dim();

  VectorXd a1 = spec.a1;
  MatrixXd P1 = spec.P1;
  if (!spec.diffuse.empty()) {
    for (int i = 0; i < m; ++i) {
      if (!spec.diffuse[i]) continue;
      a1(i) = 0.0;
      P1.row(i).setZero();
      P1.col(i).setZero();
      P1(i, i) = kappa;
    }
  }

  JointModel jm;
  jm.state_mean.resize(n);
  jm.state_mean[0] = a1;
  for (int t = 1; t < n; ++t) jm.state_mean[t] = spec.T * jm.state_mean[t - 1];

  std::vector<MatrixXd> var(n);
  var[0] = P1;
  for (int t = 1; t < n; ++t)
    var[t] = spec.T * var[t - 1] * spec.T.transpose() + spec.Q;

  // Cov(a_s, a_t) for s <= t equals Var(a_s) * (T^{t-s})'.
  jm.cov_ss.assign(n, std::vector<MatrixXd>(n));
  for (int s = 0; s < n; ++s) {
    jm.cov_ss[s][s] = var[s];
    MatrixXd cross = var[s];
    for (int t = s + 1; t < n; ++t) {
      cross = (cross * spec.T.transpose()).eval();
      jm.cov_ss[s][t] = cross;
    }
  }

  for (int t = 0; t < n; ++t)
    for (int j = 0; j < data.cols(); ++j)
      if (!ivts::is_missing(data.values(t, j))) jm.cells.emplace_back(t, j);

  const int nc = static_cast<int>(jm.cells.size());
  jm.x.resize(nc);
  jm.mean_x.resize(nc);
  jm.cov_xx.resize(nc, nc);
  jm.cov_sx.resize(n * m, nc);

  auto state_cov = [&](int s, int t) -> MatrixXd {
    return s <= t ? jm.cov_ss[s][t] : MatrixXd(jm.cov_ss[t][s].transpose());
  };

  for (int a = 0; a < nc; ++a) {
    const auto [t, j] = jm.cells[a];
    jm.x(a) = data.values(t, j);
    jm.mean_x(a) = spec.Z.row(j) * jm.state_mean[t];
    for (int b = 0; b < nc; ++b) {
      const auto [s, i] = jm.cells[b];
      double c = spec.Z.row(j) * state_cov(t, s) * spec.Z.row(i).transpose();
      if (t == s) c += spec.H(j, i);
      jm.cov_xx(a, b) = c;
    }
    for (int u = 0; u < n; ++u)
      jm.cov_sx.block(u * m, a, m, 1) = state_cov(u, t) * spec.Z.row(j).transpose();
  }
  return jm;
}

inline double gaussian_logdensity(const VectorXd& x, const VectorXd& mean,
                                  const MatrixXd& cov) {
  const int k = static_cast<int>(x.size());
  if (k == 0) return 0.0;
  Eigen::LLT<MatrixXd> llt(cov);
  const VectorXd r = x - mean;
  const VectorXd z = llt.solve(r);
  double logdet = 0.0;
  for (int i = 0; i < k; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (k * std::log(2.0 * M_PI) + logdet + r.dot(z));
}

/// Log-density of the observed cells after the diffuse burn-in, conditioned
/// on the cells of the first d observed time steps (d = number of diffuse
/// states). With d = 0 this is the plain joint log-density, matching the
/// filter's prediction-error sum exactly.
inline double loglik(const SsmSpec& spec, const ObservationPanel& data,
                     double kappa = ivts::statespace::kDiffuseKappa) {
  const JointModel jm = build_joint(spec, data, kappa);
  const int d = spec.n_diffuse();

  // Which observed steps fall in the burn-in window.
  std::vector<int> head, tail;
  {
    int seen = 0;
    int last_t = -1;
    for (int a = 0; a < static_cast<int>(jm.cells.size()); ++a) {
      const int t = jm.cells[a].first;
      if (t != last_t) {
        ++seen;
        last_t = t;
      }
      (seen <= d ? head : tail).push_back(a);
    }
  }
  if (head.empty()) return gaussian_logdensity(jm.x, jm.mean_x, jm.cov_xx);

  auto subset = [&](const std::vector<int>& idx, VectorXd& x, VectorXd& mu, MatrixXd& c) {
    const int k = static_cast<int>(idx.size());
    x.resize(k);
    mu.resize(k);
    c.resize(k, k);
    for (int i = 0; i < k; ++i) {
      x(i) = jm.x(idx[i]);
      mu(i) = jm.mean_x(idx[i]);
      for (int j = 0; j < k; ++j) c(i, j) = jm.cov_xx(idx[i], idx[j]);
    }
  };
  std::vector<int> all = head;
  all.insert(all.end(), tail.begin(), tail.end());
  VectorXd xh, muh, xa, mua;
  MatrixXd ch, ca;
  subset(head, xh, muh, ch);
  subset(all, xa, mua, ca);
  return gaussian_logdensity(xa, mua, ca) - gaussian_logdensity(xh, muh, ch);
}

/// Exact conditional means E[a_t | all observed cells], one row per step.
inline MatrixXd smoothed_means(const SsmSpec& spec, const ObservationPanel& data,
                               double kappa = ivts::statespace::kDiffuseKappa) {
  const JointModel jm = build_joint(spec, data, kappa);
  const int n = data.rows();
  const int m = spec.state_dim();
  const VectorXd w = jm.cov_xx.ldlt().solve(jm.x - jm.mean_x);
  MatrixXd out(n, m);
  for (int t = 0; t < n; ++t)
    out.row(t) = (jm.state_mean[t] + jm.cov_sx.middleRows(t * m, m) * w).transpose();
  return out;
}

}  // namespace oracle
