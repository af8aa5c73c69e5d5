#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "ivts/common.hpp"
#include "ivts/rng.hpp"

// Linear Gaussian state-space engine.
//
// Model convention:
//   x_t     = Z a_t + e_t,          e_t ~ N(0, H)
//   a_t     = T a_{t-1} + u_t,      u_t ~ N(0, Q)
//   a_1     ~ N(a1, P1), with diffuse states approximated by a large
//             prior variance kappa on the corresponding diagonal entries.
//
// Missing observations are handled by deleting the corresponding rows of the
// measurement equation at that time step. Covariance updates use the Joseph
// form and every stored covariance is re-symmetrized.

namespace ivts::statespace {

struct YearMonth {
  int year = 0;
  int month = 0;  // 1..12

  YearMonth next() const {
    return month == 12 ? YearMonth{year + 1, 1} : YearMonth{year, month + 1};
  }
  friend bool operator==(const YearMonth&, const YearMonth&) = default;
  friend auto operator<=>(const YearMonth& a, const YearMonth& b) {
    return std::pair(a.year, a.month) <=> std::pair(b.year, b.month);
  }
  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    return buf;
  }
};

/// Big-kappa stand-in for an infinite diffuse prior variance.
inline constexpr double kDiffuseKappa = 1e7;

struct SsmSpec {
  Eigen::MatrixXd Z;  // p x m observation matrix
  Eigen::MatrixXd T;  // m x m transition matrix
  Eigen::MatrixXd H;  // p x p observation noise covariance
  Eigen::MatrixXd Q;  // m x m state noise covariance
  Eigen::VectorXd a1;
  Eigen::MatrixXd P1;
  std::vector<bool> diffuse;  // marks states with a diffuse prior

  int state_dim() const { return static_cast<int>(T.rows()); }
  int obs_dim() const { return static_cast<int>(Z.rows()); }

  int n_diffuse() const {
    int d = 0;
    for (bool b : diffuse) d += b ? 1 : 0;
    return d;
  }

  void validate() const;
};

struct ObservationPanel {
  Eigen::MatrixXd values;          // T_obs x p, NaN marks a missing entry
  std::vector<YearMonth> time;     // optional; empty means plain 1..T indexing

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }

  void validate() const {
    for (int j = 0; j < cols(); ++j) {
      bool any = false;
      for (int t = 0; t < rows(); ++t) any = any || !is_missing(values(t, j));
      if (!any)
        throw ValidationError("ObservationPanel: series " + std::to_string(j) +
                              " has no non-missing entries");
    }
    if (!time.empty()) {
      if (static_cast<int>(time.size()) != rows())
        throw ValidationError("ObservationPanel: time index length mismatch");
      for (std::size_t t = 1; t < time.size(); ++t)
        if (!(time[t] == time[t - 1].next()))
          throw ValidationError("ObservationPanel: time index not contiguous monthly at " +
                                time[t].str());
    }
  }
};

struct FilterOutput {
  std::vector<Eigen::VectorXd> predicted_mean;   // a_{t|t-1}
  std::vector<Eigen::MatrixXd> predicted_cov;    // P_{t|t-1}
  std::vector<Eigen::VectorXd> filtered_mean;    // a_{t|t}
  std::vector<Eigen::MatrixXd> filtered_cov;     // P_{t|t}
  std::vector<Eigen::VectorXd> innovation;       // v_t, one entry per observed row
  std::vector<Eigen::MatrixXd> innovation_cov;   // F_t on the observed rows
  std::vector<std::vector<int>> observed_rows;   // which rows of x_t were present
  double loglik = 0.0;       // Gaussian prediction-error decomposition,
                             // excluding the diffuse burn-in terms
  int n_diffuse_skipped = 0; // number of time steps dropped from loglik

  /// Innovations divided by their predicted standard deviation, concatenated
  /// over time in row order; burn-in steps can be dropped by the caller.
  std::vector<double> standardized_innovations(int skip_steps = 0) const;
};

struct SmootherOutput {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> cov;
};

struct SimulationResult {
  ObservationPanel observations;
  Eigen::MatrixXd states;  // T_obs x m latent path
};

struct SimulateOptions {
  /// Variance used in place of the diffuse prior when drawing the first state.
  double diffuse_start_variance = 0.0;
};

namespace detail {

inline void require_symmetric_psd(const Eigen::MatrixXd& M, const std::string& name,
                                  double tol = 1e-10) {
  if (M.rows() != M.cols()) throw ValidationError(name + " is not square");
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    throw ValidationError(name + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol * scale)
    throw ValidationError(name + " is not positive semidefinite");
}

inline void symmetrize(Eigen::MatrixXd& M) { M = 0.5 * (M + M.transpose()).eval(); }

/// Symmetric PSD pseudo-inverse; eigenvalues below dmax * 1e-12 are treated
/// as zero. Returns the zero matrix for a (numerically) zero input.
inline Eigen::MatrixXd psd_pinv(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  const Eigen::VectorXd& d = es.eigenvalues();
  const double dmax = d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
  Eigen::VectorXd dinv = Eigen::VectorXd::Zero(d.size());
  for (int i = 0; i < d.size(); ++i)
    if (d(i) > dmax * 1e-12 && d(i) > 0.0) dinv(i) = 1.0 / d(i);
  return es.eigenvectors() * dinv.asDiagonal() * es.eigenvectors().transpose();
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

inline void SsmSpec::validate() const {
  const int m = state_dim();
  const int p = obs_dim();
  if (Z.cols() != m) throw ValidationError("SsmSpec: Z has " + std::to_string(Z.cols()) +
                                           " columns, state dimension is " + std::to_string(m));
  if (H.rows() != p || H.cols() != p) throw ValidationError("SsmSpec: H dimension mismatch");
  if (Q.rows() != m || Q.cols() != m) throw ValidationError("SsmSpec: Q dimension mismatch");
  if (a1.size() != m) throw ValidationError("SsmSpec: a1 dimension mismatch");
  if (P1.rows() != m || P1.cols() != m) throw ValidationError("SsmSpec: P1 dimension mismatch");
  if (!diffuse.empty() && static_cast<int>(diffuse.size()) != m)
    throw ValidationError("SsmSpec: diffuse mask dimension mismatch");
  detail::require_symmetric_psd(H, "H");
  detail::require_symmetric_psd(Q, "Q");
  detail::require_symmetric_psd(P1, "P1");
  if (!a1.allFinite()) throw ValidationError("SsmSpec: a1 has non-finite entries");
}

inline std::vector<double> FilterOutput::standardized_innovations(int skip_steps) const {
  std::vector<double> out;
  int seen = 0;
  for (std::size_t t = 0; t < innovation.size(); ++t) {
    if (observed_rows[t].empty()) continue;
    ++seen;
    if (seen <= skip_steps) continue;
    const Eigen::VectorXd& v = innovation[t];
    const Eigen::MatrixXd& F = innovation_cov[t];
    for (int i = 0; i < v.size(); ++i) {
      const double f = F(i, i);
      out.push_back(f > 0.0 ? v(i) / std::sqrt(f) : 0.0);
    }
  }
  return out;
}

namespace detail {

/// Shared filter recursion. The stored variant keeps the full output; the
/// bare variant only accumulates the loglik, which estimation loops on.
/// Innovation covariances of size one and two are handled in closed form.
template <bool Store>
inline void filter_impl(const SsmSpec& spec, const ObservationPanel& data, double kappa,
                        FilterOutput& out) {
  spec.validate();
  data.validate();
  const int m = spec.state_dim();
  const int p = spec.obs_dim();
  if (data.cols() != p)
    throw ValidationError("kalman_filter: panel width " + std::to_string(data.cols()) +
                          " does not match observation dimension " + std::to_string(p));
  const int n = data.rows();
  const int d = spec.n_diffuse();

  if constexpr (Store) {
    out.predicted_mean.resize(n);
    out.predicted_cov.resize(n);
    out.filtered_mean.resize(n);
    out.filtered_cov.resize(n);
    out.innovation.resize(n);
    out.innovation_cov.resize(n);
    out.observed_rows.resize(n);
  }

  Eigen::VectorXd a = spec.a1;
  Eigen::MatrixXd P = spec.P1;
  if (!spec.diffuse.empty()) {
    for (int i = 0; i < m; ++i) {
      if (!spec.diffuse[i]) continue;
      a(i) = 0.0;  // diffuse prior mean is zero by convention
      P.row(i).setZero();
      P.col(i).setZero();
      P(i, i) = kappa;
    }
  }

  const double log2pi = std::log(2.0 * M_PI);
  int observed_steps = 0;

  // Workspace reused across steps.
  Eigen::MatrixXd Zt, Ht, M, F, Finv, K, IKZ, Pf, W(m, m), Wk;
  Eigen::VectorXd y, v, af(m);
  std::vector<int> obs;

  for (int t = 0; t < n; ++t) {
    if constexpr (Store) {
      out.predicted_mean[t] = a;
      out.predicted_cov[t] = P;
    }

    obs.clear();
    for (int j = 0; j < p; ++j)
      if (!is_missing(data.values(t, j))) obs.push_back(j);
    if constexpr (Store) out.observed_rows[t] = obs;

    if (!obs.empty()) {
      const int k = static_cast<int>(obs.size());
      Zt.resize(k, m);
      Ht.resize(k, k);
      y.resize(k);
      for (int i = 0; i < k; ++i) {
        Zt.row(i) = spec.Z.row(obs[i]);
        y(i) = data.values(t, obs[i]);
        for (int j = 0; j < k; ++j) Ht(i, j) = spec.H(obs[i], obs[j]);
      }

      v = y;
      v.noalias() -= Zt * a;
      M.resize(m, k);
      M.noalias() = P * Zt.transpose();
      F.resize(k, k);
      F.noalias() = Zt * M;
      F += Ht;
      symmetrize(F);

      if constexpr (Store) {
        out.innovation[t] = v;
        out.innovation_cov[t] = F;
      }
      ++observed_steps;

      // Eigenvalue extremes: closed form for k <= 2, solver otherwise.
      double dmax, dmin, logdet;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
      if (k == 1) {
        dmax = std::fabs(F(0, 0));
        dmin = F(0, 0);
        logdet = F(0, 0) > 0 ? std::log(F(0, 0)) : 0.0;
      } else if (k == 2) {
        const double tr = F(0, 0) + F(1, 1);
        const double det = F(0, 0) * F(1, 1) - F(0, 1) * F(0, 1);
        const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
        const double l1 = 0.5 * tr - disc, l2 = 0.5 * tr + disc;
        dmin = l1;
        dmax = std::max(std::fabs(l1), std::fabs(l2));
        logdet = det > 0 ? std::log(det) : 0.0;
      } else {
        es.compute(F);
        dmax = es.eigenvalues().cwiseAbs().maxCoeff();
        dmin = es.eigenvalues().minCoeff();
        logdet = dmin > 0 ? es.eigenvalues().array().log().sum() : 0.0;
      }

      // The big-kappa prior legitimately spreads F's spectrum while diffuse
      // states are being resolved, so only truly singular matrices fail
      // inside the burn-in window; afterwards the 1e12 condition rule holds.
      const double rel_tol = observed_steps <= d ? 1e-14 : 1e-12;
      if (dmax <= 1e-12 || dmin <= dmax * rel_tol) {
        // An exactly known observation (no state or measurement uncertainty)
        // carries no information for the update and an undefined likelihood
        // term; anything else with a singular F is a genuine breakdown.
        if (!(dmax <= 1e-12 && M.cwiseAbs().maxCoeff() <= 1e-9))
          throw NumericalError("kalman_filter: innovation covariance singular at t=" +
                               std::to_string(t) + " (condition > 1e12)");
      } else {
        Finv.resize(k, k);
        if (k == 1) {
          Finv(0, 0) = 1.0 / F(0, 0);
        } else if (k == 2) {
          const double det = F(0, 0) * F(1, 1) - F(0, 1) * F(0, 1);
          Finv(0, 0) = F(1, 1) / det;
          Finv(1, 1) = F(0, 0) / det;
          Finv(0, 1) = Finv(1, 0) = -F(0, 1) / det;
        } else {
          Finv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                 es.eigenvectors().transpose();
        }
        K.resize(m, k);
        K.noalias() = M * Finv;
        af = a;
        af.noalias() += K * v;
        IKZ = Eigen::MatrixXd::Identity(m, m);
        IKZ.noalias() -= K * Zt;
        W.noalias() = IKZ * P;
        Pf.resize(m, m);
        Pf.noalias() = W * IKZ.transpose();
        Wk.resize(m, k);
        Wk.noalias() = K * Ht;
        Pf.noalias() += Wk * K.transpose();
        symmetrize(Pf);
        a = af;
        P = Pf;

        if (observed_steps <= d) {
          ++out.n_diffuse_skipped;
        } else {
          out.loglik += -0.5 * (k * log2pi + logdet + v.dot(Finv * v));
        }
      }
    }
    if constexpr (Store) {
      out.filtered_mean[t] = a;
      out.filtered_cov[t] = P;
    }

    af.noalias() = spec.T * a;
    a = af;
    W.noalias() = spec.T * P;
    P.noalias() = W * spec.T.transpose();
    P += spec.Q;
    symmetrize(P);
  }
}

}  // namespace detail

/// Kalman filter with row-deletion of missing observations, big-kappa diffuse
/// initialization and Joseph-form updates. The first d fully or partially
/// observed steps (d = number of diffuse states) do not contribute to loglik.
inline FilterOutput kalman_filter(const SsmSpec& spec, const ObservationPanel& data,
                                  double kappa = kDiffuseKappa) {
  FilterOutput out;
  detail::filter_impl<true>(spec, data, kappa, out);
  return out;
}

/// Fixed-interval (Rauch-Tung-Striebel) smoother. The gain uses a PSD
/// pseudo-inverse of the predicted covariance so fully deterministic systems
/// smooth to their filtered values.
inline SmootherOutput kalman_smoother(const SsmSpec& spec, const ObservationPanel& data,
                                      const FilterOutput& filt) {
  const int n = data.rows();
  if (static_cast<int>(filt.filtered_mean.size()) != n ||
      (n > 0 && filt.filtered_mean[0].size() != spec.state_dim()))
    throw ValidationError("kalman_smoother: filter output does not match spec/data");

  SmootherOutput out;
  out.mean.resize(n);
  out.cov.resize(n);
  if (n == 0) return out;

  out.mean[n - 1] = filt.filtered_mean[n - 1];
  out.cov[n - 1] = filt.filtered_cov[n - 1];

  for (int t = n - 2; t >= 0; --t) {
    const Eigen::MatrixXd& Ppred = filt.predicted_cov[t + 1];
    const Eigen::MatrixXd J =
        filt.filtered_cov[t] * spec.T.transpose() * detail::psd_pinv(Ppred);
    out.mean[t] = filt.filtered_mean[t] + J * (out.mean[t + 1] - filt.predicted_mean[t + 1]);
    Eigen::MatrixXd V =
        filt.filtered_cov[t] + J * (out.cov[t + 1] - Ppred) * J.transpose();
    detail::symmetrize(V);
    out.cov[t] = V;
  }
  return out;
}

/// Same recursion as kalman_filter but without storing per-step output.
inline double loglikelihood(const SsmSpec& spec, const ObservationPanel& data,
                            double kappa = kDiffuseKappa) {
  FilterOutput out;
  detail::filter_impl<false>(spec, data, kappa, out);
  return out.loglik;
}

/// Draws observations and the latent state path. Diffuse states start at
/// their a1 entry with the configurable start variance.
inline SimulationResult simulate(const SsmSpec& spec, int n, std::uint64_t seed,
                                 const SimulateOptions& opts = {}) {
  spec.validate();
  if (n < 1) throw ValidationError("simulate: n must be >= 1");
  const int m = spec.state_dim();
  const int p = spec.obs_dim();

  Eigen::MatrixXd P1 = spec.P1;
  if (!spec.diffuse.empty()) {
    for (int i = 0; i < m; ++i) {
      if (!spec.diffuse[i]) continue;
      P1.row(i).setZero();
      P1.col(i).setZero();
      P1(i, i) = opts.diffuse_start_variance;
    }
  }

  const Eigen::MatrixXd L1 = detail::psd_sqrt(P1);
  const Eigen::MatrixXd Lq = detail::psd_sqrt(spec.Q);
  const Eigen::MatrixXd Lh = detail::psd_sqrt(spec.H);

  Rng rng(seed);
  auto draw = [&rng](int k) {
    Eigen::VectorXd z(k);
    for (int i = 0; i < k; ++i) z(i) = rng.normal();
    return z;
  };

  SimulationResult res;
  res.states.resize(n, m);
  res.observations.values.resize(n, p);

  Eigen::VectorXd alpha = spec.a1 + L1 * draw(m);
  for (int t = 0; t < n; ++t) {
    res.states.row(t) = alpha.transpose();
    res.observations.values.row(t) = (spec.Z * alpha + Lh * draw(p)).transpose();
    alpha = spec.T * alpha + Lq * draw(m);
  }
  return res;
}

}  // namespace ivts::statespace
