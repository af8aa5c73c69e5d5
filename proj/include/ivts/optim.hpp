#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <vector>

// Unconstrained minimizers used by maximum-likelihood estimation: BFGS with
// backtracking line search and finite-difference gradients, plus a
// Nelder-Mead fallback for objectives whose numerical gradients misbehave
// near variance boundaries.

namespace ivts::optim {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Options {
  int max_iter = 500;
  double grad_tol = 1e-6;        // infinity norm of the gradient
  double fd_step_rel = 1e-5;     // relative central-difference step
};

struct Result {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  double grad_norm = std::numeric_limits<double>::infinity();
  std::vector<double> trace;     // objective after each accepted step
};

inline Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x,
                                   double rel_step) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd g(n), xp = x, xm = x;
  for (int i = 0; i < n; ++i) {
    const double h = rel_step * std::max(1.0, std::fabs(x(i)));
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp(i) = x(i);
    xm(i) = x(i);
  }
  return g;
}

inline Result bfgs_minimize(const Objective& f, const Eigen::VectorXd& x0,
                            const Options& opts = {}) {
  const int n = static_cast<int>(x0.size());
  Result res;
  res.x = x0;
  res.f = f(x0);
  res.trace.push_back(res.f);
  if (!std::isfinite(res.f)) return res;

  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g = fd_gradient(f, res.x, opts.fd_step_rel);

  double recent_gain = 0.0;  // improvement over the trailing window
  int window = 0;

  for (int it = 0; it < opts.max_iter; ++it) {
    res.grad_norm = g.cwiseAbs().maxCoeff();
    if (res.grad_norm < opts.grad_tol) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd dir = -(Hinv * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // curvature information went bad, restart
      Hinv.setIdentity();
      dir = -g;
      slope = g.dot(dir);
      if (!(slope < 0.0)) break;
    }

    // Armijo backtracking; on failure retry once from a fresh steepest
    // descent direction before giving up.
    double fnew = std::numeric_limits<double>::infinity();
    Eigen::VectorXd xnew;
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double step = 1.0;
      for (int ls = 0; ls < 50; ++ls) {
        xnew = res.x + step * dir;
        fnew = f(xnew);
        if (std::isfinite(fnew) && fnew <= res.f + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted && attempt == 0) {
        Hinv.setIdentity();
        dir = -g / std::max(1.0, g.cwiseAbs().maxCoeff());
        slope = g.dot(dir);
        if (!(slope < 0.0)) break;
      }
    }
    if (!accepted) break;

    recent_gain += res.f - fnew;
    if (++window >= 8) {
      if (recent_gain < 1e-10 * (1.0 + std::fabs(fnew))) {
        res.x = xnew;
        res.f = fnew;
        res.trace.push_back(res.f);
        ++res.iterations;
        break;  // plateau: no measurable progress over the window
      }
      recent_gain = 0.0;
      window = 0;
    }

    const Eigen::VectorXd gnew = fd_gradient(f, xnew, opts.fd_step_rel);
    const Eigen::VectorXd s = xnew - res.x;
    const Eigen::VectorXd y = gnew - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Eigen::VectorXd Hy = Hinv * y;
      const double yHy = y.dot(Hy);
      Hinv += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
              (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }

    res.x = xnew;
    res.f = fnew;
    g = gnew;
    res.trace.push_back(res.f);
    ++res.iterations;
  }

  res.grad_norm = fd_gradient(f, res.x, opts.fd_step_rel).cwiseAbs().maxCoeff();
  res.converged = res.grad_norm < opts.grad_tol;
  return res;
}

inline Result nelder_mead(const Objective& f, const Eigen::VectorXd& x0,
                          const Options& opts = {}, double initial_spread = 0.5) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> pts(n + 1, x0);
  std::vector<double> fv(n + 1);
  for (int i = 1; i <= n; ++i) pts[i](i - 1) += initial_spread;
  for (int i = 0; i <= n; ++i) fv[i] = f(pts[i]);

  Result res;
  auto order = [&] {
    for (int i = 0; i <= n; ++i)
      for (int j = i + 1; j <= n; ++j)
        if (fv[j] < fv[i]) {
          std::swap(fv[i], fv[j]);
          std::swap(pts[i], pts[j]);
        }
  };
  order();
  res.trace.push_back(fv[0]);

  for (int it = 0; it < opts.max_iter; ++it) {
    if (std::fabs(fv[n] - fv[0]) < 1e-12 * (1.0 + std::fabs(fv[0]))) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += pts[i];
    centroid /= n;

    const Eigen::VectorXd xr = centroid + (centroid - pts[n]);
    const double fr = f(xr);
    if (fr < fv[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[n]);
      const double fe = f(xe);
      if (fe < fr) {
        pts[n] = xe;
        fv[n] = fe;
      } else {
        pts[n] = xr;
        fv[n] = fr;
      }
    } else if (fr < fv[n - 1]) {
      pts[n] = xr;
      fv[n] = fr;
    } else {
      const Eigen::VectorXd xc = centroid + 0.5 * (pts[n] - centroid);
      const double fc = f(xc);
      if (fc < fv[n]) {
        pts[n] = xc;
        fv[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
          fv[i] = f(pts[i]);
        }
      }
    }
    order();
    if (fv[0] < res.trace.back()) res.trace.push_back(fv[0]);
    ++res.iterations;
  }

  res.x = pts[0];
  res.f = fv[0];
  res.grad_norm = fd_gradient(f, res.x, opts.fd_step_rel).cwiseAbs().maxCoeff();
  res.converged = res.grad_norm < opts.grad_tol;
  return res;
}

}  // namespace ivts::optim
