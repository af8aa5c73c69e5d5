#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ivts/optim.hpp"
#include "ivts/rng.hpp"
#include "ivts/structural.hpp"

// Maximum-likelihood estimation of FS-BSM parameters. The optimizer works in
// unconstrained coordinates: variances enter as log(sigma2) and, for the
// bivariate model, block correlations as atanh(rho), which keeps every 2x2
// covariance block PSD by construction. Individual parameters can be pinned
// (typically to zero) through a template, e.g. to fit an integrated random
// walk trend.

namespace ivts::estimation {

using statespace::ObservationPanel;
using structural::FsBsmParams;

enum class TrendVariant { full, random_walk, integrated_random_walk, deterministic };
enum class SeasonalVariant { two_group, deterministic };

namespace blocks {
inline constexpr int irregular = 0;
inline constexpr int level = 1;
inline constexpr int slope = 2;
inline constexpr int seasonal_I = 3;
inline constexpr int seasonal_II = 4;
inline constexpr int count = 5;
inline constexpr const char* names[count] = {"eps", "eta", "zeta", "omega_I", "omega_II"};
}  // namespace blocks

struct FsBsmTemplate {
  int dim = 1;
  FsBsmParams pinned;            // values used wherever a parameter is not free
  // Per covariance block: are the variances / the correlation free?
  struct BlockFlags {
    bool var1 = true;
    bool var2 = true;   // ignored for dim = 1
    bool corr = true;   // ignored for dim = 1
  };
  std::array<BlockFlags, blocks::count> flags;

  static FsBsmTemplate univariate(TrendVariant trend = TrendVariant::full,
                                  SeasonalVariant seasonal = SeasonalVariant::two_group) {
    FsBsmTemplate t;
    t.dim = 1;
    t.pinned = FsBsmParams::univariate(1.0, 0.0, 0.0, 0.0, 0.0);
    t.apply_variants(trend, seasonal);
    return t;
  }

  static FsBsmTemplate bivariate(TrendVariant trend = TrendVariant::full,
                                 SeasonalVariant seasonal = SeasonalVariant::two_group) {
    FsBsmTemplate t;
    t.dim = 2;
    const Eigen::Matrix2d z = Eigen::Matrix2d::Zero();
    t.pinned = FsBsmParams::bivariate(Eigen::Matrix2d::Identity(), z, z, z, z);
    t.apply_variants(trend, seasonal);
    return t;
  }

  int n_free() const {
    int n = 0;
    for (const auto& f : flags) {
      n += f.var1 ? 1 : 0;
      if (dim == 2) n += (f.var2 ? 1 : 0) + (f.corr ? 1 : 0);
    }
    return n;
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    for (int b = 0; b < blocks::count; ++b) {
      const std::string base = std::string("sigma2_") + blocks::names[b];
      if (dim == 1) {
        if (flags[b].var1) out.push_back(base);
      } else {
        if (flags[b].var1) out.push_back(base + "_1");
        if (flags[b].var2) out.push_back(base + "_2");
        if (flags[b].corr) out.push_back(std::string("rho_") + blocks::names[b]);
      }
    }
    return out;
  }

  void validate() const {
    if (dim != pinned.dim) throw ValidationError("FsBsmTemplate: dim mismatch");
    if (dim == 2) {
      for (int b = 0; b < blocks::count; ++b) {
        const Eigen::MatrixXd& M = block_of(pinned, b);
        const bool any_var_pinned_zero =
            (!flags[b].var1 && M(0, 0) == 0.0) || (!flags[b].var2 && M(1, 1) == 0.0);
        if (flags[b].corr && any_var_pinned_zero)
          throw ValidationError(
              "FsBsmTemplate: correlation cannot be free when a block variance is pinned "
              "to zero");
      }
    }
    if (n_free() == 0) throw ValidationError("FsBsmTemplate: no free parameters");
  }

  static const Eigen::MatrixXd& block_of(const FsBsmParams& p, int b) {
    switch (b) {
      case blocks::irregular: return p.irregular_cov;
      case blocks::level: return p.level_cov;
      case blocks::slope: return p.slope_cov;
      case blocks::seasonal_I: return p.seasonal_cov_I;
      default: return p.seasonal_cov_II;
    }
  }
  static Eigen::MatrixXd& block_of(FsBsmParams& p, int b) {
    switch (b) {
      case blocks::irregular: return p.irregular_cov;
      case blocks::level: return p.level_cov;
      case blocks::slope: return p.slope_cov;
      case blocks::seasonal_I: return p.seasonal_cov_I;
      default: return p.seasonal_cov_II;
    }
  }

 private:
  void apply_variants(TrendVariant trend, SeasonalVariant seasonal) {
    auto pin_block = [&](int b) { flags[b] = {false, false, false}; };
    if (trend == TrendVariant::random_walk || trend == TrendVariant::deterministic)
      pin_block(blocks::slope);
    if (trend == TrendVariant::integrated_random_walk || trend == TrendVariant::deterministic)
      pin_block(blocks::level);
    if (seasonal == SeasonalVariant::deterministic) {
      pin_block(blocks::seasonal_I);
      pin_block(blocks::seasonal_II);
    }
  }
};

/// params -> unconstrained free coordinates (log variances, atanh correlations).
inline Eigen::VectorXd to_unconstrained(const FsBsmParams& p, const FsBsmTemplate& tmpl) {
  std::vector<double> theta;
  const double floor_log = -60.0;  // log-variance floor for zero inputs
  for (int b = 0; b < blocks::count; ++b) {
    const Eigen::MatrixXd& M = FsBsmTemplate::block_of(p, b);
    const auto& f = tmpl.flags[b];
    auto push_logvar = [&](double v) {
      theta.push_back(v > 0.0 ? std::log(v) : floor_log);
    };
    if (f.var1) push_logvar(M(0, 0));
    if (tmpl.dim == 2) {
      if (f.var2) push_logvar(M(1, 1));
      if (f.corr) {
        const double denom = std::sqrt(M(0, 0) * M(1, 1));
        const double rho = denom > 0.0 ? M(0, 1) / denom : 0.0;
        theta.push_back(std::atanh(std::clamp(rho, -0.999999, 0.999999)));
      }
    }
  }
  return Eigen::Map<Eigen::VectorXd>(theta.data(), static_cast<int>(theta.size()));
}

inline FsBsmParams from_unconstrained(const Eigen::VectorXd& theta,
                                      const FsBsmTemplate& tmpl) {
  FsBsmParams p = tmpl.pinned;
  int k = 0;
  for (int b = 0; b < blocks::count; ++b) {
    Eigen::MatrixXd& M = FsBsmTemplate::block_of(p, b);
    const auto& f = tmpl.flags[b];
    if (f.var1) M(0, 0) = std::exp(theta(k++));
    if (tmpl.dim == 2) {
      if (f.var2) M(1, 1) = std::exp(theta(k++));
      double rho = M(0, 0) > 0 && M(1, 1) > 0
                       ? M(0, 1) / std::sqrt(M(0, 0) * M(1, 1))
                       : 0.0;
      if (f.corr) rho = std::tanh(theta(k++));
      M(0, 1) = M(1, 0) = rho * std::sqrt(M(0, 0) * M(1, 1));
    }
  }
  return p;
}

struct FitOptions {
  int max_iter = 500;
  double grad_tol = 1e-6;
  int multi_start = 3;
  std::uint64_t seed = 0;
  double fd_step_rel = 1e-5;
  bool nelder_mead_fallback = true;
  bool compute_standard_errors = false;
  unsigned n_threads = 1;

  void validate() const {
    if (max_iter <= 0 || grad_tol <= 0 || multi_start <= 0 || fd_step_rel <= 0)
      throw ValidationError("FitOptions: bounds must be positive");
  }
};

struct FitResult {
  FsBsmParams params;
  double loglik = 0.0;
  int n_iter = 0;
  bool converged = false;
  double gradient_norm = 0.0;
  std::optional<Eigen::VectorXd> param_standard_errors;  // free-parameter order
  std::vector<double> loglik_trace;                      // accepted iterates, best start
  int best_start = 0;
};

namespace detail {

/// Scale statistic per series: variance of first differences, missing-aware.
inline Eigen::VectorXd diff_variance(const ObservationPanel& data) {
  Eigen::VectorXd out(data.cols());
  for (int j = 0; j < data.cols(); ++j) {
    std::vector<double> d;
    double prev = missing_value();
    for (int t = 0; t < data.rows(); ++t) {
      const double x = data.values(t, j);
      if (!is_missing(x) && !is_missing(prev)) d.push_back(x - prev);
      if (!is_missing(x)) prev = x;
    }
    if (d.size() < 2) {
      out(j) = 1.0;
      continue;
    }
    double mu = 0.0;
    for (double v : d) mu += v;
    mu /= static_cast<double>(d.size());
    double s2 = 0.0;
    for (double v : d) s2 += (v - mu) * (v - mu);
    out(j) = std::max(s2 / (static_cast<double>(d.size()) - 1.0), 1e-12);
  }
  return out;
}

inline FsBsmParams start_params(const FsBsmTemplate& tmpl, const Eigen::VectorXd& scale,
                                int which, Rng& rng) {
  // Relative sizes per block for the moment-flavored start.
  const double rel_mom[blocks::count] = {0.4, 0.02, 1e-4, 1e-3, 1e-5};
  FsBsmParams p = tmpl.pinned;
  for (int b = 0; b < blocks::count; ++b) {
    Eigen::MatrixXd& M = FsBsmTemplate::block_of(p, b);
    const auto& f = tmpl.flags[b];
    for (int i = 0; i < tmpl.dim; ++i) {
      const bool free_i = (i == 0) ? f.var1 : f.var2;
      if (!free_i) continue;
      double v;
      switch (which) {
        case 0: v = rel_mom[b] * scale(i); break;                       // moment-flavored
        case 1: v = (b == blocks::irregular ? 0.5 : 1e-5) * scale(i); break;  // small
        case 2: v = 0.5 * scale(i); break;                              // large
        default: v = rel_mom[b] * scale(i) * std::exp(rng.normal()); break;
      }
      M(i, i) = v;
    }
    if (tmpl.dim == 2) M(0, 1) = M(1, 0) = 0.0;  // start at zero correlation
  }
  return p;
}

}  // namespace detail

/// Maximizes the Kalman-filter log-likelihood over the template's free
/// parameters. Returns the best of the multi-start runs; non-convergence is
/// reported through the converged flag, never as an exception.
inline FitResult fit_ml(const FsBsmTemplate& tmpl, const ObservationPanel& data,
                        const FitOptions& opts = {}) {
  tmpl.validate();
  opts.validate();
  if (data.cols() != tmpl.dim)
    throw ValidationError("fit_ml: panel width does not match template dim");
  int n_obs = 0;
  for (int t = 0; t < data.rows(); ++t)
    for (int j = 0; j < data.cols(); ++j)
      if (!is_missing(data.values(t, j))) ++n_obs;
  if (n_obs < 5 * tmpl.n_free())
    throw ValidationError("fit_ml: need at least 5 observations per free parameter, have " +
                          std::to_string(n_obs));

  const optim::Objective objective = [&](const Eigen::VectorXd& theta) -> double {
    try {
      const FsBsmParams p = from_unconstrained(theta, tmpl);
      return -statespace::loglikelihood(structural::build_fsbsm(p), data);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  Rng rng(opts.seed);
  std::vector<Eigen::VectorXd> starts;
  for (int s = 0; s < opts.multi_start; ++s) {
    Rng r = rng.derive(s);
    starts.push_back(to_unconstrained(
        detail::start_params(tmpl, detail::diff_variance(data), s, r), tmpl));
  }

  optim::Options oo;
  oo.max_iter = opts.max_iter;
  oo.grad_tol = opts.grad_tol;
  oo.fd_step_rel = opts.fd_step_rel;

  std::vector<optim::Result> runs(starts.size());
  parallel_for(
      starts.size(),
      [&](std::size_t s) {
        optim::Result r = optim::bfgs_minimize(objective, starts[s], oo);
        // Derivative-free rescue only when the gradient path stalled at once.
        if (opts.nelder_mead_fallback && !r.converged && r.iterations <= 2) {
          optim::Result nm = optim::nelder_mead(objective, r.x, oo);
          if (nm.f < r.f) {
            nm.iterations += r.iterations;
            nm.trace.insert(nm.trace.begin(), r.trace.begin(), r.trace.end());
            r = nm;
          }
        }
        runs[s] = std::move(r);
      },
      opts.n_threads);

  int best = 0;
  for (std::size_t s = 1; s < runs.size(); ++s)
    if (runs[s].f < runs[best].f) best = static_cast<int>(s);
  optim::Result win = runs[best];

  // Boundary pass: a free variance whose removal costs nothing measurable is
  // pinned at the floor, so flat boundary directions report as (numerically)
  // zero instead of wherever the line search happened to stop.
  {
    std::vector<bool> is_variance;
    for (int b = 0; b < blocks::count; ++b) {
      const auto& f = tmpl.flags[b];
      if (f.var1) is_variance.push_back(true);
      if (tmpl.dim == 2) {
        if (f.var2) is_variance.push_back(true);
        if (f.corr) is_variance.push_back(false);
      }
    }
    for (int i = 0; i < static_cast<int>(is_variance.size()); ++i) {
      if (!is_variance[i] || win.x(i) <= -60.0) continue;
      Eigen::VectorXd cand = win.x;
      cand(i) = -60.0;
      const double fc = objective(cand);
      if (fc <= win.f + 1e-6) {
        win.x = cand;
        win.f = std::min(fc, win.f);
      }
    }
  }

  FitResult fr;
  fr.params = from_unconstrained(win.x, tmpl);
  fr.loglik = -objective(win.x);
  fr.converged = win.converged;
  fr.gradient_norm = win.grad_norm;
  fr.best_start = best;
  for (const auto& r : runs) fr.n_iter += r.iterations;
  fr.loglik_trace.reserve(win.trace.size());
  for (double f : win.trace) fr.loglik_trace.push_back(-f);

  if (opts.compute_standard_errors) {
    const int n = static_cast<int>(win.x.size());
    Eigen::MatrixXd hess(n, n);
    const double h = 1e-4;
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        Eigen::VectorXd xpp = win.x, xpm = win.x, xmp = win.x, xmm = win.x;
        xpp(i) += h; xpp(j) += h;
        xpm(i) += h; xpm(j) -= h;
        xmp(i) -= h; xmp(j) += h;
        xmm(i) -= h; xmm(j) -= h;
        hess(i, j) = hess(j, i) =
            (objective(xpp) - objective(xpm) - objective(xmp) + objective(xmm)) /
            (4.0 * h * h);
      }
    }
    Eigen::VectorXd se_theta =
        statespace::detail::psd_pinv(hess).diagonal().cwiseMax(0.0).cwiseSqrt();
    // Delta method back to the natural scale: d sigma2 / d theta = sigma2,
    // d rho / d theta = 1 - rho^2.
    Eigen::VectorXd se(n);
    int k = 0;
    const FsBsmParams p = fr.params;
    for (int b = 0; b < blocks::count; ++b) {
      const Eigen::MatrixXd& M = FsBsmTemplate::block_of(p, b);
      const auto& f = tmpl.flags[b];
      if (f.var1) se(k) = M(0, 0) * se_theta(k), ++k;
      if (tmpl.dim == 2) {
        if (f.var2) se(k) = M(1, 1) * se_theta(k), ++k;
        if (f.corr) {
          const double denom = std::sqrt(M(0, 0) * M(1, 1));
          const double rho = denom > 0 ? M(0, 1) / denom : 0.0;
          se(k) = (1.0 - rho * rho) * se_theta(k);
          ++k;
        }
      }
    }
    fr.param_standard_errors = se;
  }
  return fr;
}

}  // namespace ivts::estimation
