#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivts/critical_values.hpp"
#include "ivts/prob.hpp"
#include "ivts/rng.hpp"
#include "ivts/structural.hpp"

// Tests for deterministic trend and seasonal components plus the residual
// diagnostics used in the descriptive tables.
//
// The trend tests cumulate regression residuals: the level variant (RW)
// demeans, the drift variant (RWD) detrends on constant + time, and the
// smooth-trend variant (IRW) double-cumulates detrended residuals with a
// 1/T^4 normalization. The seasonality tests cumulate trigonometrically
// weighted one-step prediction errors of the deterministic-seasonal null
// written in state-space form, with trend/irregular nuisance variances
// supplied by the caller. All of them reject for large statistics against
// simulated finite-sample critical values.

namespace ivts::stattests {

struct TestResult {
  std::string name;
  double statistic = 0.0;
  std::map<double, double> critical_values;  // significance level -> value
  std::optional<double> p_value;
  std::optional<int> df;
  bool decision_at_5pct = false;  // true = reject the deterministic null
};

enum class CvTestKind { rw, rwd, irw, seasonal_freq, seasonal_group2 };

inline const char* kind_name(CvTestKind k) {
  switch (k) {
    case CvTestKind::rw: return "rw";
    case CvTestKind::rwd: return "rwd";
    case CvTestKind::irw: return "irw";
    case CvTestKind::seasonal_freq: return "seasonal_freq";
    default: return "seasonal_group2";
  }
}

struct CvTable {
  CvTestKind kind = CvTestKind::rw;
  int harmonic = 0;  // for seasonal_freq
  int sample_size = 0;
  std::vector<double> levels;     // upper-tail significance levels
  std::vector<double> quantiles;  // matching critical values
  int replications = 0;
  std::uint64_t seed = 0;
};

struct SeasonalTarget {
  bool group_two = false;
  int harmonic = 1;  // 1..6, ignored for the group test

  static SeasonalTarget frequency(int j) {
    if (j < 1 || j > 6) throw ValidationError("seasonal target harmonic must be in 1..6");
    return {false, j};
  }
  static SeasonalTarget group_II() { return {true, 0}; }

  int df() const { return group_two ? 9 : (harmonic == 6 ? 1 : 2); }
};

struct SeasonalTestOptions {
  // Nuisance variances of the null state-space model, normally taken from a
  // fit of the unrestricted model.
  double sigma2_eps = 1.0;
  double sigma2_eta = 0.0;
  double sigma2_zeta = 0.0;
  std::optional<CvTable> table;  // Monte Carlo critical values override
};

namespace detail {

inline void attach_critical_values(TestResult& r, const tables::CvRow* rows, std::size_t n,
                                   int T) {
  // Nearest tabulated sample size.
  const tables::CvRow* best = rows;
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs(rows[i].sample_size - T) < std::abs(best->sample_size - T)) best = &rows[i];
  r.critical_values[0.10] = best->q10;
  r.critical_values[0.05] = best->q05;
  r.critical_values[0.01] = best->q01;
  r.decision_at_5pct = r.statistic > best->q05;
}

inline std::optional<double> dense_pvalue(double stat, const std::array<double, 11>& grid) {
  const auto& tail = tables::kDenseTail;
  if (stat <= grid.front()) return 0.999;
  if (stat >= grid.back()) return 0.001;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (stat <= grid[i]) {
      const double w = (stat - grid[i - 1]) / (grid[i] - grid[i - 1]);
      return tail[i - 1] + w * (tail[i] - tail[i - 1]);
    }
  }
  return std::nullopt;
}

inline void apply_table(TestResult& r, const CvTable& tab) {
  r.critical_values.clear();
  for (std::size_t i = 0; i < tab.levels.size(); ++i)
    r.critical_values[tab.levels[i]] = tab.quantiles[i];
  const auto it = r.critical_values.find(0.05);
  if (it != r.critical_values.end()) r.decision_at_5pct = r.statistic > it->second;
}

/// OLS residuals of x on a constant and, optionally, linear time.
inline std::vector<double> detrend(std::span<const double> x, bool with_time) {
  const int n = static_cast<int>(x.size());
  std::vector<double> e(x.begin(), x.end());
  double xbar = 0.0;
  for (double v : x) xbar += v;
  xbar /= n;
  if (!with_time) {
    for (double& v : e) v -= xbar;
    return e;
  }
  // Regress on (1, t) in closed form.
  const double tbar = 0.5 * (n + 1);
  double sxt = 0.0, stt = 0.0;
  for (int t = 0; t < n; ++t) {
    sxt += (x[t] - xbar) * (t + 1 - tbar);
    stt += (t + 1 - tbar) * (t + 1 - tbar);
  }
  const double b = sxt / stt;
  const double a = xbar - b * tbar;
  for (int t = 0; t < n; ++t) e[t] = x[t] - a - b * (t + 1);
  return e;
}

inline double residual_variance(const std::vector<double>& e) {
  double s = 0.0;
  for (double v : e) s += v * v;
  return s / static_cast<double>(e.size());
}

inline void require_non_degenerate(std::span<const double> x, const std::vector<double>& e,
                                   const char* what) {
  double xbar = 0.0;
  for (double v : x) xbar += v;
  xbar /= static_cast<double>(x.size());
  double xvar = 0.0;
  for (double v : x) xvar += (v - xbar) * (v - xbar);
  xvar /= static_cast<double>(x.size());
  if (residual_variance(e) <= 1e-18 * std::max(1.0, xvar))
    throw DegenerateDataError(std::string(what) + ": residual variance is zero");
}

}  // namespace detail

/// Cumulation test of a deterministic level (with_drift = false) or of a
/// deterministic linear trend (with_drift = true, the RWD variant).
inline TestResult rw_test(std::span<const double> x, bool with_drift,
                          const std::optional<CvTable>& table = std::nullopt) {
  const int n = static_cast<int>(x.size());
  if (n < 20) throw ValidationError("rw_test: need at least 20 observations");
  const auto e = detail::detrend(x, with_drift);
  detail::require_non_degenerate(x, e, with_drift ? "rwd_test" : "rw_test");
  const double s2 = detail::residual_variance(e);

  double cum = 0.0, sum_sq = 0.0;
  for (double v : e) {
    cum += v;
    sum_sq += cum * cum;
  }
  TestResult r;
  r.name = with_drift ? "RWD" : "RW";
  r.df = 1;
  r.statistic = sum_sq / (static_cast<double>(n) * n * s2);
  if (table) {
    detail::apply_table(r, *table);
  } else if (with_drift) {
    detail::attach_critical_values(r, tables::kRwd.data(), tables::kRwd.size(), n);
    r.p_value = detail::dense_pvalue(r.statistic, tables::kRwdDense);
  } else {
    detail::attach_critical_values(r, tables::kRw.data(), tables::kRw.size(), n);
    r.p_value = detail::dense_pvalue(r.statistic, tables::kRwDense);
  }
  return r;
}

/// Double-cumulation test of a deterministic slope (smooth-trend null).
inline TestResult irw_test(std::span<const double> x,
                           const std::optional<CvTable>& table = std::nullopt) {
  const int n = static_cast<int>(x.size());
  if (n < 20) throw ValidationError("irw_test: need at least 20 observations");
  const auto e = detail::detrend(x, /*with_time=*/true);
  detail::require_non_degenerate(x, e, "irw_test");
  const double s2 = detail::residual_variance(e);

  double cum = 0.0, cum2 = 0.0, sum_sq = 0.0;
  for (double v : e) {
    cum += v;
    cum2 += cum;
    sum_sq += cum2 * cum2;
  }
  TestResult r;
  r.name = "IRW";
  r.df = 1;
  const double nd = static_cast<double>(n);
  r.statistic = sum_sq / (nd * nd * nd * nd * s2);
  if (table) {
    detail::apply_table(r, *table);
  } else {
    detail::attach_critical_values(r, tables::kIrw.data(), tables::kIrw.size(), n);
    r.p_value = detail::dense_pvalue(r.statistic, tables::kIrwDense);
  }
  return r;
}

/// Seasonality test at one harmonic or jointly at harmonics 2..6. The
/// standardized one-step prediction errors of the deterministic-seasonal
/// null model are first orthogonalized against the tested trigonometric
/// regressors (which turns their weighted cumulations into bridges, giving
/// the classic CvM(df) limit) and then cumulated with cos/sin weights.
inline TestResult seasonal_cvm_test(std::span<const double> x, SeasonalTarget target,
                                    const SeasonalTestOptions& opts = {}) {
  const int n = static_cast<int>(x.size());
  if (n < 48) throw ValidationError("seasonal_cvm_test: need at least 48 observations");

  const auto params = structural::FsBsmParams::univariate(
      opts.sigma2_eps, opts.sigma2_eta, opts.sigma2_zeta, 0.0, 0.0);
  const auto spec = structural::build_fsbsm(params);
  statespace::ObservationPanel data;
  data.values = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
  const auto filt = statespace::kalman_filter(spec, data);

  const int burn = spec.n_diffuse();
  std::vector<double> e;
  std::vector<int> cal;  // calendar index of each retained innovation
  e.reserve(n - burn);
  for (int t = burn; t < n; ++t) {
    const double f = filt.innovation_cov[t](0, 0);
    e.push_back(filt.innovation[t](0) / std::sqrt(f));
    cal.push_back(t + 1);
  }
  const int nr = static_cast<int>(e.size());

  std::vector<int> tested;
  if (target.group_two)
    tested = {2, 3, 4, 5, 6};
  else
    tested = {target.harmonic};

  // Project out intercept and the tested-frequency regressors.
  int ncols = 1;
  for (int j : tested) ncols += (j == 6) ? 1 : 2;
  Eigen::MatrixXd X(nr, ncols);
  Eigen::VectorXd u = Eigen::Map<Eigen::VectorXd>(e.data(), nr);
  for (int i = 0; i < nr; ++i) {
    int c = 0;
    X(i, c++) = 1.0;
    for (int j : tested) {
      const double lam = M_PI * j / 6.0;
      X(i, c++) = std::cos(lam * cal[i]);
      if (j != 6) X(i, c++) = std::sin(lam * cal[i]);
    }
  }
  const Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * u);
  const Eigen::VectorXd resid = u - X * beta;

  double s2 = resid.squaredNorm() / nr;
  if (s2 <= 0.0) throw DegenerateDataError("seasonal_cvm_test: zero prediction errors");

  auto harmonic_stat = [&](int j) {
    const double lam = M_PI * j / 6.0;
    double ac = 0.0, as = 0.0, sum = 0.0;
    for (int i = 0; i < nr; ++i) {
      ac += resid(i) * std::cos(lam * cal[i]);
      as += resid(i) * std::sin(lam * cal[i]);
      sum += (j == 6) ? ac * ac : ac * ac + as * as;
    }
    const double scale = (j == 6 ? 1.0 : 2.0) / (static_cast<double>(nr) * nr * s2);
    return scale * sum;
  };

  TestResult r;
  r.df = target.df();
  if (target.group_two) {
    r.name = "seasonal-cvm-II";
    double s = 0.0;
    for (int j = 2; j <= 6; ++j) s += harmonic_stat(j);
    r.statistic = s;
  } else {
    r.name = "seasonal-cvm-j" + std::to_string(target.harmonic);
    r.statistic = harmonic_stat(target.harmonic);
  }

  if (opts.table) {
    detail::apply_table(r, *opts.table);
  } else if (target.group_two) {
    detail::attach_critical_values(r, tables::kSeasonalDf9.data(), tables::kSeasonalDf9.size(), n);
    r.p_value = detail::dense_pvalue(r.statistic, tables::kSeasonalDf9Dense);
  } else if (target.harmonic == 6) {
    detail::attach_critical_values(r, tables::kSeasonalDf1.data(), tables::kSeasonalDf1.size(), n);
    r.p_value = detail::dense_pvalue(r.statistic, tables::kSeasonalDf1Dense);
  } else {
    detail::attach_critical_values(r, tables::kSeasonalDf2.data(), tables::kSeasonalDf2.size(), n);
    r.p_value = detail::dense_pvalue(r.statistic, tables::kSeasonalDf2Dense);
  }
  return r;
}

/// Trend tests in the style of the reporting tables: the statistic is
/// computed from standardized one-step prediction errors of the structural
/// model with the tested variance set to zero and every other parameter kept
/// at its (fitted) value. Unlike the raw-series tests above, the restricted
/// model absorbs the nuisance components, so e.g. the level test does not
/// fire merely because the slope is stochastic.
inline TestResult rwd_test_fitted(const structural::FsBsmParams& fitted,
                                  std::span<const double> x) {
  structural::FsBsmParams null_params = fitted;
  null_params.level_cov.setZero();
  const auto spec = structural::build_fsbsm(null_params);
  statespace::ObservationPanel data;
  data.values = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<int>(x.size()));
  const auto filt = statespace::kalman_filter(spec, data);
  const auto innov = filt.standardized_innovations(spec.n_diffuse());
  return rw_test(innov, /*with_drift=*/true);
}

inline TestResult irw_test_fitted(const structural::FsBsmParams& fitted,
                                  std::span<const double> x) {
  // The smooth-trend null maintains a fully deterministic trend, so the
  // classic full-sample double cumulation applies directly; seasonality is
  // removed first with the fitted filtered seasonal component.
  const auto spec = structural::build_fsbsm(fitted);
  statespace::ObservationPanel data;
  data.values = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<int>(x.size()));
  const auto adjusted = structural::deseasonalize(data, spec, fitted);
  std::vector<double> xd(adjusted.values.col(0).data(),
                         adjusted.values.col(0).data() + adjusted.rows());
  return irw_test(xd);
}

/// Portmanteau test of joint serial uncorrelation over the first `lags` lags.
inline TestResult box_pierce(std::span<const double> residuals, int lags = 12) {
  const int n = static_cast<int>(residuals.size());
  if (lags < 1) throw ValidationError("box_pierce: lags must be positive");
  if (n <= lags) throw ValidationError("box_pierce: series shorter than lag window");
  double mu = 0.0;
  for (double v : residuals) mu += v;
  mu /= n;
  double den = 0.0;
  for (double v : residuals) den += (v - mu) * (v - mu);
  if (den <= 0.0) throw DegenerateDataError("box_pierce: constant residuals");

  double q = 0.0;
  for (int k = 1; k <= lags; ++k) {
    double num = 0.0;
    for (int t = k; t < n; ++t) num += (residuals[t] - mu) * (residuals[t - k] - mu);
    const double rho = num / den;
    q += rho * rho;
  }
  TestResult r;
  r.name = "box-pierce";
  r.statistic = n * q;
  r.df = lags;
  r.p_value = prob::chi2_sf(r.statistic, lags);
  const double cv = [&] {  // chi2 5% critical value by bisection on the sf
    double lo = 0.0, hi = 10.0 * lags + 50.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (prob::chi2_sf(mid, lags) > 0.05 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }();
  r.critical_values[0.05] = cv;
  r.decision_at_5pct = r.statistic > cv;
  return r;
}

/// Sample moments with serial-correlation-robust tests of symmetry, normal
/// kurtosis and joint normality. Long-run variances use a Bartlett kernel
/// with lag floor(4 (T/100)^{2/9}).
struct MomentTests {
  double mean = 0.0;
  double sd = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;
  double skew_stat = 0.0, skew_p = 1.0;
  double kurt_stat = 0.0, kurt_p = 1.0;
  double normality_stat = 0.0, normality_p = 1.0;
  int hac_lags = 0;
};

inline MomentTests moment_tests(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  if (n < 100)
    throw ValidationError("moment_tests: robust variants need at least 100 observations");

  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mu;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 <= 0.0) throw DegenerateDataError("moment_tests: zero variance");

  MomentTests out;
  out.mean = mu;
  out.sd = std::sqrt(m2 * n / (n - 1.0));
  out.skewness = m3 / std::pow(m2, 1.5);
  out.kurtosis = m4 / (m2 * m2);
  out.hac_lags = static_cast<int>(std::floor(4.0 * std::pow(n / 100.0, 2.0 / 9.0)));

  auto bartlett_lrv = [&](const std::vector<double>& z) {
    double zbar = 0.0;
    for (double v : z) zbar += v;
    zbar /= z.size();
    const int L = out.hac_lags;
    double lrv = 0.0;
    for (int k = 0; k <= L; ++k) {
      double g = 0.0;
      for (std::size_t t = k; t < z.size(); ++t) g += (z[t] - zbar) * (z[t - k] - zbar);
      g /= static_cast<double>(z.size());
      lrv += (k == 0) ? g : 2.0 * (1.0 - k / (L + 1.0)) * g;
    }
    // Guard against a non-PSD kernel estimate on short samples.
    return std::max(lrv, 1e-12 * m2 * m2 * m2);
  };

  // Influence series of the third and fourth centered moments, accounting
  // for the estimated mean and variance.
  std::vector<double> w(n), u(n);
  for (int t = 0; t < n; ++t) {
    const double d = x[t] - mu;
    w[t] = d * d * d - 3.0 * m2 * d;
    u[t] = d * d * d * d - 4.0 * m3 * d - 6.0 * m2 * (d * d - m2);
  }
  out.skew_stat = std::sqrt(static_cast<double>(n)) * m3 / std::sqrt(bartlett_lrv(w));
  out.kurt_stat =
      std::sqrt(static_cast<double>(n)) * (m4 - 3.0 * m2 * m2) / std::sqrt(bartlett_lrv(u));
  out.skew_p = prob::normal_pvalue_two_sided(out.skew_stat);
  out.kurt_p = prob::normal_pvalue_two_sided(out.kurt_stat);
  out.normality_stat = out.skew_stat * out.skew_stat + out.kurt_stat * out.kurt_stat;
  out.normality_p = prob::chi2_sf(out.normality_stat, 2);
  return out;
}

/// Simulates the Gaussian null of a test and tabulates upper-tail quantiles
/// at 10% / 5% / 1%. Reproducible: replication r uses the stream derive(r)
/// of the given seed, so the table does not depend on thread count.
inline CvTable mc_critical_values(CvTestKind kind, int T, int reps, std::uint64_t seed,
                                  int harmonic = 1, unsigned n_threads = 0) {
  if (reps < 1000) throw ValidationError("mc_critical_values: need at least 1000 replications");
  const bool seasonal = kind == CvTestKind::seasonal_freq || kind == CvTestKind::seasonal_group2;
  if (T < (seasonal ? 48 : 20)) throw ValidationError("mc_critical_values: T too small");

  std::vector<double> stats(reps);
  Rng root(seed);
  parallel_for(
      static_cast<std::size_t>(reps),
      [&](std::size_t r) {
        Rng rng = root.derive(r);
        std::vector<double> x(T);
        for (double& v : x) v = rng.normal();
        switch (kind) {
          case CvTestKind::rw: stats[r] = rw_test(x, false).statistic; break;
          case CvTestKind::rwd: stats[r] = rw_test(x, true).statistic; break;
          case CvTestKind::irw: stats[r] = irw_test(x).statistic; break;
          case CvTestKind::seasonal_freq:
            stats[r] = seasonal_cvm_test(x, SeasonalTarget::frequency(harmonic)).statistic;
            break;
          case CvTestKind::seasonal_group2:
            stats[r] = seasonal_cvm_test(x, SeasonalTarget::group_II()).statistic;
            break;
        }
      },
      n_threads);

  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double p) {  // linear interpolation between order stats
    const double pos = p * (reps - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - lo;
    return lo + 1 < stats.size() ? stats[lo] * (1.0 - frac) + stats[lo + 1] * frac
                                 : stats[lo];
  };

  CvTable t;
  t.kind = kind;
  t.harmonic = kind == CvTestKind::seasonal_freq ? harmonic : 0;
  t.sample_size = T;
  t.levels = {0.10, 0.05, 0.01};
  t.quantiles = {quantile(0.90), quantile(0.95), quantile(0.99)};
  t.replications = reps;
  t.seed = seed;
  return t;
}

}  // namespace ivts::stattests
