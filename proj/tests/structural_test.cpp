#include "ivts/structural.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ivts/rng.hpp"

namespace ss = ivts::statespace;
namespace st = ivts::structural;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double correlation(const VectorXd& a, const VectorXd& b) {
  const VectorXd x = a.array() - a.mean();
  const VectorXd y = b.array() - b.mean();
  return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

ss::ObservationPanel univariate_panel(const VectorXd& x) {
  ss::ObservationPanel p;
  p.values = x;
  return p;
}

}  // namespace

TEST(BuildFsBsm, BivariateDimensions) {
  const auto params = st::FsBsmParams::bivariate(
      Eigen::Matrix2d::Identity(), 0.1 * Eigen::Matrix2d::Identity(),
      0.01 * Eigen::Matrix2d::Identity(), 0.001 * Eigen::Matrix2d::Identity(),
      0.0001 * Eigen::Matrix2d::Identity());
  const auto spec = st::build_fsbsm(params);
  EXPECT_EQ(spec.state_dim(), 26);
  EXPECT_EQ(spec.obs_dim(), 2);
}

TEST(BuildFsBsm, UnivariateDimensions) {
  const auto spec = st::build_fsbsm(st::FsBsmParams::univariate(1, 0.1, 0.01, 0.001, 0.0001));
  EXPECT_EQ(spec.state_dim(), 13);
  EXPECT_EQ(spec.obs_dim(), 1);
}

TEST(BuildFsBsm, BivariateMatricesEntryByEntry) {
  Eigen::Matrix2d eps, eta, zeta, om1, om2;
  eps << 1.3, 0.2, 0.2, 0.9;
  eta << 0.4, 0.1, 0.1, 0.3;
  zeta << 0.05, 0.01, 0.01, 0.04;
  om1 << 0.003, 0.001, 0.001, 0.002;
  om2 << 3e-4, 1e-4, 1e-4, 2e-4;
  const auto spec = st::build_fsbsm(st::FsBsmParams::bivariate(eps, eta, zeta, om1, om2));

  // Observation matrix: +1 on the two levels, -1 on every g (never g*).
  MatrixXd Zexp = MatrixXd::Zero(2, 26);
  Zexp(0, 0) = Zexp(1, 1) = 1.0;
  for (int j = 0; j < 6; ++j) {
    Zexp(0, 4 + 4 * j) = -1.0;
    Zexp(1, 5 + 4 * j) = -1.0;
  }
  EXPECT_LT((spec.Z - Zexp).cwiseAbs().maxCoeff(), 1e-15);

  // Trend block of the transition.
  EXPECT_DOUBLE_EQ(spec.T(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(spec.T(0, 2), 1.0);
  EXPECT_DOUBLE_EQ(spec.T(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(spec.T(1, 3), 1.0);
  EXPECT_DOUBLE_EQ(spec.T(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(spec.T(0, 1), 0.0);

  // Rotation blocks are orthonormal and use lambda_j = pi j / 6.
  for (int j = 1; j <= 5; ++j) {
    const int base = 4 + (j - 1) * 4;
    const MatrixXd R = spec.T.block(base, base, 4, 4);
    EXPECT_LT((R.transpose() * R - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(spec.T(base, base), std::cos(M_PI * j / 6.0), 1e-15);
    EXPECT_NEAR(spec.T(base, base + 2), std::sin(M_PI * j / 6.0), 1e-15);
    EXPECT_NEAR(spec.T(base + 2, base), -std::sin(M_PI * j / 6.0), 1e-15);
  }
  // Last harmonic: cos(pi) = -1 on a bare g pair.
  EXPECT_DOUBLE_EQ(spec.T(24, 24), -1.0);
  EXPECT_DOUBLE_EQ(spec.T(25, 25), -1.0);

  EXPECT_LT((spec.H - eps).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((spec.Q.block(0, 0, 2, 2) - eta).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((spec.Q.block(2, 2, 2, 2) - zeta).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((spec.Q.block(4, 4, 2, 2) - om1).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((spec.Q.block(6, 6, 2, 2) - om1).cwiseAbs().maxCoeff(), 1e-15);
  for (int j = 2; j <= 5; ++j) {
    const int base = 4 + (j - 1) * 4;
    EXPECT_LT((spec.Q.block(base, base, 2, 2) - om2).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((spec.Q.block(base + 2, base + 2, 2, 2) - om2).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_LT((spec.Q.block(24, 24, 2, 2) - om2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BuildFsBsm, LastHarmonicAlternatesSignMonthly) {
  auto spec = st::build_fsbsm(st::FsBsmParams::univariate(0, 0, 0, 0, 0));
  const int g6 = st::layout::harmonic(1, 6);
  spec.diffuse.assign(13, false);
  spec.a1(g6) = 1.0;
  const auto sim = ss::simulate(spec, 6, 1);
  for (int t = 0; t < 6; ++t)
    EXPECT_NEAR(sim.states(t, g6), (t % 2 == 0) ? 1.0 : -1.0, 1e-14);
}

TEST(BuildFsBsm, RejectsInvalidParams) {
  auto p = st::FsBsmParams::univariate(-1.0, 0, 0, 0, 0);
  EXPECT_THROW(st::build_fsbsm(p), ivts::ValidationError);
}

TEST(ExtractComponents, DegenerateFitOnConstantData) {
  // No state or measurement noise, constant observations: trend carries
  // everything, seasonal and irregular vanish.
  const auto params = st::FsBsmParams::univariate(1e-6, 0, 0, 0, 0);
  const auto spec = st::build_fsbsm(params);
  ss::ObservationPanel data = univariate_panel(VectorXd::Constant(60, 3.0));
  const auto cs = st::extract_components(spec, params, data);
  for (int t = 20; t < 60; ++t) {
    EXPECT_NEAR(cs.trend(t, 0), 3.0, 1e-4);
    EXPECT_NEAR(cs.seasonal(t, 0), 0.0, 1e-4);
    EXPECT_NEAR(cs.irregular(t, 0), 0.0, 1e-4);
  }
}

TEST(ExtractComponents, AdditiveDecompositionIsExact) {
  const auto params = st::FsBsmParams::univariate(1.0, 1e-8, 1e-7, 3e-4, 1e-6);
  const auto spec = st::build_fsbsm(params);
  const auto sim = ss::simulate(spec, 240, 17);
  const auto cs = st::extract_components(spec, params, sim.observations);
  for (int t = 0; t < 240; ++t) {
    const double reconstructed = cs.trend(t, 0) + cs.seasonal(t, 0) + cs.irregular(t, 0);
    EXPECT_NEAR(reconstructed, sim.observations.values(t, 0), 1e-8);
  }
}

TEST(ExtractComponents, RecoversSimulatedTrend) {
  const auto params = st::FsBsmParams::univariate(1.0, 0.0, 1e-6, 3e-4, 1e-7);
  auto spec = st::build_fsbsm(params);
  spec.a1(st::layout::level(1, 0)) = 15.0;
  spec.a1(st::layout::slope(1, 0)) = 0.003;
  spec.a1(st::layout::harmonic(1, 1)) = 2.0;
  const auto sim = ss::simulate(spec, 600, 91);

  const auto fit_spec = st::build_fsbsm(params);
  const auto cs = st::extract_components(fit_spec, params, sim.observations);
  const VectorXd truth = sim.states.col(st::layout::level(1, 0));
  EXPECT_GT(correlation(cs.trend.col(0), truth), 0.95);
}

TEST(ExtractComponents, TerminalValuesHaveStandardErrors) {
  const auto params = st::FsBsmParams::univariate(1.0, 0.0, 1e-7, 3e-4, 1e-7);
  const auto spec = st::build_fsbsm(params);
  const auto sim = ss::simulate(spec, 120, 5);
  const auto cs = st::extract_components(spec, params, sim.observations);
  const int last = 119;
  EXPECT_TRUE(std::isfinite(cs.trend(last, 0)));
  EXPECT_GT(cs.trend_se(last, 0), 0.0);
  EXPECT_TRUE(std::isfinite(cs.slope(last, 0)));
  EXPECT_GT(cs.slope_se(last, 0), 0.0);
}

TEST(ExtractComponents, ConstantSlopeWhenSlopeVarianceZero) {
  const auto params = st::FsBsmParams::univariate(1.0, 0.01, 0.0, 1e-4, 1e-7);
  auto gen_spec = st::build_fsbsm(params);
  gen_spec.a1(st::layout::slope(1, 0)) = 0.02;
  const auto sim = ss::simulate(gen_spec, 300, 23);
  const auto cs =
      st::extract_components(st::build_fsbsm(params), params, sim.observations);
  const double b0 = cs.slope(0, 0);
  for (int t = 1; t < 300; ++t) EXPECT_NEAR(cs.slope(t, 0), b0, 1e-6);
}

TEST(ExtractComponents, DeterministicSeasonalSumsToZeroOverYear) {
  // Deterministic seasonal fit on a pure sinusoid: any 12 consecutive
  // smoothed seasonal values cancel.
  const auto params = st::FsBsmParams::univariate(0.01, 0, 0, 0, 0);
  const auto spec = st::build_fsbsm(params);
  VectorXd x(120);
  for (int t = 0; t < 120; ++t)
    x(t) = 5.0 + 2.0 * std::sin(M_PI * (t + 1) / 6.0) + 0.7 * std::cos(M_PI * (t + 1) / 3.0);
  const auto cs = st::extract_components(spec, params, univariate_panel(x));
  for (int t = 36; t + 12 <= 120; ++t) {
    double s = 0.0;
    for (int k = 0; k < 12; ++k) s += cs.seasonal(t + k, 0);
    EXPECT_NEAR(s, 0.0, 1e-4);
  }
}

TEST(Deseasonalize, NoSeasonalityPassesThrough) {
  const auto params = st::FsBsmParams::univariate(0.5, 0.01, 0.0, 0.0, 0.0);
  auto spec = st::build_fsbsm(params);
  // Pin all seasonal states to exactly zero.
  for (int j = 1; j <= 6; ++j) {
    const int base = st::layout::harmonic(1, j);
    spec.diffuse[base] = false;
    if (j < 6) spec.diffuse[base + 1] = false;
  }
  ivts::Rng rng(13);
  VectorXd x(100);
  for (int t = 0; t < 100; ++t) x(t) = 10.0 + rng.normal();
  const auto data = univariate_panel(x);
  const auto out = st::deseasonalize(data, spec, params);
  EXPECT_LT((out.values - data.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Deseasonalize, RemovesDeterministicSinusoid) {
  const auto params = st::FsBsmParams::univariate(0.01, 0, 0, 0, 0);
  const auto spec = st::build_fsbsm(params);
  VectorXd x(120);
  for (int t = 0; t < 120; ++t) x(t) = 5.0 + 2.0 * std::sin(M_PI * (t + 1) / 6.0);
  const auto out = st::deseasonalize(univariate_panel(x), spec, params);
  for (int t = 24; t < 120; ++t)
    EXPECT_LT(std::fabs(out.values(t, 0) - 5.0), 0.1);  // < 5% of amplitude 2
}

TEST(Deseasonalize, KillsLag12AutocorrelationOfDifferences) {
  const auto params = st::FsBsmParams::univariate(1.0, 0.0, 1e-7, 3e-4, 1e-7);
  auto gen_spec = st::build_fsbsm(params);
  gen_spec.a1(st::layout::harmonic(1, 1)) = 4.0;
  gen_spec.a1(st::layout::harmonic(1, 2)) = 1.5;
  const auto sim = ss::simulate(gen_spec, 600, 7);

  auto lag12_corr_of_diff = [](const VectorXd& v) {
    VectorXd d(v.size() - 1);
    for (int t = 0; t + 1 < v.size(); ++t) d(t) = v(t + 1) - v(t);
    const int n = static_cast<int>(d.size());
    const double mu = d.mean();
    double num = 0.0, den = 0.0;
    for (int t = 0; t < n; ++t) den += (d(t) - mu) * (d(t) - mu);
    for (int t = 12; t < n; ++t) num += (d(t) - mu) * (d(t - 12) - mu);
    return num / den;
  };

  const VectorXd before = sim.observations.values.col(0);
  const auto out = st::deseasonalize(sim.observations, st::build_fsbsm(params), params);
  const VectorXd after = out.values.col(0).tail(560);  // drop filter burn-in

  EXPECT_GT(lag12_corr_of_diff(before), 0.6);
  EXPECT_LT(lag12_corr_of_diff(after), 0.2);
}

TEST(StructuralInvariant, DeterministicLimitMatchesOlsRegression) {
  // With all state variances at zero the smoothed fit is least squares on
  // intercept + time + 11 trigonometric seasonal columns, so the model
  // residual must be perfectly correlated with the OLS residual. The filter
  // innovations are recursive residuals and only approach them.
  const auto params = st::FsBsmParams::univariate(1.0, 0, 0, 0, 0);
  auto gen_spec = st::build_fsbsm(params);
  gen_spec.a1(st::layout::level(1, 0)) = 10.0;
  gen_spec.a1(st::layout::slope(1, 0)) = 0.01;
  gen_spec.a1(st::layout::harmonic(1, 1)) = 2.0;
  gen_spec.a1(st::layout::harmonic(1, 3)) = 0.8;
  const auto sim = ss::simulate(gen_spec, 1092, 33);
  const VectorXd y = sim.observations.values.col(0);
  const int n = static_cast<int>(y.size());

  MatrixXd X(n, 13);
  for (int t = 0; t < n; ++t) {
    const double tau = t + 1.0;
    X(t, 0) = 1.0;
    X(t, 1) = tau;
    int c = 2;
    for (int j = 1; j <= 5; ++j) {
      X(t, c++) = std::cos(M_PI * j * tau / 6.0);
      X(t, c++) = std::sin(M_PI * j * tau / 6.0);
    }
    X(t, 12) = std::cos(M_PI * tau);
  }
  const VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  const VectorXd ols_resid = y - X * beta;

  const auto fit_spec = st::build_fsbsm(params);
  const auto cs = st::extract_components(fit_spec, params, sim.observations);
  EXPECT_GT(std::fabs(correlation(cs.irregular.col(0), ols_resid)), 0.999);

  const auto filt = ss::kalman_filter(fit_spec, sim.observations);
  const int burn = 13;
  VectorXd innov(n - burn), resid(n - burn);
  for (int t = burn; t < n; ++t) {
    innov(t - burn) = filt.innovation[t](0);
    resid(t - burn) = ols_resid(t);
  }
  EXPECT_GT(std::fabs(correlation(innov, resid)), 0.95);
}
