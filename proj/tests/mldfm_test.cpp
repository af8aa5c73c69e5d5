#include "ivts/mldfm.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ivts/rng.hpp"
#include "ivts/stattests.hpp"
#include "support/oracle.hpp"

namespace ss = ivts::statespace;
namespace mdf = ivts::mldfm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double correlation(const VectorXd& a, const VectorXd& b) {
  const VectorXd x = a.array() - a.mean();
  const VectorXd y = b.array() - b.mean();
  return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

struct PlantedPanel {
  ss::ObservationPanel obs;
  VectorXd global;          // true global factor path
  MatrixXd regional;        // true regional factor paths
  std::vector<int> regions;
};

/// Simulates an ML-DFM panel through the assembled state-space form.
PlantedPanel simulate_panel(int N, int R, int T, std::uint64_t seed,
                            mdf::GlobalDynamics g = mdf::GlobalDynamics::integrated_random_walk,
                            double slope_noise = 4e-6, double idio = 0.25) {
  ivts::Rng rng(seed);
  mdf::MlDfmSpec spec;
  spec.global = g;
  spec.region_of.resize(N);
  for (int i = 0; i < N; ++i) spec.region_of[i] = i % R;
  spec.loadings = MatrixXd::Zero(N, 1 + R);
  for (int i = 0; i < N; ++i) {
    spec.loadings(i, 0) = 0.8 + 0.4 * rng.uniform();
    spec.loadings(i, 1 + spec.region_of[i]) = 0.6 + 0.3 * rng.uniform();
  }
  spec.slope_noise_var = slope_noise;
  spec.ar_coef.resize(R);
  spec.ar_noise_var.resize(R);
  for (int r = 0; r < R; ++r) {
    spec.ar_coef(r) = 0.45 + 0.08 * r;
    spec.ar_noise_var(r) = 0.5;
  }
  spec.idio_var = VectorXd::Constant(N, idio);
  spec.series_mean = VectorXd::Zero(N);
  spec.series_scale = VectorXd::Ones(N);

  const auto sim = ss::simulate(mdf::assemble_ssm(spec), T, seed);
  PlantedPanel out;
  out.obs = sim.observations;
  const int gdim = g == mdf::GlobalDynamics::integrated_random_walk ? 2 : 1;
  out.global = sim.states.col(0);
  out.regional.resize(T, R);
  for (int r = 0; r < R; ++r) out.regional.col(r) = sim.states.col(gdim + r);
  out.regions = spec.region_of;
  return out;
}

}  // namespace

TEST(PcExtract, IdenticalSeriesGiveEqualLoadings) {
  ss::ObservationPanel y;
  ivts::Rng rng(4);
  VectorXd f(100);
  for (int t = 0; t < 100; ++t) f(t) = std::sin(0.1 * t) + 0.3 * rng.normal();
  y.values.resize(100, 4);
  for (int j = 0; j < 4; ++j) y.values.col(j) = f;
  const auto pc = mdf::pc_extract(y, true);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(pc.loadings(j), 1.0, 1e-10);
  EXPECT_GT(correlation(pc.factor, f), 0.999999);
}

TEST(PcExtract, RecoversPlantedFactor) {
  ivts::Rng rng(9);
  const int N = 20, T = 300;
  VectorXd f(T), load(N);
  double cum = 0.0;
  for (int t = 0; t < T; ++t) {
    cum += 0.1 * rng.normal();
    f(t) = cum;
  }
  for (int i = 0; i < N; ++i) load(i) = 0.5 + rng.uniform();
  ss::ObservationPanel y;
  y.values.resize(T, N);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) y.values(t, i) = load(i) * f(t) + 0.05 * rng.normal();
  const auto pc = mdf::pc_extract(y, false);
  EXPECT_GT(std::fabs(correlation(pc.factor, f)), 0.99);
}

TEST(PcExtract, SignConventionFollowsLoadings) {
  ivts::Rng rng(2);
  ss::ObservationPanel y;
  y.values.resize(120, 5);
  VectorXd f(120);
  for (int t = 0; t < 120; ++t) f(t) = rng.normal() + 0.02 * t;
  for (int j = 0; j < 5; ++j)
    for (int t = 0; t < 120; ++t) y.values(t, j) = (0.7 + 0.1 * j) * f(t) + 0.1 * rng.normal();

  const auto pc = mdf::pc_extract(y, false);
  ss::ObservationPanel flipped;
  flipped.values = -y.values;
  const auto pcf = mdf::pc_extract(flipped, false);

  EXPECT_GT(pc.loadings.mean(), 0.0);
  EXPECT_GT(pcf.loadings.mean(), 0.0);  // loadings stay mean-positive
  EXPECT_LT(correlation(pc.factor, pcf.factor), -0.999999);  // the factor flips
}

TEST(PcExtract, RejectsMissingAndConstantSeries) {
  ss::ObservationPanel y;
  y.values.resize(50, 2);
  y.values.setRandom();
  y.values(3, 1) = ivts::missing_value();
  EXPECT_THROW(mdf::pc_extract(y, true), ivts::ValidationError);
  y.values(3, 1) = 0.0;
  y.values.col(0).setConstant(2.0);
  EXPECT_THROW(mdf::pc_extract(y, true), ivts::ValidationError);
}

TEST(TwoStepEstimate, RecoversPaperScalePanel) {
  const auto panel = simulate_panel(68, 5, 1092, 31);
  const auto spec = mdf::two_step_estimate(panel.obs, panel.regions);
  EXPECT_EQ(spec.n_series(), 68);
  EXPECT_EQ(spec.n_regions(), 5);

  // Zero pattern enforced exactly.
  for (int i = 0; i < 68; ++i)
    for (int r = 0; r < 5; ++r)
      if (r != panel.regions[i]) EXPECT_EQ(spec.loadings(i, 1 + r), 0.0);

  for (int r = 0; r < 5; ++r) {
    EXPECT_NEAR(spec.ar_coef(r), 0.45 + 0.08 * r, 0.1);
  }
  const auto fe = mdf::extract_factors(spec, panel.obs);
  EXPECT_GT(std::fabs(correlation(fe.global, panel.global)), 0.98);
  for (int r = 0; r < 5; ++r)
    EXPECT_GT(std::fabs(correlation(fe.regional.col(r), panel.regional.col(r))), 0.9);
}

TEST(TwoStepEstimate, SingleRegionDegeneratesToTwoFactors) {
  const auto panel = simulate_panel(12, 1, 400, 8);
  const auto spec = mdf::two_step_estimate(panel.obs, panel.regions);
  EXPECT_EQ(spec.n_regions(), 1);
  EXPECT_EQ(spec.loadings.cols(), 2);
  EXPECT_GT(spec.loadings.col(0).mean(), 0.0);
}

TEST(TwoStepEstimate, RegionWithOneSeriesIsRejected) {
  const auto panel = simulate_panel(5, 2, 200, 3);
  std::vector<int> bad = panel.regions;
  for (auto& r : bad) r = 0;
  bad[4] = 1;  // region 1 has a single member
  EXPECT_THROW(mdf::two_step_estimate(panel.obs, bad), ivts::ValidationError);
}

TEST(TwoStepEstimate, RegionalFactorsOrthogonalToGlobal) {
  const auto panel = simulate_panel(24, 3, 500, 12);
  const auto spec = mdf::two_step_estimate(panel.obs, panel.regions);
  // Re-derive the PC factors the way the estimator does.
  Eigen::MatrixXd x(panel.obs.rows(), 24);
  for (int j = 0; j < 24; ++j)
    x.col(j) = (panel.obs.values.col(j).array() - spec.series_mean(j)) / spec.series_scale(j);
  const auto global_pc = mdf::detail::first_pc(x);
  Eigen::MatrixXd resid = x - global_pc.factor * global_pc.loadings.transpose();
  for (int r = 0; r < 3; ++r) {
    std::vector<int> idx;
    for (int i = 0; i < 24; ++i)
      if (panel.regions[i] == r) idx.push_back(i);
    Eigen::MatrixXd sub(x.rows(), idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) sub.col(c) = resid.col(idx[c]);
    const auto pc = mdf::detail::first_pc(sub);
    const double dot = std::fabs(pc.factor.dot(global_pc.factor));
    EXPECT_LT(dot / (pc.factor.norm() * global_pc.factor.norm() + 1e-300), 1e-8);
  }
}

TEST(AssembleSsm, StateDimensionIsGlobalBlockPlusRegions) {
  const auto panel = simulate_panel(15, 5, 120, 5);
  const auto spec = mdf::two_step_estimate(panel.obs, panel.regions);
  EXPECT_EQ(mdf::assemble_ssm(spec).state_dim(), 7);

  const auto panel_rw = simulate_panel(15, 5, 120, 6, mdf::GlobalDynamics::random_walk);
  const auto spec_rw =
      mdf::two_step_estimate(panel_rw.obs, panel_rw.regions, mdf::GlobalDynamics::random_walk);
  EXPECT_EQ(mdf::assemble_ssm(spec_rw).state_dim(), 6);
}

TEST(AssembleSsm, NoiselessFactorsAreDeterministicPaths) {
  mdf::MlDfmSpec spec;
  spec.region_of = {0, 0, 1, 1};
  spec.loadings = MatrixXd::Zero(4, 3);
  spec.loadings.col(0).setConstant(1.0);
  spec.loadings(0, 1) = spec.loadings(1, 1) = 0.8;
  spec.loadings(2, 2) = spec.loadings(3, 2) = 0.8;
  spec.slope_noise_var = 0.0;
  spec.ar_coef = VectorXd::Constant(2, 0.6);
  spec.ar_noise_var = VectorXd::Zero(2);
  spec.idio_var = VectorXd::Constant(4, 0.01);
  spec.series_mean = VectorXd::Zero(4);
  spec.series_scale = VectorXd::Ones(4);

  ivts::Rng rng(17);
  ss::ObservationPanel y;
  y.values.resize(60, 4);
  for (int t = 0; t < 60; ++t)
    for (int j = 0; j < 4; ++j) y.values(t, j) = 0.5 + 0.01 * t + 0.1 * rng.normal();

  const auto fe = mdf::extract_factors(spec, y);
  for (int t = 2; t < 60; ++t) {
    const double second_diff = fe.global(t) - 2.0 * fe.global(t - 1) + fe.global(t - 2);
    EXPECT_NEAR(second_diff, 0.0, 1e-6);  // exactly linear global path
  }
  EXPECT_LT(fe.regional.cwiseAbs().maxCoeff(), 1e-9);  // pinned at the stationary prior
}

TEST(AssembleSsm, LoglikMatchesBruteForceJointGaussian) {
  mdf::MlDfmSpec spec;
  spec.region_of = {0, 0, 0};
  spec.loadings = MatrixXd::Zero(3, 2);
  spec.loadings << 1.0, 0.9, 1.1, 0.7, 0.8, 1.2;
  spec.slope_noise_var = 0.05;
  spec.ar_coef = VectorXd::Constant(1, 0.6);
  spec.ar_noise_var = VectorXd::Constant(1, 0.4);
  spec.idio_var = VectorXd::Constant(3, 0.3);
  spec.series_mean = VectorXd::Zero(3);
  spec.series_scale = VectorXd::Ones(3);

  auto ssm = mdf::assemble_ssm(spec);
  const auto sim = ss::simulate(ssm, 6, 77);

  // Exact check with a proper prior in place of the diffuse trend block.
  auto finite = ssm;
  finite.diffuse.assign(finite.state_dim(), false);
  finite.P1(0, 0) = 4.0;
  finite.P1(1, 1) = 1.0;
  EXPECT_NEAR(ss::loglikelihood(finite, sim.observations),
              oracle::loglik(finite, sim.observations), 1e-8);

  // Same check through the big-kappa diffuse prior; agreement is limited by
  // kappa-scale cancellation.
  EXPECT_NEAR(ss::loglikelihood(ssm, sim.observations),
              oracle::loglik(ssm, sim.observations), 1e-5);
}

TEST(ExtractFactors, IdiosyncraticOnlyPanelShrinksToPrior) {
  mdf::MlDfmSpec spec;
  spec.region_of = {0, 0, 1, 1};
  spec.loadings = MatrixXd::Zero(4, 3);
  spec.slope_noise_var = 1e-4;
  spec.ar_coef = VectorXd::Constant(2, 0.5);
  spec.ar_noise_var = VectorXd::Constant(2, 0.2);
  spec.idio_var = VectorXd::Constant(4, 1.0);
  spec.series_mean = VectorXd::Zero(4);
  spec.series_scale = VectorXd::Ones(4);

  ivts::Rng rng(23);
  ss::ObservationPanel y;
  y.values.resize(200, 4);
  for (int t = 0; t < 200; ++t)
    for (int j = 0; j < 4; ++j) y.values(t, j) = rng.normal();

  const auto fe = mdf::extract_factors(spec, y);
  EXPECT_LT(fe.global.cwiseAbs().maxCoeff(), 1e-9);  // zero loadings: no update
  EXPECT_LT(fe.variance_share.col(0).maxCoeff(), 0.05);
  EXPECT_LT(fe.variance_share.col(1).maxCoeff(), 0.05);
}

TEST(ExtractFactors, ZeroRegionalLoadingGivesZeroShare) {
  const auto panel = simulate_panel(8, 2, 300, 41);
  auto spec = mdf::two_step_estimate(panel.obs, panel.regions);
  spec.loadings(3, 1 + panel.regions[3]) = 0.0;
  const auto fe = mdf::extract_factors(spec, panel.obs);
  EXPECT_EQ(fe.variance_share(3, 1), 0.0);
}

TEST(MlDfmInvariant, GlobalFactorFromIrwPanelIsNonstationary) {
  // The extracted global factor of a panel with an integrated common trend
  // should fail the deterministic-trend test nearly always.
  int rejections = 0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    const auto panel = simulate_panel(20, 5, 400, 900 + r,
                                      mdf::GlobalDynamics::integrated_random_walk,
                                      /*slope_noise=*/1e-4);
    const auto spec = mdf::two_step_estimate(panel.obs, panel.regions);
    const auto fe = mdf::extract_factors(spec, panel.obs);
    std::vector<double> f(fe.global.data(), fe.global.data() + fe.global.size());
    if (ivts::stattests::rw_test(f, /*with_drift=*/true).decision_at_5pct) ++rejections;
  }
  EXPECT_GE(rejections, static_cast<int>(0.9 * reps));
}
