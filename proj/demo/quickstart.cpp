// End-to-end walkthrough of the library API: simulate one location's centre
// temperature, estimate the structural model, test the trend and seasonal
// components, and extract smoothed components.
//
// Build target: demo_quickstart (see demo/CMakeLists.txt). The same flow is
// available from the command line via `ivts simulate` + `ivts fit`.

#include <cstdio>

#include "ivts/estimation.hpp"
#include "ivts/stattests.hpp"
#include "ivts/structural.hpp"

int main() {
  namespace ss = ivts::statespace;
  namespace st = ivts::structural;
  namespace est = ivts::estimation;
  namespace sts = ivts::stattests;

  // A smooth stochastic trend with stochastic first-harmonic seasonality.
  const auto truth = st::FsBsmParams::univariate(1.0, 0.0, 1e-7, 3e-4, 1e-8);
  auto gen = st::build_fsbsm(truth);
  gen.a1(st::layout::level(1, 0)) = 15.0;
  gen.a1(st::layout::slope(1, 0)) = 0.003;
  gen.a1(st::layout::harmonic(1, 1)) = 6.0;
  const auto sim = ss::simulate(gen, 600, 42);
  std::printf("simulated %d months of centre temperature\n", sim.observations.rows());

  // Maximum likelihood fit of the full model.
  est::FitOptions opts;
  opts.multi_start = 2;
  const auto fit = est::fit_ml(est::FsBsmTemplate::univariate(), sim.observations, opts);
  std::printf("loglik %.2f (converged: %s)\n", fit.loglik, fit.converged ? "yes" : "no");
  std::printf("  sigma2_eps  %.4g\n", fit.params.irregular_cov(0, 0));
  std::printf("  sigma2_eta  %.4g\n", fit.params.level_cov(0, 0));
  std::printf("  sigma2_zeta %.4g\n", fit.params.slope_cov(0, 0));

  // Components with uncertainty bands.
  const auto spec = st::build_fsbsm(fit.params);
  const auto cs = st::extract_components(spec, fit.params, sim.observations);
  const int last = sim.observations.rows() - 1;
  std::printf("terminal trend %.3f (se %.3f), slope %.5f (se %.5f)\n", cs.trend(last, 0),
              cs.trend_se(last, 0), cs.slope(last, 0), cs.slope_se(last, 0));

  // Is the trend deterministic? Is the seasonal pattern fixed?
  const auto deseas = st::deseasonalize(sim.observations, spec, fit.params);
  std::vector<double> x(deseas.values.col(0).data(),
                        deseas.values.col(0).data() + deseas.rows());
  const auto irw = sts::irw_test(x);
  std::printf("smooth-trend test: %.4f (5%% cv %.4f) -> %s\n", irw.statistic,
              irw.critical_values.at(0.05), irw.decision_at_5pct ? "stochastic" : "deterministic");

  std::vector<double> raw(sim.observations.values.col(0).data(),
                          sim.observations.values.col(0).data() + 600);
  const auto h0i = sts::seasonal_cvm_test(raw, sts::SeasonalTarget::frequency(1));
  std::printf("seasonal test (harmonic 1): %.4f -> %s\n", h0i.statistic,
              h0i.decision_at_5pct ? "stochastic" : "deterministic");
  return 0;
}
