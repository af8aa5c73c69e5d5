// Regenerates the built-in critical value tables (critical_values.hpp).
// Emits C++ array initializers on stdout; a maintenance utility, not part of
// the user-facing CLI.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "ivts/stattests.hpp"

using namespace ivts::stattests;

namespace {

struct KindSpec {
  const char* label;
  CvTestKind kind;
  int harmonic;
  int reps;
};

std::vector<double> simulate_stats(CvTestKind kind, int harmonic, int T, int reps,
                                   std::uint64_t seed) {
  std::vector<double> stats(reps);
  ivts::Rng root(seed);
  ivts::parallel_for(static_cast<std::size_t>(reps), [&](std::size_t r) {
    ivts::Rng rng = root.derive(r);
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
  });
  std::sort(stats.begin(), stats.end());
  return stats;
}

double quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * (sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - lo;
  return lo + 1 < sorted.size() ? sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
                                : sorted[lo];
}

}  // namespace

int main(int argc, char** argv) {
  const std::uint64_t seed = 20240801;
  const int fast = argc > 1 && std::string(argv[1]) == "--fast";
  const std::vector<int> grid = {100, 250, 500, 1000};

  const KindSpec kinds[] = {
      {"kRw", CvTestKind::rw, 0, fast ? 20000 : 200000},
      {"kRwd", CvTestKind::rwd, 0, fast ? 20000 : 200000},
      {"kIrw", CvTestKind::irw, 0, fast ? 20000 : 200000},
      {"kSeasonalDf2", CvTestKind::seasonal_freq, 1, fast ? 5000 : 50000},
      {"kSeasonalDf1", CvTestKind::seasonal_freq, 6, fast ? 5000 : 50000},
      {"kSeasonalDf9", CvTestKind::seasonal_group2, 0, fast ? 5000 : 50000},
  };

  for (const auto& k : kinds) {
    std::printf("inline constexpr std::array<CvRow, 4> %s = {{\n", k.label);
    std::vector<double> dense_at_1000;
    for (int T : grid) {
      const auto s = simulate_stats(k.kind, k.harmonic, T, k.reps, seed);
      std::printf("    {%d, %.4f, %.4f, %.4f},\n", T, quantile(s, 0.90), quantile(s, 0.95),
                  quantile(s, 0.99));
      std::fflush(stdout);
      if (T == 1000) {
        for (double tail : tables::kDenseTail) dense_at_1000.push_back(quantile(s, 1.0 - tail));
      }
    }
    std::printf("}};\n");
    std::printf("inline constexpr std::array<double, 11> %sDense = {", k.label);
    for (std::size_t i = 0; i < dense_at_1000.size(); ++i)
      std::printf("%s%.4f", i ? ", " : "", dense_at_1000[i]);
    std::printf("};\n\n");
    std::fflush(stdout);
  }
  return 0;
}
