// Command-line driver for the interval temperature toolkit.
//
//   ivts fit            estimate structural models per location
//   ivts test           deterministic trend / seasonality tests
//   ivts deseasonalize  remove the filtered seasonal component
//   ivts cluster        correlation maps + complete-linkage clusters
//   ivts mldfm          multi-level dynamic factor model
//   ivts simulate       synthetic interval panel fixture
//   ivts mc-critvals    Monte Carlo critical value tables
//   ivts plotdata       polar / correlation / component band CSVs
//
// All artifacts embed the tool version, a configuration hash and the root
// seed; identical invocations reproduce identical files.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>

#include "ivts/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Interval-valued time series toolkit"};
  app.require_subcommand(1);

  ivts::pipeline::RunConfig cfg;
  if (const char* env = std::getenv("IVTS_OUTPUT_DIR")) cfg.output_dir = env;

  // Config file values become defaults; explicit flags override them.
  std::string config_file;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") config_file = argv[i + 1];
  }
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) {
      std::fprintf(stderr, "error: cannot open config file %s\n", config_file.c_str());
      return 1;
    }
    try {
      nlohmann::json j;
      in >> j;
      const std::string outdir = cfg.output_dir;
      cfg = ivts::pipeline::RunConfig::from_json(j);
      if (cfg.output_dir.empty()) cfg.output_dir = outdir;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: bad config file: %s\n", e.what());
      return 1;
    }
  }
  std::string config_file_sink;
  app.add_option("--config", config_file_sink, "JSON file with configuration defaults")
      ->check(CLI::ExistingFile);

  auto add_common = [&](CLI::App* cmd, bool needs_input) {
    if (needs_input)  // may also come from --config, so not marked required here
      cmd->add_option("-i,--input", cfg.input_path, "input panel CSV");
    cmd->add_option("-o,--output-dir", cfg.output_dir,
                    "artifact directory (default $IVTS_OUTPUT_DIR)");
    cmd->add_option("--seed", cfg.seed, "root seed for all randomness");
    cmd->add_option("--threads", cfg.n_threads, "worker threads (0 = hardware)");
    cmd->add_flag("-q{0},--quiet{0}", cfg.verbosity, "suppress log output");
  };
  auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("--trend", cfg.trend, "trend variant: full|rw|irw|deterministic");
    cmd->add_option("--seasonal", cfg.seasonal, "seasonal variant: two-group|deterministic");
    cmd->add_option("--starts", cfg.fit_starts, "multi-start count for the optimizer");
    cmd->add_option("--max-iter", cfg.fit_max_iter, "optimizer iteration cap");
    cmd->add_flag("--joint", cfg.joint, "fit the bivariate centre/log-range model");
  };

  auto* fit = app.add_subcommand("fit", "estimate structural models per location");
  add_common(fit, true);
  add_model(fit);

  auto* test = app.add_subcommand("test", "trend and seasonality tests per location");
  add_common(test, true);
  test->add_option("--mc-reps", cfg.mc_reps,
                   "simulate finite-sample critical values with this many replications");

  auto* deseas = app.add_subcommand("deseasonalize", "remove the filtered seasonal component");
  add_common(deseas, true);
  add_model(deseas);

  auto* cluster = app.add_subcommand("cluster", "correlation maps and cluster labels");
  add_common(cluster, true);
  cluster->add_option("--k-centre", cfg.k_centre, "clusters for centre temperature");
  cluster->add_option("--k-logrange", cfg.k_logrange, "clusters for log-range temperature");

  auto* mldfm = app.add_subcommand("mldfm", "multi-level dynamic factor model");
  add_common(mldfm, true);
  add_model(mldfm);
  mldfm->add_option("--mode", cfg.mode, "series to model: centre|logrange");
  mldfm->add_option("--regions", cfg.regions_file, "CSV location_id,region (1-based)");
  mldfm->add_option("-k,--clusters", cfg.k_clusters,
                    "cluster count when no regions file is given");
  mldfm->add_option("--global", cfg.global_dynamics, "global factor dynamics: auto|irw|rw");

  auto* sim = app.add_subcommand("simulate", "write a synthetic interval panel");
  add_common(sim, false);
  sim->add_option("-n,--locations", cfg.sim_locations, "number of locations");
  sim->add_option("-T,--months", cfg.sim_months, "number of months");

  auto* mc = app.add_subcommand("mc-critvals", "Monte Carlo critical value table");
  add_common(mc, false);
  mc->add_option("--test", cfg.cv_test, "rw|rwd|irw|seasonal|seasonal2");
  mc->add_option("-T,--sample-size", cfg.cv_sample_size, "series length of the null");
  mc->add_option("--harmonic", cfg.cv_harmonic, "harmonic for the seasonal test");
  mc->add_option("--mc-reps", cfg.mc_reps, "replications (default 20000)");

  auto* plot = app.add_subcommand("plotdata", "polar, correlation and band CSVs");
  add_common(plot, true);
  add_model(plot);

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.command = app.get_subcommands().front()->get_name();
    return ivts::pipeline::run(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
