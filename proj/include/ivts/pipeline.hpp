#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ivts/dataio.hpp"
#include "ivts/estimation.hpp"
#include "ivts/mldfm.hpp"
#include "ivts/stattests.hpp"
#include "ivts/structural.hpp"

// Command pipeline behind the CLI: ingest -> transform -> fit -> test ->
// deseasonalize -> cluster -> factor model -> export. Every artifact embeds
// the tool version, a hash of the resolved configuration and the root seed;
// identical configurations reproduce identical bytes. Logs go to stderr,
// artifacts to files only.

namespace ivts::pipeline {

using nlohmann::json;

struct RunConfig {
  std::string command;
  std::string input_path;
  std::string output_dir;

  // model options
  bool joint = false;                   // bivariate centre/log-range model
  std::string trend = "full";           // full | rw | irw | deterministic
  std::string seasonal = "two-group";   // two-group | deterministic
  int fit_starts = 3;
  int fit_max_iter = 500;

  // test options
  int mc_reps = 0;                      // > 0: replace builtin critical values
  std::uint64_t seed = 20240801;

  // dfm options
  std::string regions_file;             // CSV: location_id,region
  int k_clusters = 0;                   // auto-cluster when no regions file
  std::string mode = "centre";          // centre | logrange
  std::string global_dynamics = "auto"; // auto | irw | rw

  // cluster command
  int k_centre = 5;
  int k_logrange = 3;

  // simulate command
  int sim_locations = 4;
  int sim_months = 240;

  // mc-critvals command
  std::string cv_test = "rw";           // rw | rwd | irw | seasonal | seasonal2
  int cv_sample_size = 500;
  int cv_harmonic = 1;

  int verbosity = 1;
  unsigned n_threads = 0;

  json to_json() const {
    json j;
    j["command"] = command;
    j["input_path"] = input_path;
    j["joint"] = joint;
    j["trend"] = trend;
    j["seasonal"] = seasonal;
    j["fit_starts"] = fit_starts;
    j["fit_max_iter"] = fit_max_iter;
    j["mc_reps"] = mc_reps;
    j["seed"] = seed;
    j["regions_file"] = regions_file;
    j["k_clusters"] = k_clusters;
    j["mode"] = mode;
    j["global_dynamics"] = global_dynamics;
    j["k_centre"] = k_centre;
    j["k_logrange"] = k_logrange;
    j["sim_locations"] = sim_locations;
    j["sim_months"] = sim_months;
    j["cv_test"] = cv_test;
    j["cv_sample_size"] = cv_sample_size;
    j["cv_harmonic"] = cv_harmonic;
    return j;
  }

  std::string config_hash() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
  }

  static RunConfig from_json(const json& j) {
    RunConfig c;
    auto get = [&](const char* k, auto& into) {
      if (j.contains(k)) into = j.at(k).get<std::decay_t<decltype(into)>>();
    };
    get("command", c.command);
    get("input_path", c.input_path);
    get("output_dir", c.output_dir);
    get("joint", c.joint);
    get("trend", c.trend);
    get("seasonal", c.seasonal);
    get("fit_starts", c.fit_starts);
    get("fit_max_iter", c.fit_max_iter);
    get("mc_reps", c.mc_reps);
    get("seed", c.seed);
    get("regions_file", c.regions_file);
    get("k_clusters", c.k_clusters);
    get("mode", c.mode);
    get("global_dynamics", c.global_dynamics);
    get("k_centre", c.k_centre);
    get("k_logrange", c.k_logrange);
    get("sim_locations", c.sim_locations);
    get("sim_months", c.sim_months);
    get("cv_test", c.cv_test);
    get("cv_sample_size", c.cv_sample_size);
    get("cv_harmonic", c.cv_harmonic);
    get("verbosity", c.verbosity);
    return c;
  }
};

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void log(const RunConfig& cfg, int level, const std::string& msg) {
  if (cfg.verbosity >= level) std::fprintf(stderr, "[ivts] %s\n", msg.c_str());
}

/// Table 2 style significance stars at the 10 / 5 / 1 percent levels.
inline std::string stars(const stattests::TestResult& r) {
  auto cv = [&](double level) {
    const auto it = r.critical_values.find(level);
    return it == r.critical_values.end() ? std::numeric_limits<double>::infinity()
                                         : it->second;
  };
  if (r.statistic > cv(0.01)) return "***";
  if (r.statistic > cv(0.05)) return "**";
  if (r.statistic > cv(0.10)) return "*";
  return "";
}

/// Near-zero boundary estimates print as exact zeros in summaries.
inline double summarize_variance(double v, double eps_ref) {
  return v < 1e-8 * eps_ref ? 0.0 : v;
}

class ArtifactWriter {
 public:
  ArtifactWriter(const RunConfig& cfg) : cfg_(cfg) {
    if (cfg_.output_dir.empty())
      throw ValidationError("output directory not set (flag or IVTS_OUTPUT_DIR)");
    std::filesystem::create_directories(cfg_.output_dir);
  }

  std::string path(const std::string& name) const { return cfg_.output_dir + "/" + name; }

  void write_csv(const std::string& name, const std::string& header,
                 const std::vector<std::string>& rows) const {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path(name));
    out << "# ivts " << kVersion << " config=" << cfg_.config_hash() << " seed=" << cfg_.seed
        << "\n";
    out << header << "\n";
    for (const auto& r : rows) out << r << "\n";
  }

  void write_json(const std::string& name, json j) const {
    j["tool"] = "ivts";
    j["version"] = kVersion;
    j["config_hash"] = cfg_.config_hash();
    j["seed"] = cfg_.seed;
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path(name));
    out << j.dump(2) << "\n";
  }

 private:
  const RunConfig& cfg_;
};

inline estimation::FsBsmTemplate make_template(const RunConfig& cfg, bool bivariate) {
  estimation::TrendVariant tv;
  if (cfg.trend == "full") tv = estimation::TrendVariant::full;
  else if (cfg.trend == "rw") tv = estimation::TrendVariant::random_walk;
  else if (cfg.trend == "irw") tv = estimation::TrendVariant::integrated_random_walk;
  else if (cfg.trend == "deterministic") tv = estimation::TrendVariant::deterministic;
  else throw ValidationError("unknown trend variant '" + cfg.trend + "'");
  estimation::SeasonalVariant sv;
  if (cfg.seasonal == "two-group") sv = estimation::SeasonalVariant::two_group;
  else if (cfg.seasonal == "deterministic") sv = estimation::SeasonalVariant::deterministic;
  else throw ValidationError("unknown seasonal variant '" + cfg.seasonal + "'");
  return bivariate ? estimation::FsBsmTemplate::bivariate(tv, sv)
                   : estimation::FsBsmTemplate::univariate(tv, sv);
}

inline estimation::FitOptions make_fit_options(const RunConfig& cfg, std::uint64_t stream) {
  estimation::FitOptions o;
  o.multi_start = cfg.fit_starts;
  o.max_iter = cfg.fit_max_iter;
  o.seed = Rng(cfg.seed).derive(stream).next_u64();
  return o;
}

/// Extracts one location's series as a std::vector, skipping trailing and
/// leading missing values is deliberately not done: tests require complete
/// series and will reject gaps upstream.
inline std::vector<double> column(const statespace::ObservationPanel& p, int j) {
  return {p.values.col(j).data(), p.values.col(j).data() + p.rows()};
}

struct SeriesFitArtifacts {
  json table2;
  structural::ComponentSet components;
  bool ok = false;
  std::string error;
};

/// Fits one univariate series and assembles the Table-2 style record plus
/// smoothed components. Test statistics are computed on the deseasonalized
/// series (trend tests) and on the raw series with fitted nuisance variances
/// (seasonality tests).
inline SeriesFitArtifacts fit_one_series(const RunConfig& cfg, const std::vector<double>& x,
                                         std::uint64_t stream) {
  SeriesFitArtifacts out;
  try {
    statespace::ObservationPanel data;
    data.values = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<int>(x.size()));

    const auto tmpl = make_template(cfg, false);
    const auto fit = estimation::fit_ml(tmpl, data, make_fit_options(cfg, stream));
    const auto& p = fit.params;
    const auto spec = structural::build_fsbsm(p);
    out.components = structural::extract_components(spec, p, data);

    const auto rwd = stattests::rwd_test_fitted(p, x);
    const auto irw = stattests::irw_test_fitted(p, x);
    stattests::SeasonalTestOptions sopts;
    sopts.sigma2_eps = p.irregular_cov(0, 0);
    sopts.sigma2_eta = p.level_cov(0, 0);
    sopts.sigma2_zeta = p.slope_cov(0, 0);
    const auto h0i = stattests::seasonal_cvm_test(x, stattests::SeasonalTarget::frequency(1), sopts);
    const auto h0ii = stattests::seasonal_cvm_test(x, stattests::SeasonalTarget::group_II(), sopts);

    const double eps = p.irregular_cov(0, 0);
    const int last = static_cast<int>(x.size()) - 1;
    json& t = out.table2;
    t["sigma2_eps"] = eps;
    t["sigma2_eta"] = summarize_variance(p.level_cov(0, 0), eps);
    t["RWD"] = rwd.statistic;
    t["RWD_stars"] = stars(rwd);
    t["sigma2_zeta"] = summarize_variance(p.slope_cov(0, 0), eps);
    t["IRW"] = irw.statistic;
    t["IRW_stars"] = stars(irw);
    t["sigma2_omega_I"] = summarize_variance(p.seasonal_cov_I(0, 0), eps);
    t["H0I"] = h0i.statistic;
    t["H0I_stars"] = stars(h0i);
    t["sigma2_omega_II"] = summarize_variance(p.seasonal_cov_II(0, 0), eps);
    t["H0II"] = h0ii.statistic;
    t["H0II_stars"] = stars(h0ii);
    t["mu_T"] = out.components.trend(last, 0);
    t["mu_T_se"] = out.components.trend_se(last, 0);
    t["beta_T"] = out.components.slope(last, 0);
    t["beta_T_se"] = out.components.slope_se(last, 0);
    t["loglik"] = fit.loglik;
    t["converged"] = fit.converged;
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

inline void write_component_csvs(const ArtifactWriter& w, const std::string& prefix,
                                 const std::vector<statespace::YearMonth>& dates,
                                 const structural::ComponentSet& cs) {
  auto band_rows = [&](const Eigen::MatrixXd& est, const Eigen::MatrixXd& se) {
    std::vector<std::string> rows;
    for (int t = 0; t < est.rows(); ++t) {
      const double e = est(t, 0), s = se(t, 0);
      rows.push_back(dates[t].str() + "," + fmt(e) + "," + fmt(e - 1.96 * s) + "," +
                     fmt(e + 1.96 * s));
    }
    return rows;
  };
  w.write_csv(prefix + "_trend.csv", "date,estimate,lo95,hi95",
              band_rows(cs.trend, cs.trend_se));
  w.write_csv(prefix + "_slope.csv", "date,estimate,lo95,hi95",
              band_rows(cs.slope, cs.slope_se));
  w.write_csv(prefix + "_seasonal.csv", "date,estimate,lo95,hi95",
              band_rows(cs.seasonal, cs.seasonal_se));
}

/// Joint bivariate fit of one location's (centre, log-range) pair; the
/// record mirrors the per-block variance/covariance/correlation layout.
struct JointFitArtifacts {
  json record;
  structural::ComponentSet components;
  bool ok = false;
  std::string error;
};

inline JointFitArtifacts fit_joint_series(const RunConfig& cfg, const std::vector<double>& c,
                                          const std::vector<double>& r,
                                          std::uint64_t stream) {
  JointFitArtifacts out;
  try {
    const int n = static_cast<int>(c.size());
    statespace::ObservationPanel data;
    data.values.resize(n, 2);
    for (int t = 0; t < n; ++t) {
      data.values(t, 0) = c[t];
      data.values(t, 1) = r[t];
    }
    const auto tmpl = make_template(cfg, true);
    const auto fit = estimation::fit_ml(tmpl, data, make_fit_options(cfg, stream));
    const auto& p = fit.params;
    const auto spec = structural::build_fsbsm(p);
    out.components = structural::extract_components(spec, p, data);

    auto block = [](const Eigen::MatrixXd& M) {
      json b;
      b["centre"] = M(0, 0);
      b["logrange"] = M(1, 1);
      b["cov"] = M(0, 1);
      const double denom = std::sqrt(M(0, 0) * M(1, 1));
      b["corr"] = denom > 0 ? M(0, 1) / denom : 0.0;
      return b;
    };
    json& t = out.record;
    t["measurement"] = block(p.irregular_cov);
    t["level"] = block(p.level_cov);
    t["slope"] = block(p.slope_cov);
    t["seasonal_I"] = block(p.seasonal_cov_I);
    t["seasonal_II"] = block(p.seasonal_cov_II);
    const int last = n - 1;
    for (int i = 0; i < 2; ++i) {
      const char* key = i == 0 ? "centre" : "logrange";
      t["terminal"][key]["mu_T"] = out.components.trend(last, i);
      t["terminal"][key]["mu_T_se"] = out.components.trend_se(last, i);
      t["terminal"][key]["beta_T"] = out.components.slope(last, i);
      t["terminal"][key]["beta_T_se"] = out.components.slope_se(last, i);
    }
    t["loglik"] = fit.loglik;
    t["converged"] = fit.converged;
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

struct LoadedPanel {
  dataio::IntervalPanel panel;
  dataio::CentreLogRange clr;
};

inline LoadedPanel load_transformed(const RunConfig& cfg) {
  if (cfg.input_path.empty()) throw ValidationError("no input file given");
  LoadedPanel lp;
  lp.panel = dataio::load_panel(cfg.input_path);
  for (const auto& wmsg : lp.panel.warnings) log(cfg, 1, wmsg);
  lp.clr = dataio::to_centre_logrange(lp.panel);
  return lp;
}

}  // namespace detail

/// fit: per-location ML estimation of the structural model for centre and
/// log-range, Table-2 style JSON per location, component CSVs with 95%
/// bands, machine-readable summary. Soft per-location failures do not stop
/// the run; they are flagged in the summary.
inline int run_fit(const RunConfig& cfg) {
  const auto lp = detail::load_transformed(cfg);
  detail::ArtifactWriter w(cfg);
  const int N = lp.panel.n_locations();

  struct LocationResult {
    json record;
    bool ok = true;
    std::string error;
  };
  std::vector<LocationResult> results(N);

  parallel_for(
      static_cast<std::size_t>(N),
      [&](std::size_t j) {
        const auto& loc = lp.panel.locations[j];
        LocationResult& lr = results[j];
        lr.record["location"] = {{"id", loc.id}, {"name", loc.name}, {"lat", loc.lat},
                                 {"lon", loc.lon}};
        if (cfg.joint) {
          const auto res = detail::fit_joint_series(
              cfg, detail::column(lp.clr.centre, static_cast<int>(j)),
              detail::column(lp.clr.logrange, static_cast<int>(j)), j);
          if (!res.ok) {
            lr.ok = false;
            lr.error = res.error;
            return;
          }
          lr.record["joint"] = res.record;
          structural::ComponentSet split = res.components;
          for (const auto& [i, label] : {std::pair{0, "centre"}, std::pair{1, "logrange"}}) {
            structural::ComponentSet one;
            one.trend = split.trend.col(i);
            one.trend_se = split.trend_se.col(i);
            one.slope = split.slope.col(i);
            one.slope_se = split.slope_se.col(i);
            one.seasonal = split.seasonal.col(i);
            one.seasonal_se = split.seasonal_se.col(i);
            detail::write_component_csvs(w, loc.id + "_" + label, lp.panel.dates, one);
          }
          return;
        }
        const std::vector<std::pair<std::string, const statespace::ObservationPanel*>> kinds =
            {{"centre", &lp.clr.centre}, {"logrange", &lp.clr.logrange}};
        for (std::size_t k = 0; k < kinds.size(); ++k) {
          const auto x = detail::column(*kinds[k].second, static_cast<int>(j));
          const auto res = detail::fit_one_series(cfg, x, 2 * j + k);
          if (!res.ok) {
            lr.ok = false;
            lr.error += kinds[k].first + ": " + res.error + "; ";
            continue;
          }
          lr.record["series"][kinds[k].first] = res.table2;
          detail::write_component_csvs(w, loc.id + "_" + kinds[k].first, lp.panel.dates,
                                       res.components);
        }
      },
      cfg.n_threads);

  json summary;
  summary["n_locations"] = N;
  summary["failed_locations"] = json::array();
  for (int j = 0; j < N; ++j) {
    const auto& loc = lp.panel.locations[j];
    if (results[j].ok) {
      w.write_json("fit_" + loc.id + ".json", results[j].record);
    } else {
      detail::log(cfg, 0, "fit failed for " + loc.id + ": " + results[j].error);
      summary["failed_locations"].push_back({{"id", loc.id}, {"error", results[j].error}});
    }
  }
  w.write_json("fit_summary.json", summary);
  return 0;
}

/// test: stationarity and seasonality tests per location and series.
inline int run_test(const RunConfig& cfg) {
  const auto lp = detail::load_transformed(cfg);
  detail::ArtifactWriter w(cfg);

  // Optional Monte Carlo critical values at the panel's sample size.
  std::optional<stattests::CvTable> rw_tab, rwd_tab, irw_tab;
  if (cfg.mc_reps > 0) {
    const int T = lp.panel.n_months();
    rw_tab = stattests::mc_critical_values(stattests::CvTestKind::rw, T, cfg.mc_reps, cfg.seed,
                                           0, cfg.n_threads);
    rwd_tab = stattests::mc_critical_values(stattests::CvTestKind::rwd, T, cfg.mc_reps,
                                            cfg.seed, 0, cfg.n_threads);
    irw_tab = stattests::mc_critical_values(stattests::CvTestKind::irw, T, cfg.mc_reps,
                                            cfg.seed, 0, cfg.n_threads);
  }

  auto result_json = [](const stattests::TestResult& r) {
    json j;
    j["statistic"] = r.statistic;
    j["stars"] = detail::stars(r);
    j["reject_at_5pct"] = r.decision_at_5pct;
    if (r.df) j["df"] = *r.df;
    if (r.p_value) j["p_value"] = *r.p_value;
    for (const auto& [lvl, cv] : r.critical_values)
      j["critical_values"][detail::fmt(lvl)] = cv;
    return j;
  };

  json all;
  for (int j = 0; j < lp.panel.n_locations(); ++j) {
    const auto& loc = lp.panel.locations[j];
    for (const auto& [kind, panel] : {std::pair{"centre", &lp.clr.centre},
                                      std::pair{"logrange", &lp.clr.logrange}}) {
      const auto x = detail::column(*panel, j);
      json rec;
      rec["RW"] = result_json(stattests::rw_test(x, false, rw_tab));
      rec["RWD"] = result_json(stattests::rw_test(x, true, rwd_tab));
      rec["IRW"] = result_json(stattests::irw_test(x, irw_tab));
      rec["H0I"] =
          result_json(stattests::seasonal_cvm_test(x, stattests::SeasonalTarget::frequency(1)));
      rec["H0II"] =
          result_json(stattests::seasonal_cvm_test(x, stattests::SeasonalTarget::group_II()));
      const auto d = dataio::annual_descriptives(x);
      rec["annual_diff"] = {{"n", d.n}, {"mean", d.mean}, {"sd", d.sd},
                            {"degenerate", d.degenerate}};
      if (d.tests_available) {
        rec["annual_diff"]["skewness"] = d.moments.skewness;
        rec["annual_diff"]["skewness_p"] = d.moments.skew_p;
        rec["annual_diff"]["kurtosis"] = d.moments.kurtosis;
        rec["annual_diff"]["kurtosis_p"] = d.moments.kurt_p;
        rec["annual_diff"]["BN_p"] = d.moments.normality_p;
        rec["annual_diff"]["Q12_p"] = *d.q12.p_value;
      }
      all[loc.id][kind] = rec;
    }
  }
  w.write_json("tests.json", all);
  return 0;
}

/// deseasonalize: subtract the filtered seasonal component, per location.
inline int run_deseasonalize(const RunConfig& cfg) {
  const auto lp = detail::load_transformed(cfg);
  detail::ArtifactWriter w(cfg);
  const int N = lp.panel.n_locations();
  const int T = lp.panel.n_months();

  Eigen::MatrixXd centre_out(T, N), logrange_out(T, N);
  std::vector<std::string> failures(N);
  parallel_for(
      static_cast<std::size_t>(N),
      [&](std::size_t j) {
        for (const auto& [k, panel, out] :
             {std::tuple{0, &lp.clr.centre, &centre_out},
              std::tuple{1, &lp.clr.logrange, &logrange_out}}) {
          const auto x = detail::column(*panel, static_cast<int>(j));
          statespace::ObservationPanel data;
          data.values = Eigen::Map<const Eigen::VectorXd>(x.data(), T);
          try {
            const auto tmpl = detail::make_template(cfg, false);
            const auto fit =
                estimation::fit_ml(tmpl, data, detail::make_fit_options(cfg, 2 * j + k));
            const auto spec = structural::build_fsbsm(fit.params);
            out->col(j) = structural::deseasonalize(data, spec, fit.params).values.col(0);
          } catch (const std::exception& e) {
            failures[j] = e.what();
            out->col(j).setConstant(missing_value());
          }
        }
      },
      cfg.n_threads);

  std::vector<std::string> rows;
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < N; ++j)
      rows.push_back(lp.panel.locations[j].id + "," + lp.panel.dates[t].str() + "," +
                     detail::fmt(centre_out(t, j)) + "," + detail::fmt(logrange_out(t, j)));
  w.write_csv("deseasonalized.csv", "location_id,date,centre,logrange", rows);

  json summary;
  summary["failed_locations"] = json::array();
  for (int j = 0; j < N; ++j)
    if (!failures[j].empty())
      summary["failed_locations"].push_back(
          {{"id", lp.panel.locations[j].id}, {"error", failures[j]}});
  w.write_json("deseasonalize_summary.json", summary);
  return 0;
}

/// cluster: correlation matrices of centres and log-ranges across locations
/// and complete-linkage cluster labels at the configured counts.
inline int run_cluster(const RunConfig& cfg) {
  const auto lp = detail::load_transformed(cfg);
  detail::ArtifactWriter w(cfg);
  const int N = lp.panel.n_locations();

  auto emit = [&](const char* label, const Eigen::MatrixXd& series, int k) {
    const auto corr = dataio::correlation_matrix(series);
    std::string header = "location_id";
    for (int j = 0; j < N; ++j) header += "," + lp.panel.locations[j].id;
    std::vector<std::string> rows;
    for (int a = 0; a < N; ++a) {
      std::string r = lp.panel.locations[a].id;
      for (int b = 0; b < N; ++b) r += "," + detail::fmt(corr(a, b));
      rows.push_back(r);
    }
    w.write_csv(std::string("correlation_") + label + ".csv", header, rows);

    const auto cl = dataio::cluster_complete_linkage(corr, k);
    std::vector<std::string> crow;
    for (int j = 0; j < N; ++j)
      crow.push_back(lp.panel.locations[j].id + "," + std::to_string(cl.labels[j]));
    w.write_csv(std::string("clusters_") + label + ".csv", "location_id,cluster", crow);
  };
  emit("centre", lp.clr.centre.values, std::min(cfg.k_centre, N));
  emit("logrange", lp.clr.logrange.values, std::min(cfg.k_logrange, N));
  return 0;
}

/// mldfm: deseasonalize, standardize, cluster into regions unless a region
/// file is given, then two-step estimation and Kalman-smoothed factors.
inline int run_mldfm(const RunConfig& cfg) {
  const auto lp = detail::load_transformed(cfg);
  detail::ArtifactWriter w(cfg);
  const int N = lp.panel.n_locations();
  const int T = lp.panel.n_months();
  const bool centre_mode = cfg.mode == "centre";
  if (!centre_mode && cfg.mode != "logrange")
    throw ValidationError("mldfm: mode must be centre or logrange");
  const auto& series_panel = centre_mode ? lp.clr.centre : lp.clr.logrange;

  mldfm::GlobalDynamics global;
  if (cfg.global_dynamics == "auto")
    global = centre_mode ? mldfm::GlobalDynamics::integrated_random_walk
                         : mldfm::GlobalDynamics::random_walk;
  else if (cfg.global_dynamics == "irw")
    global = mldfm::GlobalDynamics::integrated_random_walk;
  else if (cfg.global_dynamics == "rw")
    global = mldfm::GlobalDynamics::random_walk;
  else
    throw ValidationError("mldfm: global dynamics must be auto, irw or rw");

  // Deseasonalize each location with the filtered seasonal component.
  detail::log(cfg, 1, "deseasonalizing " + std::to_string(N) + " locations");
  statespace::ObservationPanel deseas;
  deseas.values.resize(T, N);
  std::vector<std::string> failures;
  std::mutex mu;
  parallel_for(
      static_cast<std::size_t>(N),
      [&](std::size_t j) {
        const auto x = detail::column(series_panel, static_cast<int>(j));
        statespace::ObservationPanel data;
        data.values = Eigen::Map<const Eigen::VectorXd>(x.data(), T);
        try {
          const auto tmpl = detail::make_template(cfg, false);
          const auto fit = estimation::fit_ml(tmpl, data, detail::make_fit_options(cfg, j));
          const auto spec = structural::build_fsbsm(fit.params);
          deseas.values.col(j) = structural::deseasonalize(data, spec, fit.params).values.col(0);
        } catch (const std::exception& e) {
          std::scoped_lock lock(mu);
          failures.push_back(lp.panel.locations[j].id + ": " + e.what());
        }
      },
      cfg.n_threads);
  if (!failures.empty()) {
    for (const auto& f : failures) detail::log(cfg, 0, "deseasonalize failed: " + f);
    throw ValidationError("mldfm: deseasonalization failed for " +
                          std::to_string(failures.size()) + " location(s)");
  }

  // Region map: from a file or by clustering the deseasonalized series.
  std::vector<int> regions(N, -1);
  if (!cfg.regions_file.empty()) {
    std::ifstream in(cfg.regions_file);
    if (!in) throw ValidationError("cannot open regions file " + cfg.regions_file);
    std::map<std::string, int> by_id;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#' || line.rfind("location_id", 0) == 0) continue;
      const auto f = dataio::detail::split_csv_line(line);
      if (f.size() != 2) throw FormatError("regions file expects location_id,region", line_no);
      by_id[f[0]] = std::atoi(f[1].c_str()) - 1;
    }
    for (int j = 0; j < N; ++j) {
      const auto it = by_id.find(lp.panel.locations[j].id);
      if (it == by_id.end())
        throw ValidationError("regions file misses location " + lp.panel.locations[j].id);
      regions[j] = it->second;
    }
  } else if (cfg.k_clusters > 0) {
    const auto corr = dataio::correlation_matrix(deseas.values);
    const auto cl = dataio::cluster_complete_linkage(corr, cfg.k_clusters);
    for (int j = 0; j < N; ++j) regions[j] = cl.labels[j] - 1;
  } else {
    throw ValidationError("mldfm: provide a regions file or a cluster count k");
  }

  const auto spec = mldfm::two_step_estimate(deseas, regions, global);
  if (spec.phi_clipped) detail::log(cfg, 0, "warning: AR coefficient clipped at 0.999");
  const auto fe = mldfm::extract_factors(spec, deseas);
  const int R = spec.n_regions();

  // Factor paths.
  {
    std::string header = "date,global";
    const bool irw = global == mldfm::GlobalDynamics::integrated_random_walk;
    if (irw) header += ",global_slope";
    for (int r = 0; r < R; ++r) header += ",regional_" + std::to_string(r + 1);
    std::vector<std::string> rows;
    for (int t = 0; t < T; ++t) {
      std::string row = lp.panel.dates[t].str() + "," + detail::fmt(fe.global(t));
      if (irw) row += "," + detail::fmt(fe.global_slope(t));
      for (int r = 0; r < R; ++r) row += "," + detail::fmt(fe.regional(t, r));
      rows.push_back(row);
    }
    w.write_csv("factors.csv", header, rows);
  }

  // Loadings with coordinates, one row per location.
  {
    std::vector<std::string> rows;
    for (int j = 0; j < N; ++j) {
      const auto& loc = lp.panel.locations[j];
      rows.push_back(loc.id + "," + loc.name + "," + detail::fmt(loc.lat) + "," +
                     detail::fmt(loc.lon) + "," + std::to_string(regions[j] + 1) + "," +
                     detail::fmt(spec.loadings(j, 0)) + "," +
                     detail::fmt(spec.loadings(j, 1 + regions[j])));
    }
    w.write_csv("loadings.csv",
                "location_id,location_name,lat,lon,region,global_loading,regional_loading",
                rows);
  }

  // Variance shares.
  {
    std::vector<std::string> rows;
    for (int j = 0; j < N; ++j)
      rows.push_back(lp.panel.locations[j].id + "," + detail::fmt(fe.variance_share(j, 0)) +
                     "," + detail::fmt(fe.variance_share(j, 1)) + "," +
                     detail::fmt(fe.variance_share(j, 2)));
    w.write_csv("variance_shares.csv", "location_id,global,regional,idiosyncratic", rows);
  }

  json meta;
  meta["mode"] = cfg.mode;
  meta["global_dynamics"] =
      global == mldfm::GlobalDynamics::integrated_random_walk ? "irw" : "rw";
  meta["n_regions"] = R;
  meta["slope_noise_var"] = spec.slope_noise_var;
  for (int r = 0; r < R; ++r) {
    meta["regions"][r]["phi"] = spec.ar_coef(r);
    meta["regions"][r]["noise_var"] = spec.ar_noise_var(r);
  }
  meta["phi_clipped"] = spec.phi_clipped;
  for (int j = 0; j < N; ++j) {
    json& loc = meta["locations"][j];
    loc["id"] = lp.panel.locations[j].id;
    loc["region"] = regions[j] + 1;
    loc["global_loading"] = spec.loadings(j, 0);
    loc["regional_loading"] = spec.loadings(j, 1 + regions[j]);
    loc["idio_var"] = spec.idio_var(j);
    loc["share_global"] = fe.variance_share(j, 0);
    loc["share_regional"] = fe.variance_share(j, 1);
    loc["share_idiosyncratic"] = fe.variance_share(j, 2);
  }
  w.write_json("mldfm_summary.json", meta);
  return 0;
}

/// simulate: synthetic interval panel written in the canonical CSV format;
/// centres follow a smooth stochastic trend with stochastic seasonality,
/// log-ranges a stochastic level, so the fixture exercises the full model
/// surface.
inline int run_simulate(const RunConfig& cfg) {
  detail::ArtifactWriter w(cfg);
  if (cfg.sim_locations < 1 || cfg.sim_months < 24)
    throw ValidationError("simulate: need at least 1 location and 24 months");

  std::vector<std::string> rows;
  statespace::YearMonth start{1930, 1};
  for (int j = 0; j < cfg.sim_locations; ++j) {
    Rng rng = Rng(cfg.seed).derive(j);

    const auto centre_params =
        structural::FsBsmParams::univariate(1.0, 0.0, 1e-7, 3e-4, 1e-8);
    auto centre_spec = structural::build_fsbsm(centre_params);
    centre_spec.a1(structural::layout::level(1, 0)) = 12.0 + 6.0 * rng.uniform();
    centre_spec.a1(structural::layout::slope(1, 0)) = 0.002 + 0.002 * rng.uniform();
    centre_spec.a1(structural::layout::harmonic(1, 1)) = 6.0 + 2.0 * rng.uniform();
    const auto centre =
        statespace::simulate(centre_spec, cfg.sim_months, rng.next_u64());

    const auto range_params =
        structural::FsBsmParams::univariate(0.006, 3e-5, 0.0, 1e-6, 1e-9);
    auto range_spec = structural::build_fsbsm(range_params);
    range_spec.a1(structural::layout::level(1, 0)) = 2.0 + 0.4 * rng.uniform();
    range_spec.a1(structural::layout::harmonic(1, 1)) = 0.15 + 0.1 * rng.uniform();
    const auto logrange =
        statespace::simulate(range_spec, cfg.sim_months, rng.next_u64());

    const std::string id = "S" + std::to_string(100 + j);
    const double lat = 36.0 + 8.0 * rng.uniform();
    const double lon = -9.0 + 12.0 * rng.uniform();
    statespace::YearMonth ym = start;
    for (int t = 0; t < cfg.sim_months; ++t) {
      const auto [lo, hi] = dataio::from_centre_logrange(
          centre.observations.values(t, 0), logrange.observations.values(t, 0));
      rows.push_back(id + ",Simulated site " + std::to_string(j + 1) + "," +
                     detail::fmt(lat) + "," + detail::fmt(lon) + "," + ym.str() + "," +
                     detail::fmt(lo) + "," + detail::fmt(hi));
      ym = ym.next();
    }
  }
  w.write_csv("panel.csv", "location_id,location_name,lat,lon,date,tmin_c,tmax_c", rows);
  return 0;
}

/// mc-critvals: Monte Carlo critical value table as a JSON artifact.
inline int run_mc_critvals(const RunConfig& cfg) {
  detail::ArtifactWriter w(cfg);
  stattests::CvTestKind kind;
  if (cfg.cv_test == "rw") kind = stattests::CvTestKind::rw;
  else if (cfg.cv_test == "rwd") kind = stattests::CvTestKind::rwd;
  else if (cfg.cv_test == "irw") kind = stattests::CvTestKind::irw;
  else if (cfg.cv_test == "seasonal") kind = stattests::CvTestKind::seasonal_freq;
  else if (cfg.cv_test == "seasonal2") kind = stattests::CvTestKind::seasonal_group2;
  else throw ValidationError("mc-critvals: unknown test kind '" + cfg.cv_test + "'");

  const int reps = cfg.mc_reps > 0 ? cfg.mc_reps : 20000;
  const auto table = stattests::mc_critical_values(kind, cfg.cv_sample_size, reps, cfg.seed,
                                                   cfg.cv_harmonic, cfg.n_threads);
  json j;
  j["test"] = stattests::kind_name(table.kind);
  if (table.kind == stattests::CvTestKind::seasonal_freq) j["harmonic"] = table.harmonic;
  j["sample_size"] = table.sample_size;
  j["levels"] = table.levels;
  j["quantiles"] = table.quantiles;
  j["replications"] = table.replications;
  j["mc_seed"] = table.seed;
  w.write_json("critvals_" + cfg.cv_test + "_T" + std::to_string(cfg.cv_sample_size) + ".json",
               j);
  return 0;
}

/// plotdata: seasonal polar coordinates, correlation matrices and component
/// bands for external plotting.
inline int run_plotdata(const RunConfig& cfg) {
  const auto lp = detail::load_transformed(cfg);
  detail::ArtifactWriter w(cfg);
  const int N = lp.panel.n_locations();
  const int T = lp.panel.n_months();

  // Polar plot data: angle 2*pi*(month-1)/12.
  {
    std::vector<std::string> rows;
    for (int j = 0; j < N; ++j) {
      for (int t = 0; t < T; ++t) {
        const double angle = 2.0 * M_PI * (lp.panel.dates[t].month - 1) / 12.0;
        rows.push_back(lp.panel.locations[j].id + "," + lp.panel.dates[t].str() + "," +
                       detail::fmt(angle) + "," + detail::fmt(lp.clr.centre.values(t, j)) +
                       "," + detail::fmt(lp.clr.logrange.values(t, j)));
      }
    }
    w.write_csv("polar.csv", "location_id,date,month_angle_rad,centre,logrange", rows);
  }

  // Correlation maps for both transformed series.
  for (const auto& [label, series] : {std::pair{"centre", &lp.clr.centre},
                                      std::pair{"logrange", &lp.clr.logrange}}) {
    const auto corr = dataio::correlation_matrix(series->values);
    std::string header = "location_id";
    for (int j = 0; j < N; ++j) header += "," + lp.panel.locations[j].id;
    std::vector<std::string> rows;
    for (int a = 0; a < N; ++a) {
      std::string r = lp.panel.locations[a].id;
      for (int b = 0; b < N; ++b) r += "," + detail::fmt(corr(a, b));
      rows.push_back(r);
    }
    w.write_csv(std::string("correlation_") + label + ".csv", header, rows);
  }

  // Component bands from a quick fit of each series.
  parallel_for(
      static_cast<std::size_t>(N),
      [&](std::size_t j) {
        for (const auto& [k, label, panel] :
             {std::tuple{0, "centre", &lp.clr.centre},
              std::tuple{1, "logrange", &lp.clr.logrange}}) {
          const auto res =
              detail::fit_one_series(cfg, detail::column(*panel, static_cast<int>(j)), 2 * j + k);
          if (res.ok)
            detail::write_component_csvs(w, lp.panel.locations[j].id + "_" + label,
                                         lp.panel.dates, res.components);
          else
            detail::log(cfg, 0, "plotdata fit failed for " + lp.panel.locations[j].id + ": " +
                                    res.error);
        }
      },
      cfg.n_threads);
  return 0;
}

/// Dispatch by config.command; returns a process exit status.
inline int run(const RunConfig& cfg) {
  if (cfg.command == "fit") return run_fit(cfg);
  if (cfg.command == "test") return run_test(cfg);
  if (cfg.command == "deseasonalize") return run_deseasonalize(cfg);
  if (cfg.command == "cluster") return run_cluster(cfg);
  if (cfg.command == "mldfm") return run_mldfm(cfg);
  if (cfg.command == "simulate") return run_simulate(cfg);
  if (cfg.command == "mc-critvals") return run_mc_critvals(cfg);
  if (cfg.command == "plotdata") return run_plotdata(cfg);
  throw ValidationError("unknown command '" + cfg.command + "'");
}

}  // namespace ivts::pipeline
