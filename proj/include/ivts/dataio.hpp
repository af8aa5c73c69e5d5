#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ivts/stattests.hpp"
#include "ivts/statespace.hpp"

// Ingestion of monthly min/max temperature panels and the derived
// descriptive machinery: centre / log-range transform, annual differences,
// correlation matrices and complete-linkage clustering of locations.
//
// Canonical input is a long-format CSV with header
//   location_id,location_name,lat,lon,date,tmin_c,tmax_c
// dates as YYYY-MM, UTF-8, '#' lines ignored. Missing months may simply be
// absent (or have empty value fields); the panel covers the full monthly
// range between the earliest and latest date seen.

namespace ivts::dataio {

using statespace::ObservationPanel;
using statespace::YearMonth;

struct Location {
  std::string id;
  std::string name;
  double lat = 0.0;
  double lon = 0.0;
};

struct IntervalPanel {
  std::vector<Location> locations;
  std::vector<YearMonth> dates;
  Eigen::MatrixXd tmin, tmax;  // T_obs x N, NaN = missing
  std::vector<std::string> warnings;

  int n_locations() const { return static_cast<int>(locations.size()); }
  int n_months() const { return static_cast<int>(dates.size()); }

  void validate() const {
    if (locations.empty() || dates.empty()) throw ValidationError("IntervalPanel: empty panel");
    for (std::size_t t = 1; t < dates.size(); ++t)
      if (!(dates[t] == dates[t - 1].next()))
        throw ValidationError("IntervalPanel: dates not contiguous monthly");
    std::string offenders;
    int n_bad = 0;
    for (int j = 0; j < n_locations(); ++j) {
      bool any = false;
      for (int t = 0; t < n_months(); ++t) {
        const double lo = tmin(t, j), hi = tmax(t, j);
        if (is_missing(lo) != is_missing(hi))
          throw ValidationError("IntervalPanel: half-missing interval at " + dates[t].str() +
                                " for " + locations[j].id);
        if (is_missing(lo)) continue;
        any = true;
        if (!(hi > lo)) {
          if (++n_bad <= 5)
            offenders += " [" + locations[j].id + " " + dates[t].str() + ": tmin=" +
                         std::to_string(lo) + " tmax=" + std::to_string(hi) + "]";
        }
      }
      if (!any)
        throw ValidationError("IntervalPanel: location " + locations[j].id +
                              " has no observations");
    }
    if (n_bad > 0)
      throw ValidationError("IntervalPanel: tmax must exceed tmin at every cell; " +
                            std::to_string(n_bad) + " violations:" + offenders);
  }
};

struct LoadOptions {
  std::string format = "csv";
  bool interpolate_gaps = false;  // linearly fill interior gaps of <= max_gap
  int max_gap = 2;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline YearMonth parse_year_month(const std::string& s, long line_no) {
  if (s.size() != 7 || s[4] != '-') throw FormatError("bad date '" + s + "'", line_no);
  const int y = std::atoi(s.substr(0, 4).c_str());
  const int m = std::atoi(s.substr(5, 2).c_str());
  if (y < 1 || m < 1 || m > 12) throw FormatError("bad date '" + s + "'", line_no);
  return {y, m};
}

inline std::optional<double> parse_value(const std::string& s, long line_no) {
  if (s.empty() || s == "NA" || s == "nan" || s == "NaN") return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw FormatError("bad numeric value '" + s + "'", line_no);
  return v;
}

inline int month_index(const YearMonth& a, const YearMonth& b) {
  return (b.year - a.year) * 12 + (b.month - a.month);
}

inline void interpolate_column(Eigen::Ref<Eigen::VectorXd> col, int max_gap,
                               std::vector<int>& filled) {
  const int n = static_cast<int>(col.size());
  int t = 0;
  while (t < n) {
    if (!is_missing(col(t))) {
      ++t;
      continue;
    }
    const int start = t;
    while (t < n && is_missing(col(t))) ++t;
    const int len = t - start;
    if (start == 0 || t == n || len > max_gap) continue;  // edge gaps stay missing
    const double lo = col(start - 1), hi = col(t);
    for (int k = 0; k < len; ++k) {
      col(start + k) = lo + (hi - lo) * (k + 1.0) / (len + 1.0);
      filled.push_back(start + k);
    }
  }
}

}  // namespace detail

/// Parses and validates a long-format CSV panel.
inline IntervalPanel load_panel(const std::string& path, const LoadOptions& opts = {}) {
  if (opts.format != "csv")
    throw ValidationError("load_panel: unsupported format '" + opts.format + "'");
  std::ifstream in(path);
  if (!in) throw ValidationError("load_panel: cannot open " + path);

  std::string line;
  long line_no = 0;
  // Header (comment lines may precede it).
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header = detail::split_csv_line(line);
    break;
  }
  const std::vector<std::string> expected = {"location_id", "location_name", "lat",
                                             "lon",         "date",          "tmin_c",
                                             "tmax_c"};
  if (header != expected)
    throw FormatError(
        "expected header location_id,location_name,lat,lon,date,tmin_c,tmax_c", line_no);

  struct Row {
    YearMonth ym;
    std::optional<double> tmin, tmax;
  };
  std::map<std::string, Location> locs;
  std::map<std::string, std::vector<Row>> rows;
  std::optional<YearMonth> first, last;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw FormatError("expected 7 fields, got " + std::to_string(f.size()),
                                         line_no);
    const YearMonth ym = detail::parse_year_month(f[4], line_no);
    Location loc;
    loc.id = f[0];
    loc.name = f[1];
    const auto lat = detail::parse_value(f[2], line_no);
    const auto lon = detail::parse_value(f[3], line_no);
    if (!lat || !lon) throw FormatError("missing coordinates", line_no);
    loc.lat = *lat;
    loc.lon = *lon;
    locs.emplace(loc.id, loc);
    rows[loc.id].push_back({ym, detail::parse_value(f[5], line_no),
                            detail::parse_value(f[6], line_no)});
    if (!first || ym < *first) first = ym;
    if (!last || *last < ym) last = ym;
  }
  if (locs.empty()) throw FormatError("no data rows", line_no);

  IntervalPanel panel;
  for (auto& [id, loc] : locs) panel.locations.push_back(loc);
  const int n_months = detail::month_index(*first, *last) + 1;
  panel.dates.resize(n_months);
  panel.dates[0] = *first;
  for (int t = 1; t < n_months; ++t) panel.dates[t] = panel.dates[t - 1].next();
  const int N = panel.n_locations();
  panel.tmin = Eigen::MatrixXd::Constant(n_months, N, missing_value());
  panel.tmax = Eigen::MatrixXd::Constant(n_months, N, missing_value());

  for (int j = 0; j < N; ++j) {
    for (const Row& r : rows[panel.locations[j].id]) {
      const int t = detail::month_index(*first, r.ym);
      if (r.tmin && r.tmax) {
        panel.tmin(t, j) = *r.tmin;
        panel.tmax(t, j) = *r.tmax;
      } else if (r.tmin || r.tmax) {
        throw ValidationError("load_panel: half-missing interval at " + r.ym.str() + " for " +
                              panel.locations[j].id);
      }
    }
  }

  if (opts.interpolate_gaps) {
    for (int j = 0; j < N; ++j) {
      std::vector<int> filled_lo, filled_hi;
      detail::interpolate_column(panel.tmin.col(j), opts.max_gap, filled_lo);
      detail::interpolate_column(panel.tmax.col(j), opts.max_gap, filled_hi);
      if (!filled_lo.empty())
        panel.warnings.push_back("interpolated " + std::to_string(filled_lo.size()) +
                                 " month(s) for " + panel.locations[j].id);
    }
  }

  panel.validate();
  return panel;
}

struct CentreLogRange {
  ObservationPanel centre;
  ObservationPanel logrange;
};

/// centre = (tmax + tmin) / 2, logrange = ln(tmax - tmin); the panel
/// invariant tmax > tmin keeps the logarithm finite.
inline CentreLogRange to_centre_logrange(const IntervalPanel& panel) {
  panel.validate();
  const int T = panel.n_months(), N = panel.n_locations();
  CentreLogRange out;
  out.centre.values.resize(T, N);
  out.logrange.values.resize(T, N);
  out.centre.time = panel.dates;
  out.logrange.time = panel.dates;
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < N; ++j) {
      const double lo = panel.tmin(t, j), hi = panel.tmax(t, j);
      if (is_missing(lo)) {
        out.centre.values(t, j) = missing_value();
        out.logrange.values(t, j) = missing_value();
      } else {
        out.centre.values(t, j) = 0.5 * (hi + lo);
        out.logrange.values(t, j) = std::log(hi - lo);
      }
    }
  }
  return out;
}

/// Reconstructs the interval bounds from centre and log-range values.
inline std::pair<double, double> from_centre_logrange(double centre, double logrange) {
  const double half = 0.5 * std::exp(logrange);
  return {centre - half, centre + half};
}

struct AnnualDescriptives {
  int n = 0;                 // number of annual differences
  double mean = 0.0;
  double sd = 0.0;
  bool degenerate = false;   // constant differences: moment tests undefined
  bool tests_available = false;
  stattests::MomentTests moments;   // valid when tests_available
  stattests::TestResult q12;        // valid when tests_available
};

/// Descriptive statistics of the 12-month differences x_t - x_{t-12}.
inline AnnualDescriptives annual_descriptives(std::span<const double> series) {
  const int n = static_cast<int>(series.size());
  if (n < 24) throw ValidationError("annual_descriptives: need at least 24 months");
  std::vector<double> d;
  d.reserve(n - 12);
  for (int t = 12; t < n; ++t)
    if (!is_missing(series[t]) && !is_missing(series[t - 12]))
      d.push_back(series[t] - series[t - 12]);
  if (d.size() < 12) throw ValidationError("annual_descriptives: too few annual differences");

  AnnualDescriptives out;
  out.n = static_cast<int>(d.size());
  for (double v : d) out.mean += v;
  out.mean /= out.n;
  double ss = 0.0;
  for (double v : d) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / (out.n - 1.0));
  double scale = 0.0;
  for (double v : series)
    if (!is_missing(v)) scale = std::max(scale, std::fabs(v));
  if (out.sd <= 1e-12 * std::max(1.0, scale)) {
    out.degenerate = true;  // e.g. pure seasonality or an exact linear trend
    return out;
  }
  if (out.n >= 100) {
    out.moments = stattests::moment_tests(d);
    out.q12 = stattests::box_pierce(d, 12);
    out.tests_available = true;
  }
  return out;
}

/// Pearson correlations over pairwise-complete observations.
inline Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& series) {
  const int N = static_cast<int>(series.cols());
  const int T = static_cast<int>(series.rows());
  Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(N, N);
  for (int a = 0; a < N; ++a) {
    bool varies = false;
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (int t = 0; t < T; ++t)
      if (!is_missing(series(t, a))) {
        mn = std::min(mn, series(t, a));
        mx = std::max(mx, series(t, a));
        varies = varies || mx > mn;
      }
    if (!varies)
      throw ValidationError("correlation_matrix: series " + std::to_string(a) +
                            " has zero variance");
  }
  for (int a = 0; a < N; ++a) {
    for (int b = a + 1; b < N; ++b) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      int n = 0;
      for (int t = 0; t < T; ++t) {
        const double x = series(t, a), y = series(t, b);
        if (is_missing(x) || is_missing(y)) continue;
        ++n;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
      }
      if (n < 3)
        throw ValidationError("correlation_matrix: fewer than 3 joint observations for (" +
                              std::to_string(a) + "," + std::to_string(b) + ")");
      const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
      if (vx <= 0.0 || vy <= 0.0)
        throw ValidationError("correlation_matrix: zero variance on the joint sample of (" +
                              std::to_string(a) + "," + std::to_string(b) + ")");
      corr(a, b) = corr(b, a) = (sxy - sx * sy / n) / std::sqrt(vx * vy);
    }
  }
  return corr;
}

struct ClusterAssignment {
  int k = 0;
  std::vector<int> labels;          // 1..k per location
  std::vector<double> merge_heights;
};

/// Agglomerative complete-linkage clustering on the distance 1 - correlation,
/// cut at k clusters. Ties break on the smallest pair of lowest original
/// indices, so the result is permutation-stable.
inline ClusterAssignment cluster_complete_linkage(const Eigen::MatrixXd& corr, int k) {
  const int N = static_cast<int>(corr.rows());
  if (corr.cols() != N) throw ValidationError("cluster_complete_linkage: matrix not square");
  if (k < 1 || k > N) throw ValidationError("cluster_complete_linkage: k out of range");

  std::vector<std::vector<int>> clusters(N);
  for (int i = 0; i < N; ++i) clusters[i] = {i};
  Eigen::MatrixXd dist(N, N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) dist(a, b) = 1.0 - corr(a, b);

  ClusterAssignment out;
  out.k = k;

  auto cluster_distance = [&](const std::vector<int>& A, const std::vector<int>& B) {
    double d = -std::numeric_limits<double>::infinity();
    for (int a : A)
      for (int b : B) d = std::max(d, dist(a, b));
    return d;
  };

  while (static_cast<int>(clusters.size()) > k) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 1;
    auto rep = [&](std::size_t c) { return *std::min_element(clusters[c].begin(), clusters[c].end()); };
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        const double d = cluster_distance(clusters[i], clusters[j]);
        bool better = d < best;
        if (d == best) {
          const auto cur = std::minmax(rep(i), rep(j));
          const auto prev = std::minmax(rep(bi), rep(bj));
          better = cur < prev;
        }
        if (better) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    out.merge_heights.push_back(best);
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + bj);
  }

  // Deterministic labels: clusters ordered by their smallest member index.
  std::sort(clusters.begin(), clusters.end(),
            [](const auto& a, const auto& b) {
              return *std::min_element(a.begin(), a.end()) <
                     *std::min_element(b.begin(), b.end());
            });
  out.labels.assign(N, 0);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (int i : clusters[c]) out.labels[i] = static_cast<int>(c) + 1;
  return out;
}

}  // namespace ivts::dataio
