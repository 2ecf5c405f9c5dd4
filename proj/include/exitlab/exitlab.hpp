#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "exitlab/basin.hpp"
#include "exitlab/model.hpp"
#include "exitlab/quasipotential.hpp"
#include "exitlab/ssa.hpp"

namespace exitlab {

#ifdef EXITLAB_VERSION
inline constexpr const char* kVersion = EXITLAB_VERSION;
#else
inline constexpr const char* kVersion = "0.1.0";
#endif

using Json = nlohmann::json;

inline Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

struct ExitMeasureOptions {
  std::vector<int> N_list;
  std::size_t replicas = 1000;
  double delta = 0.1;        // concentration radius around zbar (arclength)
  double bin_width = 0.02;   // histogram bins along the trace
  double horizon = 1e4;
  std::uint64_t seed = 0;
  bool reflect = false;
  unsigned jobs = 1;
  std::size_t bootstrap = 200;
  bool with_profile = true;
  std::size_t profile_stride = 8;
  MinimizerOptions minimizer;
};

struct ExitCell {
  int N = 0;
  std::size_t replicas = 0;
  std::size_t censored = 0;
  std::size_t other_boundary = 0;     // exits through a face of the domain
  std::vector<std::size_t> histogram;  // characteristic-boundary exits per bin
  double fraction_near = 0.0;          // exits within delta of zbar / replicas
  double fraction_se = 0.0;            // bootstrap standard error of fraction_near
  std::size_t mode_bin = 0;
  double mode_s = 0.0;                 // center of the mode bin
  bool censored_dominated = false;
  std::uint64_t total_events = 0;
  std::vector<ExitRecord> exits;       // replica order, censored replicas absent
  std::vector<double> exit_s;          // arclength of each exit (NaN for other-boundary exits)
};

struct ExitMeasureReport {
  std::string model;
  std::map<std::string, double> params;
  Vec z0;
  ExitMeasureOptions options;
  double trace_length = 0.0;
  double zbar_s = 0.0;
  std::vector<ExitCell> cells;
  bool has_theory = false;
  double V_boundary = 0.0;
  Vec argmin;
  double argmin_s = 0.0;
  BoundaryProfile profile;

  double bin_center(std::size_t b) const { return (static_cast<double>(b) + 0.5) * options.bin_width; }

  Json to_json() const {
    Json j;
    j["model"] = model;
    j["params"] = params;
    j["z0"] = exitlab::to_json(z0);
    j["N_list"] = options.N_list;
    j["replicas"] = options.replicas;
    j["delta"] = options.delta;
    j["bin_width"] = options.bin_width;
    j["horizon"] = options.horizon;
    j["seed"] = options.seed;
    j["reflect"] = options.reflect;
    j["bootstrap"] = options.bootstrap;
    j["trace_length"] = trace_length;
    j["zbar_s"] = zbar_s;
    Json cs = Json::array();
    for (const auto& c : cells) {
      Json e;
      e["N"] = c.N;
      e["replicas"] = c.replicas;
      e["censored"] = c.censored;
      e["other_boundary"] = c.other_boundary;
      e["histogram"] = c.histogram;
      e["fraction_near"] = c.fraction_near;
      e["fraction_se"] = c.fraction_se;
      e["mode_bin"] = c.mode_bin;
      e["mode_s"] = c.mode_s;
      e["censored_dominated"] = c.censored_dominated;
      e["total_events"] = c.total_events;
      Json ex = Json::array();
      for (std::size_t i = 0; i < c.exits.size(); ++i) {
        const auto& r = c.exits[i];
        Json x;
        x["replica"] = r.replica;
        x["seed"] = r.seed;
        x["tau"] = r.tau;
        x["location"] = exitlab::to_json(r.location);
        x["mode"] = std::string(to_string(r.mode));
        x["other_boundary"] = r.other_boundary;
        if (std::isfinite(c.exit_s[i])) x["s"] = c.exit_s[i];
        ex.push_back(x);
      }
      e["exits"] = ex;
      cs.push_back(e);
    }
    j["cells"] = cs;
    Json th;
    th["available"] = has_theory;
    if (has_theory) {
      th["V_boundary"] = V_boundary;
      th["argmin"] = exitlab::to_json(argmin);
      th["argmin_s"] = argmin_s;
      th["distance_to_zbar"] = profile.distance_to_zbar;
      th["profile_spacing"] = profile.spacing;
      th["trace_resolution"] = profile.resolution;
    }
    j["theory"] = th;
    return j;
  }
};

namespace detail {

inline double bootstrap_se(const std::vector<char>& hit, std::size_t resamples, std::uint64_t seed) {
  const std::size_t n = hit.size();
  if (n == 0 || resamples < 2) return 0.0;
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> f(resamples);
  for (auto& v : f) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i) c += hit[pick(gen)];
    v = static_cast<double>(c) / n;
  }
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / resamples;
  double ss = 0.0;
  for (double v : f) ss += sq(v - mean);
  return std::sqrt(ss / (resamples - 1));
}

}  // namespace detail

/// Exit-measure experiment over N_list with exits binned along the trace
/// arclength; the theory columns come from boundary_profile when requested.
inline ExitMeasureReport run_exit_measure(const ModelSpec& m, const BoundaryTrace& trace, const Vec& z0,
                                          const ExitMeasureOptions& opt) {
  if (opt.N_list.empty()) throw Error(ErrorKind::InvalidArgument, "N_list is empty");
  for (std::size_t i = 1; i < opt.N_list.size(); ++i)
    if (!(opt.N_list[i] > opt.N_list[i - 1])) throw Error(ErrorKind::InvalidArgument, "N_list must be ascending");
  if (opt.replicas == 0) throw Error(ErrorKind::InvalidArgument, "replicas must be positive");
  if (!(opt.bin_width > 0) || !(opt.delta > 0)) throw Error(ErrorKind::InvalidArgument, "bin width and delta must be positive");
  if (trace.size() < 2) throw Error(ErrorKind::TraceFailure, "trace has fewer than two vertices");

  ExitMeasureReport rep;
  rep.model = m.name;
  rep.params = m.params;
  rep.z0 = z0;
  rep.options = opt;
  rep.trace_length = trace.arclength.back();
  rep.zbar_s = trace.arclength_of(m.boundary_attractor);
  const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(rep.trace_length / opt.bin_width - 1e-9)));

  const BasinIndicator basin =
      m.domain.exit_boundary == ExitBoundaryKind::Axis ? BasinIndicator(m) : BasinIndicator(m, trace);
  for (std::size_t n = 0; n < opt.N_list.size(); ++n) {
    const int N = opt.N_list[n];
    const auto ex = exit_experiment(basin, N, z0, opt.replicas, opt.horizon, derive_seed(opt.seed, n), opt.reflect,
                                    opt.jobs);
    ExitCell c;
    c.N = N;
    c.replicas = opt.replicas;
    c.censored = ex.censored;
    c.total_events = ex.total_events;
    c.histogram.assign(bins, 0);
    c.exits = ex.exits;
    std::vector<char> hit(opt.replicas, 0);
    for (const auto& e : ex.exits) {
      if (e.other_boundary) {
        ++c.other_boundary;
        c.exit_s.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      const double s = trace.arclength_of(e.location);
      c.exit_s.push_back(s);
      c.histogram[std::min(bins - 1, static_cast<std::size_t>(s / opt.bin_width))]++;
      if (std::abs(s - rep.zbar_s) <= opt.delta) hit[e.replica] = 1;
    }
    c.fraction_near = static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / opt.replicas;
    c.fraction_se = detail::bootstrap_se(hit, opt.bootstrap, derive_seed(opt.seed ^ 0x5eedb007ULL, n));
    c.mode_bin = static_cast<std::size_t>(std::max_element(c.histogram.begin(), c.histogram.end()) - c.histogram.begin());
    c.mode_s = rep.bin_center(c.mode_bin);
    c.censored_dominated = 2 * c.censored > c.replicas;
    rep.cells.push_back(std::move(c));
  }

  if (opt.with_profile) {
    rep.profile = boundary_profile(m, trace, opt.profile_stride, opt.minimizer, opt.jobs);
    rep.has_theory = true;
    rep.V_boundary = rep.profile.minimum;
    rep.argmin = rep.profile.points[rep.profile.argmin].y;
    rep.argmin_s = rep.profile.points[rep.profile.argmin].s;
  }
  return rep;
}

struct ScalingFit {
  double slope = 0.0;      // empirical rate: slope of -log P against N
  double intercept = 0.0;
  double ci_low = 0.0;     // 95% percentile bootstrap interval for the slope
  double ci_high = 0.0;
  double slope_se = 0.0;
  std::vector<int> N;              // N values used in the fit
  std::vector<double> probability; // empirical P at those N
  std::vector<int> dropped;        // N values with zero event count
  std::size_t resamples = 0;       // bootstrap resamples that admitted a fit
};

using ExitEvent = std::function<bool(const ExitRecord&)>;

/// Event "exit within delta (arclength) of the trace point nearest y".
inline ExitEvent exit_near(const BoundaryTrace& trace, const Vec& y, double delta) {
  const double s0 = trace.arclength_of(y);
  return [&trace, s0, delta](const ExitRecord& e) {
    return !e.other_boundary && std::abs(trace.arclength_of(e.location) - s0) <= delta;
  };
}

namespace detail {

inline std::pair<double, double> least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += sq(x[i] - mx);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mx};
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Least-squares fit of -log P_N(event) against N with a bootstrap interval
/// (replicas resampled within each N).
inline ScalingFit scaling_estimate(const ExitMeasureReport& rep, const ExitEvent& event, std::size_t resamples = 200,
                                   std::uint64_t seed = 0) {
  std::vector<std::vector<char>> hits;
  ScalingFit fit;
  std::vector<double> xs, ys;
  for (const auto& c : rep.cells) {
    std::vector<char> h(c.replicas, 0);
    for (const auto& e : c.exits)
      if (event(e)) h[e.replica] = 1;
    const auto k = std::count(h.begin(), h.end(), 1);
    if (k == 0) {
      fit.dropped.push_back(c.N);
      continue;
    }
    fit.N.push_back(c.N);
    fit.probability.push_back(static_cast<double>(k) / c.replicas);
    xs.push_back(c.N);
    ys.push_back(-std::log(fit.probability.back()));
    hits.push_back(std::move(h));
  }
  if (fit.N.size() < 3) {
    std::ostringstream os;
    os << "scaling fit needs >= 3 N values with events; usable " << fit.N.size() << ", zero counts at N =";
    for (int n : fit.dropped) os << ' ' << n;
    throw Error(ErrorKind::InsufficientData, os.str());
  }
  std::tie(fit.slope, fit.intercept) = detail::least_squares(xs, ys);

  std::mt19937_64 gen(seed);
  std::vector<double> slopes;
  for (std::size_t b = 0; b < resamples; ++b) {
    std::vector<double> bx, by;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      const std::size_t n = hits[i].size();
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::size_t k = 0;
      for (std::size_t r = 0; r < n; ++r) k += hits[i][pick(gen)];
      if (k == 0) continue;
      bx.push_back(xs[i]);
      by.push_back(-std::log(static_cast<double>(k) / n));
    }
    if (bx.size() < 2) continue;
    slopes.push_back(detail::least_squares(bx, by).first);
  }
  fit.resamples = slopes.size();
  if (slopes.size() >= 2) {
    fit.ci_low = detail::percentile(slopes, 0.025);
    fit.ci_high = detail::percentile(slopes, 0.975);
    const double mean = std::accumulate(slopes.begin(), slopes.end(), 0.0) / slopes.size();
    double ss = 0.0;
    for (double s : slopes) ss += sq(s - mean);
    fit.slope_se = std::sqrt(ss / (slopes.size() - 1));
  } else {
    fit.ci_low = fit.ci_high = fit.slope;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Law of large numbers

struct LlnReplica {
  std::uint64_t seed = 0;
  double sup_distance = 0.0;  // sup over event times of |Z^N - Y| (Euclidean)
  double worst_time = 0.0;
  std::uint64_t events = 0;
};

/// Free run of the jump process from the lattice point nearest z0 against the
/// drift ODE started at z0. Z^N is piecewise constant, so the supremum is
/// attained at jump times, where both the pre- and post-jump states count.
inline LlnReplica lln_distance(const BasinIndicator& basin, int N, const Vec& z0, double T, std::uint64_t seed,
                               double rel_tol = 1e-10, double abs_tol = 1e-12) {
  const ModelSpec& m = basin.model();
  const Vec start = project_initial(basin, N, z0);
  SimulateOptions so;
  so.stop = StopRule::AtHorizon;
  const auto path = simulate(basin, N, start, T, so, seed);
  std::vector<double> grid{0.0};
  for (const auto& e : path.events)
    if (e.t > grid.back()) grid.push_back(e.t);
  if (T > grid.back()) grid.push_back(T);
  const auto ode = integrate_ode([&](const Vec& z) { return m.drift(z); }, z0, 0.0, T, rel_tol, abs_tol, grid);

  LlnReplica out;
  out.seed = seed;
  out.events = path.event_count;
  std::size_t g = 0;
  Vec prev = path.initial;
  auto visit = [&](double t, const Vec& z) {
    while (g + 1 < ode.t.size() && ode.t[g] < t) ++g;
    const double dist = (z - ode.z[g]).norm();
    if (dist > out.sup_distance) {
      out.sup_distance = dist;
      out.worst_time = t;
    }
  };
  visit(0.0, prev);
  for (const auto& e : path.events) {
    visit(e.t, prev);
    visit(e.t, e.z);
    prev = e.z;
  }
  visit(T, prev);
  return out;
}

inline std::vector<LlnReplica> lln_experiment(const BasinIndicator& basin, int N, const Vec& z0, double T,
                                              std::size_t replicas, std::uint64_t seed, unsigned jobs = 1) {
  std::vector<LlnReplica> out(replicas);
  parallel_for(replicas, jobs, [&](std::size_t r) { out[r] = lln_distance(basin, N, z0, T, derive_seed(seed, r)); });
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::IoFailure, "SHA-256 digest failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
  return os.str();
}

struct ManifestEntry {
  std::string name;
  std::string sha256;
  std::size_t bytes = 0;
};

/// Collects output files in memory and writes them plus manifest.json.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }

  /// Writes every file and the manifest; returns the manifest entries.
  std::vector<ManifestEntry> write(const Json& config) const {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + dir_.string() + ": " + ec.message());
    std::vector<ManifestEntry> entries;
    for (const auto& [name, content] : files_) {
      put(name, content);
      entries.push_back({name, sha256_hex(content), content.size()});
    }
    Json man;
    man["version"] = kVersion;
    man["config"] = config;
    Json fl = Json::array();
    for (const auto& e : entries) fl.push_back({{"name", e.name}, {"sha256", e.sha256}, {"bytes", e.bytes}});
    man["files"] = fl;
    put("manifest.json", man.dump(2) + "\n");
    return entries;
  }

 private:
  void put(const std::string& name, const std::string& content) const {
    const auto path = dir_ / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    f << content;
    if (!f) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
  }

  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

inline std::string histogram_csv(const ExitMeasureReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "N,bin_s,bin_count\n";
  for (const auto& c : rep.cells)
    for (std::size_t b = 0; b < c.histogram.size(); ++b) os << c.N << ',' << rep.bin_center(b) << ',' << c.histogram[b] << '\n';
  return os.str();
}

/// report.json, histogram.csv, profile.csv and manifest.json in out_dir, plus
/// any extra (name, content) files.
inline std::vector<ManifestEntry> write_report(const ExitMeasureReport& rep, const std::filesystem::path& out_dir,
                                               const Json& config = Json::object(),
                                               const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  if (rep.cells.empty()) throw Error(ErrorKind::InvalidArgument, "report has no N values");
  OutputSet out(out_dir);
  out.add("report.json", rep.to_json().dump(2) + "\n");
  out.add("histogram.csv", histogram_csv(rep));
  std::ostringstream prof;
  if (rep.has_theory) rep.profile.write_csv(prof);
  else prof << "s,y_x,y_y,V,S\n";
  out.add("profile.csv", prof.str());
  for (const auto& [name, content] : extra) out.add(name, content);
  return out.write(config);
}

}  // namespace exitlab
