#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "exitlab/exitlab.hpp"

using namespace exitlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

ExitMeasureOptions small_options(unsigned jobs) {
  ExitMeasureOptions o;
  o.N_list = {10, 20, 30};
  o.replicas = 120;
  o.horizon = 50.0;
  o.seed = 17;
  o.jobs = jobs;
  o.bootstrap = 50;
  o.with_profile = false;
  return o;
}

// Report whose cell n has round(replicas * p_n) marked exits.
ExitMeasureReport synthetic(const std::vector<int>& Ns, const std::vector<double>& p, std::size_t replicas) {
  ExitMeasureReport rep;
  for (std::size_t n = 0; n < Ns.size(); ++n) {
    ExitCell c;
    c.N = Ns[n];
    c.replicas = replicas;
    const auto hits = static_cast<std::size_t>(std::llround(p[n] * replicas));
    for (std::size_t r = 0; r < replicas; ++r) {
      ExitRecord e;
      e.replica = r;
      e.location = vec2(r < hits ? 1.0 : 0.0, 0.0);
      c.exits.push_back(e);
    }
    rep.cells.push_back(c);
  }
  return rep;
}

const ExitEvent marked = [](const ExitRecord& e) { return e.location[0] == 1.0; };

}  // namespace

TEST(ExitMeasure, HistogramMassIsConserved) {
  const auto m = build_model("sirs");
  const auto tr = trace_boundary(m, 0.02);
  const auto rep = run_exit_measure(m, tr, m.endemic, small_options(1));
  ASSERT_EQ(rep.cells.size(), 3u);
  for (const auto& c : rep.cells) {
    const auto binned = std::accumulate(c.histogram.begin(), c.histogram.end(), std::size_t{0});
    EXPECT_EQ(binned + c.other_boundary + c.censored, c.replicas) << "N=" << c.N;
    EXPECT_EQ(c.exits.size() + c.censored, c.replicas);
    EXPECT_EQ(c.other_boundary, 0u) << "sirs only exits through the infection axis";
    EXPECT_GE(c.fraction_near, 0.0);
    EXPECT_LE(c.fraction_near, 1.0);
    EXPECT_LT(c.mode_bin, c.histogram.size());
    EXPECT_NEAR(c.mode_s, (c.mode_bin + 0.5) * rep.options.bin_width, 1e-15);
  }
}

TEST(ExitMeasure, FractionNearCountsExitsWithinDelta) {
  const auto m = build_model("sirs");
  const auto tr = trace_boundary(m, 0.02);
  const auto rep = run_exit_measure(m, tr, m.endemic, small_options(1));
  for (const auto& c : rep.cells) {
    std::size_t near = 0;
    for (const auto& e : c.exits)
      if (std::abs(e.location[1] - 1.0) <= rep.options.delta + tr.resolution) ++near;
    // Nearest-vertex arclength differs from the y coordinate by at most the resolution.
    EXPECT_NEAR(c.fraction_near, static_cast<double>(near) / c.replicas, 0.1);
  }
}

TEST(ExitMeasure, IndependentOfThreadCount) {
  const auto m = build_model("sirs");
  const auto tr = trace_boundary(m, 0.02);
  const auto a = run_exit_measure(m, tr, m.endemic, small_options(1)).to_json();
  auto b = run_exit_measure(m, tr, m.endemic, small_options(3)).to_json();
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(ExitMeasure, InputValidation) {
  const auto m = build_model("sirs");
  const auto tr = trace_boundary(m, 0.05);
  auto o = small_options(1);
  o.N_list = {20, 10};
  EXPECT_THROW(run_exit_measure(m, tr, m.endemic, o), Error);
  o = small_options(1);
  o.replicas = 0;
  EXPECT_THROW(run_exit_measure(m, tr, m.endemic, o), Error);
}

TEST(Scaling, RecoversSyntheticExponent) {
  const std::vector<int> Ns{10, 20, 30, 40, 50};
  std::vector<double> p;
  for (int N : Ns) p.push_back(std::exp(-0.4 - 0.05 * N));
  const auto fit = scaling_estimate(synthetic(Ns, p, 20000), marked, 300, 1);
  EXPECT_NEAR(fit.slope, 0.05, 1e-3);
  EXPECT_NEAR(fit.intercept, 0.4, 0.03);
  EXPECT_LE(fit.ci_low, fit.slope);
  EXPECT_GE(fit.ci_high, fit.slope);
  EXPECT_GT(fit.slope_se, 0.0);
  EXPECT_EQ(fit.resamples, 300u);
  EXPECT_TRUE(fit.dropped.empty());
}

TEST(Scaling, InsufficientDataWhenTooFewNHaveEvents) {
  const auto rep = synthetic({10, 20, 30, 40}, {0.5, 0.1, 0.0, 0.0}, 100);
  try {
    scaling_estimate(rep, marked);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    EXPECT_NE(std::string(e.what()).find("30 40"), std::string::npos);
  }
}

TEST(Lln, DistanceShrinksWithN) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  auto mean_sup = [&](int N) {
    const auto reps = lln_experiment(basin, N, m.endemic, 2.0, 8, 5, 1);
    double s = 0.0;
    for (const auto& r : reps) s += r.sup_distance;
    return s / reps.size();
  };
  const double small = mean_sup(400), large = mean_sup(10000);
  EXPECT_LT(large, 0.05);
  // Fluctuations scale like N^{-1/2}: a factor 5 here, allow 2.5.
  EXPECT_GT(small / large, 2.5);
}

TEST(Lln, SeedsAreDerivedPerReplica) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const auto a = lln_experiment(basin, 500, m.endemic, 1.0, 4, 9, 1);
  const auto b = lln_experiment(basin, 500, m.endemic, 1.0, 4, 9, 2);
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_EQ(a[r].seed, derive_seed(9, r));
    EXPECT_EQ(a[r].sup_distance, b[r].sup_distance);
  }
}

TEST(Output, Sha256KnownAnswers) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Output, ReportIsReproducibleAndManifestHashesMatch) {
  const auto m = build_model("sirs");
  const auto tr = trace_boundary(m, 0.02);
  const fs::path base = fs::path(::testing::TempDir()) / "exitlab_report";
  fs::remove_all(base);
  const Json cfg = {{"seed", 17}};
  write_report(run_exit_measure(m, tr, m.endemic, small_options(2)), base / "a", cfg, {{"extra.txt", "x\n"}});
  write_report(run_exit_measure(m, tr, m.endemic, small_options(2)), base / "b", cfg, {{"extra.txt", "x\n"}});
  for (const char* f : {"report.json", "histogram.csv", "profile.csv", "extra.txt", "manifest.json"})
    EXPECT_EQ(slurp(base / "a" / f), slurp(base / "b" / f)) << f;

  const auto man = Json::parse(slurp(base / "a" / "manifest.json"));
  EXPECT_EQ(man["version"], kVersion);
  EXPECT_EQ(man["config"], cfg);
  ASSERT_EQ(man["files"].size(), 4u);
  for (const auto& e : man["files"]) {
    const auto content = slurp(base / "a" / e["name"].get<std::string>());
    EXPECT_EQ(e["sha256"], sha256_hex(content));
    EXPECT_EQ(e["bytes"], content.size());
  }
  fs::remove_all(base);
}
