#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "exitlab/ssa.hpp"
#include "oracles.hpp"

using namespace exitlab;

namespace {

SimulateOptions opts(bool reflect, StopRule stop, bool record = true) {
  SimulateOptions o;
  o.reflect = reflect;
  o.stop = stop;
  o.record_events = record;
  return o;
}

}  // namespace

TEST(Ssa, SameSeedSamePath) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const Vec z0 = project_initial(basin, 500, m.endemic);
  const auto a = simulate(basin, 500, z0, 5.0, opts(false, StopRule::AtHorizon), 42);
  const auto b = simulate(basin, 500, z0, 5.0, opts(false, StopRule::AtHorizon), 42);
  const auto c = simulate(basin, 500, z0, 5.0, opts(false, StopRule::AtHorizon), 43);
  ASSERT_EQ(a.events.size(), b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    EXPECT_EQ(a.events[i].t, b.events[i].t);
    EXPECT_EQ(a.events[i].reaction, b.events[i].reaction);
  }
  EXPECT_NE(a.event_count, c.event_count);
}

TEST(Ssa, FirstJumpLawMatchesRates) {
  // Over many seeds, the first reaction is j with probability beta_j / sum
  // and the first holding time has mean 1 / (N sum).
  const auto m = build_model("siv");
  const BoundaryTrace tr = trace_boundary(m, 0.02);
  const BasinIndicator basin(m, tr);
  const int N = 100;
  const Vec z0 = project_initial(basin, N, m.endemic);
  const auto beta = oracle::rates("siv", m.params, z0[0], z0[1]);
  const double total = std::accumulate(beta.begin(), beta.end(), 0.0);
  const int runs = 40000;
  std::vector<int> count(m.k, 0);
  double tsum = 0.0;
  for (int s = 0; s < runs; ++s) {
    const auto p = simulate(basin, N, z0, 1e-1, opts(false, StopRule::AtHorizon), derive_seed(77, s));
    ASSERT_FALSE(p.events.empty());
    ++count[p.events[0].reaction];
    tsum += p.events[0].t;
  }
  for (int j = 0; j < m.k; ++j) {
    const double pj = beta[j] / total;
    const double se = std::sqrt(pj * (1 - pj) / runs);
    EXPECT_NEAR(static_cast<double>(count[j]) / runs, pj, 5 * se + 1e-12) << "reaction " << j;
  }
  const double mean = 1.0 / (N * total);
  EXPECT_NEAR(tsum / runs, mean, 5 * mean / std::sqrt(runs));
}

TEST(Ssa, EventCountIsLinearInHorizonAtEquilibrium) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const int N = 10000;
  const Vec z0 = project_initial(basin, N, m.endemic);
  const auto beta = oracle::rates("sirs", m.params, m.endemic[0], m.endemic[1]);
  const double rate = N * std::accumulate(beta.begin(), beta.end(), 0.0);
  for (double T : {1.0, 2.0, 4.0}) {
    const auto p = simulate(basin, N, z0, T, opts(false, StopRule::AtHorizon, false), 5);
    const double want = rate * T;
    EXPECT_NEAR(static_cast<double>(p.event_count), want, 6 * std::sqrt(want) + 0.02 * want) << "T=" << T;
    EXPECT_TRUE(p.events.empty());
  }
}

TEST(Ssa, MeanTracksOde) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const int N = 2000;
  const Vec z0 = project_initial(basin, N, vec2(0.2, 0.7));
  const double T = 3.0;
  const auto ode = integrate_ode([&](const Vec& z) { return m.drift(z); }, z0, 0.0, T, 1e-10, 1e-12, {T});
  Vec mean = Vec::Zero(2);
  const int runs = 200;
  for (int s = 0; s < runs; ++s)
    mean += simulate(basin, N, z0, T, opts(false, StopRule::AtHorizon, false), derive_seed(9, s)).final_state;
  mean /= runs;
  EXPECT_LT((mean - ode.z[0]).norm(), 0.01);
}

TEST(Ssa, SirsExitsOnTheInfectionAxis) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const auto ex = exit_experiment(basin, 20, m.endemic, 200, 1e4, 3);
  ASSERT_GT(ex.exits.size(), 150u);
  for (const auto& e : ex.exits) {
    EXPECT_EQ(e.location[0], 0.0);
    EXPECT_FALSE(e.other_boundary);
    EXPECT_EQ(e.mode, ExitMode::HitBoundary);
    EXPECT_GT(e.tau, 0.0);
  }
  EXPECT_EQ(ex.exits.size() + ex.censored, ex.replicas);
}

TEST(Ssa, TinyHorizonCensorsEverything) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const auto ex = exit_experiment(basin, 100, m.endemic, 50, 1e-6, 1);
  EXPECT_TRUE(ex.exits.empty());
  EXPECT_EQ(ex.censored, 50u);
}

TEST(Ssa, AbsorbedAtDiseaseFreeState) {
  // After x hits 0, only recovery-to-susceptible remains and the chain stops at (0, 1).
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const auto p = simulate(basin, 10, vec2(0.1, 0.5), 1e6, opts(false, StopRule::AtHorizon), 4);
  EXPECT_TRUE(p.absorbed);
  EXPECT_EQ(p.final_state[0], 0.0);
  EXPECT_NEAR(p.final_state[1], 1.0, 1e-15);
  ASSERT_TRUE(p.exit.has_value());
  EXPECT_LE(p.exit->tau, p.final_time);
}

TEST(Ssa, ReflectedRunsStayInClosure) {
  for (const auto& name : builtin_model_names()) {
    const auto m = build_model(name);
    const BoundaryTrace tr = trace_boundary(m, 0.02);
    const BasinIndicator basin = m.is_bistable() ? BasinIndicator(m, tr) : BasinIndicator(m);
    const int N = 50;
    const Vec z0 = project_initial(basin, N, m.endemic);
    const auto p = simulate(basin, N, z0, 200.0, opts(true, StopRule::AtHorizon), 8);
    EXPECT_GT(p.event_count, 1000u) << name;
    for (const auto& e : p.events) {
      ASSERT_TRUE(basin.in_closure(e.z)) << name << " t=" << e.t;
      ASSERT_TRUE(m.domain.contains(e.z)) << name;
    }
    if (p.exit) EXPECT_TRUE(basin.in_closure(p.exit->location)) << name;
  }
}

TEST(Ssa, SuppressedJumpsLeaveStateUnchanged) {
  const auto m = build_model("siv");
  const auto tr = trace_boundary(m, 0.02);
  const BasinIndicator basin(m, tr);
  const int N = 30;
  const auto p = simulate(basin, N, project_initial(basin, N, m.endemic), 200.0, opts(true, StopRule::AtHorizon), 2);
  Vec prev = p.initial;
  int suppressed = 0;
  for (const auto& e : p.events) {
    if (e.suppressed) {
      ++suppressed;
      EXPECT_EQ(e.z, prev);
      // The proposed target really is outside the closed basin.
      Vec target = prev;
      for (int i = 0; i < 2; ++i) target[i] += static_cast<double>(m.jumps[e.reaction][i]) / N;
      EXPECT_FALSE(basin.in_closure(target));
    }
    prev = e.z;
  }
  // With N = 30 the separatrix is within a few jumps of z*.
  EXPECT_GT(suppressed, 0);
  ASSERT_TRUE(p.exit.has_value());
  EXPECT_EQ(p.exit->mode, ExitMode::SuppressedJump);
}

TEST(Ssa, ProjectInitialGivesNearbyLatticePoint) {
  std::mt19937_64 g(31);
  for (const auto& name : builtin_model_names()) {
    const auto m = build_model(name);
    const BoundaryTrace tr = trace_boundary(m, 0.02);
    const BasinIndicator basin = m.is_bistable() ? BasinIndicator(m, tr) : BasinIndicator(m);
    for (int N : {10, 97, 1000}) {
      const Vec p = project_initial(basin, N, m.endemic);
      for (int i = 0; i < 2; ++i) EXPECT_NEAR(p[i] * N, std::round(p[i] * N), 1e-9) << name;
      EXPECT_LE((p - m.endemic).norm(), 2.0 / N) << name;
      EXPECT_EQ(basin.locate(p), Region::Inside) << name;
    }
  }
}

TEST(Ssa, RejectsOffLatticeStart) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  EXPECT_THROW(simulate(basin, 10, vec2(0.123, 0.5), 1.0, {}, 1), Error);
  EXPECT_THROW(simulate(basin, 10, vec2(0.1, 0.5), -1.0, {}, 1), Error);
}

TEST(Ssa, ExperimentIndependentOfJobs) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  const auto a = exit_experiment(basin, 15, m.endemic, 64, 1e3, 12, false, 1);
  const auto b = exit_experiment(basin, 15, m.endemic, 64, 1e3, 12, false, 4);
  ASSERT_EQ(a.exits.size(), b.exits.size());
  for (std::size_t i = 0; i < a.exits.size(); ++i) {
    EXPECT_EQ(a.exits[i].replica, b.exits[i].replica);
    EXPECT_EQ(a.exits[i].tau, b.exits[i].tau);
  }
  EXPECT_EQ(a.total_events, b.total_events);
}
