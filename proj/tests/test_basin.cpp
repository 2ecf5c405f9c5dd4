#include <gtest/gtest.h>

#include <random>

#include "exitlab/basin.hpp"
#include "oracles.hpp"

using namespace exitlab;

TEST(Classify, AxisModelsAreEndemicOffTheAxis) {
  const auto m = build_model("sirs");
  EXPECT_EQ(classify_basin(m, vec2(0.01, 0.9)), BasinLabel::Endemic);
  EXPECT_EQ(classify_basin(m, vec2(0.4, 0.1)), BasinLabel::Endemic);
  EXPECT_EQ(classify_basin(m, vec2(0.0, 0.3)), BasinLabel::Boundary);
}

TEST(Classify, BistableAttractors) {
  for (const char* name : {"siv", "s0is1"}) {
    const auto m = build_model(name);
    EXPECT_EQ(classify_basin(m, m.endemic), BasinLabel::Endemic) << name;
    EXPECT_EQ(classify_basin(m, m.disease_free), BasinLabel::Boundary) << name;
    // Small infection near the disease-free state dies out.
    EXPECT_EQ(classify_basin(m, m.disease_free + vec2(1e-3, 0.0)), BasinLabel::Boundary) << name;
  }
}

class TraceTest : public ::testing::TestWithParam<std::string> {};

TEST_P(TraceTest, GeometryAndCharacteristicProperty) {
  const auto m = build_model(GetParam());
  const double res = 0.01;
  const auto tr = trace_boundary(m, res);
  ASSERT_GE(tr.size(), 10u);
  EXPECT_EQ(tr.kind, m.domain.exit_boundary);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_NEAR(tr.normals[i].norm(), 1.0, 1e-12);
    EXPECT_TRUE(m.domain.contains(tr.points[i], 1e-9));
    if (i) {
      EXPECT_LE((tr.points[i] - tr.points[i - 1]).norm(), res * (1 + 1e-9));
      EXPECT_GT(tr.arclength[i], tr.arclength[i - 1]);
    }
  }
  EXPECT_LE(characteristic_check(m, tr), 1e-3);
  // zbar sits on the traced boundary.
  EXPECT_LE(tr.distance(m.boundary_attractor), res);
  // Normals point away from z*.
  const auto i = tr.nearest_vertex(m.boundary_attractor);
  EXPECT_GT(tr.normals[i].dot(tr.points[i] - m.endemic), 0.0);
}

INSTANTIATE_TEST_SUITE_P(Builtins, TraceTest, ::testing::Values("sirs", "sir_demography", "siv", "s0is1"));

TEST(Trace, AxisTraceLiesOnTheAxis) {
  const auto m = build_model("sir_demography");
  const auto tr = trace_boundary(m, 0.05);
  for (const auto& p : tr.points) EXPECT_EQ(p[0], 0.0);
  EXPECT_NEAR(tr.arclength.back(), 3.0, 1e-9);
}

TEST(Trace, SeparatrixPassesThroughSaddleAndSplitsBasins) {
  const auto m = build_model("siv");
  const auto tr = trace_boundary(m, 0.01);
  EXPECT_LT(tr.distance(m.boundary_attractor), 1e-3);
  // The flow is tangent to the separatrix; stepping along the normal flips the label.
  for (std::size_t i = 5; i + 5 < tr.size(); i += 10) {
    const Vec in = m.domain.project(tr.points[i] - 0.02 * tr.normals[i]);
    const Vec out = m.domain.project(tr.points[i] + 0.02 * tr.normals[i]);
    if (!m.domain.contains(in, 0) || !m.domain.contains(out, 0)) continue;
    EXPECT_EQ(classify_basin(m, in), BasinLabel::Endemic) << i;
    EXPECT_EQ(classify_basin(m, out), BasinLabel::Boundary) << i;
  }
}

TEST(Indicator, LocateAgreesWithFlowClassification) {
  std::mt19937_64 g(19);
  for (const char* name : {"siv", "s0is1"}) {
    const auto m = build_model(name);
    const auto tr = trace_boundary(m, 0.01);
    const BasinIndicator basin(m, tr);
    int checked = 0;
    for (int s = 0; s < 400; ++s) {
      const Vec z = oracle::interior_point(m, g);
      if (tr.distance(z) < 0.02) continue;
      const auto label = classify_basin(m, z);
      if (label == BasinLabel::Undecided) continue;
      ++checked;
      EXPECT_EQ(basin.locate(z), label == BasinLabel::Endemic ? Region::Inside : Region::Outside)
          << name << " at " << z.transpose();
    }
    EXPECT_GT(checked, 300) << name;
    EXPECT_EQ(basin.locate(m.endemic), Region::Inside);
    EXPECT_EQ(basin.locate(vec2(0.9, 0.9)), Region::Outside);
  }
}

TEST(Indicator, AxisModelRegions) {
  const auto m = build_model("sirs");
  const BasinIndicator basin(m);
  EXPECT_EQ(basin.locate(vec2(0.1, 0.1)), Region::Inside);
  EXPECT_EQ(basin.locate(vec2(0.0, 0.1)), Region::OnBoundary);
  EXPECT_EQ(basin.locate(vec2(-0.1, 0.1)), Region::Outside);
  EXPECT_THROW(BasinIndicator(build_model("siv")), Error);
}

TEST(Indicator, PerturbedTraceFailsCharacteristicCheck) {
  const auto m = build_model("siv");
  auto tr = trace_boundary(m, 0.01);
  for (auto& n : tr.normals) n = Vec(vec2(n[0] + 0.3, n[1]).normalized());
  EXPECT_GT(characteristic_check(m, tr), 1e-3);
}
