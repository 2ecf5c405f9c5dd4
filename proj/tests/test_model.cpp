#include <gtest/gtest.h>

#include <random>

#include "exitlab/model.hpp"
#include "oracles.hpp"

using namespace exitlab;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no exitlab::Error thrown";
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(Model, RatesMatchHandTypedFormulas) {
  std::mt19937_64 g(11);
  for (const auto& name : builtin_model_names()) {
    const ModelSpec m = build_model(name);
    for (int s = 0; s < 200; ++s) {
      const Vec z = oracle::interior_point(m, g);
      const auto want = oracle::rates(name, m.params, z[0], z[1]);
      const RateVec got = m.rates(z);
      ASSERT_EQ(got.size(), static_cast<Eigen::Index>(want.size())) << name;
      for (std::size_t j = 0; j < want.size(); ++j) EXPECT_NEAR(got[j], want[j], 1e-14) << name << " j=" << j;
    }
  }
}

TEST(Model, ClosedFormEndemicEquilibria) {
  const auto sirs = build_model("sirs", {{"lambda", 3.0}, {"gamma", 1.2}, {"rho", 0.7}});
  const Vec zs = oracle::sirs_endemic(3.0, 1.2, 0.7);
  EXPECT_NEAR((sirs.endemic - zs).norm(), 0.0, 1e-14);
  EXPECT_LT(sirs.drift(zs).norm(), 1e-14);

  const auto sird = build_model("sir_demography");
  const Vec zd = oracle::sird_endemic(2.0, 0.5, 0.5);
  EXPECT_NEAR(zd[0], 0.25, 1e-15);
  EXPECT_NEAR(zd[1], 0.5, 1e-15);
  EXPECT_NEAR((sird.endemic - zd).norm(), 0.0, 1e-14);
  EXPECT_LT(sird.drift(vec2(0.0, 1.0)).norm(), 1e-15);
}

TEST(Model, BistablePresetsHaveThreeEquilibria) {
  for (const char* name : {"siv", "s0is1"}) {
    const auto m = build_model(name);
    const auto eqs = equilibria(m);
    ASSERT_EQ(eqs.size(), 3u) << name;
    int stable = 0, saddle = 0;
    for (const auto& e : eqs) {
      EXPECT_LT(m.drift(e.point).norm(), 1e-10);
      stable += e.stability == Stability::Stable;
      saddle += e.stability == Stability::Saddle;
    }
    EXPECT_EQ(stable, 2) << name;
    EXPECT_EQ(saddle, 1) << name;
    EXPECT_GT(m.endemic[0], m.boundary_attractor[0]);
    EXPECT_NEAR(m.disease_free[0], 0.0, 1e-12);
  }
}

TEST(Model, GradientsAgreeWithFiniteDifferences) {
  std::mt19937_64 g(5);
  const double h = 1e-6;
  for (const auto& name : builtin_model_names()) {
    const ModelSpec m = build_model(name);
    for (int s = 0; s < 100; ++s) {
      const Vec z = oracle::interior_point(m, g, 1e-2);
      const JumpMatrix G = m.rate_gradients(z);
      for (int i = 0; i < 2; ++i) {
        Vec e = Vec::Zero(2);
        e[i] = h;
        const auto up = oracle::rates(name, m.params, (z + e)[0], (z + e)[1]);
        const auto dn = oracle::rates(name, m.params, (z - e)[0], (z - e)[1]);
        for (int j = 0; j < m.k; ++j) EXPECT_NEAR(G(i, j), (up[j] - dn[j]) / (2 * h), 1e-6) << name;
      }
    }
  }
}

TEST(Model, PositiveSpan) {
  for (const auto& name : builtin_model_names()) EXPECT_TRUE(build_model(name).positive_span) << name;
  EXPECT_FALSE(check_positive_span({{1, 0}, {0, 1}}, 2));
  EXPECT_FALSE(check_positive_span({{1, 0}, {-1, 0}}, 2));
  EXPECT_TRUE(check_positive_span({{1, 0}, {0, 1}, {-1, -1}}, 2));
  EXPECT_TRUE(check_positive_span({{1, 0}, {-1, 0}, {0, 1}, {0, -1}}, 2));
}

TEST(Model, ErrorKinds) {
  EXPECT_EQ(kind_of([] { build_model("seir"); }), ErrorKind::UnknownModel);
  EXPECT_EQ(kind_of([] { build_model("sirs", {{"lambda", 0.5}}); }), ErrorKind::RegimeViolation);
  EXPECT_EQ(kind_of([] { build_model("sirs", {{"gamma", -1.0}}); }), ErrorKind::RegimeViolation);
  EXPECT_EQ(kind_of([] { build_model("sirs", {{"beta", 1.0}}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { build_model("siv", {{"beta", 1.0}}); }), ErrorKind::RegimeViolation);
  const auto m = build_model("sirs");
  EXPECT_EQ(kind_of([&] { drift(m, vec2(0.8, 0.8)); }), ErrorKind::OutOfDomain);
  EXPECT_EQ(kind_of([&] { drift(m, vec2(-0.1, 0.5)); }), ErrorKind::OutOfDomain);
}

TEST(Model, DriftIsJumpWeightedRates) {
  std::mt19937_64 g(3);
  for (const auto& name : builtin_model_names()) {
    const ModelSpec m = build_model(name);
    for (int s = 0; s < 50; ++s) {
      const Vec z = oracle::interior_point(m, g);
      const auto r = oracle::rates(name, m.params, z[0], z[1]);
      Vec b = Vec::Zero(2);
      for (int j = 0; j < m.k; ++j)
        for (int i = 0; i < 2; ++i) b[i] += r[j] * m.jumps[j][i];
      EXPECT_LT((m.drift(z) - b).norm(), 1e-13) << name;
    }
  }
}

TEST(Model, DomainProjection) {
  DomainSpec simplex;
  EXPECT_TRUE(simplex.contains(vec2(0.5, 0.5)));
  EXPECT_FALSE(simplex.contains(vec2(0.6, 0.5)));
  const Vec p = simplex.project(vec2(0.9, 0.5));
  EXPECT_NEAR(p[0], 0.7, 1e-14);
  EXPECT_NEAR(p[1], 0.3, 1e-14);
  const Vec q = simplex.project(vec2(-0.2, 0.4));
  EXPECT_NEAR(q[0], 0.0, 0.0);
  EXPECT_NEAR(q[1], 0.4, 0.0);
}
