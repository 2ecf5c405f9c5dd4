#include <gtest/gtest.h>

#include <random>

#include "exitlab/action.hpp"
#include "oracles.hpp"

using namespace exitlab;

TEST(RelativeEntropy, SpecialValues) {
  EXPECT_DOUBLE_EQ(relative_entropy_f(0.0, 2.5).value(), 2.5);
  EXPECT_TRUE(relative_entropy_f(1.0, 0.0).is_infinite());
  EXPECT_DOUBLE_EQ(relative_entropy_f(0.0, 0.0).value(), 0.0);
  EXPECT_DOUBLE_EQ(relative_entropy_f(3.0, 3.0).value(), 0.0);
  EXPECT_NEAR(relative_entropy_f(2.0, 1.0).value(), 2 * std::log(2.0) - 1, 1e-15);
  EXPECT_THROW(relative_entropy_f(-1.0, 1.0), Error);
}

TEST(RelativeEntropy, MatchesFormulaAndIsNonnegative) {
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> u(1e-3, 10.0);
  for (int s = 0; s < 2000; ++s) {
    const double nu = u(g), om = u(g);
    const double got = relative_entropy_f(nu, om).value();
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, oracle::f(nu, om), 1e-12 * (1 + oracle::f(nu, om)));
  }
}

TEST(Lagrangian, OneDimensionalBirthDeathClosedForm) {
  JumpMatrix B(1, 2);
  B << 1, -1;
  std::mt19937_64 g(7);
  std::uniform_real_distribution<double> ur(0.1, 3.0), uy(-4.0, 4.0);
  for (int s = 0; s < 500; ++s) {
    RateVec beta(2);
    beta << ur(g), ur(g);
    Vec y(1);
    y << uy(g);
    const auto L = lagrangian_from_rates(B, beta, y, true, {});
    ASSERT_TRUE(L.value.is_finite());
    const double want = oracle::birth_death_L(beta[0], beta[1], y[0]);
    EXPECT_NEAR(L.value.value(), want, 1e-9 * (1 + want)) << "a=" << beta[0] << " b=" << beta[1] << " y=" << y[0];
  }
}

TEST(Lagrangian, ZeroAtDriftPositiveElsewhere) {
  std::mt19937_64 g(13);
  for (const auto& name : builtin_model_names()) {
    const ModelSpec m = build_model(name);
    for (int s = 0; s < 100; ++s) {
      const Vec z = oracle::interior_point(m, g, 1e-2);
      EXPECT_NEAR(lagrangian(m, z, m.drift(z)).value.value(), 0.0, 1e-10) << name;
      const Vec y = m.drift(z) + vec2(0.05, -0.03);
      EXPECT_GT(lagrangian(m, z, y).value.value(), 0.0) << name;
    }
  }
}

TEST(Lagrangian, SeparableProductModel) {
  // Independent coordinates: L is the sum of two birth-death Lagrangians.
  const ModelSpec m = oracle::immigration_death(0.7, 1.3);
  std::mt19937_64 g(17);
  std::uniform_real_distribution<double> uz(0.05, 3.0), uy(-2.0, 2.0);
  for (int s = 0; s < 200; ++s) {
    const Vec z = vec2(uz(g), uz(g));
    const Vec y = vec2(uy(g), uy(g));
    const double want = oracle::birth_death_L(0.7, z[0], y[0]) + oracle::birth_death_L(1.3, z[1], y[1]);
    EXPECT_NEAR(lagrangian(m, z, y).value.value(), want, 1e-9 * (1 + want));
  }
}

TEST(Lagrangian, InfiniteOutsideActiveCone) {
  // On the axis x = 0 of sirs only reaction 3 (0,+1) is active.
  const ModelSpec m = build_model("sirs");
  EXPECT_TRUE(lagrangian(m, vec2(0.0, 0.5), vec2(0.1, 0.0)).value.is_infinite());
  EXPECT_TRUE(lagrangian(m, vec2(0.0, 0.5), vec2(0.0, -0.1)).value.is_infinite());
  const auto up = lagrangian(m, vec2(0.0, 0.5), vec2(0.0, 0.2));
  ASSERT_TRUE(up.value.is_finite());
  // A single active reaction: L = f(y, beta).
  EXPECT_NEAR(up.value.value(), oracle::f(0.2, 0.5), 1e-9);
}

TEST(Lagrangian, DualityProperty) {
  std::mt19937_64 g(23);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (const auto& name : builtin_model_names()) {
    const ModelSpec m = build_model(name);
    int finite = 0;
    for (int s = 0; s < 300; ++s) {
      const Vec z = oracle::interior_point(m, g);
      const Vec y = vec2(nd(g), nd(g));
      const auto L = lagrangian(m, z, y);
      if (L.value.is_infinite() || L.capped) continue;
      ++finite;
      const RateVec beta = m.rates(z);
      const RateVec mu = velocity_decomposition(m, z, y);
      double cost = 0.0;
      for (int j = 0; j < m.k; ++j) cost += oracle::f(mu[j], beta[j]);
      EXPECT_NEAR(L.value.value(), cost, 1e-8) << name;
      Vec v = Vec::Zero(2);
      for (int j = 0; j < m.k; ++j)
        for (int i = 0; i < 2; ++i) v[i] += mu[j] * m.jumps[j][i];
      EXPECT_LT((v - y).norm(), 1e-8) << name;
      // Young: theta.y <= L + H(theta).
      EXPECT_LE(L.theta.dot(y), L.value.value() + reduced_hamiltonian(m, z, L.theta) + 1e-9);
    }
    EXPECT_GT(finite, 250) << name;
  }
}

TEST(Hamiltonian, ClosedForm) {
  const ModelSpec m = build_model("sirs");
  const Vec z = vec2(0.2, 0.5), r = vec2(0.3, -0.4);
  const auto b = oracle::rates("sirs", m.params, 0.2, 0.5);
  const double want = b[0] * (std::exp(0.3 + 0.4) - 1) + b[1] * (std::exp(-0.3) - 1) + b[2] * (std::exp(-0.4) - 1);
  EXPECT_NEAR(reduced_hamiltonian(m, z, r), want, 1e-14);
  EXPECT_DOUBLE_EQ(reduced_hamiltonian(m, z, Vec::Zero(2)), 0.0);
}

TEST(PathAction, DriftPathIsFreeDisplacedPathIsNot) {
  const ModelSpec m = build_model("sirs");
  std::vector<double> grid;
  for (int i = 0; i <= 400; ++i) grid.push_back(i * 0.01);
  const auto path = integrate_ode([&](const Vec& z) { return m.drift(z); }, vec2(0.1, 0.8), 0.0, 4.0, 1e-11, 1e-13,
                                  grid);
  ASSERT_EQ(path.size(), grid.size());
  const auto free = path_action(m, path);
  EXPECT_LT(free.value.value(), 1e-6);

  auto bumped = path;
  bumped.z[200][0] += 0.05;
  EXPECT_GT(path_action(m, bumped).value.value(), 1e-4);
}

TEST(PathAction, ConstantSpeedBirthDeathSegment) {
  // Product model, straight line in x only at constant z: a fixed point in y
  // and a fixed velocity in x. Trapezoid of a smooth L converges; compare with
  // a fine quadrature of the closed form.
  const ModelSpec m = oracle::immigration_death(1.0, 1.0);
  SmoothPath p;
  const int n = 2001;
  for (int i = 0; i < n; ++i) {
    const double t = i * 1e-3;
    p.t.push_back(t);
    p.z.push_back(vec2(1.0 + 0.5 * t, 1.0));
  }
  double want = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    const double a = oracle::birth_death_L(1.0, 1.0 + 0.5 * p.t[i], 0.5);
    const double b = oracle::birth_death_L(1.0, 1.0 + 0.5 * p.t[i + 1], 0.5);
    want += 0.5e-3 * (a + b);
  }
  const auto got = path_action(m, p);
  EXPECT_NEAR(got.value.value(), want, 1e-9);
  EXPECT_LT(got.error_estimate, 1e-6);
  ASSERT_EQ(got.breakdown.size(), 4u);
  EXPECT_NEAR(got.breakdown[2] + got.breakdown[3], 0.0, 1e-12);
}
