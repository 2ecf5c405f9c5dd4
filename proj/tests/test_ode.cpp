#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "exitlab/ode.hpp"

using namespace exitlab;

TEST(Ode, LinearDecayOnGrid) {
  std::vector<double> grid;
  for (int i = 0; i <= 50; ++i) grid.push_back(0.1 * i);
  const auto p = integrate_ode([](const Vec& z) { return Vec(-0.7 * z); }, vec2(1.0, -2.0), 0.0, 5.0, 1e-10, 1e-12, grid);
  ASSERT_EQ(p.size(), grid.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_DOUBLE_EQ(p.t[i], grid[i]);
    // Grid values come from cubic Hermite dense output between steps.
    EXPECT_NEAR(p.z[i][0], std::exp(-0.7 * grid[i]), 1e-7);
    EXPECT_NEAR(p.z[i][1], -2.0 * std::exp(-0.7 * grid[i]), 2e-7);
  }
}

TEST(Ode, HarmonicOscillatorConservesEnergy) {
  const auto p = integrate_ode([](const Vec& z) { return vec2(z[1], -z[0]); }, vec2(1.0, 0.0), 0.0, 20.0, 1e-11, 1e-13);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_NEAR(p.z[i][0], std::cos(p.t[i]), 1e-8);
    EXPECT_NEAR(p.z[i].squaredNorm(), 1.0, 1e-8);
  }
  EXPECT_DOUBLE_EQ(p.t.back(), 20.0);
}

TEST(Ode, RandomLinearSystemsMatchMatrixExponential) {
  std::mt19937_64 g(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int s = 0; s < 20; ++s) {
    // Diagonalizable via rotation: A = -a I + w J has a closed-form flow.
    const double a = 0.1 + std::abs(u(g)), w = 2 * u(g);
    const Vec z0 = vec2(u(g), u(g));
    const double T = 3.0;
    const auto p = integrate_ode([&](const Vec& z) { return vec2(-a * z[0] + w * z[1], -w * z[0] - a * z[1]); }, z0,
                                 0.0, T, 1e-10, 1e-12, {T});
    ASSERT_EQ(p.size(), 1u);
    const double e = std::exp(-a * T), c = std::cos(w * T), sn = std::sin(w * T);
    EXPECT_NEAR(p.z[0][0], e * (c * z0[0] + sn * z0[1]), 1e-8);
    EXPECT_NEAR(p.z[0][1], e * (-sn * z0[0] + c * z0[1]), 1e-8);
  }
}

TEST(Ode, RejectsEmptyInterval) {
  EXPECT_THROW(integrate_ode([](const Vec& z) { return z; }, vec2(1, 1), 1.0, 1.0), Error);
}

TEST(SmoothPath, CheckRejectsBadGrids) {
  SmoothPath p;
  p.t = {0.0, 0.0};
  p.z = {vec2(0, 0), vec2(1, 1)};
  EXPECT_THROW(p.check(), Error);
  p.t = {0.0};
  EXPECT_THROW(p.check(), Error);
}
