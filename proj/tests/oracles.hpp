#pragma once

// Hand-written reference formulas used as independent oracles by the tests.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "exitlab/model.hpp"

namespace oracle {

using exitlab::Vec;

/// Rates typed directly from the model definitions (no clamping needed inside
/// the domain interior).
inline std::vector<double> rates(const std::string& name, const std::map<std::string, double>& p, double x,
                                 double y) {
  if (name == "sirs")
    return {p.at("lambda") * x * y, p.at("gamma") * x, p.at("rho") * (1 - x - y)};
  if (name == "sir_demography")
    return {p.at("lambda") * x * y, (p.at("gamma") + p.at("mu")) * x, p.at("mu"), p.at("mu") * y};
  if (name == "siv") {
    const double s = 1 - x - y, b = p.at("beta");
    return {b * x * s,         p.at("chi") * b * x * y, p.at("gamma") * x, p.at("theta") * y,
            p.at("eta") * s,   p.at("mu") * x,          p.at("mu") * y};
  }
  const double b = p.at("beta");
  return {b * x * (1 - x - y), p.at("alpha") * x, p.at("mu") * x, p.at("r") * b * x * y, p.at("mu") * y};
}

/// Endemic equilibrium of sirs in closed form.
inline Vec sirs_endemic(double lambda, double gamma, double rho) {
  return exitlab::vec2(rho * (lambda - gamma) / (lambda * (rho + gamma)), gamma / lambda);
}

/// Endemic equilibrium of sir_demography in closed form.
inline Vec sird_endemic(double lambda, double gamma, double mu) {
  return exitlab::vec2(mu / (gamma + mu) - mu / lambda, (gamma + mu) / lambda);
}

/// f(nu, omega) by its defining formula.
inline double f(double nu, double omega) { return nu * std::log(nu / omega) - nu + omega; }

/// One-dimensional birth-death Lagrangian with jumps +1 (rate a) and -1 (rate b):
/// L(y) = y log((y + sqrt(y^2 + 4ab)) / (2a)) - sqrt(y^2 + 4ab) + a + b.
inline double birth_death_L(double a, double b, double y) {
  const double s = std::sqrt(y * y + 4 * a * b);
  return y * std::log((y + s) / (2 * a)) - s + a + b;
}

/// Two independent immigration-death coordinates: jumps +e_i at rate c_i and
/// -e_i at rate z_i. Its quasipotential from (c_1, c_2) is separable:
/// V(y) = sum_i y_i log(y_i / c_i) - y_i + c_i.
inline exitlab::ModelSpec immigration_death(double c1, double c2, double R = 10.0) {
  exitlab::ModelSpec m;
  m.name = "immigration_death";
  m.d = 2;
  m.jumps = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  m.rate_fn = [=](const Vec& z, exitlab::RateVec& r) {
    r[0] = c1;
    r[1] = std::max(z[0], 0.0);
    r[2] = c2;
    r[3] = std::max(z[1], 0.0);
  };
  m.gradient_fn = [](const Vec&, exitlab::JumpMatrix& g) {
    g.setZero();
    g(0, 1) = 1.0;
    g(1, 3) = 1.0;
  };
  m.domain = {exitlab::DomainKind::Box, R, exitlab::ExitBoundaryKind::Axis};
  exitlab::detail::finish(m);
  m.endemic = exitlab::vec2(c1, c2);
  m.boundary_attractor = m.endemic;
  m.disease_free = m.endemic;
  return m;
}

inline double immigration_death_V(double c1, double c2, const Vec& y) {
  auto one = [](double c, double v) { return v * std::log(v / c) - v + c; };
  return one(c1, y[0]) + one(c2, y[1]);
}

/// Uniform interior point of the domain, kept `margin` away from its faces.
inline Vec interior_point(const exitlab::ModelSpec& m, std::mt19937_64& g, double margin = 1e-3) {
  const double cap = m.domain.total();
  std::uniform_real_distribution<double> u(margin, cap - margin);
  while (true) {
    Vec z = exitlab::vec2(u(g), u(g));
    if (z.sum() <= cap - margin) return z;
  }
}

}  // namespace oracle
