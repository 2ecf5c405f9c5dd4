#pragma once

#include <random>
#include <string>
#include <vector>

#include "exitlab/action.hpp"
#include "exitlab/basin.hpp"
#include "exitlab/model.hpp"
#include "exitlab/ssa.hpp"

namespace exitlab {

struct SelftestCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

/// Uniform point of the domain (rejection from the bounding box).
inline Vec random_domain_point(const ModelSpec& m, std::mt19937_64& g) {
  const double cap = m.domain.total();
  std::uniform_real_distribution<double> u(0.0, cap);
  while (true) {
    Vec z(m.d);
    for (int i = 0; i < m.d; ++i) z[i] = u(g);
    if (z.sum() <= cap) return z;
  }
}

struct SelftestOptions {
  int samples = 200;
  double resolution = 0.02;
  std::uint64_t events = 20000;
  int N = 200;
  std::uint64_t seed = 1;
};

/// Quick invariant suite over the built-in models.
inline std::vector<SelftestCheck> run_selftest(const SelftestOptions& opt = {}) {
  std::vector<SelftestCheck> out;
  auto add = [&](std::string name, double value, double threshold, bool less = true, std::string detail = {}) {
    out.push_back({std::move(name), less ? value <= threshold : value >= threshold, value, threshold, std::move(detail)});
  };
  std::mt19937_64 g(opt.seed);
  for (const auto& name : builtin_model_names()) {
    const ModelSpec m = build_model(name);
    add(name + ".positive_span", check_positive_span(m) ? 1.0 : 0.0, 1.0, false);
    add(name + ".equilibrium_drift", std::max(m.drift(m.endemic).norm(), m.drift(m.boundary_attractor).norm()), 1e-10);

    double min_rate = 0.0, grad_err = 0.0, duality = 0.0, recon = 0.0;
    const double h = 1e-6;
    for (int s = 0; s < opt.samples; ++s) {
      Vec z = random_domain_point(m, g);
      min_rate = std::min(min_rate, m.rates(z).minCoeff());
      // Central differences need room on both sides.
      Vec zi = z.cwiseMax(2 * h);
      if (zi.sum() > m.domain.total() - 2 * h) zi *= (m.domain.total() - 2 * h) / zi.sum();
      const JumpMatrix G = m.rate_gradients(zi);
      for (int i = 0; i < m.d; ++i) {
        Vec e = Vec::Zero(m.d);
        e[i] = h;
        const RateVec fd = (m.rates(zi + e) - m.rates(zi - e)) / (2 * h);
        for (int j = 0; j < m.k; ++j)
          grad_err = std::max(grad_err, std::abs(fd[j] - G(i, j)) / std::max(1.0, std::abs(G(i, j))));
      }
      Vec y(m.d);
      std::normal_distribution<double> nd(0.0, 1.0);
      for (int i = 0; i < m.d; ++i) y[i] = nd(g);
      const auto L = lagrangian(m, z, y);
      if (L.value.is_infinite() || L.capped) continue;
      const RateVec beta = m.rates(z);
      const RateVec mu = beta.array() * (m.B.transpose() * L.theta).array().exp();
      duality = std::max(duality, std::abs(L.value.value() - control_cost(m, z, mu).value()));
      recon = std::max(recon, (m.B * mu - y).norm());
    }
    add(name + ".rates_nonnegative", min_rate, 0.0, false);
    add(name + ".gradient_fd", grad_err, 1e-5);
    add(name + ".duality", duality, 1e-8);
    add(name + ".velocity_reconstruction", recon, 1e-8);

    const BoundaryTrace tr = trace_boundary(m, opt.resolution);
    add(name + ".characteristic_check", characteristic_check(m, tr), 1e-3);

    const BasinIndicator basin = m.is_bistable() ? BasinIndicator(m, tr) : BasinIndicator(m);
    SimulateOptions so;
    so.reflect = true;
    so.record_events = true;
    const Vec start = project_initial(basin, opt.N, m.endemic);
    // Long horizon; the event budget is enforced by truncating the check.
    const auto path = simulate(basin, opt.N, start, static_cast<double>(opt.events) / opt.N, so, opt.seed);
    std::size_t outside = 0;
    for (const auto& e : path.events)
      if (!basin.in_closure(e.z)) ++outside;
    add(name + ".reflected_in_closure", static_cast<double>(outside), 0.0, true,
        std::to_string(path.event_count) + " events");
  }
  return out;
}

}  // namespace exitlab
