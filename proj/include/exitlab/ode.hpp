#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "exitlab/core.hpp"

namespace exitlab {

/// Time-gridded path, optionally with controls (per reaction) and adjoints.
struct SmoothPath {
  std::vector<double> t;
  std::vector<Vec> z;
  std::vector<RateVec> controls;
  std::vector<Vec> adjoints;

  std::size_t size() const { return t.size(); }
  bool empty() const { return t.empty(); }
  double duration() const { return t.empty() ? 0.0 : t.back() - t.front(); }

  void check() const {
    if (t.size() != z.size()) throw Error(ErrorKind::InvalidArgument, "path grid/points size mismatch");
    for (std::size_t i = 1; i < t.size(); ++i)
      if (!(t[i] > t[i - 1])) throw Error(ErrorKind::InvalidArgument, "path grid not strictly increasing");
    for (const auto& c : controls)
      if ((c.array() < 0.0).any()) throw Error(ErrorKind::InvalidArgument, "negative control");
  }
};

struct OdeOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  double initial_step = 0.0;  // 0: automatic
  double max_step = 0.0;      // 0: unbounded
  double min_step = 1e-13;
  long max_steps = 50'000'000;
};

/// One accepted step, with enough data for cubic Hermite dense output.
template <class State>
struct OdeStep {
  double t0, t1;
  const State& y0;
  const State& f0;
  const State& y1;
  const State& f1;

  State at(double t) const {
    const double h = t1 - t0;
    const double s = (t - t0) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
    const double h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s);
    const double h11 = s * s * (s - 1);
    return State(h00 * y0 + (h10 * h) * f0 + h01 * y1 + (h11 * h) * f1);
  }
};

/// Adaptive Dormand-Prince 5(4) integration from t0 to t1 (either direction).
/// `observer(step)` is called for every accepted step and may return false to
/// stop early. Returns the final time reached.
template <class State, class Field, class Observer>
double integrate_adaptive(Field&& field, State y, double t0, double t1, const OdeOptions& opt,
                          Observer&& observer) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  const double dir = t1 >= t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  if (span == 0.0) return t0;

  State k1 = field(t0, y);
  auto err_norm = [&](const State& y0, const State& y1, const State& err) {
    double e = 0.0;
    for (Eigen::Index i = 0; i < y0.size(); ++i) {
      const double sc = opt.abs_tol + opt.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
      e = std::max(e, std::abs(err[i]) / sc);
    }
    return e;
  };

  double h = opt.initial_step;
  if (h <= 0.0) {
    const double d0 = y.template lpNorm<Eigen::Infinity>() + 1e-3;
    const double d1 = k1.template lpNorm<Eigen::Infinity>() + 1e-12;
    h = std::min(span, 0.01 * d0 / d1);
    h = std::max(h, 1e-8 * span);
  }
  if (opt.max_step > 0.0) h = std::min(h, opt.max_step);

  double t = t0;
  long steps = 0;
  while (dir * (t1 - t) > 0.0) {
    if (++steps > opt.max_steps) {
      std::ostringstream os;
      os << "step budget exhausted at t=" << t;
      throw Error(ErrorKind::StepUnderflow, os.str());
    }
    h = std::min(h, std::abs(t1 - t));
    const double hs = dir * h;
    State k2 = field(t + c2 * hs, State(y + hs * a21 * k1));
    State k3 = field(t + c3 * hs, State(y + hs * (a31 * k1 + a32 * k2)));
    State k4 = field(t + c4 * hs, State(y + hs * (a41 * k1 + a42 * k2 + a43 * k3)));
    State k5 = field(t + c5 * hs, State(y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
    State k6 = field(t + hs, State(y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
    State ynew = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    State k7 = field(t + hs, ynew);
    State err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double en = err_norm(y, ynew, err);
    if (!std::isfinite(en)) en = 1e10;
    if (en <= 1.0) {
      const double tnew = (std::abs(t1 - (t + hs)) < 1e-14 * span) ? t1 : t + hs;
      OdeStep<State> step{t, tnew, y, k1, ynew, k7};
      const bool go_on = observer(step);
      t = tnew;
      y = ynew;
      k1 = k7;
      if (!go_on) return t;
      const double fac = en == 0.0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(en, -0.2)));
      h *= fac;
    } else {
      h *= std::max(0.1, 0.9 * std::pow(en, -0.25));
    }
    if (opt.max_step > 0.0) h = std::min(h, opt.max_step);
    if (h < opt.min_step * std::max(1.0, std::abs(t))) {
      std::ostringstream os;
      os << "step size underflow at t=" << t << ", y=(" << y.transpose() << ")";
      throw Error(ErrorKind::StepUnderflow, os.str());
    }
  }
  return t;
}

using VectorField = std::function<Vec(const Vec&)>;

/// Solves z' = field(z) on [t_a, t_b]. With an empty `grid` every accepted step
/// is recorded; otherwise the solution is sampled at the grid times by cubic
/// Hermite interpolation.
inline SmoothPath integrate_ode(const VectorField& field, const Vec& z0, double t_a, double t_b,
                                double rel_tol = 1e-8, double abs_tol = 1e-10,
                                const std::vector<double>& grid = {}) {
  if (!(t_a < t_b)) throw Error(ErrorKind::InvalidArgument, "integrate_ode needs t_a < t_b");
  OdeOptions opt;
  opt.rel_tol = rel_tol;
  opt.abs_tol = abs_tol;
  SmoothPath path;
  std::size_t next = 0;
  if (grid.empty()) {
    path.t.push_back(t_a);
    path.z.push_back(z0);
  } else {
    while (next < grid.size() && grid[next] < t_a) ++next;
    if (next < grid.size() && grid[next] == t_a) {
      path.t.push_back(t_a);
      path.z.push_back(z0);
      ++next;
    }
  }
  auto f = [&](double, const Vec& z) { return field(z); };
  integrate_adaptive(f, z0, t_a, t_b, opt, [&](const OdeStep<Vec>& s) {
    if (grid.empty()) {
      path.t.push_back(s.t1);
      path.z.push_back(s.y1);
    } else {
      while (next < grid.size() && grid[next] <= s.t1) {
        path.t.push_back(grid[next]);
        path.z.push_back(grid[next] == s.t1 ? s.y1 : s.at(grid[next]));
        ++next;
      }
    }
    return true;
  });
  return path;
}

}  // namespace exitlab
