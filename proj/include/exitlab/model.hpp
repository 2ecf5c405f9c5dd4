#pragma once

#include <algorithm>
#include <complex>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "exitlab/core.hpp"

namespace exitlab {

enum class DomainKind { Simplex, Box };
enum class ExitBoundaryKind { Axis, Separatrix };

/// State space geometry. `Simplex` is {z >= 0, sum z <= 1}; `Box` is the
/// truncated quadrant {z >= 0, sum z <= R}.
struct DomainSpec {
  DomainKind kind = DomainKind::Simplex;
  double R = 1.0;
  ExitBoundaryKind exit_boundary = ExitBoundaryKind::Axis;

  double total() const { return kind == DomainKind::Simplex ? 1.0 : R; }

  bool contains(const Vec& z, double tol = 1e-12) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (!(z[i] >= -tol)) return false;
      s += z[i];
    }
    return s <= total() + tol;
  }

  /// Euclidean projection onto the domain (a scaled simplex-like polytope).
  Vec project(const Vec& z) const {
    Vec p = z.cwiseMax(0.0);
    const double cap = total();
    if (p.sum() <= cap) return p;
    // Project onto {p >= 0, sum p = cap}; standard sort-based algorithm.
    std::vector<double> u(z.data(), z.data() + z.size());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, shift = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      cum += u[i];
      const double t = (cum - cap) / static_cast<double>(i + 1);
      if (u[i] - t > 0) shift = t;
    }
    return (z.array() - shift).cwiseMax(0.0).matrix();
  }
};

using RateFn = std::function<void(const Vec& z, RateVec& out)>;
using GradientFn = std::function<void(const Vec& z, JumpMatrix& out)>;

/// A density-dependent jump process: reaction j fires at rate N*beta_j(z) and
/// moves the state by h_j / N.
struct ModelSpec {
  std::string name;
  int d = 0;
  int k = 0;
  std::vector<std::vector<int>> jumps;  // k integer vectors of length d
  JumpMatrix B;                         // d x k, column j is h_j
  RateFn rate_fn;
  GradientFn gradient_fn;               // column j is grad beta_j
  std::map<std::string, double> params;
  DomainSpec domain;
  Vec endemic;             // z*
  Vec boundary_attractor;  // zbar, the equilibrium on the characteristic boundary
  Vec disease_free;        // attractor reached from the far side of the boundary
  bool positive_span = false;

  RateVec rates(const Vec& z) const {
    RateVec r(k);
    rate_fn(z, r);
    return r;
  }
  JumpMatrix rate_gradients(const Vec& z) const {
    JumpMatrix g(d, k);
    gradient_fn(z, g);
    return g;
  }
  Vec drift(const Vec& z) const { return B * rates(z); }
  /// Jacobian of the drift, sum_j h_j grad(beta_j)^T.
  DimMat drift_jacobian(const Vec& z) const { return B * rate_gradients(z).transpose(); }
  double param(const std::string& key) const { return params.at(key); }
  bool is_bistable() const { return domain.exit_boundary == ExitBoundaryKind::Separatrix; }
};

inline void require_in_domain(const ModelSpec& m, const Vec& z) {
  if (z.size() != m.d || !m.domain.contains(z, 1e-9)) {
    std::ostringstream os;
    os << "state (" << z.transpose() << ") outside the domain of " << m.name;
    throw Error(ErrorKind::OutOfDomain, os.str());
  }
}

/// Rates and analytic gradients, with the domain precondition checked.
inline std::pair<RateVec, JumpMatrix> rates_and_gradients(const ModelSpec& m, const Vec& z) {
  require_in_domain(m, z);
  return {m.rates(z), m.rate_gradients(z)};
}

inline Vec drift(const ModelSpec& m, const Vec& z) {
  require_in_domain(m, z);
  return m.drift(z);
}

// ---------------------------------------------------------------------------
// Equilibria

enum class Stability { Stable, Saddle, Unstable, Degenerate };

inline std::string_view to_string(Stability s) {
  switch (s) {
    case Stability::Stable: return "stable";
    case Stability::Saddle: return "saddle";
    case Stability::Unstable: return "unstable";
    case Stability::Degenerate: return "degenerate";
  }
  return "?";
}

struct Equilibrium {
  Vec point;
  std::vector<std::complex<double>> eigenvalues;
  Stability stability = Stability::Degenerate;
  double residual = 0.0;
};

inline Stability classify_spectrum(const std::vector<std::complex<double>>& ev, double tol = 1e-10) {
  int neg = 0, pos = 0;
  for (const auto& e : ev) {
    if (e.real() < -tol) ++neg;
    else if (e.real() > tol) ++pos;
  }
  if (neg + pos < static_cast<int>(ev.size())) return Stability::Degenerate;
  if (pos == 0) return Stability::Stable;
  if (neg == 0) return Stability::Unstable;
  return Stability::Saddle;
}

inline std::vector<std::complex<double>> eigenvalues_of(const DimMat& J) {
  Eigen::MatrixXd A = J;
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  std::vector<std::complex<double>> out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()[i]);
  std::sort(out.begin(), out.end(), [](auto a, auto b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return out;
}

/// Damped Newton for b(z) = 0 from `start`; returns false if it does not converge.
inline bool newton_equilibrium(const ModelSpec& m, Vec& z, int max_iter = 100, double tol = 1e-13) {
  Vec f = m.drift(z);
  for (int it = 0; it < max_iter; ++it) {
    const double fn = f.norm();
    if (fn < tol) return true;
    const DimMat J = m.drift_jacobian(z);
    Eigen::MatrixXd A = J;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) return false;
    Eigen::VectorXd step = lu.solve(Eigen::VectorXd(-f));
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      Vec trial = z + t * Vec(step);
      // Rates are only defined on the domain; allow a small overshoot.
      if (m.domain.contains(trial, 1e-6)) {
        Vec ft = m.drift(trial);
        if (ft.norm() < (1.0 - 1e-4 * t) * fn) {
          z = trial;
          f = ft;
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) return f.norm() < 1e-11;
  }
  return f.norm() < 1e-11;
}

/// All fixed points of the drift in the domain, found by multi-start Newton on
/// a grid x grid lattice of seeds and deduplicated within 1e-8.
inline std::vector<Equilibrium> equilibria(const ModelSpec& m, int grid = 50) {
  if (m.d != 2) throw Error(ErrorKind::InvalidArgument, "equilibria search supports d = 2");
  std::vector<Vec> roots;
  const double cap = m.domain.total();
  for (int i = 0; i <= grid; ++i) {
    for (int j = 0; j + i <= grid; ++j) {
      Vec z = vec2(cap * i / grid, cap * j / grid);
      if (!newton_equilibrium(m, z)) continue;
      if (!m.domain.contains(z, 1e-9)) continue;
      z = m.domain.project(z);
      // Snap tiny coordinates so boundary equilibria sit exactly on the face.
      for (Eigen::Index c = 0; c < z.size(); ++c)
        if (std::abs(z[c]) < 1e-14) z[c] = 0.0;
      const bool dup = std::any_of(roots.begin(), roots.end(),
                                   [&](const Vec& r) { return (r - z).norm() < 1e-8; });
      if (!dup) roots.push_back(z);
    }
  }
  if (roots.empty()) throw Error(ErrorKind::RootFindFailure, "no fixed point of the drift found in " + m.name);
  std::sort(roots.begin(), roots.end(),
            [](const Vec& a, const Vec& b) { return a[0] != b[0] ? a[0] < b[0] : a[1] < b[1]; });
  std::vector<Equilibrium> out;
  for (const auto& r : roots) {
    Equilibrium e;
    e.point = r;
    e.residual = m.drift(r).norm();
    if (e.residual > 1e-10) {
      std::ostringstream os;
      os << "root (" << r.transpose() << ") has residual " << e.residual;
      throw Error(ErrorKind::RootFindFailure, os.str());
    }
    e.eigenvalues = eigenvalues_of(m.drift_jacobian(r));
    e.stability = classify_spectrum(e.eigenvalues);
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Positive span

/// True iff the conic hull of the jump vectors is all of R^d. Each signed basis
/// vector is tested for a nonnegative combination over linearly independent
/// subsets of at most d jumps (Caratheodory), solved exactly.
inline bool check_positive_span(const std::vector<std::vector<int>>& jumps, int d) {
  const int k = static_cast<int>(jumps.size());
  auto column = [&](int j) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = jumps[j][i];
    return v;
  };
  auto reachable = [&](const Eigen::VectorXd& target) {
    std::vector<int> idx;
    // Enumerate subsets of size 1..d via recursion.
    std::function<bool(int, int)> rec = [&](int start, int left) -> bool {
      if (!idx.empty()) {
        Eigen::MatrixXd A(d, idx.size());
        for (std::size_t c = 0; c < idx.size(); ++c) A.col(c) = column(idx[c]);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        if (qr.rank() == static_cast<Eigen::Index>(idx.size())) {
          Eigen::VectorXd w = qr.solve(target);
          if ((A * w - target).norm() < 1e-10 && (w.array() >= -1e-12).all()) return true;
        }
      }
      if (left == 0) return false;
      for (int j = start; j < k; ++j) {
        idx.push_back(j);
        if (rec(j + 1, left - 1)) return true;
        idx.pop_back();
      }
      return false;
    };
    return rec(0, d);
  };
  for (int i = 0; i < d; ++i) {
    for (double s : {1.0, -1.0}) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
      e[i] = s;
      if (!reachable(e)) return false;
    }
  }
  return true;
}

inline bool check_positive_span(const ModelSpec& m) { return check_positive_span(m.jumps, m.d); }

// ---------------------------------------------------------------------------
// Built-in models

namespace detail {

inline JumpMatrix jump_matrix(const std::vector<std::vector<int>>& jumps, int d) {
  JumpMatrix B(d, static_cast<int>(jumps.size()));
  for (std::size_t j = 0; j < jumps.size(); ++j)
    for (int i = 0; i < d; ++i) B(i, static_cast<int>(j)) = jumps[j][i];
  return B;
}

inline double get(const std::map<std::string, double>& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw Error(ErrorKind::InvalidArgument, "missing parameter '" + key + "'");
  return it->second;
}

inline std::map<std::string, double> merge_params(const std::map<std::string, double>& defaults,
                                                  const std::map<std::string, double>& given,
                                                  const std::string& model) {
  auto out = defaults;
  for (const auto& [key, v] : given) {
    if (!defaults.count(key))
      throw Error(ErrorKind::InvalidArgument, "unknown parameter '" + key + "' for model " + model);
    out[key] = v;
  }
  for (const auto& [key, v] : out) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw Error(ErrorKind::RegimeViolation, "parameter '" + key + "' must be strictly positive");
  }
  return out;
}

inline double clamp0(double v) { return v > 0.0 ? v : 0.0; }

inline void finish(ModelSpec& m) {
  m.k = static_cast<int>(m.jumps.size());
  m.B = jump_matrix(m.jumps, m.d);
  m.positive_span = check_positive_span(m.jumps, m.d);
}

// Picks z* (stable, infected), zbar (saddle) and the disease-free attractor for
// the bistable models; validates the three-equilibrium regime.
inline void assign_bistable_equilibria(ModelSpec& m) {
  const auto eqs = equilibria(m);
  std::vector<const Equilibrium*> stable_inf, saddles, dfe;
  for (const auto& e : eqs) {
    if (e.point[0] > 1e-9) {
      if (e.stability == Stability::Stable) stable_inf.push_back(&e);
      else if (e.stability == Stability::Saddle) saddles.push_back(&e);
    } else {
      dfe.push_back(&e);
    }
  }
  if (eqs.size() != 3 || stable_inf.size() != 1 || saddles.size() != 1 || dfe.size() != 1 ||
      dfe.front()->stability != Stability::Stable) {
    std::ostringstream os;
    os << m.name << " parameters do not give the bistable regime (found " << eqs.size()
       << " equilibria:";
    for (const auto& e : eqs) os << " (" << e.point.transpose() << ") " << to_string(e.stability) << ";";
    os << ")";
    throw Error(ErrorKind::RegimeViolation, os.str());
  }
  m.endemic = stable_inf.front()->point;
  m.boundary_attractor = saddles.front()->point;
  m.disease_free = dfe.front()->point;
}

}  // namespace detail

inline const std::vector<std::string>& builtin_model_names() {
  static const std::vector<std::string> names{"sirs", "sir_demography", "siv", "s0is1"};
  return names;
}

/// Default parameters of each built-in; the bistable presets sit in the
/// three-equilibrium regime.
inline std::map<std::string, double> default_params(const std::string& name) {
  if (name == "sirs") return {{"lambda", 2.0}, {"gamma", 1.0}, {"rho", 1.0}};
  if (name == "sir_demography") return {{"lambda", 2.0}, {"gamma", 0.5}, {"mu", 0.5}, {"R", 3.0}};
  if (name == "siv")
    return {{"beta", 9.0}, {"mu", 0.06}, {"gamma", 4.0}, {"chi", 0.33},
            {"eta", 1.1},  {"theta", 0.05}};
  if (name == "s0is1") return {{"beta", 3.0}, {"mu", 0.14}, {"alpha", 4.9}, {"r", 2.5}};
  throw Error(ErrorKind::UnknownModel, "unknown model '" + name + "'");
}

inline ModelSpec build_model(const std::string& name, const std::map<std::string, double>& given = {}) {
  ModelSpec m;
  m.name = name;
  m.d = 2;
  const auto p = detail::merge_params(default_params(name), given, name);
  m.params = p;
  using detail::clamp0;

  if (name == "sirs") {
    const double lambda = p.at("lambda"), gamma = p.at("gamma"), rho = p.at("rho");
    if (lambda / gamma <= 1.0)
      throw Error(ErrorKind::RegimeViolation, "sirs requires R0 = lambda/gamma > 1");
    m.jumps = {{1, -1}, {-1, 0}, {0, 1}};
    m.rate_fn = [=](const Vec& z, RateVec& r) {
      const double x = z[0], y = z[1];
      r[0] = lambda * x * y;
      r[1] = gamma * x;
      r[2] = rho * clamp0(1.0 - x - y);
    };
    m.gradient_fn = [=](const Vec& z, JumpMatrix& g) {
      const double x = z[0], y = z[1];
      g(0, 0) = lambda * y; g(1, 0) = lambda * x;
      g(0, 1) = gamma;      g(1, 1) = 0.0;
      g(0, 2) = -rho;       g(1, 2) = -rho;
    };
    m.domain = {DomainKind::Simplex, 1.0, ExitBoundaryKind::Axis};
    m.endemic = vec2(rho / lambda * (lambda - gamma) / (rho + gamma), gamma / lambda);
    m.boundary_attractor = vec2(0.0, 1.0);
    m.disease_free = m.boundary_attractor;
  } else if (name == "sir_demography") {
    const double lambda = p.at("lambda"), gamma = p.at("gamma"), mu = p.at("mu"), R = p.at("R");
    if (lambda / (gamma + mu) <= 1.0)
      throw Error(ErrorKind::RegimeViolation, "sir_demography requires R0 = lambda/(gamma+mu) > 1");
    m.jumps = {{1, -1}, {-1, 0}, {0, 1}, {0, -1}};
    m.rate_fn = [=](const Vec& z, RateVec& r) {
      const double x = z[0], y = z[1];
      r[0] = lambda * x * y;
      r[1] = (gamma + mu) * x;
      r[2] = mu;
      r[3] = mu * y;
    };
    m.gradient_fn = [=](const Vec& z, JumpMatrix& g) {
      const double x = z[0], y = z[1];
      g(0, 0) = lambda * y;   g(1, 0) = lambda * x;
      g(0, 1) = gamma + mu;   g(1, 1) = 0.0;
      g(0, 2) = 0.0;          g(1, 2) = 0.0;
      g(0, 3) = 0.0;          g(1, 3) = mu;
    };
    m.domain = {DomainKind::Box, R, ExitBoundaryKind::Axis};
    m.endemic = vec2(mu / (gamma + mu) - mu / lambda, (gamma + mu) / lambda);
    m.boundary_attractor = vec2(0.0, 1.0);
    m.disease_free = m.boundary_attractor;
    if (m.endemic.sum() >= R || R <= 1.0)
      throw Error(ErrorKind::RegimeViolation, "sir_demography truncation R too small");
  } else if (name == "siv") {
    const double beta = p.at("beta"), mu = p.at("mu"), gamma = p.at("gamma"), chi = p.at("chi"),
                 eta = p.at("eta"), theta = p.at("theta");
    m.jumps = {{1, 0}, {1, -1}, {-1, 0}, {0, -1}, {0, 1}, {-1, 0}, {0, -1}};
    m.rate_fn = [=](const Vec& z, RateVec& r) {
      const double x = z[0], y = z[1], s = clamp0(1.0 - x - y);
      r[0] = beta * x * s;
      r[1] = chi * beta * x * y;
      r[2] = gamma * x;
      r[3] = theta * y;
      r[4] = eta * s;
      r[5] = mu * x;
      r[6] = mu * y;
    };
    m.gradient_fn = [=](const Vec& z, JumpMatrix& g) {
      const double x = z[0], y = z[1];
      g(0, 0) = beta * (1.0 - 2.0 * x - y); g(1, 0) = -beta * x;
      g(0, 1) = chi * beta * y;             g(1, 1) = chi * beta * x;
      g(0, 2) = gamma;                      g(1, 2) = 0.0;
      g(0, 3) = 0.0;                        g(1, 3) = theta;
      g(0, 4) = -eta;                       g(1, 4) = -eta;
      g(0, 5) = mu;                         g(1, 5) = 0.0;
      g(0, 6) = 0.0;                        g(1, 6) = mu;
    };
    m.domain = {DomainKind::Simplex, 1.0, ExitBoundaryKind::Separatrix};
    detail::finish(m);
    detail::assign_bistable_equilibria(m);
    return m;
  } else if (name == "s0is1") {
    const double beta = p.at("beta"), mu = p.at("mu"), alpha = p.at("alpha"), r = p.at("r");
    m.jumps = {{1, 0}, {-1, 1}, {-1, 0}, {1, -1}, {0, -1}};
    m.rate_fn = [=](const Vec& z, RateVec& out) {
      const double x = z[0], y = z[1];
      out[0] = beta * x * clamp0(1.0 - x - y);
      out[1] = alpha * x;
      out[2] = mu * x;
      out[3] = r * beta * x * y;
      out[4] = mu * y;
    };
    m.gradient_fn = [=](const Vec& z, JumpMatrix& g) {
      const double x = z[0], y = z[1];
      g(0, 0) = beta * (1.0 - 2.0 * x - y); g(1, 0) = -beta * x;
      g(0, 1) = alpha;                      g(1, 1) = 0.0;
      g(0, 2) = mu;                         g(1, 2) = 0.0;
      g(0, 3) = r * beta * y;               g(1, 3) = r * beta * x;
      g(0, 4) = 0.0;                        g(1, 4) = mu;
    };
    m.domain = {DomainKind::Simplex, 1.0, ExitBoundaryKind::Separatrix};
    detail::finish(m);
    detail::assign_bistable_equilibria(m);
    return m;
  } else {
    throw Error(ErrorKind::UnknownModel, "unknown model '" + name + "'");
  }
  detail::finish(m);
  return m;
}

}  // namespace exitlab
