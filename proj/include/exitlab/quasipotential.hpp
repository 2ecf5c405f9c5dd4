#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <deque>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include <Eigen/Eigenvalues>

#include "exitlab/action.hpp"
#include "exitlab/basin.hpp"
#include "exitlab/model.hpp"
#include "exitlab/ode.hpp"

namespace exitlab {

// ---------------------------------------------------------------------------
// Hamiltonian system

struct HamiltonianPoint {
  Vec z;
  Vec r;
};

/// zdot = sum_j exp<r,h_j> beta_j h_j,  rdot = sum_j (1 - exp<r,h_j>) grad beta_j.
inline HamiltonianPoint hamiltonian_rhs(const ModelSpec& m, const Vec& z, const Vec& r) {
  const RateVec beta = m.rates(z);
  const JumpMatrix G = m.rate_gradients(z);
  const RateVec e = (m.B.transpose() * r).array().exp();
  HamiltonianPoint out;
  out.z = m.B * (beta.array() * e.array()).matrix();
  out.r = G * (1.0 - e.array()).matrix();
  return out;
}

/// Jacobian of the Hamiltonian vector field at (z, r); the d2 beta term is
/// taken by central differences of the analytic gradients.
inline PhaseMat hamiltonian_jacobian(const ModelSpec& m, const Vec& z, const Vec& r) {
  const int d = m.d;
  const RateVec beta = m.rates(z);
  const JumpMatrix G = m.rate_gradients(z);
  const RateVec e = (m.B.transpose() * r).array().exp();
  PhaseMat J = PhaseMat::Zero(2 * d, 2 * d);
  J.topLeftCorner(d, d) = m.B * e.asDiagonal() * G.transpose();
  J.topRightCorner(d, d) = m.B * (beta.array() * e.array()).matrix().asDiagonal() * m.B.transpose();
  J.bottomRightCorner(d, d) = -G * e.asDiagonal() * m.B.transpose();
  const RateVec w = 1.0 - e.array();
  if (w.cwiseAbs().maxCoeff() > 0.0) {
    for (int i = 0; i < d; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(z[i]));
      Vec zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      J.block(d, i, d, 1) = (m.rate_gradients(zp) - m.rate_gradients(zm)) * w / (2 * h);
    }
  }
  return J;
}

struct Linearization {
  PhaseMat jacobian;
  std::vector<std::complex<double>> spectrum;
  // Real basis of the unstable eigenspace (columns), as real and imaginary
  // parts of the eigenvectors so that the linear flow acts by scaling and
  // rotation in these coordinates.
  Eigen::MatrixXd unstable_basis;
  Eigen::MatrixXd stable_basis;
  std::vector<std::complex<double>> unstable_eigenvalues;
  double symmetry_error = 0.0;  // spectrum mismatch under lambda -> -lambda
};

/// Linearization of the Hamiltonian flow at (z, 0) for an equilibrium z.
inline Linearization linearize_at_equilibrium(const ModelSpec& m, const Vec& z, double tol = 1e-8) {
  const int d = m.d;
  Linearization lin;
  lin.jacobian = hamiltonian_jacobian(m, z, Vec::Zero(d));
  Eigen::EigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(lin.jacobian));
  if (es.info() != Eigen::Success) throw Error(ErrorKind::DegenerateSpectrum, "eigen-decomposition failed");
  const auto ev = es.eigenvalues();
  const auto V = es.eigenvectors();
  double scale = 1.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    lin.spectrum.push_back(ev[i]);
    scale = std::max(scale, std::abs(ev[i]));
  }
  for (const auto& a : lin.spectrum) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : lin.spectrum) best = std::min(best, std::abs(a + b));
    lin.symmetry_error = std::max(lin.symmetry_error, best / scale);
    if (std::abs(a.real()) < tol)
      throw Error(ErrorKind::DegenerateSpectrum, "eigenvalue on the imaginary axis at the equilibrium");
  }
  auto basis = [&](double sign) {
    std::vector<Eigen::VectorXd> cols;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (sign * ev[i].real() <= 0.0) continue;
      if (ev[i].imag() < -tol) continue;  // the conjugate partner supplies the imaginary part
      if (sign > 0) lin.unstable_eigenvalues.push_back(ev[i]);
      Eigen::VectorXcd v = V.col(i);
      if (std::abs(ev[i].imag()) <= tol) {
        Eigen::VectorXd re = v.real();
        cols.push_back(re / re.norm());
      } else {
        // Rotate v so that its real and imaginary parts are orthogonal.
        const double a = v.real().squaredNorm() - v.imag().squaredNorm();
        const double b = 2.0 * v.real().dot(v.imag());
        v *= std::exp(std::complex<double>(0.0, -0.5 * std::atan2(b, a)));
        const double sc = std::max(v.real().norm(), v.imag().norm());
        cols.push_back(v.real() / sc);
        cols.push_back(v.imag() / sc);
      }
    }
    if (static_cast<int>(cols.size()) != d)
      throw Error(ErrorKind::DegenerateSpectrum, "invariant eigenspace dimension differs from d");
    Eigen::MatrixXd out(2 * d, d);
    for (int c = 0; c < d; ++c) out.col(c) = cols[c];
    return out;
  };
  lin.unstable_basis = basis(1.0);
  lin.stable_basis = basis(-1.0);
  return lin;
}

// ---------------------------------------------------------------------------
// Results

struct QuasipotentialResult {
  std::string method;
  Vec start, target;
  double value = 0.0;
  SmoothPath path;
  double duration = 0.0;
  // shooting
  double residual = 0.0;
  double epsilon = 0.0;
  double alpha = 0.0;
  double head_correction = 0.0;
  double tail_bound = 0.0;
  double hamiltonian_drift = 0.0;   // max |H| along the accepted trajectory
  double max_rate_sum = 0.0;        // max sum_j beta_j along the trajectory
  double action_integral = 0.0;     // int <r, zdot> dt over the integrated part
  double adjoint_identity = 0.0;    // max |r - theta*(z, zdot)| on well-conditioned points
  Vec terminal_adjoint;
  double segment_mismatch = 0.0;    // multiple shooting: norm of the junction defects
  // discrete minimization
  int nodes = 0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  std::vector<double> history;       // objective after each accepted iteration (finest level)
  std::vector<double> level_values;  // best value at each refinement level
  std::vector<int> level_nodes;

  void write_json(std::ostream& os) const {
    os.precision(17);
    auto vec = [&](const Vec& v) {
      os << '[';
      for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
      os << ']';
    };
    os << "{\"method\": \"" << method << "\", \"value\": " << value << ", \"start\": ";
    vec(start);
    os << ", \"target\": ";
    vec(target);
    os << ", \"duration\": " << duration;
    if (method == "shooting") {
      os << ", \"residual\": " << residual << ", \"epsilon\": " << epsilon << ", \"alpha\": " << alpha
         << ", \"head_correction\": " << head_correction << ", \"tail_bound\": " << tail_bound
         << ", \"hamiltonian_drift\": " << hamiltonian_drift << ", \"action_integral\": " << action_integral
         << ", \"adjoint_identity\": " << adjoint_identity << ", \"segment_mismatch\": " << segment_mismatch
         << ", \"terminal_adjoint\": ";
      vec(terminal_adjoint);
    } else {
      os << ", \"nodes\": " << nodes << ", \"iterations\": " << iterations
         << ", \"converged\": " << (converged ? "true" : "false") << ", \"grad_norm\": " << grad_norm
         << ", \"level_values\": [";
      for (std::size_t i = 0; i < level_values.size(); ++i) os << (i ? ", " : "") << level_values[i];
      os << "]";
    }
    os << "}";
  }

  /// CSV of the path: t, x, y[, r_x, r_y].
  void write_path_csv(std::ostream& os) const {
    os.precision(17);
    const bool adj = path.adjoints.size() == path.size();
    os << (adj ? "t,x,y,r_x,r_y\n" : "t,x,y\n");
    for (std::size_t i = 0; i < path.size(); ++i) {
      os << path.t[i] << ',' << path.z[i][0] << ',' << path.z[i][1];
      if (adj) os << ',' << path.adjoints[i][0] << ',' << path.adjoints[i][1];
      os << '\n';
    }
  }
};

// ---------------------------------------------------------------------------
// Discrete path-action minimization

struct MinimizerOptions {
  int nodes = 127;          // interior nodes at the finest level
  int coarse_nodes = 15;    // first level; levels double the segment count
  double T_min = 0.5;
  double T_max = 200.0;
  double T_initial = 20.0;
  int max_iter = 4000;      // per level
  int memory = 12;
  double grad_tol = 1e-9;
  double f_tol = 1e-9;      // stop when the last `window` iterations gained less
  int window = 50;
  double interior_push = 1e-3;
  double fail_grad = 1e-3;  // NonConvergence when the final gradient exceeds this
};

namespace detail {

// Quadrature rule on [0, 1]: nodes and weights.
struct SegmentRule {
  std::vector<double> s, w;
};

inline const SegmentRule& gauss3() {
  static const SegmentRule rule = [] {
    const double a = 0.5 * std::sqrt(0.6);
    return SegmentRule{{0.5 - a, 0.5, 0.5 + a}, {5.0 / 18, 8.0 / 18, 5.0 / 18}};
  }();
  return rule;
}

// Composite 3-point rule on geometrically shrinking pieces toward s = 0 (or
// s = 1 when `at_end`), for segments ending where rates vanish.
inline SegmentRule graded_rule(bool at_end, int levels = 24) {
  SegmentRule r;
  const auto& g = gauss3();
  double right = 1.0;
  for (int l = 0; l < levels; ++l) {
    const double left = l + 1 == levels ? 0.0 : right * 0.5;
    for (std::size_t q = 0; q < 3; ++q) {
      r.s.push_back(left + (right - left) * g.s[q]);
      r.w.push_back((right - left) * g.w[q]);
    }
    right = left;
  }
  if (at_end)
    for (auto& s : r.s) s = 1.0 - s;
  return r;
}

class DiscreteAction {
 public:
  DiscreteAction(const ModelSpec& m, const Vec& a, const Vec& b, int M) : m_(m), a_(a), b_(b), M_(M) {
    const RateVec ra = m.rates(a), rb = m.rates(b);
    rules_.assign(M + 1, &gauss3());
    if ((ra.array() <= 0.0).any()) {
      first_ = graded_rule(false);
      rules_[0] = &first_;
    }
    if ((rb.array() <= 0.0).any()) {
      last_ = graded_rule(true);
      rules_[M] = &last_;
    }
    if (M == 0 && (ra.array() <= 0.0).any() && (rb.array() <= 0.0).any()) {
      // Grade toward both ends.
      first_ = graded_rule(false);
      for (std::size_t i = 0; i < first_.s.size(); ++i) {
        last_.s.push_back(0.5 * first_.s[i]);
        last_.w.push_back(0.5 * first_.w[i]);
        last_.s.push_back(1.0 - 0.5 * first_.s[i]);
        last_.w.push_back(0.5 * first_.w[i]);
      }
      rules_[0] = &last_;
    }
    std::size_t q = 0;
    for (int i = 0; i <= M; ++i) q += rules_[i]->s.size();
    theta_.assign(q, Vec::Zero(m.d));
    curvature_.assign(M, DimMat::Zero(m.d, m.d));
  }

  // Inverse of the block-diagonal kinetic Hessian, refreshed by the last
  // gradient evaluation; applied as the L-BFGS initial matrix.
  Eigen::VectorXd precondition(const Eigen::VectorXd& g) const {
    const int d = m_.d;
    Eigen::VectorXd out = g;
    for (int i = 0; i < M_; ++i) {
      DimMat H = curvature_[i];
      H.diagonal().array() += 1e-12 * (H.trace() + 1e-300);
      out.segment(i * d, d) = Eigen::LDLT<DimMat>(H).solve(Vec(g.segment(i * d, d)));
    }
    return out;
  }

  int size() const { return M_ * m_.d + 1; }

  Vec node(const Eigen::VectorXd& x, int i) const {
    if (i == 0) return a_;
    if (i == M_ + 1) return b_;
    return x.segment((i - 1) * m_.d, m_.d);
  }

  // Value (possibly +inf) and gradient with respect to the nodes and log T.
  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const int d = m_.d;
    const double T = std::exp(x[M_ * d]);
    const double dt = T / (M_ + 1);
    if (grad) grad->setZero(size());
    std::vector<DimMat> curv;
    if (grad) curv.assign(M_, DimMat::Zero(d, d));
    double total = 0.0, dT = 0.0;
    std::size_t q = 0;
    LagrangianOptions lo;
    for (int i = 0; i <= M_; ++i) {
      const Vec p0 = node(x, i), p1 = node(x, i + 1);
      const Vec v = (p1 - p0) / dt;
      const SegmentRule& rule = *rules_[i];
      Vec g0 = Vec::Zero(d), g1 = Vec::Zero(d);
      DimMat K = DimMat::Zero(d, d);
      for (std::size_t k = 0; k < rule.s.size(); ++k, ++q) {
        const double s = rule.s[k];
        const Vec z = p0 + s * (p1 - p0);
        const RateVec beta = m_.rates(z);
        LagrangianResult L;
        try {
          L = lagrangian_from_rates(m_.B, beta, v, m_.positive_span, lo, &theta_[q]);
        } catch (const Error&) {
          // A stale warm start (e.g. one left at the cap) can stall Newton.
          try {
            L = lagrangian_from_rates(m_.B, beta, v, m_.positive_span, lo);
          } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
          }
        }
        if (L.value.is_infinite()) return std::numeric_limits<double>::infinity();
        theta_[q] = L.capped ? Vec(Vec::Zero(d)) : L.theta;
        const double Lv = L.value.value();
        total += dt * rule.w[k] * Lv;
        if (grad) {
          const RateVec e = (m_.B.transpose() * L.theta).array().exp();
          const Vec dz = -(m_.rate_gradients(z) * (e.array() - 1.0).matrix());
          g0 += dt * rule.w[k] * ((1.0 - s) * dz) - rule.w[k] * L.theta;
          g1 += dt * rule.w[k] * (s * dz) + rule.w[k] * L.theta;
          dT += rule.w[k] * (Lv - L.theta.dot(v));
          // d2L/dy2 = (sum_j mu_j h_j h_j^T)^-1
          DimMat Sq = m_.B * (beta.array() * e.array()).matrix().asDiagonal() * m_.B.transpose();
          Sq.diagonal().array() += 1e-14 * (Sq.trace() + 1e-300);
          K += rule.w[k] / dt * Eigen::LDLT<DimMat>(Sq).solve(DimMat::Identity(d, d));
        }
      }
      if (grad) {
        if (i >= 1) {
          grad->segment((i - 1) * d, d) += g0;
          curv[i - 1] += K;
        }
        if (i + 1 <= M_) {
          grad->segment(i * d, d) += g1;
          curv[i] += K;
        }
      }
    }
    if (grad) {
      (*grad)[M_ * d] = dT / (M_ + 1) * T;
      curvature_ = std::move(curv);
    }
    return total;
  }

 private:
  const ModelSpec& m_;
  Vec a_, b_;
  int M_;
  SegmentRule first_, last_;
  std::vector<const SegmentRule*> rules_;
  std::vector<Vec> theta_;
  std::vector<DimMat> curvature_;
};

inline void project_variables(const ModelSpec& m, Eigen::VectorXd& x, int M, double logTmin, double logTmax) {
  const int d = m.d;
  for (int i = 0; i < M; ++i) {
    Vec z = x.segment(i * d, d);
    x.segment(i * d, d) = m.domain.project(z);
  }
  x[M * d] = std::clamp(x[M * d], logTmin, logTmax);
}

struct LbfgsOutcome {
  double value;
  int iterations;
  double grad_norm;
  bool converged;
};

// Projected L-BFGS with backtracking Armijo line search; the objective never
// increases between accepted iterates.
inline LbfgsOutcome lbfgs(DiscreteAction& f, const ModelSpec& m, Eigen::VectorXd& x, int M,
                          const MinimizerOptions& opt, std::vector<double>* history) {
  const double lmin = std::log(opt.T_min), lmax = std::log(opt.T_max);
  project_variables(m, x, M, lmin, lmax);
  Eigen::VectorXd g;
  double fx = f(x, &g);
  if (!std::isfinite(fx)) throw Error(ErrorKind::InfiniteAction, "initial path has infinite action");
  // Projected-gradient norm; components pushing against an active face or T bound do not count.
  auto pgrad = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& gg) {
    Eigen::VectorXd t = xx - gg;
    project_variables(m, t, M, lmin, lmax);
    return (xx - t).lpNorm<Eigen::Infinity>();
  };
  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  std::deque<double> recent{fx};
  int it = 0;
  bool converged = false;
  if (history) history->push_back(fx);
  for (; it < opt.max_iter; ++it) {
    if (pgrad(x, g) <= opt.grad_tol) {
      converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(S.size());
    for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(q);
      q -= alpha[i] * Y[i];
    }
    Eigen::VectorXd dir = -f.precondition(q);
    if (!S.empty()) {
      const double yPy = Y.back().dot(f.precondition(Y.back()));
      if (yPy > 0.0) dir *= S.back().dot(Y.back()) / yPy;
    }
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * Y[i].dot(dir);
      dir += S[i] * (-alpha[i] - beta);
    }
    if (dir.dot(g) >= 0.0) {
      S.clear();
      Y.clear();
      rho.clear();
      dir = -f.precondition(g);
    }
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd xn, gn;
    double fn = 0.0;
    for (int ls = 0; ls < 50; ++ls) {
      xn = x + step * dir;
      project_variables(m, xn, M, lmin, lmax);
      fn = f(xn, &gn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * g.dot(xn - x)) {
        accepted = true;
        break;
      }
      step *= 0.3;
    }
    if (!accepted || !(fn <= fx)) {
      if (S.empty()) {
        // No descent along -P g: a kink where nodes sit on a face with
        // vanishing rates. Stagnation over a full window counts as converged.
        converged = static_cast<int>(recent.size()) >= opt.window &&
                    recent.front() - fx <= 1e-6 * std::max(1.0, std::abs(fx));
        break;
      }
      S.clear();
      Y.clear();
      rho.clear();
      continue;
    }
    const Eigen::VectorXd s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    x = xn;
    g = gn;
    fx = fn;
    recent.push_back(fx);
    if (history) history->push_back(fx);
    if (static_cast<int>(recent.size()) > opt.window) {
      recent.pop_front();
      if (recent.front() - fx <= opt.f_tol) {
        converged = true;
        break;
      }
    }
  }
  return {fx, it, pgrad(x, g), converged};
}

}  // namespace detail

/// Upper bound on V(a, b): minimum of the action of piecewise-linear paths on
/// a uniform time grid, over the nodes and the horizon T. Each refinement
/// level doubles the number of segments and starts from the previous optimum,
/// so level values never increase.
inline QuasipotentialResult minimize_discrete_action(const ModelSpec& m, const Vec& a, const Vec& b,
                                                     const MinimizerOptions& opt = {}) {
  require_in_domain(m, a);
  require_in_domain(m, b);
  const int d = m.d;
  if (opt.nodes < 1 || opt.coarse_nodes < 1) throw Error(ErrorKind::InvalidArgument, "need >= 1 node");
  std::vector<int> levels;
  for (int M = std::min(opt.coarse_nodes, opt.nodes);; M = 2 * M + 1) {
    if (M >= opt.nodes) {
      levels.push_back(opt.nodes);
      break;
    }
    levels.push_back(M);
  }

  // Chord from a to b, pushed off the domain faces.
  const int M0 = levels.front();
  Eigen::VectorXd x(M0 * d + 1);
  const double push = opt.interior_push;
  for (int i = 1; i <= M0; ++i) {
    Vec z = a + (b - a) * (static_cast<double>(i) / (M0 + 1));
    for (int c = 0; c < d; ++c) z[c] = std::max(z[c], push);
    const double cap = m.domain.kind == DomainKind::Simplex ? 1.0 - push : m.domain.R - push;
    if (m.domain.kind == DomainKind::Simplex && z.sum() > cap) z *= cap / z.sum();
    for (int c = 0; c < d && m.domain.kind == DomainKind::Box; ++c) z[c] = std::min(z[c], cap);
    x.segment((i - 1) * d, d) = z;
  }
  x[M0 * d] = std::log(std::clamp(opt.T_initial, opt.T_min, opt.T_max));

  QuasipotentialResult res;
  res.method = "discrete";
  res.start = a;
  res.target = b;
  detail::LbfgsOutcome out{};
  int M = M0;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (l > 0) {
      // Prolongate: keep old nodes, insert segment midpoints.
      const int Mn = levels[l];
      const int factor = (Mn + 1) / (M + 1);
      Eigen::VectorXd xn(Mn * d + 1);
      detail::DiscreteAction old(m, a, b, M);
      for (int i = 1; i <= Mn; ++i) {
        const int seg = i / factor;
        const double frac = static_cast<double>(i % factor) / factor;
        const Vec p0 = old.node(x, seg), p1 = old.node(x, std::min(seg + 1, M + 1));
        xn.segment((i - 1) * d, d) = p0 + frac * (p1 - p0);
      }
      xn[Mn * d] = x[M * d];
      x = xn;
      M = Mn;
    }
    detail::DiscreteAction f(m, a, b, M);
    res.history.clear();
    out = detail::lbfgs(f, m, x, M, opt, &res.history);
    res.level_values.push_back(out.value);
    res.level_nodes.push_back(M);
  }
  res.value = out.value;
  res.iterations = out.iterations;
  res.grad_norm = out.grad_norm;
  res.converged = out.converged;
  res.nodes = M;
  const double T = std::exp(x[M * d]);
  res.duration = T;
  detail::DiscreteAction f(m, a, b, M);
  for (int i = 0; i <= M + 1; ++i) {
    res.path.t.push_back(T * i / (M + 1));
    res.path.z.push_back(f.node(x, i));
  }
  if (!out.converged && out.grad_norm > opt.fail_grad)
    throw Error(ErrorKind::NonConvergence, "path-action minimizer did not converge (|grad| = " +
                                               std::to_string(out.grad_norm) + ")");
  return res;
}

// ---------------------------------------------------------------------------
// Shooting

struct ShootingOptions {
  double epsilon = 1e-4;
  // Shots are labelled by their direction at this radius under the linear flow.
  double reference_radius = 0.05;
  int seeds = 64;
  double t_max = 150.0;
  double adjoint_cap = 30.0;
  double box_margin = 0.05;
  double max_step = 0.05;
  double rel_tol = 1e-12;
  double abs_tol = 1e-14;
  int golden_iterations = 90;
  // Multiple shooting (saddle targets).
  int segments = 40;           // minimum; raised so each segment stays well conditioned
  double segment_growth = 1.5;
  double end_epsilon = 5e-5;
  int lm_iterations = 100;
  double bvp_tol = 1e-11;
  double bvp_accept = 1e-4;
  int seed_nodes = 63;       // discrete seed used when the relaxation guess fails
  double stall_ratio = 0.9;  // a step is slow when it shrinks the mismatch by less than this factor
  int stall_steps = 5;       // consecutive slow steps before giving up
};

namespace detail {

struct ShotOutcome {
  double residual = std::numeric_limits<double>::infinity();
  double t_best = 0.0;
};

// Residual of a phase point against the target: distance in z plus the part
// of r that must vanish at the end. On an invariant axis only the tangential
// adjoint component has to vanish; the normal one tends to a finite limit.
inline double target_residual(const ModelSpec& m, const Vec& target, const PhaseVec& y) {
  const int d = m.d;
  const Vec z = y.head(d), r = y.segment(d, d);
  if (m.domain.exit_boundary == ExitBoundaryKind::Axis) return (z - target).norm() + std::abs(r[1]);
  return (z - target).norm() + r.norm();
}

// Extended field: (z, r, running cost sum_j beta_j (1 - e^w + w e^w), <r, zdot>).
inline PhaseVec extended_field(const ModelSpec& m, const PhaseVec& y) {
  const int d = m.d;
  const Vec z = y.head(d), r = y.segment(d, d);
  const RateVec beta = m.rates(z);
  const JumpMatrix G = m.rate_gradients(z);
  const RateVec w = m.B.transpose() * r;
  const RateVec e = w.array().exp();
  PhaseVec f(2 * d + 2);
  f.head(d) = m.B * (beta.array() * e.array()).matrix();
  f.segment(d, d) = G * (1.0 - e.array()).matrix();
  f[2 * d] = (beta.array() * (1.0 - e.array() + w.array() * e.array())).sum();
  f[2 * d + 1] = r.dot(f.head(d));
  return f;
}

template <class Observer>
inline void run_shot(const ModelSpec& m, const PhaseVec& y0, const ShootingOptions& opt, Observer&& obs) {
  const int d = m.d;
  OdeOptions o;
  o.rel_tol = opt.rel_tol;
  o.abs_tol = opt.abs_tol;
  o.max_step = opt.max_step;
  o.min_step = 1e-14;
  const double hi = m.domain.total() + opt.box_margin;
  auto field = [&](double, const PhaseVec& y) { return extended_field(m, y); };
  try {
    integrate_adaptive(field, y0, 0.0, opt.t_max, o, [&](const OdeStep<PhaseVec>& s) {
      const PhaseVec& y = s.y1;
      const Vec z = y.head(d);
      if (!obs(s)) return false;
      if ((z.array() < -opt.box_margin).any() || z.sum() > hi || (z.array() > hi).any()) return false;
      if (y.segment(d, d).cwiseAbs().maxCoeff() > opt.adjoint_cap) return false;
      return y.allFinite();
    });
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::StepUnderflow) throw;
  }
}

// One-parameter family of starting points on the local unstable manifold of
// (z*, 0), labelled by the direction at a reference radius under the linear
// flow and pulled back to the epsilon level of the flow norm.
class ShotFamily {
 public:
  ShotFamily(const ModelSpec& m, const Linearization& lin, const ShootingOptions& opt)
      : m_(m), lin_(lin), opt_(opt), rho_(opt.reference_radius) {
    const Eigen::MatrixXd& U = lin.unstable_basis;
    const Eigen::MatrixXd Lam =
        U.completeOrthogonalDecomposition().pseudoInverse() * Eigen::MatrixXd(lin.jacobian) * U;
    Eigen::EigenSolver<Eigen::MatrixXd> es(Lam);
    D_ = es.eigenvalues();
    V_ = es.eigenvectors();
    Vinv_ = V_.inverse();
    eps_ = opt.epsilon;
  }

  double epsilon() const { return eps_; }

  std::vector<double> seeds() const {
    std::vector<double> out;
    for (int i = 0; i < opt_.seeds; ++i) out.push_back(2.0 * std::numbers::pi * i / opt_.seeds);
    return out;
  }

  std::pair<double, double> bracket(double label) const {
    const double h = 2.0 * std::numbers::pi / opt_.seeds;
    return {label - h, label + h};
  }

  PhaseVec start(double label) const {
    const int d = m_.d;
    Eigen::VectorXd c_ref(2);
    c_ref << rho_ * std::cos(label), rho_ * std::sin(label);
    const Eigen::VectorXcd w0 = Vinv_ * c_ref.cast<std::complex<double>>();
    auto norm_at = [&](double t) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < w0.size(); ++i) acc += std::norm(w0[i]) * std::exp(2 * D_[i].real() * t);
      return std::sqrt(acc);
    };
    double t_hi = 0.0, t_lo = -1.0;
    while (norm_at(t_lo) > eps_) t_lo *= 2.0;
    for (int it = 0; it < 200 && t_hi - t_lo > 1e-15 * (1.0 + std::abs(t_lo)); ++it) {
      const double mid = 0.5 * (t_lo + t_hi);
      (norm_at(mid) > eps_ ? t_hi : t_lo) = mid;
    }
    const double t = 0.5 * (t_lo + t_hi);
    Eigen::VectorXcd wt = w0;
    for (Eigen::Index i = 0; i < wt.size(); ++i) wt[i] *= std::exp(D_[i] * t);
    const Eigen::VectorXd off = lin_.unstable_basis * (V_ * wt).real();
    PhaseVec y = PhaseVec::Zero(2 * d + 2);
    y.head(d) = m_.endemic + off.head(d);
    y.segment(d, d) = off.tail(d);
    return y;
  }

 private:
  const ModelSpec& m_;
  const Linearization& lin_;
  ShootingOptions opt_;
  double rho_;
  Eigen::VectorXcd D_;
  Eigen::MatrixXcd V_, Vinv_;
  double eps_ = 0.0;
};

inline ShotOutcome evaluate_shot(const ModelSpec& m, const ShotFamily& fam, const Vec& target,
                                 double alpha, const ShootingOptions& opt) {
  ShotOutcome out;
  run_shot(m, fam.start(alpha), opt, [&](const OdeStep<PhaseVec>& s) {
    constexpr int sub = 4;
    for (int i = 1; i <= sub; ++i) {
      const double t = s.t0 + (s.t1 - s.t0) * i / sub;
      const double res = target_residual(m, target, i == sub ? s.y1 : s.at(t));
      if (res < out.residual) {
        out.residual = res;
        out.t_best = t;
      }
    }
    return true;
  });
  return out;
}

}  // namespace detail

namespace detail {

inline void push_phase(const ModelSpec& m, QuasipotentialResult& res, double t, const PhaseVec& y) {
  const int d = m.d;
  res.path.t.push_back(t);
  res.path.z.push_back(y.head(d));
  res.path.adjoints.push_back(y.segment(d, d));
  const RateVec e = (m.B.transpose() * Vec(y.segment(d, d))).array().exp();
  res.path.controls.push_back(m.rates(y.head(d)).array() * e.array());
}

// One-parameter shooting on the unstable manifold, scored by the closest
// approach to the target.
inline QuasipotentialResult single_shooting(const ModelSpec& m, const Linearization& lin, const Vec& target,
                                            const ShootingOptions& opt) {
  const ShotFamily fam(m, lin, opt);

  auto R = [&](double a) { return evaluate_shot(m, fam, target, a, opt).residual; };
  const std::vector<double> labels = fam.seeds();
  std::vector<double> seedres(labels.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    seedres[i] = R(labels[i]);
    if (seedres[i] < seedres[best]) best = i;
  }
  if (!std::isfinite(seedres[best])) throw Error(ErrorKind::NoConnection, "no shot reached the target");

  // Golden section on the bracket around the best seed.
  auto [lo, hi] = fam.bracket(labels[best]);
  const double h = hi - lo;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double fc = R(c), fd = R(d);
  double a_best = labels[best], f_best = seedres[best];
  std::vector<std::pair<double, double>> samples{{a_best, f_best}, {c, fc}, {d, fd}};
  for (int it = 0; it < opt.golden_iterations && hi - lo > 1e-15 * (1.0 + std::abs(hi)); ++it) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = R(c);
      samples.push_back({c, fc});
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = R(d);
      samples.push_back({d, fd});
    }
  }
  for (const auto& [a, f] : samples)
    if (f < f_best) {
      a_best = a;
      f_best = f;
    }
  // Local quadratic fit through the three best samples.
  std::sort(samples.begin(), samples.end(), [](auto& x, auto& y) { return x.second < y.second; });
  if (samples.size() >= 3) {
    const auto [x0, y0] = samples[0];
    const auto [x1, y1] = samples[1];
    const auto [x2, y2] = samples[2];
    const double den = (x0 - x1) * (x0 - x2) * (x1 - x2);
    if (std::abs(den) > 0.0) {
      const double A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den;
      const double Bc = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den;
      if (A > 0.0) {
        const double xv = -Bc / (2 * A);
        const auto [blo, bhi] = fam.bracket(labels[best]);
        if (xv > blo && xv < bhi && std::abs(xv - a_best) < h) {
          const double fv = R(xv);
          if (fv < f_best) {
            a_best = xv;
            f_best = fv;
          }
        }
      }
    }
  }

  // Replay the accepted shot and record it up to the closest approach.
  const auto outcome = evaluate_shot(m, fam, target, a_best, opt);
  QuasipotentialResult res;
  res.method = "shooting";
  res.start = m.endemic;
  res.target = target;
  res.epsilon = fam.epsilon();
  res.alpha = a_best;
  res.residual = outcome.residual;
  const int dd = m.d;
  const PhaseVec y0 = fam.start(a_best);
  PhaseVec y_end = y0;
  auto push = [&](double t, const PhaseVec& y) { push_phase(m, res, t, y); };
  push(0.0, y0);
  run_shot(m, y0, opt, [&](const OdeStep<PhaseVec>& s) {
    if (s.t1 >= outcome.t_best) {
      y_end = s.t1 == outcome.t_best ? s.y1 : s.at(outcome.t_best);
      if (outcome.t_best > s.t0) push(outcome.t_best, y_end);
      return false;
    }
    push(s.t1, s.y1);
    y_end = s.y1;
    return true;
  });
  const Vec z0 = y0.head(dd), r0 = y0.segment(dd, dd);
  const Vec zT = y_end.head(dd), rT = y_end.segment(dd, dd);
  res.head_correction = 0.5 * r0.dot(z0 - m.endemic);
  Vec r_lim = Vec::Zero(dd);
  if (m.domain.exit_boundary == ExitBoundaryKind::Axis) r_lim[0] = rT[0];
  res.tail_bound = std::abs(0.5 * (rT + r_lim).dot(target - zT));
  res.value = y_end[2 * dd] + res.head_correction;
  res.action_integral = y_end[2 * dd + 1];
  res.duration = res.path.t.back();
  res.terminal_adjoint = rT;
  return res;
}

// Invariant diagnostics along an accepted trajectory.
inline void check_trajectory(const ModelSpec& m, QuasipotentialResult& res) {
  for (std::size_t i = 0; i < res.path.size(); ++i) {
    const Vec& z = res.path.z[i];
    const Vec& r = res.path.adjoints[i];
    res.hamiltonian_drift = std::max(res.hamiltonian_drift, std::abs(reduced_hamiltonian(m, z, r)));
    res.max_rate_sum = std::max(res.max_rate_sum, m.rates(z).sum());
    if (!m.domain.contains(z, 0.0)) continue;
    const RateVec beta = m.rates(z);
    const RateVec mu = beta.array() * (m.B.transpose() * r).array().exp();
    const DimMat S = m.B * mu.asDiagonal() * m.B.transpose();
    Eigen::SelfAdjointEigenSolver<DimMat> ses(S);
    if (ses.eigenvalues().minCoeff() < 1e-4) continue;
    const Vec zdot = m.B * mu;
    try {
      LagrangianOptions lo;
      lo.grad_tol = 1e-13;
      const auto L = lagrangian_from_rates(m.B, beta, zdot, m.positive_span, lo);
      res.adjoint_identity = std::max(res.adjoint_identity, (L.theta - r).cwiseAbs().maxCoeff());
    } catch (const Error&) {
    }
  }
}


// Multiple shooting between the epsilon-circles of the unstable eigenspace at
// (z*, 0) and the stable eigenspace at (target, 0); unknowns are the circle
// coordinates, the interior segment states and log T, solved in the least
// squares sense by Levenberg-Marquardt. The initial guess is the reversed
// relaxation path from the saddle to z*.
class HeteroclinicBvp {
 public:
  HeteroclinicBvp(const ModelSpec& m, const Linearization& lin, const Vec& target, const ShootingOptions& opt)
      : m_(m), U_(lin.unstable_basis), target_(target), opt_(opt), K_(opt.segments), d_(m.d) {
    const Linearization end = linearize_at_equilibrium(m, target);
    W_ = end.stable_basis;
    P_ = 2 * d_;
    for (const auto& l : lin.spectrum) rate_ = std::max(rate_, std::abs(l.real()));
    for (const auto& l : end.spectrum) rate_ = std::max(rate_, std::abs(l.real()));
  }

  /// Segment count so that no segment amplifies perturbations by much more
  /// than exp(segment_growth) at the equilibria's fastest rate.
  void fit_segments(double T) {
    K_ = std::max(opt_.segments, static_cast<int>(std::ceil(T * rate_ / opt_.segment_growth)));
  }

  int unknowns() const { return d_ + P_ * (K_ - 1) + d_ + 1; }
  int equations() const { return 1 + P_ * K_ + 1; }

  Eigen::VectorXd start_state(const Eigen::VectorXd& u) const {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(P_);
    y.head(d_) = m_.endemic;
    return y + U_ * u.head(d_);
  }
  Eigen::VectorXd end_state(const Eigen::VectorXd& u) const {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(P_);
    y.head(d_) = target_;
    return y + W_ * u.segment(d_ + P_ * (K_ - 1), d_);
  }
  Eigen::VectorXd node(const Eigen::VectorXd& u, int k) const {
    if (k == 0) return start_state(u);
    if (k == K_) return end_state(u);
    return u.segment(d_ + P_ * (k - 1), P_);
  }
  double tau(const Eigen::VectorXd& u) const { return std::exp(u[unknowns() - 1]) / K_; }

  // Flow over one segment; the cost and <r, zdot> integrals ride along.
  template <class Observer>
  PhaseVec flow(const Eigen::VectorXd& y, double t, Observer&& obs) const {
    PhaseVec s = PhaseVec::Zero(P_ + 2);
    s.head(P_) = y;
    OdeOptions o;
    o.rel_tol = opt_.rel_tol;
    o.abs_tol = opt_.abs_tol;
    o.min_step = 1e-14;
    auto field = [&](double, const PhaseVec& v) { return extended_field(m_, v); };
    PhaseVec last = s;
    bool ok = true;
    try {
      integrate_adaptive(field, s, 0.0, t, o, [&](const OdeStep<PhaseVec>& st) {
        last = st.y1;
        obs(st);
        if (!st.y1.allFinite() || st.y1.segment(d_, d_).cwiseAbs().maxCoeff() > opt_.adjoint_cap) {
          ok = false;
          return false;
        }
        return true;
      });
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::StepUnderflow) throw;
      ok = false;
    }
    if (!ok) last.setConstant(std::numeric_limits<double>::quiet_NaN());
    return last;
  }
  PhaseVec flow(const Eigen::VectorXd& y, double t) const {
    return flow(y, t, [](const OdeStep<PhaseVec>&) {});
  }

  // Derivative of the segment flow with respect to its initial state, from
  // the variational equation integrated alongside the orbit.
  Eigen::MatrixXd sensitivity(const Eigen::VectorXd& y, double t) const {
    const int n = P_ + P_ * P_;
    Eigen::VectorXd s(n);
    s.head(P_) = y;
    s.tail(P_ * P_) = Eigen::Map<const Eigen::VectorXd>(Eigen::MatrixXd::Identity(P_, P_).eval().data(), P_ * P_);
    OdeOptions o;
    o.rel_tol = opt_.rel_tol;
    o.abs_tol = opt_.abs_tol;
    o.min_step = 1e-14;
    auto field = [&](double, const Eigen::VectorXd& v) {
      Eigen::VectorXd out(n);
      const auto f = hamiltonian_rhs(m_, v.head(d_), v.segment(d_, d_));
      out.head(d_) = f.z;
      out.segment(d_, d_) = f.r;
      const Eigen::MatrixXd J = hamiltonian_jacobian(m_, v.head(d_), v.segment(d_, d_));
      Eigen::Map<Eigen::MatrixXd>(out.data() + P_, P_, P_) = J * Eigen::Map<const Eigen::MatrixXd>(v.data() + P_, P_, P_);
      return out;
    };
    Eigen::VectorXd last = s;
    integrate_adaptive(field, s, 0.0, t, o, [&](const OdeStep<Eigen::VectorXd>& st) {
      last = st.y1;
      return true;
    });
    return Eigen::Map<const Eigen::MatrixXd>(last.data() + P_, P_, P_);
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& u) const {
    Eigen::VectorXd F(equations());
    const double eps = opt_.epsilon, eps_end = opt_.end_epsilon;
    F[0] = (u.head(d_).squaredNorm() - eps * eps) / eps;
    const double t = tau(u);
    for (int k = 0; k < K_; ++k)
      F.segment(1 + P_ * k, P_) = flow(node(u, k), t).head(P_) - node(u, k + 1);
    F[equations() - 1] = (u.segment(d_ + P_ * (K_ - 1), d_).squaredNorm() - eps_end * eps_end) / eps_end;
    return F;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& u) const {
    const int n = unknowns(), q = equations();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(q, n);
    const double t = tau(u), eps = opt_.epsilon, eps_end = opt_.end_epsilon;
    const int ie = d_ + P_ * (K_ - 1);
    J.block(0, 0, 1, d_) = 2.0 * u.head(d_).transpose() / eps;
    J.block(q - 1, ie, 1, d_) = 2.0 * u.segment(ie, d_).transpose() / eps_end;
    for (int k = 0; k < K_; ++k) {
      const int row = 1 + P_ * k;
      const Eigen::VectorXd y = node(u, k);
      const PhaseVec y1 = flow(y, t);
      if (!y1.allFinite()) throw Error(ErrorKind::NoConnection, "boundary-value iterate leaves the phase region");
      // d/d log T through the segment duration.
      J.block(row, n - 1, P_, 1) = extended_field(m_, y1).head(P_) * t;
      const Eigen::MatrixXd S = sensitivity(y, t);
      if (k == 0) J.block(row, 0, P_, d_) = S * U_;
      else J.block(row, d_ + P_ * (k - 1), P_, P_) = S;
      if (k + 1 == K_) J.block(row, ie, P_, d_) = -W_;
      else J.block(row, d_ + P_ * k, P_, P_) = -Eigen::MatrixXd::Identity(P_, P_);
    }
    return J;
  }

  /// Initial unknowns from the reversed relaxation path out of the saddle.
  Eigen::VectorXd initial_guess() {
    const DimMat A = m_.drift_jacobian(target_);
    Eigen::EigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(A)};
    Eigen::Index iu = -1;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
      if (es.eigenvalues()[i].real() > 0 && (iu < 0 || es.eigenvalues()[i].real() > es.eigenvalues()[iu].real()))
        iu = i;
    if (iu < 0) throw Error(ErrorKind::NoConnection, "target has no unstable drift direction");
    Vec vu = es.eigenvectors().col(iu).real();
    vu /= vu.norm();
    auto field = [&](const Vec& z) { return m_.drift(z); };
    SmoothPath relax;
    for (double sign : {1.0, -1.0}) {
      const Vec z0 = target_ + sign * opt_.end_epsilon * vu;
      if (!m_.domain.contains(z0, 0.0)) continue;
      SmoothPath p;
      OdeOptions o;
      o.rel_tol = 1e-10;
      o.abs_tol = 1e-12;
      p.t.push_back(0.0);
      p.z.push_back(z0);
      integrate_adaptive([&](double, const Vec& z) { return field(z); }, z0, 0.0, 1e4, o,
                         [&](const OdeStep<Vec>& st) {
                           p.t.push_back(st.t1);
                           p.z.push_back(st.y1);
                           return (st.y1 - m_.endemic).norm() > opt_.epsilon;
                         });
      if ((p.z.back() - m_.endemic).norm() <= opt_.epsilon * 1.0001) {
        relax = std::move(p);
        break;
      }
    }
    if (relax.empty()) throw Error(ErrorKind::NoConnection, "no relaxation path from the target to z*");
    // Reverse it: the time-reversed relaxation runs from z* to the target.
    SmoothPath rev;
    const double T = relax.t.back();
    for (std::size_t i = relax.size(); i-- > 0;) {
      rev.t.push_back(T - relax.t[i]);
      rev.z.push_back(relax.z[i]);
    }
    return guess_along(rev, [&](const Vec& z, std::size_t) { return Vec(-m_.drift(z)); });
  }

  /// Initial unknowns from a path running from z* to the target, e.g. a
  /// discrete minimizer; velocities are the chord slopes.
  Eigen::VectorXd initial_guess(const SmoothPath& p) {
    return guess_along(p, [&](const Vec&, std::size_t j) { return Vec((p.z[j] - p.z[j - 1]) / (p.t[j] - p.t[j - 1])); });
  }

  template <class Velocity>
  Eigen::VectorXd guess_along(const SmoothPath& p, Velocity&& velocity) {
    const double T0 = p.t.front(), T = p.t.back() - T0;
    fit_segments(T);
    Eigen::VectorXd u(unknowns());
    auto phase_at = [&](double s) {
      const double tr = T0 + s;
      auto it = std::upper_bound(p.t.begin(), p.t.end(), tr);
      std::size_t j = std::clamp<std::size_t>(it - p.t.begin(), 1, p.size() - 1);
      const double w = (tr - p.t[j - 1]) / (p.t[j] - p.t[j - 1]);
      const Vec z = p.z[j - 1] + w * (p.z[j] - p.z[j - 1]);
      Eigen::VectorXd y(P_);
      y.head(d_) = z;
      const auto L = lagrangian_from_rates(m_.B, m_.rates(m_.domain.project(z)), velocity(z, j), m_.positive_span);
      y.tail(d_) = L.value.is_finite() ? L.theta : Vec(Vec::Zero(d_));
      return y;
    };
    Eigen::VectorXd c = U_.completeOrthogonalDecomposition().solve(
        Eigen::VectorXd(phase_at(0.0) - start_state(Eigen::VectorXd::Zero(unknowns()))));
    if (c.norm() == 0.0) c = Eigen::VectorXd::Unit(d_, 0);
    u.head(d_) = c / c.norm() * opt_.epsilon;
    for (int k = 1; k < K_; ++k) u.segment(d_ + P_ * (k - 1), P_) = phase_at(T * k / K_);
    Eigen::VectorXd end = phase_at(T);
    end.head(d_) -= target_;
    Eigen::VectorXd e = W_.completeOrthogonalDecomposition().solve(end);
    if (e.norm() == 0.0) e = Eigen::VectorXd::Unit(d_, 0);
    u.segment(d_ + P_ * (K_ - 1), d_) = e / e.norm() * opt_.end_epsilon;
    u[unknowns() - 1] = std::log(T);
    return u;
  }

  /// Re-nodes u when its duration calls for more segments than it has.
  /// Returns false when the current mesh already fits.
  bool remesh(Eigen::VectorXd& u) {
    const int K_old = K_;
    const double t = tau(u), T = t * K_old;
    const int K_new = std::max(opt_.segments, static_cast<int>(std::ceil(T * rate_ / opt_.segment_growth)));
    if (K_new <= K_old) return false;
    std::vector<double> ts{0.0};
    std::vector<Eigen::VectorXd> ys{node(u, 0)};
    for (int k = 0; k < K_old; ++k)
      flow(node(u, k), t, [&](const OdeStep<PhaseVec>& st) {
        ts.push_back(k * t + st.t1);
        ys.push_back(st.y1.head(P_));
      });
    const Eigen::VectorXd c = u.head(d_), e = u.segment(d_ + P_ * (K_old - 1), d_);
    K_ = K_new;
    Eigen::VectorXd v(unknowns());
    v.head(d_) = c;
    for (int k = 1; k < K_; ++k) {
      const double s = T * k / K_;
      auto it = std::upper_bound(ts.begin(), ts.end(), s);
      std::size_t j = std::clamp<std::size_t>(it - ts.begin(), 1, ts.size() - 1);
      const double w = (s - ts[j - 1]) / (ts[j] - ts[j - 1]);
      v.segment(d_ + P_ * (k - 1), P_) = ys[j - 1] + w * (ys[j] - ys[j - 1]);
    }
    v.segment(d_ + P_ * (K_ - 1), d_) = e;
    v[unknowns() - 1] = std::log(T);
    u = std::move(v);
    return true;
  }

  /// Levenberg-Marquardt; returns the final residual norm.
  double solve(Eigen::VectorXd& u, int& iterations) const {
    Eigen::VectorXd F = residual(u);
    double fn = F.allFinite() ? F.norm() : std::numeric_limits<double>::infinity();
    if (!std::isfinite(fn)) throw Error(ErrorKind::NoConnection, "initial guess leaves the phase region");
    double mu = 1e-3;
    int slow = 0;
    iterations = 0;
    for (; iterations < opt_.lm_iterations && fn > opt_.bvp_tol; ++iterations) {
      const Eigen::MatrixXd J = jacobian(u);
      // Damped steps from a QR of the stacked system [J; sqrt(mu) D], which
      // avoids squaring the condition number in the normal equations.
      const Eigen::VectorXd D = (J.colwise().squaredNorm().array() + 1e-12).sqrt().matrix();
      const int q = static_cast<int>(J.rows()), n = static_cast<int>(J.cols());
      bool accepted = false;
      for (int tries = 0; tries < 30; ++tries) {
        Eigen::MatrixXd A(q + n, n);
        A.topRows(q) = J;
        A.bottomRows(n) = (std::sqrt(mu) * D).asDiagonal();
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q + n);
        rhs.head(q) = -F;
        const Eigen::VectorXd step = A.householderQr().solve(rhs);
        const Eigen::VectorXd un = u + step;
        const Eigen::VectorXd Fn = residual(un);
        const double nn = Fn.allFinite() ? Fn.norm() : std::numeric_limits<double>::infinity();
        if (nn < fn) {
          slow = nn > opt_.stall_ratio * fn ? slow + 1 : 0;
          u = un;
          F = Fn;
          fn = nn;
          mu = std::max(mu / 5.0, 1e-12);
          accepted = true;
          break;
        }
        mu *= 4.0;
      }
      if (!accepted || slow >= opt_.stall_steps) break;
    }
    return fn;
  }

  int segments() const { return K_; }

 private:
  const ModelSpec& m_;
  Eigen::MatrixXd U_, W_;
  Vec target_;
  ShootingOptions opt_;
  int K_, d_, P_ = 0;
  double rate_ = 0.0;
};

inline QuasipotentialResult multiple_shooting(const ModelSpec& m, const Linearization& lin, const Vec& target,
                                              const ShootingOptions& opt) {
  HeteroclinicBvp bvp(m, lin, target, opt);
  int iterations = 0;
  auto attempt = [&](Eigen::VectorXd& u) {
    double fn = bvp.solve(u, iterations);
    for (int pass = 0; pass < 3 && bvp.remesh(u); ++pass) {
      int more = 0;
      fn = bvp.solve(u, more);
      iterations += more;
    }
    return fn;
  };
  Eigen::VectorXd u = bvp.initial_guess();
  double fn = attempt(u);
  if (!(fn <= opt.bvp_accept)) {
    // The reversed relaxation can lie far from the optimal route (e.g. when
    // that route hugs a face); seed from a coarse discrete minimizer instead.
    MinimizerOptions mo;
    mo.nodes = opt.seed_nodes;
    mo.fail_grad = std::numeric_limits<double>::infinity();
    const auto seed = minimize_discrete_action(m, m.endemic, target, mo);
    Eigen::VectorXd v = bvp.initial_guess(seed.path);
    const double fv = attempt(v);
    if (fv < fn) {
      u = std::move(v);
      fn = fv;
    }
  }
  if (!(fn <= opt.bvp_accept))
  {
    std::ostringstream os;
    os << "heteroclinic boundary-value solve did not converge (mismatch " << fn << " after " << iterations
       << " iterations)";
    throw Error(ErrorKind::NoConnection, os.str());
  }
  QuasipotentialResult res;
  res.method = "shooting";
  res.start = m.endemic;
  res.target = target;
  res.epsilon = opt.epsilon;
  res.iterations = iterations;
  res.converged = true;
  res.segment_mismatch = fn;
  const int d = m.d;
  const double tau = bvp.tau(u);
  double cost = 0.0, action = 0.0, t0 = 0.0;
  PhaseVec y0 = PhaseVec::Zero(2 * d + 2);
  y0.head(2 * d) = bvp.node(u, 0);
  push_phase(m, res, 0.0, y0);
  PhaseVec last = y0;
  for (int k = 0; k < bvp.segments(); ++k) {
    last = bvp.flow(bvp.node(u, k), tau, [&](const OdeStep<PhaseVec>& st) { push_phase(m, res, t0 + st.t1, st.y1); });
    cost += last[2 * d];
    action += last[2 * d + 1];
    t0 += tau;
  }
  const Vec z0 = y0.head(d), r0 = y0.segment(d, d);
  const Vec zT = last.head(d), rT = last.segment(d, d);
  res.head_correction = 0.5 * r0.dot(z0 - m.endemic);
  res.tail_bound = std::abs(0.5 * rT.dot(target - zT));
  res.value = cost + res.head_correction;
  res.action_integral = action;
  res.duration = t0;
  res.residual = (zT - target).norm() + rT.norm();
  res.terminal_adjoint = rT;
  return res;
}

}  // namespace detail

/// Heteroclinic from (z*, 0) to the end point over the equilibrium `target`.
/// On an invariant axis the orbit is found by one-parameter shooting on the
/// unstable manifold (its end adjoint keeps a finite normal component); a
/// saddle target is reached by multiple shooting between the two eigenspaces.
/// V is the running-cost integral plus the quadratic head piece; the tail
/// estimate is reported separately.
inline QuasipotentialResult shoot_heteroclinic(const ModelSpec& m, const Vec& target,
                                               const ShootingOptions& opt = {}) {
  if (m.d != 2) throw Error(ErrorKind::InvalidArgument, "shooting supports d = 2");
  require_in_domain(m, target);
  if (m.drift(target).norm() > 1e-8)
    throw Error(ErrorKind::InvalidArgument, "shooting target must be an equilibrium");
  const Linearization lin = linearize_at_equilibrium(m, m.endemic);
  QuasipotentialResult res = m.domain.exit_boundary == ExitBoundaryKind::Axis
                                 ? detail::single_shooting(m, lin, target, opt)
                                 : detail::multiple_shooting(m, lin, target, opt);
  detail::check_trajectory(m, res);
  return res;
}

// ---------------------------------------------------------------------------
// Boundary profile

struct ProfilePoint {
  double s = 0.0;
  Vec y;
  double V = std::numeric_limits<double>::infinity();
  double S = std::numeric_limits<double>::infinity();
  std::string error;  // empty on success
};

struct BoundaryProfile {
  std::vector<ProfilePoint> points;
  double minimum = std::numeric_limits<double>::infinity();
  std::size_t argmin = 0;
  double distance_to_zbar = 0.0;
  double resolution = 0.0;
  double spacing = 0.0;  // largest arclength gap between profiled points

  /// CSV with columns s, y_x, y_y, V, S (V and S empty where the solve failed).
  void write_csv(std::ostream& os) const {
    os.precision(17);
    os << "s,y_x,y_y,V,S\n";
    for (const auto& p : points) {
      os << p.s << ',' << p.y[0] << ',' << p.y[1] << ',';
      if (p.error.empty()) os << p.V << ',' << p.S;
      else os << ',';
      os << '\n';
    }
  }
};

/// V(z*, y) at every `stride`-th vertex of the trace (plus the vertex nearest
/// zbar and both ends), and S(y) = V(z*, y) - min over the profile.
inline BoundaryProfile boundary_profile(const ModelSpec& m, const BoundaryTrace& tr, std::size_t stride,
                                        const MinimizerOptions& opt = {}, unsigned jobs = 1) {
  if (stride == 0) throw Error(ErrorKind::InvalidArgument, "profile stride must be positive");
  if (tr.size() < 2) throw Error(ErrorKind::TraceFailure, "trace has fewer than two vertices");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < tr.size(); i += stride) idx.push_back(i);
  if (idx.back() != tr.size() - 1) idx.push_back(tr.size() - 1);
  idx.push_back(tr.nearest_vertex(m.boundary_attractor));
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());

  BoundaryProfile prof;
  prof.resolution = tr.resolution;
  for (std::size_t i = 1; i < idx.size(); ++i)
    prof.spacing = std::max(prof.spacing, tr.arclength[idx[i]] - tr.arclength[idx[i - 1]]);
  prof.points.resize(idx.size());
  parallel_for(idx.size(), jobs, [&](std::size_t n) {
    ProfilePoint& p = prof.points[n];
    p.s = tr.arclength[idx[n]];
    p.y = tr.points[idx[n]];
    try {
      p.V = minimize_discrete_action(m, m.endemic, m.domain.project(p.y), opt).value;
    } catch (const Error& e) {
      p.error = e.what();
    }
  });
  bool any = false;
  for (std::size_t i = 0; i < prof.points.size(); ++i) {
    const auto& p = prof.points[i];
    if (p.error.empty() && (!any || p.V < prof.minimum)) {
      prof.minimum = p.V;
      prof.argmin = i;
      any = true;
    }
  }
  if (!any) throw Error(ErrorKind::NonConvergence, "no profile point could be solved");
  for (auto& p : prof.points)
    if (p.error.empty()) p.S = p.V - prof.minimum;
  prof.distance_to_zbar = (prof.points[prof.argmin].y - m.boundary_attractor).norm();
  return prof;
}

}  // namespace exitlab
