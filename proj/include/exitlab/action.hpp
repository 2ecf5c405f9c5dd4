#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "exitlab/model.hpp"
#include "exitlab/ode.hpp"

namespace exitlab {

/// f(nu, omega) = nu log(nu/omega) - nu + omega with log(nu/0) = inf and
/// 0 log(0/0) = 0.
inline ExtendedReal relative_entropy_f(double nu, double omega) {
  if (nu < 0.0 || omega < 0.0) throw Error(ErrorKind::NegativeInput, "f requires nu, omega >= 0");
  if (nu == 0.0) return ExtendedReal(omega);
  if (omega == 0.0) return ExtendedReal::infinity();
  // Rearranged to stay accurate for nu close to omega.
  const double r = nu / omega;
  return ExtendedReal(std::max(0.0, omega * (r * std::log(r) - r + 1.0)));
}

struct LagrangianOptions {
  double grad_tol = 1e-10;
  double theta_cap = 40.0;
  int max_iter = 200;
};

struct LagrangianResult {
  ExtendedReal value;
  Vec theta;               // argmax of l(z, y, .)
  double grad_norm = 0.0;  // |grad_theta l| at theta
  int iterations = 0;
  bool capped = false;     // theta reached the cap (sup approached, not attained)
};

namespace detail {

// True iff y is a nonnegative combination of the columns j of B with active[j].
inline bool in_active_cone(const JumpMatrix& B, const RateVec& beta, const Vec& y) {
  const int d = static_cast<int>(B.rows()), k = static_cast<int>(B.cols());
  if (y.norm() == 0.0) return true;
  std::vector<int> act;
  for (int j = 0; j < k; ++j)
    if (beta[j] > 0.0) act.push_back(j);
  std::vector<int> idx;
  std::function<bool(std::size_t, int)> rec = [&](std::size_t start, int left) -> bool {
    if (!idx.empty()) {
      Eigen::MatrixXd A(d, idx.size());
      for (std::size_t c = 0; c < idx.size(); ++c) A.col(c) = B.col(idx[c]);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
      if (qr.rank() == static_cast<Eigen::Index>(idx.size())) {
        Eigen::VectorXd w = qr.solve(Eigen::VectorXd(y));
        if ((A * w - Eigen::VectorXd(y)).norm() <= 1e-12 * (1.0 + y.norm()) && (w.array() >= 0.0).all())
          return true;
      }
    }
    if (left == 0) return false;
    for (std::size_t a = start; a < act.size(); ++a) {
      idx.push_back(act[a]);
      if (rec(a + 1, left - 1)) return true;
      idx.pop_back();
    }
    return false;
  };
  return rec(0, d);
}

inline bool all_positive(const RateVec& beta) { return (beta.array() > 0.0).all(); }

}  // namespace detail

/// Value of l(z, y, theta) = <theta, y> - sum_j beta_j (exp<theta, h_j> - 1).
inline double ell(const JumpMatrix& B, const RateVec& beta, const Vec& y, const Vec& theta) {
  const RateVec w = B.transpose() * theta;
  return theta.dot(y) - (beta.array() * (w.array().exp() - 1.0)).sum();
}

/// Legendre transform L(z, y) = sup_theta l(z, y, theta) with rates supplied.
/// `positive_span` tells whether the full jump set spans R^d positively; when
/// it does and every rate is positive the supremum is always finite.
inline LagrangianResult lagrangian_from_rates(const JumpMatrix& B, const RateVec& beta, const Vec& y,
                                              bool positive_span, const LagrangianOptions& opt = {},
                                              const Vec* theta0 = nullptr) {
  const int d = static_cast<int>(B.rows());
  LagrangianResult res;
  res.theta = theta0 ? *theta0 : Vec(Vec::Zero(d));
  if (!(positive_span && detail::all_positive(beta)) && !detail::in_active_cone(B, beta, y)) {
    res.value = ExtendedReal::infinity();
    return res;
  }
  Vec theta = res.theta;
  RateVec mu = beta.array() * (B.transpose() * theta).array().exp();
  double val = theta.dot(y) - (mu - beta).sum();
  Vec grad = y - B * mu;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (grad.norm() <= opt.grad_tol) break;
    // Newton on the concave objective: H = -sum mu_j h_j h_j^T.
    DimMat S = B * mu.asDiagonal() * B.transpose();
    const double reg = 1e-14 * (S.trace() + 1e-300);
    S.diagonal().array() += reg;
    Eigen::LDLT<DimMat> ldlt(S);
    Vec step = ldlt.solve(grad);
    if (!step.allFinite()) step = grad;
    // Keep iterates within the cap.
    const double smax = step.cwiseAbs().maxCoeff();
    double t = 1.0;
    if (smax > 0.0) {
      for (Eigen::Index i = 0; i < step.size(); ++i) {
        const double lim = step[i] > 0 ? (opt.theta_cap - theta[i]) / step[i]
                                        : (step[i] < 0 ? (-opt.theta_cap - theta[i]) / step[i] : 1e300);
        t = std::min(t, lim);
      }
    }
    bool moved = false;
    for (int ls = 0; ls < 60 && t > 1e-300; ++ls) {
      Vec trial = theta + t * step;
      RateVec mu_t = beta.array() * (B.transpose() * trial).array().exp();
      const double vt = trial.dot(y) - (mu_t - beta).sum();
      // Near the maximum the value is flat to rounding of its summands.
      const double slack = 1e-14 * (std::abs(trial.dot(y)) + mu_t.sum() + beta.sum());
      if (vt >= val - slack && std::isfinite(vt)) {
        const bool progress = vt > val || (y - B * mu_t).norm() < grad.norm();
        if (progress) {
          theta = trial;
          mu = mu_t;
          val = vt;
          grad = y - B * mu;
          moved = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!moved) break;
    if (theta.cwiseAbs().maxCoeff() >= opt.theta_cap * (1 - 1e-12)) {
      // y lies on the edge of the reachable cone; the sup is approached at infinity.
      res.capped = true;
      break;
    }
  }
  res.theta = theta;
  res.grad_norm = grad.norm();
  res.iterations = it;
  res.value = ExtendedReal(std::max(0.0, val));
  if (res.grad_norm > opt.grad_tol && !res.capped) {
    // Accept roundoff-level stagnation; otherwise report.
    const double scale = y.norm() + (B * mu).norm() + 1.0;
    if (res.grad_norm > 1e-6 * scale)
      throw Error(ErrorKind::NonConvergence,
                  "Lagrangian maximization stalled");
  }
  return res;
}

/// L(z, y) = sup_theta l(z, y, theta) for a model.
inline LagrangianResult lagrangian(const ModelSpec& m, const Vec& z, const Vec& y,
                                   const LagrangianOptions& opt = {}) {
  require_in_domain(m, z);
  return lagrangian_from_rates(m.B, m.rates(z), y, m.positive_span, opt);
}

/// Optimal jump intensities mu*_j = beta_j exp<theta*, h_j> realizing velocity y.
inline RateVec velocity_decomposition(const ModelSpec& m, const Vec& z, const Vec& y) {
  const auto L = lagrangian(m, z, y);
  if (L.value.is_infinite()) throw Error(ErrorKind::InfiniteAction, "velocity not reachable from z");
  return m.rates(z).array() * (m.B.transpose() * L.theta).array().exp();
}

/// Control-form cost sum_j f(mu_j, beta_j(z)).
inline ExtendedReal control_cost(const ModelSpec& m, const Vec& z, const RateVec& mu) {
  const RateVec beta = m.rates(z);
  ExtendedReal total(0.0);
  for (int j = 0; j < m.k; ++j) total = total + relative_entropy_f(mu[j], beta[j]);
  return total;
}

/// H(z, r) = sum_j beta_j(z) (exp<r, h_j> - 1).
inline double reduced_hamiltonian(const ModelSpec& m, const Vec& z, const Vec& r) {
  const RateVec beta = m.rates(z);
  return (beta.array() * ((m.B.transpose() * r).array().exp() - 1.0)).sum();
}

struct ActionValue {
  ExtendedReal value;
  std::vector<double> breakdown;  // per-reaction integrals of f(mu_j, beta_j)
  double error_estimate = 0.0;

  void write_json(std::ostream& os) const {
    os.precision(17);
    os << "{\"value\": ";
    if (value.is_infinite()) os << "\"inf\"";
    else os << value.value();
    os << ", \"breakdown\": [";
    for (std::size_t j = 0; j < breakdown.size(); ++j) os << (j ? ", " : "") << breakdown[j];
    os << "], \"error_estimate\": " << error_estimate << "}";
  }
};

namespace detail {

struct TrapezoidAction {
  ExtendedReal total;
  std::vector<double> breakdown;
};

inline TrapezoidAction trapezoid_action(const ModelSpec& m, const std::vector<double>& t,
                                        const std::vector<Vec>& z) {
  const std::size_t n = t.size();
  TrapezoidAction out{ExtendedReal(0.0), std::vector<double>(m.k, 0.0)};
  std::vector<double> Ls(n);
  std::vector<RateVec> costs(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec v;
    if (i == 0) v = (z[1] - z[0]) / (t[1] - t[0]);
    else if (i + 1 == n) v = (z[n - 1] - z[n - 2]) / (t[n - 1] - t[n - 2]);
    else v = (z[i + 1] - z[i - 1]) / (t[i + 1] - t[i - 1]);
    const auto L = lagrangian(m, z[i], v);
    if (L.value.is_infinite()) {
      out.total = ExtendedReal::infinity();
      return out;
    }
    Ls[i] = L.value.value();
    const RateVec beta = m.rates(z[i]);
    const RateVec mu = beta.array() * (m.B.transpose() * L.theta).array().exp();
    costs[i].resize(m.k);
    for (int j = 0; j < m.k; ++j) costs[i][j] = relative_entropy_f(mu[j], beta[j]).value_or(0.0);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = t[i + 1] - t[i];
    acc += 0.5 * h * (Ls[i] + Ls[i + 1]);
    for (int j = 0; j < m.k; ++j) out.breakdown[j] += 0.5 * h * (costs[i][j] + costs[i + 1][j]);
  }
  out.total = ExtendedReal(acc);
  return out;
}

}  // namespace detail

/// I_T of a grid path: centered-difference velocities, trapezoid quadrature of
/// L, error estimated by Richardson comparison with the every-other-point grid.
inline ActionValue path_action(const ModelSpec& m, const SmoothPath& path) {
  path.check();
  if (path.size() < 2) throw Error(ErrorKind::InvalidArgument, "path_action needs >= 2 grid points");
  for (const auto& z : path.z) require_in_domain(m, z);
  ActionValue av;
  const auto full = detail::trapezoid_action(m, path.t, path.z);
  if (full.total.is_infinite()) throw Error(ErrorKind::InfiniteAction, "L is infinite on some grid cell");
  av.value = full.total;
  av.breakdown = full.breakdown;
  if (path.size() >= 5) {
    std::vector<double> th;
    std::vector<Vec> zh;
    for (std::size_t i = 0; i < path.size(); i += 2) {
      th.push_back(path.t[i]);
      zh.push_back(path.z[i]);
    }
    if (th.back() != path.t.back()) {
      th.push_back(path.t.back());
      zh.push_back(path.z.back());
    }
    const auto half = detail::trapezoid_action(m, th, zh);
    av.error_estimate = half.total.is_finite()
                            ? std::abs(half.total.value() - full.total.value()) / 3.0
                            : std::numeric_limits<double>::infinity();
  }
  return av;
}

}  // namespace exitlab
