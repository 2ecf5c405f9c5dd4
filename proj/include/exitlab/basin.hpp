#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "exitlab/model.hpp"
#include "exitlab/ode.hpp"

namespace exitlab {

enum class BasinLabel { Endemic, Boundary, Undecided };

inline std::string_view to_string(BasinLabel l) {
  switch (l) {
    case BasinLabel::Endemic: return "endemic";
    case BasinLabel::Boundary: return "boundary";
    case BasinLabel::Undecided: return "undecided";
  }
  return "?";
}

struct ClassifyOptions {
  double t_max = 500.0;
  double eps = 1e-3;
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
};

/// Attractor reached by the drift flow from z. Trajectories that enter the
/// eps-ball of z* are endemic; those entering the ball of the disease-free
/// attractor are boundary (for axis models that attractor is zbar itself).
inline BasinLabel classify_basin(const ModelSpec& m, const Vec& z, const ClassifyOptions& opt = {}) {
  require_in_domain(m, z);
  const Vec& target_e = m.endemic;
  const Vec& target_b = m.disease_free;
  auto label_of = [&](const Vec& p) -> std::optional<BasinLabel> {
    if ((p - target_e).norm() < opt.eps) return BasinLabel::Endemic;
    if ((p - target_b).norm() < opt.eps) return BasinLabel::Boundary;
    return std::nullopt;
  };
  if (auto l = label_of(z)) return *l;
  BasinLabel result = BasinLabel::Undecided;
  OdeOptions o;
  o.rel_tol = opt.rel_tol;
  o.abs_tol = opt.abs_tol;
  auto field = [&](double, const Vec& p) { return m.drift(m.domain.project(p)); };
  integrate_adaptive(field, z, 0.0, opt.t_max, o, [&](const OdeStep<Vec>& s) {
    if (auto l = label_of(s.y1)) {
      result = *l;
      return false;
    }
    return true;
  });
  return result;
}

/// Numerically traced characteristic boundary: an ordered polyline with unit
/// normals pointing out of the basin O (away from z*).
struct BoundaryTrace {
  std::vector<Vec> points;
  std::vector<Vec> normals;
  std::vector<double> arclength;
  double tolerance = 0.0;   // classification band width
  double resolution = 0.0;  // max spacing between consecutive points
  ExitBoundaryKind kind = ExitBoundaryKind::Axis;

  std::size_t size() const { return points.size(); }

  void compute_arclength() {
    arclength.assign(points.size(), 0.0);
    for (std::size_t i = 1; i < points.size(); ++i)
      arclength[i] = arclength[i - 1] + (points[i] - points[i - 1]).norm();
  }

  /// Nearest vertex to p; returns its index.
  std::size_t nearest_vertex(const Vec& p) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double dd = (points[i] - p).squaredNorm();
      if (dd < bd) {
        bd = dd;
        best = i;
      }
    }
    return best;
  }

  /// Euclidean distance from p to the polyline.
  double distance(const Vec& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
      const Vec a = points[i], ab = points[i + 1] - a;
      const double L2 = ab.squaredNorm();
      const double t = L2 > 0 ? std::clamp((p - a).dot(ab) / L2, 0.0, 1.0) : 0.0;
      best = std::min(best, (a + t * ab - p).norm());
    }
    if (points.size() == 1) best = (points[0] - p).norm();
    return best;
  }

  /// Arclength coordinate of p by nearest-vertex projection.
  double arclength_of(const Vec& p) const { return arclength[nearest_vertex(p)]; }

  void write_csv(std::ostream& os) const {
    os << "s,x,y,nx,ny\n";
    os.precision(17);
    for (std::size_t i = 0; i < points.size(); ++i)
      os << arclength[i] << ',' << points[i][0] << ',' << points[i][1] << ',' << normals[i][0] << ','
         << normals[i][1] << '\n';
  }
};

struct TraceOptions {
  ClassifyOptions classify{500.0, 1e-3, 1e-11, 1e-13};
  int coarse_rays = 360;
  int initial_rays = 64;
  // Bisection width as a fraction of the vertex spacing; keeps normals accurate.
  double width_fraction = 1e-5;
};

namespace detail {

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  return a < 0 ? a + two_pi : a;
}

// Largest s with c + s*u inside the domain.
inline double ray_extent(const DomainSpec& dom, const Vec& c, const Vec& u) {
  double s = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (u[i] < 0) s = std::min(s, -c[i] / u[i]);
  const double us = u.sum();
  if (us > 0) s = std::min(s, (dom.total() - c.sum()) / us);
  return s;
}

inline void orient_normals(BoundaryTrace& tr, const Vec& center) {
  const std::size_t n = tr.points.size();
  tr.normals.resize(n);
  // Second-order tangents from three-point Lagrange derivatives in the chord
  // length parameter (one-sided at the ends).
  auto tangent = [&](std::size_t i0, std::size_t at) {
    const Vec &p0 = tr.points[i0], &p1 = tr.points[i0 + 1], &p2 = tr.points[i0 + 2];
    const double h1 = (p1 - p0).norm(), h2 = (p2 - p1).norm();
    if (at == 0)
      return Vec(-(2 * h1 + h2) / (h1 * (h1 + h2)) * p0 + (h1 + h2) / (h1 * h2) * p1 -
                 h1 / (h2 * (h1 + h2)) * p2);
    if (at == 1)
      return Vec(-h2 / (h1 * (h1 + h2)) * p0 + (h2 - h1) / (h1 * h2) * p1 + h1 / (h2 * (h1 + h2)) * p2);
    return Vec(h2 / (h1 * (h1 + h2)) * p0 - (h1 + h2) / (h1 * h2) * p1 +
               (2 * h2 + h1) / (h2 * (h1 + h2)) * p2);
  };
  for (std::size_t i = 0; i < n; ++i) {
    Vec t;
    if (n < 3) t = tr.points[n - 1] - tr.points[0];
    else if (i == 0) t = tangent(0, 0);
    else if (i + 1 == n) t = tangent(n - 3, 2);
    else t = tangent(i - 1, 1);
    Vec nrm = vec2(t[1], -t[0]);
    nrm /= nrm.norm();
    if (nrm.dot(tr.points[i] - center) < 0) nrm = -nrm;
    tr.normals[i] = nrm;
  }
}

}  // namespace detail

/// Traces the characteristic boundary. Axis models get the segment {x = 0};
/// bistable models get the separatrix through the saddle, found by bisecting
/// the basin label along a fan of rays issued from z*.
inline BoundaryTrace trace_boundary(const ModelSpec& m, double resolution, const TraceOptions& opt = {}) {
  if (!(resolution > 0)) throw Error(ErrorKind::InvalidArgument, "resolution must be positive");
  if (m.d != 2) throw Error(ErrorKind::InvalidArgument, "boundary tracing supports d = 2 only");
  BoundaryTrace tr;
  tr.resolution = resolution;
  tr.kind = m.domain.exit_boundary;

  if (m.domain.exit_boundary == ExitBoundaryKind::Axis) {
    const double cap = m.domain.total();
    const int n = static_cast<int>(std::ceil(cap / resolution));
    for (int i = 0; i <= n; ++i) {
      tr.points.push_back(vec2(0.0, cap * i / n));
      tr.normals.push_back(vec2(-1.0, 0.0));
    }
    tr.compute_arclength();
    return tr;
  }

  const Vec c = m.endemic;
  const double width = resolution * opt.width_fraction;
  auto dir = [](double a) { return vec2(std::cos(a), std::sin(a)); };
  auto label_at = [&](const Vec& p) { return classify_basin(m, m.domain.project(p), opt.classify); };
  auto end_label = [&](double a) {
    const Vec u = dir(a);
    const double s = detail::ray_extent(m.domain, c, u);
    return label_at(c + s * u);
  };

  // Coarse scan: find the single arc of directions whose domain-boundary end
  // flows to the disease-free attractor.
  const int nc = opt.coarse_rays;
  std::vector<BasinLabel> coarse(nc);
  for (int i = 0; i < nc; ++i) coarse[i] = end_label(2.0 * std::numbers::pi * i / nc);
  int start = -1, runs = 0;
  for (int i = 0; i < nc; ++i) {
    const bool cur = coarse[i] == BasinLabel::Boundary;
    const bool prev = coarse[(i + nc - 1) % nc] == BasinLabel::Boundary;
    if (cur && !prev) {
      start = i;
      ++runs;
    }
  }
  if (runs != 1) {
    std::ostringstream os;
    os << "expected one arc of boundary-basin directions around z*, found " << runs;
    throw Error(ErrorKind::TraceFailure, os.str());
  }
  int len = 0;
  while (coarse[(start + len) % nc] == BasinLabel::Boundary) ++len;
  const double dA = 2.0 * std::numbers::pi / nc;
  // Refine the arc edges by bisection on the angle.
  auto refine_edge = [&](double in, double out) {
    for (int it = 0; it < 50 && std::abs(in - out) > 1e-13; ++it) {
      const double mid = 0.5 * (in + out);
      (end_label(mid) == BasinLabel::Boundary ? in : out) = mid;
    }
    return in;
  };
  const double a_lo = refine_edge(start * dA, (start - 1) * dA);
  const double a_hi = refine_edge((start + len - 1) * dA, (start + len) * dA);

  struct RayHit {
    double angle;
    double s;
    Vec p;
  };
  auto crossing = [&](double a, std::optional<std::pair<double, double>> hint) -> RayHit {
    const Vec u = dir(a);
    const double smax = detail::ray_extent(m.domain, c, u);
    double lo = 0.0, hi = smax;
    if (hint) {
      const double hl = std::max(0.0, hint->first), hh = std::min(smax, hint->second);
      if (label_at(c + hl * u) == BasinLabel::Endemic && label_at(c + hh * u) == BasinLabel::Boundary) {
        lo = hl;
        hi = hh;
      }
    }
    if (!hint || lo == 0.0) {
      if (label_at(c + hi * u) != BasinLabel::Boundary) {
        std::ostringstream os;
        os << "transversal at angle " << a << " from (" << c.transpose() << ") to ("
           << (c + hi * u).transpose() << ") has both ends in the same basin";
        throw Error(ErrorKind::TraceFailure, os.str());
      }
    }
    while (hi - lo > width) {
      const double mid = 0.5 * (lo + hi);
      const BasinLabel l = label_at(c + mid * u);
      if (l == BasinLabel::Endemic) lo = mid;
      else if (l == BasinLabel::Boundary) hi = mid;
      else {
        lo = hi = mid;
        break;
      }
    }
    const double s = 0.5 * (lo + hi);
    return {a, s, Vec(c + s * u)};
  };

  // Edge rays sit on the domain boundary; pull them slightly inward.
  const double inset = 1e-9;
  std::vector<RayHit> hits;
  const int n0 = std::max(2, opt.initial_rays);
  for (int i = 0; i <= n0; ++i) {
    const double a = a_lo + inset + (a_hi - a_lo - 2 * inset) * i / n0;
    hits.push_back(crossing(a, std::nullopt));
  }
  // Insert rays until consecutive vertices are within the resolution.
  for (std::size_t i = 0; i + 1 < hits.size();) {
    if ((hits[i + 1].p - hits[i].p).norm() <= resolution) {
      ++i;
      continue;
    }
    const double a = 0.5 * (hits[i].angle + hits[i + 1].angle);
    const double r1 = hits[i].s, r2 = hits[i + 1].s;
    const double pad = std::max(std::abs(r1 - r2), resolution);
    hits.insert(hits.begin() + static_cast<std::ptrdiff_t>(i) + 1,
                crossing(a, std::make_pair(std::min(r1, r2) - pad, std::max(r1, r2) + pad)));
  }

  // The saddle lies on the separatrix exactly; splice it in and drop vertices
  // that crowd it.
  const Vec& saddle = m.boundary_attractor;
  const double sa = detail::wrap_angle(std::atan2(saddle[1] - c[1], saddle[0] - c[0]) - a_lo) + a_lo;
  std::vector<Vec> pts;
  bool placed = false;
  for (const auto& h : hits) {
    if (!placed && h.angle > sa) {
      pts.push_back(saddle);
      placed = true;
    }
    if ((h.p - saddle).norm() < 0.25 * resolution) continue;
    pts.push_back(h.p);
  }
  if (!placed) pts.push_back(saddle);
  tr.points = std::move(pts);
  tr.tolerance = width;
  tr.compute_arclength();
  detail::orient_normals(tr, c);
  return tr;
}

/// max over vertices of |<b, n>| / max(|b|, floor).
inline double characteristic_check(const ModelSpec& m, const BoundaryTrace& tr, double floor = 1e-12) {
  double worst = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const Vec b = m.drift(tr.points[i]);
    worst = std::max(worst, std::abs(b.dot(tr.normals[i])) / std::max(b.norm(), floor));
  }
  return worst;
}

enum class Region { Inside, OnBoundary, Outside };

/// Membership oracle for O and its closure. Bistable models use a polar
/// lookup against the traced separatrix with an ODE fallback inside a thin
/// band around it.
class BasinIndicator {
 public:
  /// Axis-type models need no trace: O = {x > 0} within the domain.
  explicit BasinIndicator(const ModelSpec& m) : model_(&m), trace_(nullptr) {
    if (m.domain.exit_boundary != ExitBoundaryKind::Axis)
      throw Error(ErrorKind::InvalidArgument, "bistable models need a traced separatrix");
  }

  BasinIndicator(const ModelSpec& m, const BoundaryTrace& tr) : model_(&m), trace_(&tr) {
    if (tr.kind == ExitBoundaryKind::Separatrix) {
      center_ = m.endemic;
      const Vec d0 = tr.points.front() - center_;
      base_ = std::atan2(d0[1], d0[0]) - 1e-12;
      for (const auto& p : tr.points) {
        const Vec d = p - center_;
        angles_.push_back(detail::wrap_angle(std::atan2(d[1], d[0]) - base_));
      }
      double sag = 0.0;
      for (std::size_t i = 1; i + 1 < tr.points.size(); ++i) {
        const Vec a = tr.points[i - 1], ab = tr.points[i + 1] - a;
        const double L2 = ab.squaredNorm();
        if (L2 == 0) continue;
        const double t = std::clamp((tr.points[i] - a).dot(ab) / L2, 0.0, 1.0);
        sag = std::max(sag, (a + t * ab - tr.points[i]).norm());
      }
      band_ = 2.0 * (tr.tolerance + sag) + 1e-12;
    }
  }

  Region locate(const Vec& z) const {
    const ModelSpec& m = *model_;
    if (!m.domain.contains(z, 1e-12)) return Region::Outside;
    if (m.domain.exit_boundary == ExitBoundaryKind::Axis)
      return z[0] > 0.0 ? Region::Inside : Region::OnBoundary;
    const Vec d = z - center_;
    const double r = d.norm();
    if (r == 0.0) return Region::Inside;
    const double a = detail::wrap_angle(std::atan2(d[1], d[0]) - base_);
    if (a > angles_.back()) return Region::Inside;
    auto it = std::upper_bound(angles_.begin(), angles_.end(), a);
    if (it == angles_.begin()) return Region::Inside;
    const std::size_t i = static_cast<std::size_t>(it - angles_.begin()) - 1;
    if (i + 1 >= angles_.size()) return Region::Inside;
    // Intersect the ray through z with the polyline segment.
    const Vec u = d / r;
    const Vec p = trace_->points[i] - center_, q = trace_->points[i + 1] - center_;
    const Vec e = q - p;
    const double den = u[0] * e[1] - u[1] * e[0];
    const double rs = den != 0.0 ? (p[0] * e[1] - p[1] * e[0]) / den : p.norm();
    if (std::abs(r - rs) <= band_) {
      switch (classify_basin(m, z)) {
        case BasinLabel::Endemic: return Region::Inside;
        case BasinLabel::Boundary: return Region::Outside;
        case BasinLabel::Undecided: return Region::OnBoundary;
      }
    }
    return r < rs ? Region::Inside : Region::Outside;
  }

  bool in_closure(const Vec& z) const { return locate(z) != Region::Outside; }
  double band() const { return band_; }
  const BoundaryTrace* trace() const { return trace_; }
  const ModelSpec& model() const { return *model_; }

 private:
  const ModelSpec* model_;
  const BoundaryTrace* trace_;
  Vec center_;
  double base_ = 0.0;
  std::vector<double> angles_;
  double band_ = 0.0;
};

}  // namespace exitlab
