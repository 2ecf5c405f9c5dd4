#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "exitlab/basin.hpp"
#include "exitlab/model.hpp"

namespace exitlab {

enum class StopRule { AtHorizon, AtExit, AtAbsorption };
enum class ExitMode { HitBoundary, SuppressedJump };

inline std::string_view to_string(ExitMode m) {
  return m == ExitMode::HitBoundary ? "hit_boundary" : "suppressed_jump";
}

struct ExitRecord {
  double tau = 0.0;
  Vec location;
  int proposed_jump = -1;
  ExitMode mode = ExitMode::HitBoundary;
  // True when the exit went through a face of the domain instead of the
  // characteristic boundary.
  bool other_boundary = false;
  int N = 0;
  std::uint64_t seed = 0;
  std::size_t replica = 0;
};

struct JumpEvent {
  double t;
  int reaction;
  Vec z;  // post-jump state (unchanged when suppressed)
  bool suppressed;
};

struct JumpPath {
  const ModelSpec* model = nullptr;
  int N = 0;
  Vec initial;
  std::vector<JumpEvent> events;
  std::optional<ExitRecord> exit;
  std::uint64_t seed = 0;
  std::uint64_t event_count = 0;  // also counts events when not recorded
  double final_time = 0.0;
  Vec final_state;
  bool absorbed = false;

  /// CSV with columns time, j, x, y, suppressed; the first row is the initial state (j = -1).
  void write_csv(std::ostream& os) const {
    os << "time,j,x,y,suppressed\n";
    os.precision(17);
    os << 0.0 << ',' << -1 << ',' << initial[0] << ',' << initial[1] << ",0\n";
    for (const auto& e : events)
      os << e.t << ',' << e.reaction << ',' << e.z[0] << ',' << e.z[1] << ',' << (e.suppressed ? 1 : 0)
         << '\n';
  }
};

/// Uniform double in (0, 1] from 53 random bits.
inline double uniform01(std::mt19937_64& g) { return (static_cast<double>(g() >> 11) + 1.0) * 0x1.0p-53; }

namespace detail {

using Counts = std::array<long, kMaxDim>;

inline Vec counts_to_state(const Counts& n, int d, int N) {
  Vec z(d);
  for (int i = 0; i < d; ++i) z[i] = static_cast<double>(n[i]) / N;
  return z;
}

inline Counts floor_counts(const Vec& z, int N) {
  Counts n{};
  for (Eigen::Index i = 0; i < z.size(); ++i) n[i] = static_cast<long>(std::floor(N * z[i] + 1e-9));
  return n;
}

}  // namespace detail

/// Lattice starting point: [Nz]/N when it lies in the closure of O, otherwise
/// the nearest lattice point of the closure (ties broken lexicographically).
inline Vec project_initial(const BasinIndicator& basin, int N, const Vec& z) {
  const ModelSpec& m = basin.model();
  if (N < 1) throw Error(ErrorKind::EmptyLattice, "population scale N must be >= 1");
  const auto base = detail::floor_counts(z, N);
  Vec fz = detail::counts_to_state(base, m.d, N);
  if (basin.in_closure(fz)) return fz;
  if (m.d != 2) throw Error(ErrorKind::InvalidArgument, "lattice search supports d = 2");
  // Expanding square rings around the floor point.
  const long limit = static_cast<long>(std::ceil(m.domain.total() * N)) + 2;
  std::optional<Vec> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (long ring = 1; ring <= limit; ++ring) {
    if (best && (static_cast<double>(ring) - 1.0) / N > best_d) break;
    for (long dx = -ring; dx <= ring; ++dx) {
      for (long dy = -ring; dy <= ring; ++dy) {
        if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
        Vec c = vec2(static_cast<double>(base[0] + dx) / N, static_cast<double>(base[1] + dy) / N);
        if (!basin.in_closure(c)) continue;
        const double dist = (c - z).norm();
        const bool better = dist < best_d - 1e-15 ||
                            (std::abs(dist - best_d) <= 1e-15 && best &&
                             (c[0] < (*best)[0] || (c[0] == (*best)[0] && c[1] < (*best)[1])));
        if (!best || better) {
          best = c;
          best_d = dist;
        }
      }
    }
  }
  if (!best) throw Error(ErrorKind::EmptyLattice, "no lattice point of the closure of O at this N");
  return *best;
}

struct SimulateOptions {
  bool reflect = false;
  StopRule stop = StopRule::AtHorizon;
  bool record_events = true;
};

/// Exact (direct-method) simulation of the jump process. Free runs stop the
/// clock on leaving O when stop = AtExit; reflected runs suppress any jump
/// whose target leaves the closure of O.
inline JumpPath simulate(const BasinIndicator& basin, int N, const Vec& z0, double horizon,
                         const SimulateOptions& opt, std::uint64_t seed) {
  const ModelSpec& m = basin.model();
  if (!(horizon > 0)) throw Error(ErrorKind::InvalidArgument, "horizon must be positive");
  if (N < 1) throw Error(ErrorKind::InvalidArgument, "N must be >= 1");
  require_in_domain(m, z0);
  const int d = m.d, k = m.k;

  JumpPath path;
  path.model = &m;
  path.N = N;
  path.seed = seed;
  auto n = detail::floor_counts(z0, N);
  path.initial = detail::counts_to_state(n, d, N);
  if ((path.initial - z0).norm() > 1e-9)
    throw Error(ErrorKind::InvalidArgument, "z0 is not a lattice point; use project_initial");

  std::mt19937_64 gen(seed);
  std::vector<std::array<long, kMaxDim>> jump(k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < d; ++i) jump[j][i] = m.jumps[j][i];

  Vec z = path.initial;
  RateVec rates(k);
  double t = 0.0;
  auto record_exit = [&](const Vec& loc, int j, ExitMode mode) {
    ExitRecord e;
    e.tau = t;
    e.location = loc;
    e.proposed_jump = j;
    e.mode = mode;
    e.other_boundary = !m.domain.contains(loc, 1e-12);
    e.N = N;
    e.seed = seed;
    path.exit = e;
  };

  while (true) {
    m.rate_fn(z, rates);
    double total = 0.0;
    for (int j = 0; j < k; ++j) total += rates[j];
    if (total <= 0.0) {
      path.absorbed = true;
      break;
    }
    const double dt = -std::log(uniform01(gen)) / (N * total);
    if (t + dt > horizon) {
      t = horizon;
      break;
    }
    t += dt;
    double pick = uniform01(gen) * total;
    int j = 0;
    for (; j < k - 1; ++j) {
      pick -= rates[j];
      if (pick <= 0.0) break;
    }
    auto target = n;
    for (int i = 0; i < d; ++i) target[i] += jump[j][i];
    const Vec tz = detail::counts_to_state(target, d, N);
    const Region where = basin.locate(tz);
    bool suppressed = false;
    if (opt.reflect) {
      if (where == Region::Outside) {
        suppressed = true;
        if (!path.exit) record_exit(z, j, ExitMode::SuppressedJump);
      } else {
        n = target;
        z = tz;
        if (where == Region::OnBoundary && !path.exit) record_exit(z, j, ExitMode::HitBoundary);
      }
    } else {
      const bool was_inside = !path.exit;
      n = target;
      z = tz;
      if (where != Region::Inside && was_inside) record_exit(z, j, ExitMode::HitBoundary);
    }
    ++path.event_count;
    if (opt.record_events) path.events.push_back({t, j, z, suppressed});
    if (opt.stop == StopRule::AtExit && path.exit) break;
  }
  path.final_time = t;
  path.final_state = z;
  return path;
}

struct ExitExperiment {
  std::vector<ExitRecord> exits;  // in replica order
  std::size_t replicas = 0;
  std::size_t censored = 0;
  int N = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t total_events = 0;

  /// CSV with columns replica, N, seed, tau, exit_x, exit_y, mode, censored.
  void write_csv(std::ostream& os) const {
    os << "replica,N,seed,tau,exit_x,exit_y,mode,censored\n";
    os.precision(17);
    std::size_t next = 0;
    for (std::size_t r = 0; r < replicas; ++r) {
      if (next < exits.size() && exits[next].replica == r) {
        const auto& e = exits[next++];
        os << r << ',' << N << ',' << e.seed << ',' << e.tau << ',' << e.location[0] << ','
           << e.location[1] << ',' << to_string(e.mode) << ",0\n";
      } else {
        os << r << ',' << N << ',' << derive_seed(master_seed, r) << ",,,,,1\n";
      }
    }
  }
};

/// Independent replicas with per-replica seeds derived from the master seed by
/// counter, so results do not depend on scheduling.
inline ExitExperiment exit_experiment(const BasinIndicator& basin, int N, const Vec& z0,
                                      std::size_t replicas, double horizon, std::uint64_t seed,
                                      bool reflect = false, unsigned jobs = 1) {
  const Vec start = project_initial(basin, N, z0);
  std::vector<std::optional<ExitRecord>> out(replicas);
  std::vector<std::uint64_t> events(replicas, 0);
  SimulateOptions opt;
  opt.reflect = reflect;
  opt.stop = StopRule::AtExit;
  opt.record_events = false;
  parallel_for(replicas, jobs, [&](std::size_t r) {
    const auto path = simulate(basin, N, start, horizon, opt, derive_seed(seed, r));
    events[r] = path.event_count;
    if (path.exit) {
      out[r] = *path.exit;
      out[r]->replica = r;
    }
  });
  ExitExperiment res;
  res.replicas = replicas;
  res.N = N;
  res.master_seed = seed;
  for (std::size_t r = 0; r < replicas; ++r) {
    res.total_events += events[r];
    if (out[r]) res.exits.push_back(*out[r]);
    else ++res.censored;
  }
  return res;
}

}  // namespace exitlab
