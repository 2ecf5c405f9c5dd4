#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace exitlab {

inline constexpr int kMaxDim = 4;
inline constexpr int kMaxReactions = 16;

// Small vectors with a fixed capacity so that hot loops never touch the heap.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using RateVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxReactions, 1>;
// d x k matrices: jump vectors as columns, rate gradients as columns.
using JumpMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxReactions>;
using PhaseVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 2 * kMaxDim, 1>;
using PhaseMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 2 * kMaxDim,
                               2 * kMaxDim>;
using DimMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

inline Vec vec2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

enum class ErrorKind {
  UnknownModel,
  RegimeViolation,
  OutOfDomain,
  RootFindFailure,
  EmptyLattice,
  StepUnderflow,
  TraceFailure,
  NegativeInput,
  NonConvergence,
  InfiniteAction,
  DegenerateSpectrum,
  NoConnection,
  InsufficientData,
  IoFailure,
  ConfigError,
  InvalidArgument,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::UnknownModel: return "UnknownModel";
    case ErrorKind::RegimeViolation: return "RegimeViolation";
    case ErrorKind::OutOfDomain: return "OutOfDomain";
    case ErrorKind::RootFindFailure: return "RootFindFailure";
    case ErrorKind::EmptyLattice: return "EmptyLattice";
    case ErrorKind::StepUnderflow: return "StepUnderflow";
    case ErrorKind::TraceFailure: return "TraceFailure";
    case ErrorKind::NegativeInput: return "NegativeInput";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::InfiniteAction: return "InfiniteAction";
    case ErrorKind::DegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorKind::NoConnection: return "NoConnection";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// A nonnegative cost that may be +infinity. The infinite case is carried as a
/// flag so that no IEEE infinity ever enters arithmetic.
class ExtendedReal {
 public:
  constexpr ExtendedReal() = default;
  constexpr explicit ExtendedReal(double v) : value_(v) {}
  static constexpr ExtendedReal infinity() {
    ExtendedReal r;
    r.infinite_ = true;
    return r;
  }
  constexpr bool is_infinite() const { return infinite_; }
  constexpr bool is_finite() const { return !infinite_; }
  /// Finite value; throws InfiniteAction otherwise.
  double value() const {
    if (infinite_) throw Error(ErrorKind::InfiniteAction, "value requested from +infinity");
    return value_;
  }
  double value_or(double fallback) const { return infinite_ ? fallback : value_; }

  friend ExtendedReal operator+(ExtendedReal a, ExtendedReal b) {
    if (a.infinite_ || b.infinite_) return infinity();
    return ExtendedReal(a.value_ + b.value_);
  }
  friend bool operator<(ExtendedReal a, ExtendedReal b) {
    if (a.infinite_) return false;
    if (b.infinite_) return true;
    return a.value_ < b.value_;
  }

 private:
  double value_ = 0.0;
  bool infinite_ = false;
};

// splitmix64 finalizer; used to derive per-replica streams from a master seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
  return mix64(mix64(master) ^ mix64(counter + 0x5851f42d4c957f2dULL));
}

inline double sq(double x) { return x * x; }

/// Runs `fn(i)` for i in [0, count) on `jobs` threads; each index runs exactly once.
template <class Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(count, 1)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += jobs) fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace exitlab
