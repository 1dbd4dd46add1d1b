#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "scenery/errors.hpp"

namespace scenery {

/// Density of N(0, t I_d) at x; d = x.size().
inline double heat_kernel(double t, std::span<const double> x) {
  if (!(t > 0.0)) throw DomainError("heat_kernel: t must be > 0");
  if (x.empty() || x.size() > 4) throw DomainError("heat_kernel: dimension must be in 1..4");
  double r2 = 0.0;
  for (double xi : x) r2 += xi * xi;
  const double d = static_cast<double>(x.size());
  return std::pow(2.0 * std::numbers::pi * t, -0.5 * d) * std::exp(-r2 / (2.0 * t));
}

/// Resolve a worker count: explicit value if positive, else SCENERY_HOMOG_WORKERS, else 1.
inline unsigned resolve_workers(int requested = 0) {
  if (requested > 0) return static_cast<unsigned>(requested);
  if (const char* env = std::getenv("SCENERY_HOMOG_WORKERS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

/// Calls body(i) for i in [0, n) on `workers` threads. Each index is handled
/// exactly once and bodies write to disjoint slots, so results do not depend on
/// the worker count. The first exception thrown by any body is rethrown.
template <class Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  const unsigned count = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::vector<std::jthread> pool;
  pool.reserve(count - 1);
  for (unsigned w = 1; w < count; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace scenery
