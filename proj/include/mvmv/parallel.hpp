#pragma once

// Deterministic task parallelism for replica sweeps. Work is assigned to
// workers by a fixed stride and every aggregation walks a fixed pairwise
// tree, so numeric results are bitwise independent of the worker count and
// of scheduling. Failures are deterministic too: the exception thrown for
// the lowest task index wins.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <span>
#include <thread>
#include <vector>

namespace mvmv::parallel {

// Worker-count resolution: an explicit positive request wins, then the
// MVMV_WORKERS environment variable, then single-threaded.
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MVMV_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v <= 1024) return static_cast<int>(v);
  }
  return 1;
}

// Runs fn(i) for i in [0, count). Worker w owns indices w, w + W, ...
template <class Fn>
void parallel_for(int count, int workers, Fn&& fn) {
  if (count <= 0) return;
  const int W = std::clamp(workers, 1, count);
  if (W == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(W));
  for (int w = 0; w < W; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < count; i += W) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Pairwise tree combine in a fixed order: adjacent pairs fold first, the odd
// tail passes through, repeat. The bracketing never depends on scheduling.
template <class T, class Op>
T tree_reduce(std::vector<T> v, Op op, T empty = T{}) {
  if (v.empty()) return empty;
  while (v.size() > 1) {
    std::size_t out = 0;
    for (std::size_t i = 0; i + 1 < v.size(); i += 2) v[out++] = op(v[i], v[i + 1]);
    if (v.size() % 2 == 1) v[out++] = v.back();
    v.resize(out);
  }
  return v[0];
}

inline double tree_sum(std::span<const double> v) {
  return tree_reduce(std::vector<double>(v.begin(), v.end()),
                     [](double a, double b) { return a + b; });
}

}  // namespace mvmv::parallel
