#pragma once
// Shared small-vector helpers and error types.
//
// State vectors are plain std::vector<double> / raw spans; dimensions are a
// few at desk scale, and the hot simulation loops stay allocation-free by
// writing into caller-provided buffers.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvmv {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2_sq(std::span<const double> a) { return dot(a, a); }

inline double norm2(std::span<const double> a) { return std::sqrt(norm2_sq(a)); }

inline double dist2_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double dist2(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(dist2_sq(a, b));
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

// y := A x for row-major A (rows x cols).
inline void matvec(std::span<const double> A, int rows, int cols,
                   std::span<const double> x, std::span<double> y) {
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    const double* row = A.data() + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
}

inline double frobenius_norm(std::span<const double> A) { return norm2(A); }

// A simulation step produced a non-finite state.
struct SolverError : std::runtime_error {
  int step;
  explicit SolverError(int step_index,
                       const std::string& what = "solver diverged (non-finite state)")
      : std::runtime_error(what + " at step " + std::to_string(step_index)), step(step_index) {}
};

// A rate minimization cannot reach its target within tolerance.
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Too few uncensored points to fit or rank.
struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A configuration file is missing, malformed, or out of domain.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mvmv
