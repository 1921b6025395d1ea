#pragma once
// Maximal monotone operators A: R^d -> 2^{R^d} and their resolvents.
//
// Supported kinds: the zero operator, normal cones of boxes and closed balls
// (whose resolvents are metric projections, i.e. the Skorokhod reflection of
// the implicit step), and subdifferentials of two convex families with
// closed-form proximal maps (weighted l1 and isotropic quadratic). Indicator
// functions are expressed through the normal-cone kinds.
//
// Solvers realize the multivalued drift -A(X)dt by an implicit resolvent step,
// so everything here must be exact: projections and proximal points are
// closed-form, never iterative.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvmv/common.hpp"
#include "mvmv/rng.hpp"

namespace mvmv::monotone {

enum class OperatorKind { zero, normal_cone_box, normal_cone_ball, subdiff_l1, subdiff_quadratic };

inline const char* kind_name(OperatorKind k) {
  switch (k) {
    case OperatorKind::zero: return "zero";
    case OperatorKind::normal_cone_box: return "box";
    case OperatorKind::normal_cone_ball: return "ball";
    case OperatorKind::subdiff_l1: return "l1";
    case OperatorKind::subdiff_quadratic: return "quadratic";
  }
  return "?";
}

struct MonotoneOperator {
  OperatorKind kind = OperatorKind::zero;
  int dim = 1;
  std::vector<double> lower, upper;  // box bounds; entries may be +-infinity
  std::vector<double> center;       // ball center
  double radius = 0.0;              // ball radius
  double scale = 0.0;               // l1: phi(z) = scale*sum|z_i|; quadratic: phi(z) = scale*|z|^2/2
};

inline MonotoneOperator zero_operator(int dim) {
  if (dim < 1) throw std::invalid_argument("operator dimension must be positive");
  return MonotoneOperator{OperatorKind::zero, dim, {}, {}, {}, 0.0, 0.0};
}

inline MonotoneOperator box_operator(std::vector<double> lower, std::vector<double> upper) {
  const int d = static_cast<int>(lower.size());
  if (d < 1 || upper.size() != lower.size())
    throw std::invalid_argument("box operator needs matching lower/upper of positive dimension");
  for (int i = 0; i < d; ++i) {
    if (std::isnan(lower[i]) || std::isnan(upper[i]))
      throw std::invalid_argument("box bounds must not be NaN");
    if (!(lower[i] < upper[i]))
      throw std::invalid_argument("box needs lower < upper componentwise (nonempty interior)");
  }
  MonotoneOperator op;
  op.kind = OperatorKind::normal_cone_box;
  op.dim = d;
  op.lower = std::move(lower);
  op.upper = std::move(upper);
  return op;
}

// Half-line [0, +inf)^d, the reflecting boundary used by the canonical preset.
inline MonotoneOperator nonnegative_orthant(int dim) {
  return box_operator(std::vector<double>(dim, 0.0),
                      std::vector<double>(dim, std::numeric_limits<double>::infinity()));
}

inline MonotoneOperator ball_operator(std::vector<double> center, double radius) {
  if (center.empty()) throw std::invalid_argument("ball operator needs a center of positive dimension");
  if (!(radius > 0.0)) throw std::invalid_argument("ball radius must be positive");
  if (!all_finite(center)) throw std::invalid_argument("ball center must be finite");
  MonotoneOperator op;
  op.kind = OperatorKind::normal_cone_ball;
  op.dim = static_cast<int>(center.size());
  op.center = std::move(center);
  op.radius = radius;
  return op;
}

inline MonotoneOperator l1_operator(int dim, double scale) {
  if (dim < 1) throw std::invalid_argument("operator dimension must be positive");
  if (!(scale >= 0.0) || !std::isfinite(scale))
    throw std::invalid_argument("l1 scale must be finite and nonnegative");
  MonotoneOperator op;
  op.kind = OperatorKind::subdiff_l1;
  op.dim = dim;
  op.scale = scale;
  return op;
}

inline MonotoneOperator quadratic_operator(int dim, double scale) {
  if (dim < 1) throw std::invalid_argument("operator dimension must be positive");
  if (!(scale >= 0.0) || !std::isfinite(scale))
    throw std::invalid_argument("quadratic scale must be finite and nonnegative");
  MonotoneOperator op;
  op.kind = OperatorKind::subdiff_quadratic;
  op.dim = dim;
  op.scale = scale;
  return op;
}

namespace detail {

inline void check_point(const MonotoneOperator& op, std::span<const double> x, const char* who) {
  if (static_cast<int>(x.size()) != op.dim)
    throw std::invalid_argument(std::string(who) + ": point dimension mismatch");
  if (!all_finite(x)) throw std::invalid_argument(std::string(who) + ": non-finite input");
}

inline void project_ball(const MonotoneOperator& op, std::span<const double> x,
                         std::span<double> out) {
  double r2 = 0.0;
  for (int i = 0; i < op.dim; ++i) {
    const double d = x[i] - op.center[i];
    r2 += d * d;
  }
  // A few ulps of slack keep the projection an exact fixed point of itself:
  // a freshly projected point may overshoot the radius by rounding alone.
  const double rr = op.radius * op.radius * (1.0 + 32.0 * std::numeric_limits<double>::epsilon());
  if (r2 <= rr) {
    std::copy(x.begin(), x.end(), out.begin());
    return;
  }
  const double f = op.radius / std::sqrt(r2);
  for (int i = 0; i < op.dim; ++i) out[i] = op.center[i] + f * (x[i] - op.center[i]);
}

}  // namespace detail

// Nearest point of closure(D(A)). Identity for kinds with full domain.
inline void domain_project(const MonotoneOperator& op, std::span<const double> x,
                           std::span<double> out) {
  detail::check_point(op, x, "domain_project");
  switch (op.kind) {
    case OperatorKind::zero:
    case OperatorKind::subdiff_l1:
    case OperatorKind::subdiff_quadratic:
      std::copy(x.begin(), x.end(), out.begin());
      return;
    case OperatorKind::normal_cone_box:
      for (int i = 0; i < op.dim; ++i) out[i] = std::clamp(x[i], op.lower[i], op.upper[i]);
      return;
    case OperatorKind::normal_cone_ball:
      detail::project_ball(op, x, out);
      return;
  }
}

inline std::vector<double> domain_project(const MonotoneOperator& op,
                                          std::span<const double> x) {
  std::vector<double> out(op.dim);
  domain_project(op, x, out);
  return out;
}

inline bool in_domain_closure(const MonotoneOperator& op, std::span<const double> x,
                              double tol = 1e-9) {
  std::vector<double> p(op.dim);
  domain_project(op, x, p);
  return dist2(x, p) <= tol;
}

// Resolvent J_lambda = (I + lambda A)^{-1}. For normal cones this is the metric
// projection (lambda-independent); for subdifferentials the proximal map of
// lambda*phi.
inline void resolvent(const MonotoneOperator& op, double lambda, std::span<const double> x,
                      std::span<double> out) {
  detail::check_point(op, x, "resolvent");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("resolvent: lambda must be positive and finite");
  switch (op.kind) {
    case OperatorKind::zero:
      std::copy(x.begin(), x.end(), out.begin());
      return;
    case OperatorKind::normal_cone_box:
      for (int i = 0; i < op.dim; ++i) out[i] = std::clamp(x[i], op.lower[i], op.upper[i]);
      return;
    case OperatorKind::normal_cone_ball:
      detail::project_ball(op, x, out);
      return;
    case OperatorKind::subdiff_l1: {
      const double t = lambda * op.scale;  // soft threshold
      for (int i = 0; i < op.dim; ++i) {
        if (x[i] > t)
          out[i] = x[i] - t;
        else if (x[i] < -t)
          out[i] = x[i] + t;
        else
          out[i] = 0.0;
      }
      return;
    }
    case OperatorKind::subdiff_quadratic: {
      const double f = 1.0 / (1.0 + lambda * op.scale);
      for (int i = 0; i < op.dim; ++i) out[i] = f * x[i];
      return;
    }
  }
}

inline std::vector<double> resolvent(const MonotoneOperator& op, double lambda,
                                     std::span<const double> x) {
  std::vector<double> out(op.dim);
  resolvent(op, lambda, x, out);
  return out;
}

// Yosida approximation A_lambda(x) = (x - J_lambda(x)) / lambda.
inline std::vector<double> yosida(const MonotoneOperator& op, double lambda,
                                  std::span<const double> x) {
  std::vector<double> out = resolvent(op, lambda, x);
  for (int i = 0; i < op.dim; ++i) out[i] = (x[i] - out[i]) / lambda;
  return out;
}

struct GraphSample {
  std::vector<double> x, y;  // y in A(x)
};

// Draws pairs from Gr(A), biased to exercise the multivalued part: boundary
// faces of boxes and balls, kinks of l1. Box samples at corners carry the full
// normal cone as nonnegative combinations of its generator rays (one signed
// ray per active bound), not just a single selection.
inline std::vector<GraphSample> graph_sample(const MonotoneOperator& op, rng::NormalStream& stream,
                                             int count) {
  if (count < 1) throw std::invalid_argument("graph_sample: count must be >= 1");
  std::vector<GraphSample> samples;
  samples.reserve(count);
  const double span = 3.0;
  for (int s = 0; s < count; ++s) {
    GraphSample g;
    g.x.assign(op.dim, 0.0);
    g.y.assign(op.dim, 0.0);
    switch (op.kind) {
      case OperatorKind::zero:
        for (int i = 0; i < op.dim; ++i) g.x[i] = stream.uniform(-span, span);
        break;
      case OperatorKind::normal_cone_box:
        for (int i = 0; i < op.dim; ++i) {
          const double lo = op.lower[i], hi = op.upper[i];
          const bool has_lo = std::isfinite(lo), has_hi = std::isfinite(hi);
          const double u = stream.uniform();
          bool at_lower = u >= 0.5 && u < 0.75 && has_lo;
          bool at_upper = u >= 0.75 && has_hi;
          if (u >= 0.5 && !at_lower && !at_upper) {  // fall back to whichever face exists
            at_lower = has_lo;
            at_upper = !at_lower && has_hi;
          }
          if (at_lower) {
            g.x[i] = lo;
            g.y[i] = -stream.uniform(0.0, span);  // cone generator ray -e_i, nonnegative weight
          } else if (at_upper) {
            g.x[i] = hi;
            g.y[i] = stream.uniform(0.0, span);  // cone generator ray +e_i
          } else {
            const double a = has_lo ? lo : -span;
            const double b = has_hi ? hi : span;
            g.x[i] = stream.uniform(a, b);
            g.y[i] = 0.0;
          }
        }
        break;
      case OperatorKind::normal_cone_ball: {
        if (stream.uniform() < 0.4) {  // interior point, cone = {0}
          double r2 = 2.0;
          while (r2 > 1.0) {  // rejection into the unit ball
            r2 = 0.0;
            for (int i = 0; i < op.dim; ++i) {
              g.x[i] = stream.uniform(-1.0, 1.0);
              r2 += g.x[i] * g.x[i];
            }
          }
          for (int i = 0; i < op.dim; ++i) g.x[i] = op.center[i] + 0.999 * op.radius * g.x[i];
        } else {  // boundary point, cone = nonnegative multiples of the outward normal
          double n2 = 0.0;
          std::vector<double> u(op.dim);
          do {
            n2 = 0.0;
            for (int i = 0; i < op.dim; ++i) {
              u[i] = stream.normal();
              n2 += u[i] * u[i];
            }
          } while (n2 < 1e-12);
          const double inv = 1.0 / std::sqrt(n2);
          const double t = stream.uniform(0.0, span);
          for (int i = 0; i < op.dim; ++i) {
            g.x[i] = op.center[i] + op.radius * u[i] * inv;
            g.y[i] = t * u[i] * inv;
          }
        }
        break;
      }
      case OperatorKind::subdiff_l1:
        for (int i = 0; i < op.dim; ++i) {
          const double u = stream.uniform();
          if (u < 1.0 / 3.0) {  // kink: any subgradient in [-scale, scale]
            g.x[i] = 0.0;
            g.y[i] = op.scale * stream.uniform(-1.0, 1.0);
          } else {
            g.x[i] = stream.uniform(-span, span);
            if (g.x[i] == 0.0) g.x[i] = 1.0;
            g.y[i] = op.scale * (g.x[i] > 0.0 ? 1.0 : -1.0);
          }
        }
        break;
      case OperatorKind::subdiff_quadratic:
        for (int i = 0; i < op.dim; ++i) {
          g.x[i] = stream.uniform(-span, span);
          g.y[i] = op.scale * g.x[i];
        }
        break;
    }
    samples.push_back(std::move(g));
  }
  return samples;
}

}  // namespace mvmv::monotone
