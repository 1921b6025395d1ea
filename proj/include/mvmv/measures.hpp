#pragma once
// Empirical probability measures on R^d and Wasserstein-2 distance.
//
// The distance is exact whenever feasible at desk scale and approximate only
// beyond it:
//   d = 1                      -> sorted quantile coupling (any weights)
//   equal weights, n = m <= 64 -> optimal assignment (Hungarian)
//   both supports <= 64 points -> transportation simplex
//   otherwise                  -> log-domain Sinkhorn, regularization
//                                 1e-3 * (mean cost under the product coupling)
// Solvers themselves only ever touch Diracs and per-step moment integrals;
// W2 is called by validators and tests, so clarity beats raw speed here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mvmv/common.hpp"

namespace mvmv::measures {

struct EmpiricalMeasure {
  int dim = 1;
  std::vector<double> points;   // size() * dim, row-major
  std::vector<double> weights;  // nonnegative, summing to 1 within 1e-12

  int size() const { return static_cast<int>(weights.size()); }
  std::span<const double> point(int i) const {
    return {points.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

inline EmpiricalMeasure dirac(std::span<const double> x) {
  EmpiricalMeasure m;
  m.dim = static_cast<int>(x.size());
  m.points.assign(x.begin(), x.end());
  m.weights.assign(1, 1.0);
  return m;
}

inline EmpiricalMeasure equal_weight(int dim, std::vector<double> flat_points) {
  if (dim < 1 || flat_points.empty() || flat_points.size() % dim != 0)
    throw std::invalid_argument("equal_weight: point array must be a nonempty multiple of dim");
  EmpiricalMeasure m;
  m.dim = dim;
  const int n = static_cast<int>(flat_points.size()) / dim;
  m.points = std::move(flat_points);
  m.weights.assign(n, 1.0 / n);
  return m;
}

inline void validate(const EmpiricalMeasure& m) {
  if (m.dim < 1) throw std::invalid_argument("measure: dimension must be positive");
  if (m.weights.empty()) throw std::invalid_argument("measure: needs at least one atom");
  if (m.points.size() != m.weights.size() * static_cast<std::size_t>(m.dim))
    throw std::invalid_argument("measure: points/weights size mismatch");
  double sum = 0.0;
  for (double w : m.weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("measure: weights must be finite and nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("measure: weights must sum to 1 within 1e-12");
  if (!all_finite(m.points)) throw std::invalid_argument("measure: non-finite support point");
}

inline double second_moment(const EmpiricalMeasure& m) {
  double s = 0.0;
  for (int i = 0; i < m.size(); ++i) s += m.weights[i] * norm2_sq(m.point(i));
  return s;
}

inline double norm2(const EmpiricalMeasure& m) { return std::sqrt(second_moment(m)); }

inline void mean(const EmpiricalMeasure& m, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (int i = 0; i < m.size(); ++i) {
    auto p = m.point(i);
    for (int j = 0; j < m.dim; ++j) out[j] += m.weights[i] * p[j];
  }
}

inline double w2_to_dirac(const EmpiricalMeasure& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.dim)
    throw std::invalid_argument("w2_to_dirac: dimension mismatch");
  double s = 0.0;
  for (int i = 0; i < m.size(); ++i) s += m.weights[i] * dist2_sq(m.point(i), x);
  return std::sqrt(s);
}

struct W2Info {
  double value = 0.0;
  enum class Method { exact_sorted, exact_assignment, exact_simplex, sinkhorn } method =
      Method::exact_sorted;
  double regularization = 0.0;   // 0 for exact routes
  double marginal_error = 0.0;   // Sinkhorn column-marginal residual
  int iterations = 0;
};

inline const char* method_name(W2Info::Method m) {
  switch (m) {
    case W2Info::Method::exact_sorted: return "exact-sorted";
    case W2Info::Method::exact_assignment: return "exact-assignment";
    case W2Info::Method::exact_simplex: return "exact-simplex";
    case W2Info::Method::sinkhorn: return "sinkhorn";
  }
  return "?";
}

namespace detail {

inline double sq(double v) { return v * v; }

inline double cost_sq(const EmpiricalMeasure& a, int i, const EmpiricalMeasure& b, int j) {
  return dist2_sq(a.point(i), b.point(j));
}

// d = 1: couple quantile functions. Exact for arbitrary weights.
inline double w2sq_sorted_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  std::vector<int> ia(a.size()), ib(b.size());
  std::iota(ia.begin(), ia.end(), 0);
  std::iota(ib.begin(), ib.end(), 0);
  std::sort(ia.begin(), ia.end(), [&](int l, int r) { return a.points[l] < a.points[r]; });
  std::sort(ib.begin(), ib.end(), [&](int l, int r) { return b.points[l] < b.points[r]; });
  double cost = 0.0;
  std::size_t i = 0, j = 0;
  double ra = a.weights[ia[0]], rb = b.weights[ib[0]];
  while (true) {
    const double m = std::min(ra, rb);
    cost += m * sq(a.points[ia[i]] - b.points[ib[j]]);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15) {
      if (++i >= ia.size()) break;
      ra = a.weights[ia[i]];
    }
    if (rb <= 1e-15) {
      if (++j >= ib.size()) break;
      rb = b.weights[ib[j]];
    }
  }
  return cost;
}

// Equal weights, equal counts: square assignment via shortest augmenting paths
// with potentials, O(n^3).
inline double w2sq_assignment(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  const int n = a.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost[static_cast<std::size_t>(i) * n + j] = cost_sq(a, i, b, j);

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost[static_cast<std::size_t>(p[j] - 1) * n + (j - 1)];
  return total / n;
}

struct TransportArc {
  int i, j;
  double flow;
};

struct TransportResult {
  double cost = 0.0;
  std::vector<TransportArc> plan;  // basic arcs (may include zero flows)
  std::vector<double> u, v;        // dual potentials, u[0] = 0
  bool optimal = false;
  int iterations = 0;
};

// Transportation simplex on a dense bipartite instance. Entering arc: most
// negative reduced cost; after a burn-in the rule switches to Bland's to rule
// out cycling on degenerate bases. Sizes here are <= 64 per side.
inline TransportResult transport_simplex(std::span<const double> supply,
                                         std::span<const double> demand,
                                         std::span<const double> cost, int n, int m,
                                         int max_iter = 200000) {
  TransportResult res;
  auto c = [&](int i, int j) { return cost[static_cast<std::size_t>(i) * m + j]; };

  // Basis as flows on a spanning tree of the bipartite graph (rows 0..n-1,
  // cols n..n+m-1). flow[i][j] valid only where basic[i][j].
  std::vector<double> flow(static_cast<std::size_t>(n) * m, 0.0);
  std::vector<char> basic(static_cast<std::size_t>(n) * m, 0);
  auto idx = [&](int i, int j) { return static_cast<std::size_t>(i) * m + j; };

  {  // northwest-corner initial basis: exactly n+m-1 basic arcs
    std::vector<double> a(supply.begin(), supply.end()), b(demand.begin(), demand.end());
    int i = 0, j = 0;
    while (true) {
      const double f = std::min(a[i], b[j]);
      flow[idx(i, j)] = f;
      basic[idx(i, j)] = 1;
      a[i] -= f;
      b[j] -= f;
      if (i == n - 1 && j == m - 1) break;
      if (a[i] <= b[j] && i < n - 1)
        ++i;  // row exhausted (ties move the row pointer, leaving a degenerate arc)
      else
        ++j;
    }
  }

  std::vector<double> u(n), v(m);
  std::vector<int> stack_node, stack_parent;
  std::vector<int> parent(n + m), parent_arc_row(n + m), parent_arc_col(n + m);

  const double cmax = std::max(1.0, *std::max_element(cost.begin(), cost.end()));
  const double tol = 1e-12 * cmax;

  for (int iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter;
    // Potentials from the basis tree: u_i + v_j = c_ij on basic arcs.
    {
      std::vector<char> seen(n + m, 0);
      u.assign(n, 0.0);
      v.assign(m, 0.0);
      std::vector<int> order;
      order.reserve(n + m);
      order.push_back(0);
      seen[0] = 1;
      for (std::size_t q = 0; q < order.size(); ++q) {
        const int node = order[q];
        if (node < n) {
          for (int j = 0; j < m; ++j)
            if (basic[idx(node, j)] && !seen[n + j]) {
              v[j] = c(node, j) - u[node];
              seen[n + j] = 1;
              order.push_back(n + j);
            }
        } else {
          const int j = node - n;
          for (int i = 0; i < n; ++i)
            if (basic[idx(i, j)] && !seen[i]) {
              u[i] = c(i, j) - v[j];
              seen[i] = 1;
              order.push_back(i);
            }
        }
      }
    }

    // Entering arc: most negative reduced cost, or first negative (Bland)
    // once the iteration count suggests degenerate stalling.
    int ei = -1, ej = -1;
    const bool bland = iter > 20 * (n + m);
    double best = -tol;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        if (basic[idx(i, j)]) continue;
        const double r = c(i, j) - u[i] - v[j];
        if (r < best) {
          best = r;
          ei = i;
          ej = j;
          if (bland) break;
        }
      }
      if (bland && ei >= 0) break;
    }
    if (ei < 0) {
      res.optimal = true;
      break;
    }

    // Cycle: tree path from row ei to col ej, plus the entering arc.
    std::fill(parent.begin(), parent.end(), -2);
    parent[ei] = -1;
    stack_node.assign(1, ei);
    while (!stack_node.empty()) {
      const int node = stack_node.back();
      stack_node.pop_back();
      if (node == n + ej) break;
      if (node < n) {
        for (int j = 0; j < m; ++j)
          if (basic[idx(node, j)] && parent[n + j] == -2) {
            parent[n + j] = node;
            stack_node.push_back(n + j);
          }
      } else {
        const int j = node - n;
        for (int i = 0; i < n; ++i)
          if (basic[idx(i, j)] && parent[i] == -2) {
            parent[i] = node;
            stack_node.push_back(i);
          }
      }
    }
    // Path nodes from col ej back to row ei; arcs alternate -,+ starting at the
    // arc adjacent to the entering one.
    std::vector<std::pair<int, int>> minus_arcs, plus_arcs;
    {
      int node = n + ej;
      bool minus = true;
      while (parent[node] != -1) {
        const int par = parent[node];
        const int i = node < n ? node : par;
        const int j = node < n ? par - n : node - n;
        (minus ? minus_arcs : plus_arcs).push_back({i, j});
        minus = !minus;
        node = par;
      }
    }
    double theta = std::numeric_limits<double>::infinity();
    std::pair<int, int> leave{-1, -1};
    for (const auto& [i, j] : minus_arcs) {
      const double f = flow[idx(i, j)];
      if (f < theta - 1e-18 ||
          (std::abs(f - theta) <= 1e-18 &&
           (leave.first < 0 || i < leave.first || (i == leave.first && j < leave.second)))) {
        theta = f;
        leave = {i, j};
      }
    }
    flow[idx(ei, ej)] = theta;
    basic[idx(ei, ej)] = 1;
    for (const auto& [i, j] : plus_arcs) flow[idx(i, j)] += theta;
    for (const auto& [i, j] : minus_arcs) flow[idx(i, j)] -= theta;
    basic[idx(leave.first, leave.second)] = 0;
    flow[idx(leave.first, leave.second)] = 0.0;
  }

  res.u.assign(u.begin(), u.end());
  res.v.assign(v.begin(), v.end());
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      if (basic[idx(i, j)]) {
        res.plan.push_back({i, j, flow[idx(i, j)]});
        total += flow[idx(i, j)] * c(i, j);
      }
  res.cost = total;
  return res;
}

inline TransportResult transport_simplex(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  const int n = a.size(), m = b.size();
  std::vector<double> cost(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) cost[static_cast<std::size_t>(i) * m + j] = cost_sq(a, i, b, j);
  return transport_simplex(a.weights, b.weights, cost, n, m);
}

// Log-domain Sinkhorn. Returns the transport cost of the entropic plan (a
// feasible coupling up to the reported marginal error), not the regularized
// objective, so the value upper-bounds the exact squared distance.
inline void sinkhorn(const EmpiricalMeasure& a, const EmpiricalMeasure& b, W2Info& info) {
  const int n = a.size(), m = b.size();
  std::vector<double> cost(static_cast<std::size_t>(n) * m);
  double product_mean_cost = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const double cij = cost_sq(a, i, b, j);
      cost[static_cast<std::size_t>(i) * m + j] = cij;
      product_mean_cost += a.weights[i] * b.weights[j] * cij;
    }
  const double reg = 1e-3 * std::max(product_mean_cost, 1e-300);
  info.regularization = reg;

  std::vector<double> f(n, 0.0), g(m, 0.0), loga(n), logb(m), row(std::max(n, m));
  for (int i = 0; i < n; ++i) loga[i] = std::log(std::max(a.weights[i], 1e-300));
  for (int j = 0; j < m; ++j) logb[j] = std::log(std::max(b.weights[j], 1e-300));

  auto logsumexp = [&](int count) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < count; ++k) mx = std::max(mx, row[k]);
    double s = 0.0;
    for (int k = 0; k < count; ++k) s += std::exp(row[k] - mx);
    return mx + std::log(s);
  };

  const int max_iter = 20000;
  double marg_err = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < max_iter; ++it) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j)
        row[j] = logb[j] + (g[j] - cost[static_cast<std::size_t>(i) * m + j]) / reg;
      f[i] = -reg * logsumexp(m);
    }
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < n; ++i)
        row[i] = loga[i] + (f[i] - cost[static_cast<std::size_t>(i) * m + j]) / reg;
      g[j] = -reg * logsumexp(n);
    }
    if (it % 10 == 9 || it == max_iter - 1) {
      // The g update enforces the column marginals exactly, so the row sums
      // are the convergence indicator.
      marg_err = 0.0;
      for (int i = 0; i < n; ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < m; ++j)
          rowsum += a.weights[i] * b.weights[j] *
                    std::exp((f[i] + g[j] - cost[static_cast<std::size_t>(i) * m + j]) / reg);
        marg_err = std::max(marg_err, std::abs(rowsum - a.weights[i]));
      }
      if (marg_err <= 1e-10) {
        ++it;
        break;
      }
    }
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * m + j;
      total += a.weights[i] * b.weights[j] * std::exp((f[i] + g[j] - cost[k]) / reg) * cost[k];
    }
  info.value = std::sqrt(std::max(total, 0.0));
  info.marginal_error = marg_err;
  info.iterations = it;
}

inline bool equal_weights(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.size() != b.size()) return false;
  const double w = 1.0 / a.size();
  for (double x : a.weights)
    if (std::abs(x - w) > 1e-12) return false;
  for (double x : b.weights)
    if (std::abs(x - w) > 1e-12) return false;
  return true;
}

}  // namespace detail

inline W2Info w2_info(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.dim != b.dim) throw std::invalid_argument("w2: dimension mismatch");
  W2Info info;
  if (a.dim == 1) {
    info.method = W2Info::Method::exact_sorted;
    info.value = std::sqrt(std::max(detail::w2sq_sorted_1d(a, b), 0.0));
    return info;
  }
  if (detail::equal_weights(a, b) && a.size() <= 64) {
    info.method = W2Info::Method::exact_assignment;
    info.value = std::sqrt(std::max(detail::w2sq_assignment(a, b), 0.0));
    return info;
  }
  if (a.size() <= 64 && b.size() <= 64) {
    const auto res = detail::transport_simplex(a, b);
    if (res.optimal) {
      info.method = W2Info::Method::exact_simplex;
      info.iterations = res.iterations;
      info.value = std::sqrt(std::max(res.cost, 0.0));
      return info;
    }
    // Pivot budget exhausted (not expected at these sizes): fall through to the
    // approximate route rather than return a non-certified plan.
  }
  info.method = W2Info::Method::sinkhorn;
  detail::sinkhorn(a, b, info);
  return info;
}

inline double w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  return w2_info(a, b).value;
}

}  // namespace mvmv::measures
