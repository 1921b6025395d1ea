#pragma once

// Monte Carlo experiment drivers. Each runner sweeps a decreasing noise-scale
// grid, estimates one deviation statistic of the reflected mean-field solver
// per scale, and grades the sweep: log-log slopes for moment statistics,
// trend checks against the action minimum for tail probabilities. Replicas
// draw from disjoint noise streams and all aggregation uses fixed-tree
// reduction, so a report is bitwise reproducible at any worker count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvmv/coefficients.hpp"
#include "mvmv/common.hpp"
#include "mvmv/dynamics.hpp"
#include "mvmv/monotone.hpp"
#include "mvmv/parallel.hpp"
#include "mvmv/rate.hpp"

namespace mvmv::harness {

using coefficients::CoefficientSet;
using dynamics::NoisePlan;
using dynamics::SolvedPath;
using dynamics::TimeGrid;
using monotone::MonotoneOperator;

// A full experiment description. The same plan drives every runner; tail
// runners read the thresholds, moment runners read the orders.
struct ExperimentPlan {
  CoefficientSet coeffs;
  MonotoneOperator op = monotone::zero_operator(1);
  std::vector<double> xi;
  TimeGrid grid;
  std::vector<double> epsilons;        // strictly decreasing, in (0, 1]
  int replicas = 200;
  int particles = 2000;
  std::vector<int> moment_orders = {1};
  std::vector<double> deltas = {0.25};
  double kappa = 0.25;                 // fluctuation scale exponent: a = eps^kappa
  std::uint64_t seed = 42;
  int workers = 0;                     // 0: resolve via MVMV_WORKERS, default 1
};

inline void validate_plan(const ExperimentPlan& p, bool slope_experiment) {
  coefficients::check_dims(p.coeffs);
  if (p.op.dim != p.coeffs.d)
    throw ConfigError("operator dimension does not match the coefficient dimension");
  if (static_cast<int>(p.xi.size()) != p.coeffs.d)
    throw ConfigError("initial point dimension does not match the coefficient dimension");
  if (!(p.grid.T > 0.0) || p.grid.steps < 1) throw ConfigError("time grid is empty");
  if (p.epsilons.empty()) throw ConfigError("epsilon grid is empty");
  for (double e : p.epsilons)
    if (!(e > 0.0) || e > 1.0) throw ConfigError("epsilon grid entries must lie in (0, 1]");
  for (std::size_t i = 1; i < p.epsilons.size(); ++i)
    if (!(p.epsilons[i] < p.epsilons[i - 1]))
      throw ConfigError("epsilon grid must be strictly decreasing");
  if (p.replicas < 1) throw ConfigError("replica count must be positive");
  if (p.particles < 1) throw ConfigError("particle count must be positive");
  if (slope_experiment && p.replicas < 30)
    throw ConfigError("slope experiments need at least 30 replicas");
  if (!(p.kappa > 0.0) || !(p.kappa < 0.5))
    throw ConfigError("kappa must lie in the open interval (0, 0.5)");
  if (p.moment_orders.empty()) throw ConfigError("moment order list is empty");
  for (int q : p.moment_orders)
    if (q < 1) throw ConfigError("moment orders must be positive integers");
  if (p.deltas.empty()) throw ConfigError("threshold list is empty");
  for (double d : p.deltas)
    if (!(d > 0.0)) throw ConfigError("thresholds must be positive");
}

struct SeriesPoint {
  double epsilon = 0.0;
  double estimate = 0.0;      // statistic, or the upper confidence bound when censored
  double stderr_value = 0.0;  // replica-spread or Wilson-scaled error; 0 when censored
  bool censored = false;
  // eps * log(estimate) for tail probabilities; NaN for moment statistics.
  double eps_log = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool valid = false;
};

// Acceptance window for a fitted slope; r2_min = 0 disables the fit-quality
// requirement.
struct SlopeWindow {
  double lo = 0.7;
  double hi = 1.3;
  double r2_min = 0.0;
};

struct Series {
  std::string label;
  std::vector<SeriesPoint> points;
  FitResult fit;
  bool degenerate = false;
  bool pass = false;
  std::string note;
};

struct DeviationReport {
  std::string experiment;
  std::vector<Series> series;
  bool pass = false;
  double runtime_seconds = 0.0;  // wall clock; never serialized into CSV artifacts
  double reference = 0.0;        // tail runs: -(action minimum over the target ball)
  bool has_reference = false;
};

// Ordinary least squares of log(statistic) on log(epsilon). Censored and
// non-positive points never enter the fit.
inline FitResult fit_loglog(std::span<const SeriesPoint> pts) {
  std::vector<double> x, y;
  for (const auto& p : pts) {
    if (p.censored || !(p.estimate > 0.0)) continue;
    x.push_back(std::log(p.epsilon));
    y.push_back(std::log(p.estimate));
  }
  if (x.size() < 3)
    throw InsufficientDataError("log-log fit needs at least 3 uncensored positive points");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, stot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    stot += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw InsufficientDataError("log-log fit needs distinct epsilon values");
  FitResult f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sres = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    sres += r * r;
  }
  f.r2 = stot > 0.0 ? 1.0 - sres / stot : 1.0;
  f.valid = true;
  return f;
}

inline FitResult fit_loglog(std::span<const std::pair<double, double>> pts) {
  std::vector<SeriesPoint> sp;
  sp.reserve(pts.size());
  for (const auto& [e, v] : pts) sp.push_back({e, v, 0.0, false, 0.0});
  return fit_loglog(std::span<const SeriesPoint>(sp));
}

// Spearman rank correlation with average ranks for ties. Returns 0 when one
// of the inputs is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: needs at least 2 points");
  auto ranks = [](std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Wilson score summary of a binomial count at the 95% level. A zero count is
// censored: the estimate becomes the interval's upper bound and the reported
// error is zero so the row can never enter a fit.
struct TailEstimate {
  double estimate = 0.0;
  double stderr_value = 0.0;
  bool censored = false;
};

inline TailEstimate wilson_tail(long long hits, long long n) {
  if (n <= 0 || hits < 0 || hits > n) throw std::invalid_argument("wilson_tail: bad counts");
  const double z = 1.96;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(hits) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  TailEstimate t;
  if (hits == 0) {
    t.estimate = center + half;  // upper bound only
    t.stderr_value = 0.0;
    t.censored = true;
  } else {
    t.estimate = p;
    t.stderr_value = half / z;
    t.censored = false;
  }
  return t;
}

namespace detail {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

inline double tree_mean(const std::vector<double>& v) {
  return parallel::tree_sum(v) / static_cast<double>(v.size());
}

// Standard error of the mean from the replica spread, fixed-tree order.
inline double tree_stderr(const std::vector<double>& v, double mean) {
  const std::size_t n = v.size();
  if (n < 2) return 0.0;
  std::vector<double> dev2(n);
  for (std::size_t i = 0; i < n; ++i) dev2[i] = (v[i] - mean) * (v[i] - mean);
  const double var = parallel::tree_sum(dev2) / static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

[[noreturn]] inline void rethrow_with_eps(const std::exception& e, double eps) {
  throw std::runtime_error(std::string(e.what()) + " (epsilon=" + std::to_string(eps) + ")");
}

// A statistic is degenerate when it vanishes to rounding dust at every scale
// (no noise, or the compared systems coincide identically).
inline bool series_vanishes(const Series& s) {
  double peak = 0.0;
  for (const auto& p : s.points) peak = std::max(peak, p.estimate);
  return peak <= 1e-24;
}

// Default slope acceptance for the q-th moment: the window widens with the
// order because higher moments carry heavier Monte Carlo noise.
inline SlopeWindow moment_window(int q) {
  const double half = 0.3 + 0.2 * (q - 1);
  return {static_cast<double>(q) - half, static_cast<double>(q) + half, 0.0};
}

inline void grade_slope(Series& s, const SlopeWindow& w) {
  if (series_vanishes(s)) {
    s.degenerate = true;
    s.pass = true;
    s.note = "degenerate: statistic vanishes at every scale";
    return;
  }
  try {
    s.fit = fit_loglog(std::span<const SeriesPoint>(s.points));
  } catch (const InsufficientDataError&) {
    s.pass = false;
    s.note = "insufficient points for a slope fit";
    return;
  }
  s.pass = s.fit.slope >= w.lo && s.fit.slope <= w.hi &&
           (w.r2_min <= 0.0 || s.fit.r2 >= w.r2_min);
}

// Trend grade for tail series: the gap between eps*log(p) and the reference
// must shrink as eps drops (plain decrease of eps*log(p) when no reference is
// known). Censored points are skipped; an all-censored series passes
// trivially, the tail being below Monte Carlo resolution at every scale.
inline void grade_trend(Series& s, bool has_reference, double reference) {
  s.note = "trend check";
  std::vector<double> vals, neg_log_eps;
  for (const auto& p : s.points) {
    if (p.censored) continue;
    vals.push_back(has_reference ? std::abs(p.eps_log - reference) : p.eps_log);
    neg_log_eps.push_back(-std::log(p.epsilon));
  }
  if (vals.empty()) {
    s.pass = true;
    s.note += "; all points censored (tail below resolution)";
    return;
  }
  if (vals.size() == 1) {
    s.pass = true;
    s.note += "; single uncensored point";
    return;
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i] > vals[i - 1] + 1e-12) decreasing = false;
  const double rho = spearman(neg_log_eps, vals);
  s.pass = decreasing || rho <= -0.8;
}

}  // namespace detail

// Mean-square gap between the interacting particles and the deterministic
// limit: per replica, the particle average of sup_t |X_t - X0_t|^2; per
// scale, the replica mean with its spread error. Expected log-log slope 1.
inline DeviationReport run_convergence(const ExperimentPlan& plan,
                                       const SlopeWindow& window = {0.7, 1.3, 0.95}) {
  validate_plan(plan, true);
  detail::Timer timer;
  const auto x0 = dynamics::solve_limit_ode(plan.coeffs, plan.op, plan.xi, plan.grid);
  const int W = parallel::resolve_workers(plan.workers);
  const int R = plan.replicas, N = plan.particles, d = plan.coeffs.d;

  DeviationReport report;
  report.experiment = "convergence";
  Series s;
  s.label = "mean-square-gap";
  for (double eps : plan.epsilons) {
    std::vector<double> rep(static_cast<std::size_t>(R), 0.0);
    try {
      parallel::parallel_for(R, W, [&](int r) {
        std::vector<double> sup(static_cast<std::size_t>(N), 0.0);
        dynamics::solve_mv_ensemble_stream(
            plan.coeffs, plan.op, plan.xi, eps, N, plan.grid,
            NoisePlan{plan.seed, static_cast<std::uint64_t>(r)},
            [&](int k, std::span<const double> states, std::span<const double>) {
              const auto ref = x0.state(k);
              for (int j = 0; j < N; ++j) {
                double d2 = 0.0;
                for (int i = 0; i < d; ++i) {
                  const double e = states[static_cast<std::size_t>(j) * d + i] - ref[i];
                  d2 += e * e;
                }
                if (d2 > sup[static_cast<std::size_t>(j)]) sup[static_cast<std::size_t>(j)] = d2;
              }
            });
        rep[static_cast<std::size_t>(r)] = parallel::tree_sum(sup) / static_cast<double>(N);
      });
    } catch (const std::exception& e) {
      detail::rethrow_with_eps(e, eps);
    }
    const double est = detail::tree_mean(rep);
    s.points.push_back({eps, est, detail::tree_stderr(rep, est), false,
                        std::numeric_limits<double>::quiet_NaN()});
  }
  detail::grade_slope(s, window);
  report.pass = s.pass;
  report.series.push_back(std::move(s));
  report.runtime_seconds = timer.seconds();
  return report;
}

// Fluctuation-pair moment scaling: per scale and moment order q, the particle
// average of sup_t |Z^eps_t - Z_t|^{2q} under shared noise. Expected log-log
// slope q for each order.
inline DeviationReport run_clt(const ExperimentPlan& plan) {
  validate_plan(plan, true);
  detail::Timer timer;
  const auto x0 = dynamics::solve_limit_ode(plan.coeffs, plan.op, plan.xi, plan.grid);
  const int W = parallel::resolve_workers(plan.workers);
  const int R = plan.replicas, N = plan.particles, d = plan.coeffs.d;
  const int Q = static_cast<int>(plan.moment_orders.size());

  DeviationReport report;
  report.experiment = "clt";
  report.series.resize(static_cast<std::size_t>(Q));
  for (int iq = 0; iq < Q; ++iq)
    report.series[static_cast<std::size_t>(iq)].label =
        "p=" + std::to_string(plan.moment_orders[static_cast<std::size_t>(iq)]);

  for (double eps : plan.epsilons) {
    std::vector<std::vector<double>> rep(static_cast<std::size_t>(Q),
                                         std::vector<double>(static_cast<std::size_t>(R), 0.0));
    try {
      parallel::parallel_for(R, W, [&](int r) {
        std::vector<double> sup2(static_cast<std::size_t>(N), 0.0);
        dynamics::solve_clt_pair_stream(
            plan.coeffs, plan.op, x0, eps, N, plan.grid,
            NoisePlan{plan.seed, static_cast<std::uint64_t>(r)},
            [&](int, std::span<const double> ze, std::span<const double> zl,
                std::span<const double>, std::span<const double>) {
              for (int j = 0; j < N; ++j) {
                double d2 = 0.0;
                for (int i = 0; i < d; ++i) {
                  const double e = ze[static_cast<std::size_t>(j) * d + i] -
                                   zl[static_cast<std::size_t>(j) * d + i];
                  d2 += e * e;
                }
                if (d2 > sup2[static_cast<std::size_t>(j)]) sup2[static_cast<std::size_t>(j)] = d2;
              }
            });
        for (int iq = 0; iq < Q; ++iq) {
          const int q = plan.moment_orders[static_cast<std::size_t>(iq)];
          std::vector<double> vals(static_cast<std::size_t>(N));
          for (int j = 0; j < N; ++j)
            vals[static_cast<std::size_t>(j)] =
                std::pow(sup2[static_cast<std::size_t>(j)], q);
          rep[static_cast<std::size_t>(iq)][static_cast<std::size_t>(r)] =
              parallel::tree_sum(vals) / static_cast<double>(N);
        }
      });
    } catch (const std::exception& e) {
      detail::rethrow_with_eps(e, eps);
    }
    for (int iq = 0; iq < Q; ++iq) {
      const auto& rv = rep[static_cast<std::size_t>(iq)];
      const double est = detail::tree_mean(rv);
      report.series[static_cast<std::size_t>(iq)].points.push_back(
          {eps, est, detail::tree_stderr(rv, est), false,
           std::numeric_limits<double>::quiet_NaN()});
    }
  }
  report.pass = true;
  for (int iq = 0; iq < Q; ++iq) {
    auto& s = report.series[static_cast<std::size_t>(iq)];
    detail::grade_slope(s, detail::moment_window(plan.moment_orders[static_cast<std::size_t>(iq)]));
    report.pass = report.pass && s.pass;
  }
  report.runtime_seconds = timer.seconds();
  return report;
}

// Terminal tail decay: per scale, the fraction of single-path replicas ending
// inside the closed ball around `target`, compared against the action minimum
// over that ball. The law argument of the coefficients is frozen at the
// deterministic limit, which is exact whenever the coefficients ignore the
// measure and an O(eps) modeling error otherwise.
inline DeviationReport run_ldp_tail(const ExperimentPlan& plan, std::span<const double> target,
                                    double radius, double rate_tol = 1e-4,
                                    const rate::RateOptions& rate_opt = {}) {
  validate_plan(plan, false);
  if (static_cast<int>(target.size()) != plan.coeffs.d)
    throw ConfigError("tail target dimension does not match the coefficient dimension");
  if (!(radius > 0.0)) throw ConfigError("tail radius must be positive");
  detail::Timer timer;
  const auto x0 = dynamics::solve_limit_ode(plan.coeffs, plan.op, plan.xi, plan.grid);
  const auto law = dynamics::law_from_limit(plan.coeffs, x0);
  const int W = parallel::resolve_workers(plan.workers);
  const int R = plan.replicas, d = plan.coeffs.d;

  DeviationReport report;
  report.experiment = "ldp-tail";

  // Action minimum over the ball: steer to the ball point nearest the free
  // endpoint (the exact minimizer when the endpoint cost is convex around the
  // uncontrolled terminal state).
  const auto xT0 = x0.state(plan.grid.steps);
  double dist = 0.0;
  for (int i = 0; i < d; ++i) {
    const double e = xT0[i] - target[i];
    dist += e * e;
  }
  dist = std::sqrt(dist);
  std::string ref_note;
  if (dist <= radius) {
    report.reference = 0.0;
    report.has_reference = true;
  } else {
    std::vector<double> ball_point(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i)
      ball_point[static_cast<std::size_t>(i)] = target[i] + (xT0[i] - target[i]) * (radius / dist);
    try {
      const auto rr = rate::rate_endpoint(plan.coeffs, plan.op, x0, dynamics::SkeletonMode::ldp,
                                          ball_point, rate_tol, rate_opt);
      report.reference = -rr.value;
      report.has_reference = rr.converged;
      if (!rr.converged) ref_note = "; action minimizer did not converge";
    } catch (const InfeasibleError&) {
      report.has_reference = false;
      ref_note = "; target ball unreachable, action minimum infinite";
    }
  }

  Series s;
  s.label = "hit-probability";
  for (double eps : plan.epsilons) {
    std::vector<double> hit(static_cast<std::size_t>(R), 0.0);
    try {
      parallel::parallel_for(R, W, [&](int r) {
        std::vector<double> xT(static_cast<std::size_t>(d));
        dynamics::solve_controlled_stream(
            plan.coeffs, plan.op, plan.xi, eps, nullptr, law, plan.grid,
            NoisePlan{plan.seed, static_cast<std::uint64_t>(r)}, 0,
            [&](int k, std::span<const double> x, std::span<const double>) {
              if (k == plan.grid.steps) std::copy(x.begin(), x.end(), xT.begin());
            });
        double d2 = 0.0;
        for (int i = 0; i < d; ++i) {
          const double e = xT[static_cast<std::size_t>(i)] - target[i];
          d2 += e * e;
        }
        hit[static_cast<std::size_t>(r)] = d2 <= radius * radius ? 1.0 : 0.0;
      });
    } catch (const std::exception& e) {
      detail::rethrow_with_eps(e, eps);
    }
    const long long hits = static_cast<long long>(std::llround(parallel::tree_sum(hit)));
    const TailEstimate te = wilson_tail(hits, R);
    SeriesPoint pt{eps, te.estimate, te.stderr_value, te.censored,
                   std::numeric_limits<double>::quiet_NaN()};
    if (!te.censored) pt.eps_log = eps * std::log(te.estimate);
    s.points.push_back(pt);
  }
  detail::grade_trend(s, report.has_reference, report.reference);
  s.note += ref_note;
  report.pass = s.pass;
  report.series.push_back(std::move(s));
  report.runtime_seconds = timer.seconds();
  return report;
}

// Closeness of the two moderate-scale fluctuation systems: per scale and
// threshold, the pooled fraction of particles whose pathwise gap
// sup_t |Ybar_t - Ytil_t| reaches the threshold, under shared noise. The
// verdict is a shrinking trend of eps*log(q), not a quantitative bound.
inline DeviationReport run_mdp_equivalence(const ExperimentPlan& plan) {
  validate_plan(plan, false);
  detail::Timer timer;
  const auto x0 = dynamics::solve_limit_ode(plan.coeffs, plan.op, plan.xi, plan.grid);
  const int W = parallel::resolve_workers(plan.workers);
  const int R = plan.replicas, N = plan.particles, d = plan.coeffs.d;
  const int D = static_cast<int>(plan.deltas.size());

  DeviationReport report;
  report.experiment = "mdp-equivalence";
  report.series.resize(static_cast<std::size_t>(D));
  for (int id = 0; id < D; ++id) {
    std::string label = "delta=" + std::to_string(plan.deltas[static_cast<std::size_t>(id)]);
    while (label.size() > 7 && label.back() == '0') label.pop_back();
    if (!label.empty() && label.back() == '.') label.push_back('0');
    report.series[static_cast<std::size_t>(id)].label = std::move(label);
  }

  for (double eps : plan.epsilons) {
    const double a = std::pow(eps, plan.kappa);
    std::vector<std::vector<double>> counts(
        static_cast<std::size_t>(D), std::vector<double>(static_cast<std::size_t>(R), 0.0));
    try {
      parallel::parallel_for(R, W, [&](int r) {
        std::vector<double> sup2(static_cast<std::size_t>(N), 0.0);
        dynamics::solve_mdp_pair_stream(
            plan.coeffs, plan.op, x0, eps, a, N, plan.grid,
            NoisePlan{plan.seed, static_cast<std::uint64_t>(r)},
            [&](int, std::span<const double> yb, std::span<const double> yt,
                std::span<const double>, std::span<const double>) {
              for (int j = 0; j < N; ++j) {
                double d2 = 0.0;
                for (int i = 0; i < d; ++i) {
                  const double e = yb[static_cast<std::size_t>(j) * d + i] -
                                   yt[static_cast<std::size_t>(j) * d + i];
                  d2 += e * e;
                }
                if (d2 > sup2[static_cast<std::size_t>(j)]) sup2[static_cast<std::size_t>(j)] = d2;
              }
            });
        for (int id = 0; id < D; ++id) {
          const double thr = plan.deltas[static_cast<std::size_t>(id)];
          int hits = 0;
          for (int j = 0; j < N; ++j)
            if (sup2[static_cast<std::size_t>(j)] >= thr * thr) ++hits;
          counts[static_cast<std::size_t>(id)][static_cast<std::size_t>(r)] =
              static_cast<double>(hits);
        }
      });
    } catch (const std::exception& e) {
      detail::rethrow_with_eps(e, eps);
    }
    for (int id = 0; id < D; ++id) {
      const long long hits = static_cast<long long>(
          std::llround(parallel::tree_sum(counts[static_cast<std::size_t>(id)])));
      const long long n = static_cast<long long>(R) * N;
      const TailEstimate te = wilson_tail(hits, n);
      SeriesPoint pt{eps, te.estimate, te.stderr_value, te.censored,
                     std::numeric_limits<double>::quiet_NaN()};
      if (!te.censored) pt.eps_log = eps * std::log(te.estimate);
      report.series[static_cast<std::size_t>(id)].points.push_back(pt);
    }
  }
  report.pass = true;
  for (auto& s : report.series) {
    detail::grade_trend(s, false, 0.0);
    report.pass = report.pass && s.pass;
  }
  report.runtime_seconds = timer.seconds();
  return report;
}

}  // namespace mvmv::harness
