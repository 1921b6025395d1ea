#pragma once
// Time steppers for the reflected mean-field systems: the base ensemble, its
// deterministic limit, controlled variants, the coupled fluctuation pair, the
// coupled moderate-regime pair, and deterministic control skeletons.
//
// One splitting step everywhere: explicit predictor for drift and noise, then
// the resolvent absorbs the multivalued part. The projection residual is the
// compensator increment, so every path carries its K and |K| exactly as the
// scheme produced them.
//
// Coupled pairs are fused loops sharing one Brownian draw per particle per
// step; rescaled equations are stepped in their own variables (drift as a
// difference quotient), never as a difference of two simulated paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mvmv/coefficients.hpp"
#include "mvmv/common.hpp"
#include "mvmv/measures.hpp"
#include "mvmv/monotone.hpp"
#include "mvmv/rng.hpp"

namespace mvmv::dynamics {

using coefficients::CoefficientSet;
using coefficients::Momenta;
using monotone::MonotoneOperator;

struct TimeGrid {
  double T = 1.0;
  int steps = 1000;

  double dt() const { return T / steps; }
  double time(int k) const { return T * static_cast<double>(k) / steps; }
};

inline TimeGrid make_grid(double T, int steps) {
  if (!(T > 0.0) || steps < 1) throw std::invalid_argument("grid: need T > 0 and steps >= 1");
  return TimeGrid{T, steps};
}

inline bool same_grid(const TimeGrid& a, const TimeGrid& b) {
  return a.steps == b.steps && a.T == b.T;
}

// Piecewise-constant control on its grid: value(k) acts on [t_k, t_{k+1}).
struct Control {
  TimeGrid grid;
  int m = 1;
  std::vector<double> values;  // grid.steps * m row-major

  std::span<const double> value(int k) const {
    return {values.data() + static_cast<std::size_t>(k) * m, static_cast<std::size_t>(m)};
  }
  static Control zero(int m, const TimeGrid& grid) {
    Control u;
    u.grid = grid;
    u.m = m;
    u.values.assign(static_cast<std::size_t>(grid.steps) * m, 0.0);
    return u;
  }
  static Control constant(int m, const TimeGrid& grid, double v) {
    Control u = zero(m, grid);
    for (auto& x : u.values) x = v;
    return u;
  }
  // 1/2 integral |u|^2 dt, the energy the rate functionals minimize. Also the
  // squared-norm-over-2 that decides membership in an energy ball.
  double energy() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return 0.5 * s * grid.dt();
  }
  double norm_sq() const { return 2.0 * energy(); }
};

struct SolvedPath {
  TimeGrid grid;
  int d = 1;
  std::vector<double> X;      // (steps+1) * d
  std::vector<double> K;      // cumulative compensator, (steps+1) * d, row 0 zero
  std::vector<double> var_K;  // running total variation, steps+1

  std::span<const double> state(int k) const {
    return {X.data() + static_cast<std::size_t>(k) * d, static_cast<std::size_t>(d)};
  }
  std::span<const double> compensator(int k) const {
    return {K.data() + static_cast<std::size_t>(k) * d, static_cast<std::size_t>(d)};
  }
};

struct Ensemble {
  TimeGrid grid;
  int d = 1;
  int N = 0;
  std::vector<SolvedPath> particles;

  void states_at(int k, std::vector<double>& out) const {
    out.resize(static_cast<std::size_t>(N) * d);
    for (int i = 0; i < N; ++i) {
      auto s = particles[i].state(k);
      std::copy(s.begin(), s.end(), out.begin() + static_cast<std::size_t>(i) * d);
    }
  }
  measures::EmpiricalMeasure measure_at(int k) const {
    measures::EmpiricalMeasure mu;
    mu.dim = d;
    states_at(k, mu.points);
    mu.weights.assign(N, 1.0 / N);
    double s = 0.0;
    for (int i = 0; i < N - 1; ++i) s += mu.weights[i];
    mu.weights.back() = 1.0 - s;
    return mu;
  }
};

// Deterministic Brownian bookkeeping: (seed, replica) name a family of
// independent per-particle streams; identical inputs reproduce increments.
struct NoisePlan {
  uint64_t seed = 42;
  uint64_t replica = 0;

  rng::NormalStream particle_stream(uint64_t particle) const {
    return rng::NormalStream(seed, rng::StreamTag::noise, replica, particle);
  }
};

// One splitting step. The predictor carries drift and noise; the resolvent
// enforces the multivalued part; the residual is the compensator increment.
inline void step_reflected(const MonotoneOperator& op, std::span<const double> x,
                           std::span<const double> drift, std::span<const double> noise,
                           double dt, std::span<double> x_next, std::span<double> dK,
                           int step = -1) {
  const int d = op.dim;
  for (int i = 0; i < d; ++i) {
    const double p = x[i] + drift[i] * dt + noise[i];
    if (!std::isfinite(p)) throw SolverError(step);
    dK[i] = p;  // reuse as predictor scratch
  }
  monotone::resolvent(op, dt, std::span<const double>(dK.data(), dK.size()), x_next);
  for (int i = 0; i < d; ++i) dK[i] -= x_next[i];
}

namespace detail {

inline void check_start(const MonotoneOperator& op, std::span<const double> xi,
                        const char* who) {
  if (static_cast<int>(xi.size()) != op.dim)
    throw std::invalid_argument(std::string(who) + ": initial point dimension mismatch");
  if (!monotone::in_domain_closure(op, xi, 1e-9))
    throw std::invalid_argument(std::string(who) + ": start lies outside the domain closure");
}

inline void check_shapes(const CoefficientSet& c, const MonotoneOperator& op, const char* who) {
  coefficients::check_dims(c);
  if (op.dim != c.d) throw std::invalid_argument(std::string(who) + ": operator dimension mismatch");
}

struct PathRecorder {
  SolvedPath path;
  explicit PathRecorder(const TimeGrid& grid, int d) {
    path.grid = grid;
    path.d = d;
    path.X.assign(static_cast<std::size_t>(grid.steps + 1) * d, 0.0);
    path.K.assign(static_cast<std::size_t>(grid.steps + 1) * d, 0.0);
    path.var_K.assign(grid.steps + 1, 0.0);
  }
  void record(int k, std::span<const double> x, std::span<const double> dK) {
    const int d = path.d;
    std::copy(x.begin(), x.end(), path.X.begin() + static_cast<std::size_t>(k) * d);
    if (k == 0) return;
    const std::size_t prev = static_cast<std::size_t>(k - 1) * d, cur = static_cast<std::size_t>(k) * d;
    for (int i = 0; i < d; ++i) path.K[cur + i] = path.K[prev + i] + dK[i];
    path.var_K[k] = path.var_K[k - 1] + norm2(dK);
  }
};

struct EnsembleRecorder {
  std::vector<PathRecorder> recs;
  EnsembleRecorder(const TimeGrid& grid, int d, int N) {
    recs.reserve(N);
    for (int i = 0; i < N; ++i) recs.emplace_back(grid, d);
  }
  void operator()(int k, std::span<const double> states, std::span<const double> dK) {
    const int d = recs.empty() ? 0 : recs[0].path.d;
    for (std::size_t i = 0; i < recs.size(); ++i)
      recs[i].record(k, states.subspan(i * d, d), dK.subspan(i * d, d));
  }
  Ensemble take(const TimeGrid& grid, int d) {
    Ensemble e;
    e.grid = grid;
    e.d = d;
    e.N = static_cast<int>(recs.size());
    e.particles.reserve(recs.size());
    for (auto& r : recs) e.particles.push_back(std::move(r.path));
    return e;
  }
};

// Base synchronous loop: the empirical momenta of the current states feed
// every particle's drift and diffusion; noise enters scaled by sqrt(eps).
// on_step(k, states, dK) fires once the states at t_k are final (dK zero at
// k = 0).
template <class StepFn>
void mv_loop(const CoefficientSet& c, const MonotoneOperator& op, std::span<const double> xi,
             double eps, int N, const TimeGrid& grid, const NoisePlan& plan, StepFn&& on_step) {
  check_shapes(c, op, "ensemble solve");
  check_start(op, xi, "ensemble solve");
  if (eps < 0.0) throw std::invalid_argument("ensemble solve: eps must be nonnegative");
  if (N < 1) throw std::invalid_argument("ensemble solve: need at least one particle");

  const int d = c.d, m = c.m;
  const double dt = grid.dt(), sdt = std::sqrt(dt), seps = std::sqrt(eps);
  std::vector<double> cur(static_cast<std::size_t>(N) * d), next(cur.size()), dK(cur.size(), 0.0);
  for (int i = 0; i < N; ++i)
    std::copy(xi.begin(), xi.end(), cur.begin() + static_cast<std::size_t>(i) * d);

  std::vector<rng::NormalStream> streams;
  streams.reserve(N);
  for (int i = 0; i < N; ++i) streams.push_back(plan.particle_stream(static_cast<uint64_t>(i)));

  Momenta mom;
  std::vector<double> drift(d), noise(d), sig(static_cast<std::size_t>(d) * m), dW(m);
  on_step(0, std::span<const double>(cur), std::span<const double>(dK));

  for (int k = 0; k < grid.steps; ++k) {
    coefficients::momenta_from_points(c, cur, N, mom);
    for (int i = 0; i < N; ++i) {
      const auto xi_k = std::span<const double>(cur.data() + static_cast<std::size_t>(i) * d,
                                                static_cast<std::size_t>(d));
      coefficients::eval_b(c, xi_k, mom, drift);
      coefficients::eval_sigma(c, xi_k, mom, sig);
      for (int j = 0; j < m; ++j) dW[j] = streams[i].normal(sdt);
      matvec(sig, d, m, dW, noise);
      for (int l = 0; l < d; ++l) noise[l] *= seps;
      step_reflected(op, xi_k, drift, noise, dt,
                     {next.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)},
                     {dK.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)},
                     k);
    }
    cur.swap(next);
    on_step(k + 1, std::span<const double>(cur), std::span<const double>(dK));
  }
}

}  // namespace detail

// Streaming ensemble solve; on_step(k, states, dK) sees each completed step.
template <class StepFn>
void solve_mv_ensemble_stream(const CoefficientSet& c, const MonotoneOperator& op,
                              std::span<const double> xi, double eps, int N,
                              const TimeGrid& grid, const NoisePlan& plan, StepFn&& on_step) {
  detail::mv_loop(c, op, xi, eps, N, grid, plan, std::forward<StepFn>(on_step));
}

inline Ensemble solve_mv_ensemble(const CoefficientSet& c, const MonotoneOperator& op,
                                  std::span<const double> xi, double eps, int N,
                                  const TimeGrid& grid, const NoisePlan& plan) {
  detail::EnsembleRecorder rec(grid, c.d, N);
  detail::mv_loop(c, op, xi, eps, N, grid, plan, rec);
  return rec.take(grid, c.d);
}

// The deterministic limit: the one-particle zero-noise ensemble, so the two
// entry points agree bitwise by construction.
inline SolvedPath solve_limit_ode(const CoefficientSet& c, const MonotoneOperator& op,
                                  std::span<const double> xi, const TimeGrid& grid) {
  auto ens = solve_mv_ensemble(c, op, xi, 0.0, 1, grid, NoisePlan{});
  return std::move(ens.particles[0]);
}

// Per-step measure momenta of a law that is fixed in advance (the uncontrolled
// process' law, or the limit path's point mass).
struct LawPath {
  int steps = 0;
  std::vector<Momenta> mom;  // steps + 1 entries

  const Momenta& at(int k) const { return mom[static_cast<std::size_t>(k)]; }
};

inline LawPath law_from_limit(const CoefficientSet& c, const SolvedPath& x0) {
  LawPath law;
  law.steps = x0.grid.steps;
  law.mom.resize(x0.grid.steps + 1);
  for (int k = 0; k <= x0.grid.steps; ++k)
    coefficients::momenta_from_dirac(c, x0.state(k), law.mom[k]);
  return law;
}

inline LawPath law_from_ensemble(const CoefficientSet& c, const Ensemble& e) {
  LawPath law;
  law.steps = e.grid.steps;
  law.mom.resize(e.grid.steps + 1);
  std::vector<double> states;
  for (int k = 0; k <= e.grid.steps; ++k) {
    e.states_at(k, states);
    coefficients::momenta_from_points(c, states, e.N, law.mom[k]);
  }
  return law;
}

namespace detail {

// Controlled single path: the measure argument of both b and sigma comes from
// `law` (never from the path itself); the control acts through sigma.
template <class StepFn>
void controlled_loop(const CoefficientSet& c, const MonotoneOperator& op,
                     std::span<const double> xi, double eps, const Control* u,
                     const LawPath& law, const TimeGrid& grid, const NoisePlan& plan,
                     uint64_t particle, StepFn&& on_step) {
  check_shapes(c, op, "controlled solve");
  check_start(op, xi, "controlled solve");
  if (eps < 0.0) throw std::invalid_argument("controlled solve: eps must be nonnegative");
  if (law.steps != grid.steps)
    throw std::invalid_argument("controlled solve: law path not aligned with the grid");
  if (u != nullptr && (!same_grid(u->grid, grid) || u->m != c.m))
    throw std::invalid_argument("controlled solve: control not aligned with the grid");

  const int d = c.d, m = c.m;
  const double dt = grid.dt(), sdt = std::sqrt(dt), seps = std::sqrt(eps);
  std::vector<double> x(xi.begin(), xi.end()), xn(d), dK(d, 0.0);
  std::vector<double> drift(d), noise(d), sig(static_cast<std::size_t>(d) * m), dW(m), su(d);
  auto stream = plan.particle_stream(particle);

  on_step(0, std::span<const double>(x), std::span<const double>(dK));
  for (int k = 0; k < grid.steps; ++k) {
    const Momenta& mom = law.at(k);
    coefficients::eval_b(c, x, mom, drift);
    coefficients::eval_sigma(c, x, mom, sig);
    if (u != nullptr) {
      matvec(sig, d, m, u->value(k), su);
      for (int i = 0; i < d; ++i) drift[i] += su[i];
    }
    if (eps > 0.0) {
      for (int j = 0; j < m; ++j) dW[j] = stream.normal(sdt);
      matvec(sig, d, m, dW, noise);
      for (int i = 0; i < d; ++i) noise[i] *= seps;
    } else {
      std::fill(noise.begin(), noise.end(), 0.0);
    }
    step_reflected(op, x, drift, noise, dt, xn, dK, k);
    x.swap(xn);
    on_step(k + 1, std::span<const double>(x), std::span<const double>(dK));
  }
}

}  // namespace detail

template <class StepFn>
void solve_controlled_stream(const CoefficientSet& c, const MonotoneOperator& op,
                             std::span<const double> xi, double eps, const Control* u,
                             const LawPath& law, const TimeGrid& grid, const NoisePlan& plan,
                             uint64_t particle, StepFn&& on_step) {
  detail::controlled_loop(c, op, xi, eps, u, law, grid, plan, particle,
                          std::forward<StepFn>(on_step));
}

inline SolvedPath solve_controlled(const CoefficientSet& c, const MonotoneOperator& op,
                                   std::span<const double> xi, double eps, const Control& u,
                                   const LawPath& law, const TimeGrid& grid,
                                   const NoisePlan& plan, uint64_t particle = 0) {
  detail::PathRecorder rec(grid, c.d);
  detail::controlled_loop(c, op, xi, eps, &u, law, grid, plan, particle,
                          [&rec](int k, std::span<const double> x, std::span<const double> dK) {
                            rec.record(k, x, dK);
                          });
  return std::move(rec.path);
}

inline SolvedPath solve_controlled(const CoefficientSet& c, const MonotoneOperator& op,
                                   std::span<const double> xi, double eps, const Control& u,
                                   const Ensemble& law_source, const TimeGrid& grid,
                                   const NoisePlan& plan, uint64_t particle = 0) {
  return solve_controlled(c, op, xi, eps, u, law_from_ensemble(c, law_source), grid, plan,
                          particle);
}

inline SolvedPath solve_controlled(const CoefficientSet& c, const MonotoneOperator& op,
                                   std::span<const double> xi, double eps, const Control& u,
                                   const SolvedPath& law_source, const TimeGrid& grid,
                                   const NoisePlan& plan, uint64_t particle = 0) {
  if (!same_grid(law_source.grid, grid))
    throw std::invalid_argument("controlled solve: law path not aligned with the grid");
  return solve_controlled(c, op, xi, eps, u, law_from_limit(c, law_source), grid, plan,
                          particle);
}

namespace detail {

inline void check_pair_inputs(const CoefficientSet& c, const MonotoneOperator& op,
                              const SolvedPath& x0, const TimeGrid& grid, const char* who) {
  check_shapes(c, op, who);
  if (!same_grid(x0.grid, grid) || x0.d != c.d)
    throw std::invalid_argument(std::string(who) + ": limit path not aligned with the grid");
  const std::vector<double> zero(c.d, 0.0);
  if (!monotone::in_domain_closure(op, zero, 1e-9))
    throw std::invalid_argument(std::string(who) +
                                ": rescaled processes start at 0, which must lie in the domain "
                                "closure");
}

// Fused fluctuation pair. Side one steps the rescaled deviation with the
// difference-quotient drift and the empirical law of x0 + sqrt(eps) z; side
// two steps the linearized limit with the gradient drift, the ensemble-mean
// interaction term, and frozen point-mass coefficients. One Brownian draw per
// particle per step feeds both sides.
template <class StepFn>
void clt_loop(const CoefficientSet& c, const MonotoneOperator& op, const SolvedPath& x0,
              double eps, int N, const TimeGrid& grid, const NoisePlan& plan, StepFn&& on_step) {
  check_pair_inputs(c, op, x0, grid, "fluctuation pair");
  if (!(eps > 0.0)) throw std::invalid_argument("fluctuation pair: eps must be positive");
  if (N < 1) throw std::invalid_argument("fluctuation pair: need at least one particle");

  const int d = c.d, m = c.m;
  const double dt = grid.dt(), sdt = std::sqrt(dt), seps = std::sqrt(eps);
  const std::size_t nd = static_cast<std::size_t>(N) * d;
  std::vector<double> ze(nd, 0.0), zl(nd, 0.0), ze_n(nd), zl_n(nd), dKe(nd, 0.0), dKl(nd, 0.0);
  std::vector<double> xhat(nd);

  std::vector<rng::NormalStream> streams;
  streams.reserve(N);
  for (int i = 0; i < N; ++i) streams.push_back(plan.particle_stream(static_cast<uint64_t>(i)));

  Momenta mom_hat, mom_dirac;
  std::vector<double> b0(d), bh(d), grad(static_cast<std::size_t>(d) * d);
  std::vector<double> sig_h(static_cast<std::size_t>(d) * m), sig_0(sig_h.size());
  std::vector<double> drift(d), noise(d), dW(m), mean_z(d), pairing(d), gz(d);

  on_step(0, std::span<const double>(ze), std::span<const double>(zl),
          std::span<const double>(dKe), std::span<const double>(dKl));
  for (int k = 0; k < grid.steps; ++k) {
    const auto x0k = x0.state(k);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < d; ++j)
        xhat[static_cast<std::size_t>(i) * d + j] = x0k[j] + seps * ze[static_cast<std::size_t>(i) * d + j];
    coefficients::momenta_from_points(c, xhat, N, mom_hat);
    coefficients::momenta_from_dirac(c, x0k, mom_dirac);
    coefficients::eval_b(c, x0k, mom_dirac, b0);
    coefficients::grad_b(c, x0k, grad);
    coefficients::eval_sigma(c, x0k, mom_dirac, sig_0);

    std::fill(mean_z.begin(), mean_z.end(), 0.0);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < d; ++j) mean_z[j] += zl[static_cast<std::size_t>(i) * d + j];
    for (int j = 0; j < d; ++j) mean_z[j] /= N;
    coefficients::mean_field_pairing_dirac(c, x0k, mean_z, pairing);

    for (int i = 0; i < N; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * d;
      const auto zei = std::span<const double>(ze.data() + off, static_cast<std::size_t>(d));
      const auto zli = std::span<const double>(zl.data() + off, static_cast<std::size_t>(d));
      const auto xhi = std::span<const double>(xhat.data() + off, static_cast<std::size_t>(d));

      for (int j = 0; j < m; ++j) dW[j] = streams[i].normal(sdt);

      // Rescaled deviation side.
      coefficients::eval_b(c, xhi, mom_hat, bh);
      for (int j = 0; j < d; ++j) drift[j] = (bh[j] - b0[j]) / seps;
      coefficients::eval_sigma(c, xhi, mom_hat, sig_h);
      matvec(sig_h, d, m, dW, noise);
      step_reflected(op, zei, drift, noise, dt, {ze_n.data() + off, static_cast<std::size_t>(d)},
                     {dKe.data() + off, static_cast<std::size_t>(d)}, k);

      // Linearized limit side.
      matvec(grad, d, d, zli, gz);
      for (int j = 0; j < d; ++j) drift[j] = gz[j] + pairing[j];
      matvec(sig_0, d, m, dW, noise);
      step_reflected(op, zli, drift, noise, dt, {zl_n.data() + off, static_cast<std::size_t>(d)},
                     {dKl.data() + off, static_cast<std::size_t>(d)}, k);
    }
    ze.swap(ze_n);
    zl.swap(zl_n);
    on_step(k + 1, std::span<const double>(ze), std::span<const double>(zl),
            std::span<const double>(dKe), std::span<const double>(dKl));
  }
}

// Fused moderate-regime pair: side one sees the empirical law of
// x0 + a ybar, side two freezes the measure at the limit point mass; both
// scale noise by sqrt(eps)/a and share draws.
template <class StepFn>
void mdp_loop(const CoefficientSet& c, const MonotoneOperator& op, const SolvedPath& x0,
              double eps, double a, int N, const TimeGrid& grid, const NoisePlan& plan,
              StepFn&& on_step) {
  check_pair_inputs(c, op, x0, grid, "moderate pair");
  if (!(eps > 0.0)) throw std::invalid_argument("moderate pair: eps must be positive");
  if (!(a > 0.0) || !(a < 1.0))
    throw std::invalid_argument("moderate pair: scaling value must lie in (0, 1)");
  if (N < 1) throw std::invalid_argument("moderate pair: need at least one particle");

  const int d = c.d, m = c.m;
  const double dt = grid.dt(), sdt = std::sqrt(dt), nf = std::sqrt(eps) / a;
  const std::size_t nd = static_cast<std::size_t>(N) * d;
  std::vector<double> yb(nd, 0.0), yt(nd, 0.0), yb_n(nd), yt_n(nd), dKb(nd, 0.0), dKt(nd, 0.0);
  std::vector<double> xbar(nd);

  std::vector<rng::NormalStream> streams;
  streams.reserve(N);
  for (int i = 0; i < N; ++i) streams.push_back(plan.particle_stream(static_cast<uint64_t>(i)));

  Momenta mom_bar, mom_dirac;
  std::vector<double> b0(d), bx(d), xtil(d);
  std::vector<double> sig(static_cast<std::size_t>(d) * m);
  std::vector<double> drift(d), noise(d), dW(m);

  on_step(0, std::span<const double>(yb), std::span<const double>(yt),
          std::span<const double>(dKb), std::span<const double>(dKt));
  for (int k = 0; k < grid.steps; ++k) {
    const auto x0k = x0.state(k);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < d; ++j)
        xbar[static_cast<std::size_t>(i) * d + j] = x0k[j] + a * yb[static_cast<std::size_t>(i) * d + j];
    coefficients::momenta_from_points(c, xbar, N, mom_bar);
    coefficients::momenta_from_dirac(c, x0k, mom_dirac);
    coefficients::eval_b(c, x0k, mom_dirac, b0);

    for (int i = 0; i < N; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * d;
      const auto ybi = std::span<const double>(yb.data() + off, static_cast<std::size_t>(d));
      const auto yti = std::span<const double>(yt.data() + off, static_cast<std::size_t>(d));
      const auto xbi = std::span<const double>(xbar.data() + off, static_cast<std::size_t>(d));

      for (int j = 0; j < m; ++j) dW[j] = streams[i].normal(sdt);

      // Empirical-law side.
      coefficients::eval_b(c, xbi, mom_bar, bx);
      for (int j = 0; j < d; ++j) drift[j] = (bx[j] - b0[j]) / a;
      coefficients::eval_sigma(c, xbi, mom_bar, sig);
      matvec(sig, d, m, dW, noise);
      for (int j = 0; j < d; ++j) noise[j] *= nf;
      step_reflected(op, ybi, drift, noise, dt, {yb_n.data() + off, static_cast<std::size_t>(d)},
                     {dKb.data() + off, static_cast<std::size_t>(d)}, k);

      // Frozen-law side.
      for (int j = 0; j < d; ++j) xtil[j] = x0k[j] + a * yti[j];
      coefficients::eval_b(c, xtil, mom_dirac, bx);
      for (int j = 0; j < d; ++j) drift[j] = (bx[j] - b0[j]) / a;
      coefficients::eval_sigma(c, xtil, mom_dirac, sig);
      matvec(sig, d, m, dW, noise);
      for (int j = 0; j < d; ++j) noise[j] *= nf;
      step_reflected(op, yti, drift, noise, dt, {yt_n.data() + off, static_cast<std::size_t>(d)},
                     {dKt.data() + off, static_cast<std::size_t>(d)}, k);
    }
    yb.swap(yb_n);
    yt.swap(yt_n);
    on_step(k + 1, std::span<const double>(yb), std::span<const double>(yt),
            std::span<const double>(dKb), std::span<const double>(dKt));
  }
}

}  // namespace detail

template <class StepFn>
void solve_clt_pair_stream(const CoefficientSet& c, const MonotoneOperator& op,
                           const SolvedPath& x0, double eps, int N, const TimeGrid& grid,
                           const NoisePlan& plan, StepFn&& on_step) {
  detail::clt_loop(c, op, x0, eps, N, grid, plan, std::forward<StepFn>(on_step));
}

template <class StepFn>
void solve_mdp_pair_stream(const CoefficientSet& c, const MonotoneOperator& op,
                           const SolvedPath& x0, double eps, double a, int N,
                           const TimeGrid& grid, const NoisePlan& plan, StepFn&& on_step) {
  detail::mdp_loop(c, op, x0, eps, a, N, grid, plan, std::forward<StepFn>(on_step));
}

struct EnsemblePair {
  Ensemble first;   // law-coupled side
  Ensemble second;  // frozen/linearized side
};

inline EnsemblePair solve_clt_pair(const CoefficientSet& c, const MonotoneOperator& op,
                                   const SolvedPath& x0, double eps, int N, const TimeGrid& grid,
                                   const NoisePlan& plan) {
  detail::EnsembleRecorder ra(grid, c.d, N), rb(grid, c.d, N);
  detail::clt_loop(c, op, x0, eps, N, grid, plan,
                   [&](int k, std::span<const double> a, std::span<const double> b,
                       std::span<const double> dKa, std::span<const double> dKb) {
                     ra(k, a, dKa);
                     rb(k, b, dKb);
                   });
  EnsemblePair out{ra.take(grid, c.d), rb.take(grid, c.d)};
  return out;
}

inline EnsemblePair solve_mdp_pair(const CoefficientSet& c, const MonotoneOperator& op,
                                   const SolvedPath& x0, double eps, double a, int N,
                                   const TimeGrid& grid, const NoisePlan& plan) {
  detail::EnsembleRecorder ra(grid, c.d, N), rb(grid, c.d, N);
  detail::mdp_loop(c, op, x0, eps, a, N, grid, plan,
                   [&](int k, std::span<const double> ya, std::span<const double> yb,
                       std::span<const double> dKa, std::span<const double> dKb) {
                     ra(k, ya, dKa);
                     rb(k, yb, dKb);
                   });
  EnsemblePair out{ra.take(grid, c.d), rb.take(grid, c.d)};
  return out;
}

enum class SkeletonMode { ldp, mdp };

// Deterministic controlled skeletons. The moderate-regime mode is the linear
// reflected system driven through the frozen diffusion; the large-deviation
// mode keeps state-dependent coefficients at the limit path's point mass and
// starts from the limit path's initial point.
inline SolvedPath solve_skeleton(const CoefficientSet& c, const MonotoneOperator& op,
                                 const SolvedPath& x0, const Control& h, SkeletonMode mode,
                                 const TimeGrid& grid) {
  detail::check_shapes(c, op, "skeleton solve");
  if (!same_grid(x0.grid, grid) || x0.d != c.d)
    throw std::invalid_argument("skeleton solve: limit path not aligned with the grid");
  if (!same_grid(h.grid, grid) || h.m != c.m)
    throw std::invalid_argument("skeleton solve: control not aligned with the grid");

  if (mode == SkeletonMode::ldp) {
    // State-dependent coefficients at the frozen law; zero noise.
    return solve_controlled(c, op, x0.state(0), 0.0, h, law_from_limit(c, x0), grid,
                            NoisePlan{});
  }

  const std::vector<double> zero(c.d, 0.0);
  if (!monotone::in_domain_closure(op, zero, 1e-9))
    throw std::invalid_argument("skeleton solve: start 0 lies outside the domain closure");

  const int d = c.d, m = c.m;
  const double dt = grid.dt();
  detail::PathRecorder rec(grid, d);
  std::vector<double> y(d, 0.0), yn(d), dK(d, 0.0);
  std::vector<double> grad(static_cast<std::size_t>(d) * d), sig(static_cast<std::size_t>(d) * m);
  std::vector<double> drift(d), sh(d), noise(d, 0.0);
  Momenta mom_dirac;
  rec.record(0, y, dK);
  for (int k = 0; k < grid.steps; ++k) {
    const auto x0k = x0.state(k);
    coefficients::momenta_from_dirac(c, x0k, mom_dirac);
    coefficients::grad_b(c, x0k, grad);
    coefficients::eval_sigma(c, x0k, mom_dirac, sig);
    matvec(grad, d, d, y, drift);
    matvec(sig, d, m, h.value(k), sh);
    for (int i = 0; i < d; ++i) drift[i] += sh[i];
    step_reflected(op, y, drift, noise, dt, yn, dK, k);
    y.swap(yn);
    rec.record(k + 1, y, dK);
  }
  return std::move(rec.path);
}

}  // namespace mvmv::dynamics
