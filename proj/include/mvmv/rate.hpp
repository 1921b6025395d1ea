#pragma once

// Action minimization for the deterministic skeleton dynamics: least-energy
// controls steering the skeleton to a terminal point (rate_endpoint) or along
// a whole reference path (rate_tube). The reported value is always
// 0.5 * ||h*||^2 in the discrete Cameron-Martin norm sum_k |h_k|^2 dt.
//
// Two solution routes share one evaluator. When the skeleton is linear in the
// control and state (moderate-regime mode with a trivial reflection term) the
// minimizer comes from one least-squares solve over the response columns of
// the coarse control basis. Every other case runs penalized gradient descent
// with forward-difference gradients over the same coarse coefficients,
// escalating the penalty weight until the constraint residual meets the
// tolerance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvmv/coefficients.hpp"
#include "mvmv/common.hpp"
#include "mvmv/dynamics.hpp"
#include "mvmv/monotone.hpp"

namespace mvmv::rate {

using coefficients::CoefficientSet;
using coefficients::Momenta;
using dynamics::Control;
using dynamics::SkeletonMode;
using dynamics::SolvedPath;
using dynamics::TimeGrid;
using monotone::MonotoneOperator;
using monotone::OperatorKind;

// The action functional: 1/2 integral |h|^2 dt on the control's own grid.
inline double action(const Control& h) { return h.energy(); }

struct RateOptions {
  // Number of piecewise-constant coefficients per control channel the
  // optimizer works with; clamped to the number of time steps.
  int control_segments = 64;
  // Gradient iterations allowed per penalty level.
  int max_iterations = 400;
  double rho_initial = 10.0;
  double rho_growth = 10.0;
  double rho_max = 1e12;
};

struct RateResult {
  double value = 0.0;  // 0.5 * ||control||^2, recomputed from the control
  Control control;     // minimizer expanded onto the solver grid
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

namespace detail {

using mvmv::matvec;

// Balanced partition of the time grid into at most `requested` segments.
// Coefficient s of channel j is constant over all steps with seg_of[k] == s.
struct CoarsePlan {
  int segments = 0;
  std::vector<int> seg_of;          // per step
  std::vector<double> seg_weight;   // per segment: covered duration

  static CoarsePlan build(const TimeGrid& grid, int requested) {
    CoarsePlan p;
    p.segments = std::clamp(requested, 1, grid.steps);
    p.seg_of.resize(grid.steps);
    p.seg_weight.assign(p.segments, 0.0);
    for (int k = 0; k < grid.steps; ++k) {
      const int s = static_cast<int>(static_cast<long long>(k) * p.segments / grid.steps);
      p.seg_of[k] = s;
      p.seg_weight[s] += grid.dt();
    }
    return p;
  }
};

// Deterministic skeleton evaluator over coarse control coefficients. All
// state-independent data (frozen gradients and diffusions in the moderate
// mode, the limit law in the large-deviation mode) is computed once so that
// repeated runs inside an optimization loop stay cheap.
class SkeletonOracle {
 public:
  SkeletonOracle(const CoefficientSet& c, const MonotoneOperator& op, const SolvedPath& x0,
                 SkeletonMode mode, const CoarsePlan& plan)
      : c_(&c), op_(&op), x0_(&x0), mode_(mode), plan_(&plan), grid_(x0.grid) {
    const int d = c.d, m = c.m;
    const int steps = grid_.steps;
    if (mode_ == SkeletonMode::mdp) {
      const std::vector<double> zero(d, 0.0);
      if (!monotone::in_domain_closure(op, zero, 1e-9))
        throw std::invalid_argument("rate solve: start 0 lies outside the domain closure");
      grad_.resize(static_cast<std::size_t>(steps) * d * d);
      sig_.resize(static_cast<std::size_t>(steps) * d * m);
      Momenta mom;
      for (int k = 0; k < steps; ++k) {
        const auto xk = x0.state(k);
        coefficients::momenta_from_dirac(c, xk, mom);
        coefficients::grad_b(c, xk, {grad_.data() + static_cast<std::size_t>(k) * d * d,
                                     static_cast<std::size_t>(d) * d});
        coefficients::eval_sigma(c, xk, mom, {sig_.data() + static_cast<std::size_t>(k) * d * m,
                                              static_cast<std::size_t>(d) * m});
      }
      start_.assign(d, 0.0);
    } else {
      law_ = dynamics::law_from_limit(c, x0);
      start_.assign(x0.state(0).begin(), x0.state(0).end());
    }
  }

  int coeff_count() const { return plan_->segments * c_->m; }
  const CoarsePlan& plan() const { return *plan_; }
  const TimeGrid& grid() const { return grid_; }
  int dim() const { return c_->d; }

  // True when the diffusion is not identically zero along the limit path, so
  // the control can actually move the skeleton.
  bool control_enters() const {
    const int d = c_->d, m = c_->m;
    if (mode_ == SkeletonMode::mdp) {
      for (double v : sig_)
        if (v != 0.0) return true;
      return false;
    }
    std::vector<double> sig(static_cast<std::size_t>(d) * m);
    for (int k = 0; k < grid_.steps; ++k) {
      coefficients::eval_sigma(*c_, x0_->state(k), law_.at(k), sig);
      for (double v : sig)
        if (v != 0.0) return true;
    }
    return false;
  }

  // Runs the skeleton under the coarse coefficients `theta`, calling
  // on_state(k, y) for every recorded state k = 0..steps.
  template <class OnState>
  void walk(std::span<const double> theta, OnState&& on_state) const {
    const int d = c_->d, m = c_->m;
    const int steps = grid_.steps;
    const double dt = grid_.dt();
    std::vector<double> y(start_), yn(d), drift(d), sh(d);
    std::vector<double> sig_buf;
    if (mode_ == SkeletonMode::ldp) sig_buf.resize(static_cast<std::size_t>(d) * m);
    on_state(0, std::span<const double>(y));
    for (int k = 0; k < steps; ++k) {
      const int s = plan_->seg_of[k];
      const std::span<const double> hk{theta.data() + static_cast<std::size_t>(s) * m,
                                       static_cast<std::size_t>(m)};
      if (mode_ == SkeletonMode::mdp) {
        const double* G = grad_.data() + static_cast<std::size_t>(k) * d * d;
        const double* S = sig_.data() + static_cast<std::size_t>(k) * d * m;
        matvec({G, static_cast<std::size_t>(d) * d}, d, d, y, drift);
        matvec({S, static_cast<std::size_t>(d) * m}, d, m, hk, sh);
      } else {
        const Momenta& mom = law_.at(k);
        coefficients::eval_b(*c_, y, mom, drift);
        coefficients::eval_sigma(*c_, y, mom, sig_buf);
        matvec(sig_buf, d, m, hk, sh);
      }
      for (int i = 0; i < d; ++i) drift[i] = y[i] + (drift[i] + sh[i]) * dt;
      monotone::resolvent(*op_, dt, drift, yn);
      y.swap(yn);
      on_state(k + 1, std::span<const double>(y));
    }
  }

  // Terminal state plus (when `phi` is non-null) the squared L2(dt) distance
  // between the solved path and `phi`'s states.
  double run(std::span<const double> theta, const SolvedPath* phi, std::span<double> xT) const {
    const double dt = grid_.dt();
    const int steps = grid_.steps;
    double mis = 0.0;
    walk(theta, [&](int k, std::span<const double> y) {
      if (phi != nullptr) mis += dist2_sq(y, phi->state(k)) * dt;
      if (k == steps) std::copy(y.begin(), y.end(), xT.begin());
    });
    return mis;
  }

  // Flattened state sequence, (steps + 1) * d entries.
  void run_full(std::span<const double> theta, std::vector<double>& states) const {
    const int d = c_->d;
    states.assign(static_cast<std::size_t>(grid_.steps + 1) * d, 0.0);
    walk(theta, [&](int k, std::span<const double> y) {
      std::copy(y.begin(), y.end(), states.begin() + static_cast<std::size_t>(k) * d);
    });
  }

  // 0.5 * ||h||^2 of the expanded control, computed on the coarse grid.
  double quadratic_action(std::span<const double> theta) const {
    const int m = c_->m;
    double a = 0.0;
    for (int s = 0; s < plan_->segments; ++s) {
      double block = 0.0;
      for (int j = 0; j < m; ++j) {
        const double v = theta[static_cast<std::size_t>(s) * m + j];
        block += v * v;
      }
      a += plan_->seg_weight[s] * block;
    }
    return 0.5 * a;
  }

  Control expand(std::span<const double> theta) const {
    const int m = c_->m;
    Control h = Control::zero(m, grid_);
    for (int k = 0; k < grid_.steps; ++k) {
      const int s = plan_->seg_of[k];
      for (int j = 0; j < m; ++j)
        h.values[static_cast<std::size_t>(k) * m + j] = theta[static_cast<std::size_t>(s) * m + j];
    }
    return h;
  }

 private:
  const CoefficientSet* c_;
  const MonotoneOperator* op_;
  const SolvedPath* x0_;
  SkeletonMode mode_;
  const CoarsePlan* plan_;
  TimeGrid grid_;
  std::vector<double> start_;
  std::vector<double> grad_, sig_;  // moderate mode: per-step d*d and d*m blocks
  dynamics::LawPath law_;           // large-deviation mode
};

inline bool linear_route(const MonotoneOperator& op, SkeletonMode mode) {
  return mode == SkeletonMode::mdp && op.kind == OperatorKind::zero;
}

inline RateResult finish(const SkeletonOracle& oracle, std::span<const double> theta,
                         double residual, int iterations, double tol) {
  RateResult r;
  r.control = oracle.expand(theta);
  r.value = r.control.energy();
  r.residual = residual;
  r.iterations = iterations;
  r.converged = residual <= tol;
  return r;
}

// Shared penalty-descent engine. `penalty(theta)` returns the squared
// constraint violation; the residual is its square root. Escalates rho until
// the residual meets `tol` or the budget runs out, keeping the best iterate.
template <class PenaltyFn>
RateResult penalty_descent(const SkeletonOracle& oracle, PenaltyFn&& penalty, double tol,
                           const RateOptions& opt) {
  const int nc = oracle.coeff_count();
  std::vector<double> theta(nc, 0.0);

  double pen0 = penalty(theta);
  if (std::sqrt(pen0) <= tol) return finish(oracle, theta, std::sqrt(pen0), 0, tol);

  if (!oracle.control_enters())
    throw InfeasibleError("rate solve: the diffusion vanishes along the limit path, "
                          "so no control can reach the target");

  std::vector<double> best = theta;
  double best_res = std::sqrt(pen0);
  double best_act = 0.0;
  int total_iters = 0;

  std::vector<double> grad(nc), trial(nc);
  for (double rho = opt.rho_initial; rho <= opt.rho_max; rho *= opt.rho_growth) {
    auto objective = [&](const std::vector<double>& t) {
      return oracle.quadratic_action(t) + rho * penalty(t);
    };
    double f0 = objective(theta);
    for (int it = 0; it < opt.max_iterations; ++it) {
      // Forward differences over the coarse coefficients.
      for (int s = 0; s < nc; ++s) {
        const double delta = 1e-6 * (1.0 + std::abs(theta[s]));
        trial = theta;
        trial[s] += delta;
        grad[s] = (objective(trial) - f0) / delta;
      }
      double g2 = 0.0;
      for (double g : grad) g2 += g * g;
      if (std::sqrt(g2) <= 1e-10 * (1.0 + std::abs(f0))) break;

      // Armijo backtracking from a unit step.
      double t = 1.0;
      bool accepted = false;
      for (int bt = 0; bt < 50; ++bt) {
        for (int s = 0; s < nc; ++s) trial[s] = theta[s] - t * grad[s];
        const double ft = objective(trial);
        if (ft <= f0 - 1e-4 * t * g2) {
          theta = trial;
          f0 = ft;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      ++total_iters;
      if (!accepted) break;
    }
    const double res = std::sqrt(penalty(theta));
    const double act = oracle.quadratic_action(theta);
    if (res < best_res || (res == best_res && act < best_act)) {
      best = theta;
      best_res = res;
      best_act = act;
    }
    if (res <= tol) break;
  }
  return finish(oracle, best, best_res, total_iters, tol);
}

}  // namespace detail

// Least-energy control steering the skeleton to `target` at the final time.
// Linear skeletons with a trivial reflection term are solved exactly by
// least-norm projection onto the response span; a target outside that span
// raises InfeasibleError. Everything else runs penalty descent; if the
// tolerance is never met the result comes back with converged == false and
// the best iterate found.
inline RateResult rate_endpoint(const CoefficientSet& c, const MonotoneOperator& op,
                                const SolvedPath& x0, SkeletonMode mode,
                                std::span<const double> target, double tol,
                                const RateOptions& opt = {}) {
  coefficients::check_dims(c);
  if (static_cast<int>(target.size()) != c.d)
    throw std::invalid_argument("rate_endpoint: target dimension mismatch");
  if (!(tol > 0.0)) throw std::invalid_argument("rate_endpoint: tolerance must be positive");
  if (x0.d != c.d) throw std::invalid_argument("rate_endpoint: limit path dimension mismatch");

  const auto plan = detail::CoarsePlan::build(x0.grid, opt.control_segments);
  detail::SkeletonOracle oracle(c, op, x0, mode, plan);
  const int d = c.d, nc = oracle.coeff_count();

  if (detail::linear_route(op, mode)) {
    // Response matrix of the coarse basis: column s is the terminal state
    // produced by the unit coefficient e_s.
    Eigen::MatrixXd Phi(d, nc);
    std::vector<double> theta(nc, 0.0), xT(d);
    for (int s = 0; s < nc; ++s) {
      theta[s] = 1.0;
      oracle.run(theta, nullptr, xT);
      theta[s] = 0.0;
      for (int i = 0; i < d; ++i) Phi(i, s) = xT[i];
    }
    // Minimize sum_s w_s |theta_s|^2 subject to Phi theta = target:
    // theta = D^-1 Phi^T lambda with (Phi D^-1 Phi^T) lambda = target.
    Eigen::VectorXd dinv(nc);
    for (int s = 0; s < nc; ++s) dinv(s) = 1.0 / plan.seg_weight[s / c.m];
    const Eigen::MatrixXd G = Phi * dinv.asDiagonal() * Phi.transpose();
    Eigen::VectorXd z(d);
    for (int i = 0; i < d; ++i) z(i) = target[i];
    const Eigen::VectorXd lambda =
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(G).solve(z);
    const Eigen::VectorXd th = dinv.asDiagonal() * Phi.transpose() * lambda;
    for (int s = 0; s < nc; ++s) theta[s] = th(s);
    oracle.run(theta, nullptr, xT);
    double res2 = 0.0;
    for (int i = 0; i < d; ++i) {
      const double e = xT[i] - target[i];
      res2 += e * e;
    }
    const double residual = std::sqrt(res2);
    if (residual > tol)
      throw InfeasibleError("rate_endpoint: target lies outside the reachable span "
                            "of the diffusion");
    return detail::finish(oracle, theta, residual, 1, tol);
  }

  std::vector<double> xT(d);
  auto penalty = [&](std::span<const double> th) {
    oracle.run(th, nullptr, xT);
    double p = 0.0;
    for (int i = 0; i < d; ++i) {
      const double e = xT[i] - target[i];
      p += e * e;
    }
    return p;
  };
  return detail::penalty_descent(oracle, penalty, tol, opt);
}

// Least-energy control keeping the skeleton close to the whole reference path
// `phi` in the L2(dt) sense. The residual is the achieved path distance.
inline RateResult rate_tube(const CoefficientSet& c, const MonotoneOperator& op,
                            const SolvedPath& x0, SkeletonMode mode, const SolvedPath& phi,
                            double tol, const RateOptions& opt = {}) {
  coefficients::check_dims(c);
  if (!(tol > 0.0)) throw std::invalid_argument("rate_tube: tolerance must be positive");
  if (x0.d != c.d || phi.d != c.d)
    throw std::invalid_argument("rate_tube: path dimension mismatch");
  if (!dynamics::same_grid(phi.grid, x0.grid))
    throw std::invalid_argument("rate_tube: reference path not aligned with the grid");

  const auto plan = detail::CoarsePlan::build(x0.grid, opt.control_segments);
  detail::SkeletonOracle oracle(c, op, x0, mode, plan);
  const int d = c.d, nc = oracle.coeff_count();
  const int rows = (x0.grid.steps + 1) * d;
  const double dt = x0.grid.dt();

  if (detail::linear_route(op, mode)) {
    std::vector<double> theta(nc, 0.0), xT(d);

    const double base_mis = oracle.run(theta, &phi, xT);
    if (std::sqrt(base_mis) <= tol)
      return detail::finish(oracle, theta, std::sqrt(base_mis), 0, tol);

    // Path response columns, then one regularized least-squares solve per
    // penalty level: (D + 2 rho L^T W L) theta = 2 rho L^T W phi.
    Eigen::MatrixXd L(rows, nc);
    {
      std::vector<double> col;
      for (int s = 0; s < nc; ++s) {
        theta[s] = 1.0;
        oracle.run_full(theta, col);
        theta[s] = 0.0;
        for (int r = 0; r < rows; ++r) L(r, s) = col[r];
      }
    }
    Eigen::VectorXd phiv(rows);
    for (int k = 0; k <= x0.grid.steps; ++k)
      for (int i = 0; i < d; ++i) phiv(k * d + i) = phi.state(k)[i];
    const Eigen::MatrixXd A0 = L.transpose() * L * dt;
    const Eigen::VectorXd b0 = L.transpose() * phiv * dt;
    Eigen::VectorXd D(nc);
    for (int s = 0; s < nc; ++s) D(s) = plan.seg_weight[s / c.m];

    if (A0.norm() == 0.0)
      throw InfeasibleError("rate_tube: the diffusion vanishes along the limit path, "
                            "so no control can track the reference");

    std::vector<double> best = theta;
    double best_res = std::sqrt(base_mis);
    int levels = 0;
    for (double rho = opt.rho_initial; rho <= opt.rho_max; rho *= opt.rho_growth) {
      Eigen::MatrixXd A = 2.0 * rho * A0;
      A.diagonal() += D;
      const Eigen::VectorXd th = A.ldlt().solve(2.0 * rho * b0);
      for (int s = 0; s < nc; ++s) theta[s] = th(s);
      const double mis = oracle.run(theta, &phi, xT);
      ++levels;
      if (std::sqrt(mis) < best_res) {
        best = theta;
        best_res = std::sqrt(mis);
      }
      if (std::sqrt(mis) <= tol) break;
    }
    return detail::finish(oracle, best, best_res, levels, tol);
  }

  std::vector<double> xT(d);
  auto penalty = [&](std::span<const double> th) { return oracle.run(th, &phi, xT); };
  return detail::penalty_descent(oracle, penalty, tol, opt);
}

}  // namespace mvmv::rate
