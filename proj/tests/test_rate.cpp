#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mvmv/coefficients.hpp"
#include "mvmv/dynamics.hpp"
#include "mvmv/monotone.hpp"
#include "mvmv/rate.hpp"

using namespace mvmv;
using coefficients::CoefficientSet;
using coefficients::make_base;
using coefficients::preset;
using dynamics::Control;
using dynamics::make_grid;
using dynamics::SkeletonMode;
using dynamics::solve_limit_ode;
using dynamics::solve_skeleton;
using dynamics::SolvedPath;
using monotone::nonnegative_orthant;
using monotone::zero_operator;
using rate::action;
using rate::rate_endpoint;
using rate::rate_tube;
using rate::RateOptions;
using rate::RateResult;

namespace {

// Drift M * x with unit diffusion in one dimension.
CoefficientSet damped(double slope) {
  CoefficientSet c = make_base(1, 1);
  c.M = {slope};
  c.Sigma0 = {1.0};
  return c;
}

CoefficientSet flat() { return damped(0.0); }

}  // namespace

TEST_CASE("the action of a control is half its squared energy") {
  auto grid = make_grid(1.0, 1000);
  REQUIRE(action(Control::zero(1, grid)) == 0.0);
  REQUIRE(std::abs(action(Control::constant(1, grid, 1.0)) - 0.5) < 1e-12);
  Control half = Control::zero(1, grid);
  for (int k = 0; k < 500; ++k) half.values[k] = 1.0;
  REQUIRE(std::abs(action(half) - 0.25) < 1e-12);
}

TEST_CASE("a driftless skeleton charges half the squared mean slope") {
  auto c = flat();
  auto grid = make_grid(1.0, 500);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  RateOptions opt;
  opt.control_segments = 50;
  const double z = 0.7;
  auto r = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp, std::vector<double>{z},
                         1e-10, opt);
  REQUIRE(r.converged);
  REQUIRE(r.residual <= 1e-10);
  // Least-norm steering of an integrator: constant control z / T.
  REQUIRE(std::abs(r.value - z * z / 2.0) < 1e-13);
  for (double v : r.control.values) REQUIRE(std::abs(v - z) < 1e-10);
  REQUIRE(r.iterations == 1);
}

TEST_CASE("a zero target needs no control") {
  auto c = flat();
  auto grid = make_grid(1.0, 200);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  auto r = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp, std::vector<double>{0.0},
                         1e-12);
  REQUIRE(r.converged);
  REQUIRE(r.value == 0.0);
  for (double v : r.control.values) REQUIRE(v == 0.0);
}

TEST_CASE("the damped skeleton matches the closed-form least-norm control") {
  // Continuous problem: steer y' = -y + h to z at T = 1. The least-norm
  // control is h(s) = lambda e^{-(T-s)} and the value is z^2 / (1 - e^{-2T}).
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, 1024);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  RateOptions opt;
  opt.control_segments = 64;
  const double z = 0.5;
  auto r = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp, std::vector<double>{z},
                         1e-9, opt);
  REQUIRE(r.converged);
  const double exact = z * z / (1.0 - std::exp(-2.0));
  REQUIRE(std::abs(r.value - exact) < 0.01 * exact);
  const double lambda = 2.0 * z / (1.0 - std::exp(-2.0));
  for (int k : {0, 512, 1023}) {
    const double t = grid.time(k) + 0.5 * grid.dt();
    const double want = lambda * std::exp(-(1.0 - t));
    REQUIRE(std::abs(r.control.values[k] - want) < 0.02 * lambda);
  }
}

TEST_CASE("the damped skeleton agrees with an independent dense solve") {
  // Same discretization solved by hand: the terminal response of step k is
  // a_k = dt (1 - dt)^{n-1-k}, the least-norm coefficients are
  // h_k = mu a_k / dt with mu = z dt / sum a^2.
  const int n = 192;
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, n);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  RateOptions opt;
  opt.control_segments = n;  // one coefficient per step
  const double z = 0.8;
  auto r = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp, std::vector<double>{z},
                         1e-10, opt);
  REQUIRE(r.converged);

  const double dt = grid.dt();
  std::vector<double> a(n);
  double sum_a2 = 0.0;
  for (int k = 0; k < n; ++k) {
    a[k] = dt * std::pow(1.0 - dt, n - 1 - k);
    sum_a2 += a[k] * a[k];
  }
  const double mu = z * dt / sum_a2;
  double value = 0.0;
  for (int k = 0; k < n; ++k) {
    const double hk = mu * a[k] / dt;
    REQUIRE(std::abs(r.control.values[k] - hk) < 1e-9 * (1.0 + std::abs(hk)));
    value += 0.5 * hk * hk * dt;
  }
  REQUIRE(std::abs(r.value - value) < 1e-12);
}

TEST_CASE("doubling the target quadruples the value") {
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, 512);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  auto r1 = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp, std::vector<double>{0.4},
                          1e-9);
  auto r2 = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp, std::vector<double>{0.8},
                          1e-9);
  REQUIRE(std::abs(r2.value - 4.0 * r1.value) <= 1e-8 * r2.value);
}

TEST_CASE("any control that reaches the target bounds the value from above") {
  auto c = flat();
  auto grid = make_grid(1.0, 400);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  Control h0 = Control::zero(1, grid);
  for (int k = 0; k < 400; ++k) h0.values[k] = 0.7 + 0.3 * std::sin(2.0 * M_PI * k / 400.0);
  auto reached = solve_skeleton(c, zero_operator(1), x0, h0, SkeletonMode::mdp, grid);
  auto r = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp,
                         std::vector<double>{reached.state(400)[0]}, 1e-9);
  REQUIRE(r.converged);
  REQUIRE(r.value <= action(h0) + 1e-9);
}

TEST_CASE("the descent route reaches a target fed by a known control") {
  auto c = preset("linear-reflected");
  auto op = nonnegative_orthant(1);
  auto grid = make_grid(1.0, 300);
  auto x0 = solve_limit_ode(c, op, std::vector<double>{1.0}, grid);
  Control h0 = Control::constant(1, grid, 0.5);
  auto reached = solve_skeleton(c, op, x0, h0, SkeletonMode::ldp, grid);
  RateOptions opt;
  opt.control_segments = 6;
  auto r = rate_endpoint(c, op, x0, SkeletonMode::ldp,
                         std::vector<double>{reached.state(300)[0]}, 1e-4, opt);
  REQUIRE(r.converged);
  REQUIRE(r.residual <= 1e-4);
  REQUIRE(r.value <= action(h0) + 1e-3);
  REQUIRE(r.value > 0.0);
}

TEST_CASE("the uncontrolled endpoint is free in the descent route") {
  auto c = preset("linear-reflected");
  auto op = nonnegative_orthant(1);
  auto grid = make_grid(1.0, 200);
  auto x0 = solve_limit_ode(c, op, std::vector<double>{0.8}, grid);
  auto r = rate_endpoint(c, op, x0, SkeletonMode::ldp,
                         std::vector<double>{x0.state(200)[0]}, 1e-8);
  REQUIRE(r.converged);
  REQUIRE(r.value == 0.0);
  REQUIRE(r.iterations == 0);
  for (double v : r.control.values) REQUIRE(v == 0.0);
}

TEST_CASE("a degenerate diffusion makes nonzero targets unreachable") {
  CoefficientSet c = make_base(1, 1);  // b = 0, sigma = 0
  auto grid = make_grid(1.0, 100);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  REQUIRE_THROWS_AS(rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp,
                                  std::vector<double>{1.0}, 1e-8),
                    InfeasibleError);
  REQUIRE_THROWS_AS(rate_endpoint(c, zero_operator(1), x0, SkeletonMode::ldp,
                                  std::vector<double>{1.0}, 1e-8),
                    InfeasibleError);
}

TEST_CASE("an impossible tolerance reports non-convergence with the best iterate") {
  auto c = preset("linear-reflected");
  auto op = nonnegative_orthant(1);
  auto grid = make_grid(1.0, 200);
  auto x0 = solve_limit_ode(c, op, std::vector<double>{1.0}, grid);
  RateOptions opt;
  opt.control_segments = 4;
  opt.max_iterations = 5;
  opt.rho_max = 10.0;  // one penalty level, far too soft
  auto r = rate_endpoint(c, op, x0, SkeletonMode::ldp, std::vector<double>{3.0}, 1e-12, opt);
  REQUIRE_FALSE(r.converged);
  REQUIRE(r.residual > 1e-12);
  REQUIRE(std::isfinite(r.residual));
  REQUIRE(static_cast<int>(r.control.values.size()) == 200);
}

TEST_CASE("a tube around the uncontrolled path is free") {
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, 300);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  auto phi = solve_skeleton(c, zero_operator(1), x0, Control::zero(1, grid),
                            SkeletonMode::mdp, grid);
  auto r = rate_tube(c, zero_operator(1), x0, SkeletonMode::mdp, phi, 1e-10);
  REQUIRE(r.converged);
  REQUIRE(r.value == 0.0);
  REQUIRE(r.iterations == 0);
}

TEST_CASE("a tube around a driven path costs at most the driving energy") {
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, 320);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  RateOptions opt;
  opt.control_segments = 32;
  // Drive with a control that is constant on each coarse segment, so the
  // optimizer's space contains it exactly.
  Control h0 = Control::zero(1, grid);
  for (int k = 0; k < 320; ++k) h0.values[k] = 0.4 + 0.2 * ((k / 10) % 3);
  auto phi = solve_skeleton(c, zero_operator(1), x0, h0, SkeletonMode::mdp, grid);
  auto r = rate_tube(c, zero_operator(1), x0, SkeletonMode::mdp, phi, 1e-6, opt);
  REQUIRE(r.converged);
  REQUIRE(r.residual <= 1e-6);
  REQUIRE(r.value <= action(h0) + 1e-9);
  REQUIRE(r.value > 0.0);
}

TEST_CASE("tracking a whole path costs at least its endpoint") {
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, 320);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  RateOptions opt;
  opt.control_segments = 32;
  Control h0 = Control::zero(1, grid);
  for (int k = 0; k < 320; ++k) h0.values[k] = 0.6 - 0.3 * (k >= 160);
  auto phi = solve_skeleton(c, zero_operator(1), x0, h0, SkeletonMode::mdp, grid);
  auto tube = rate_tube(c, zero_operator(1), x0, SkeletonMode::mdp, phi, 1e-6, opt);
  auto endpoint = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp,
                                std::vector<double>{phi.state(320)[0]}, 1e-9, opt);
  REQUIRE(tube.converged);
  REQUIRE(endpoint.converged);
  REQUIRE(endpoint.value <= tube.value + 1e-6);
}

TEST_CASE("the descent route can track a reachable tube") {
  auto c = preset("linear-reflected");
  auto op = nonnegative_orthant(1);
  auto grid = make_grid(1.0, 200);
  auto x0 = solve_limit_ode(c, op, std::vector<double>{1.0}, grid);
  RateOptions opt;
  opt.control_segments = 5;
  Control h0 = Control::constant(1, grid, 0.3);
  auto phi = solve_skeleton(c, op, x0, h0, SkeletonMode::ldp, grid);
  auto r = rate_tube(c, op, x0, SkeletonMode::ldp, phi, 1e-3, opt);
  REQUIRE(r.converged);
  REQUIRE(r.residual <= 1e-3);
  REQUIRE(r.value <= action(h0) + 5e-3);
}

TEST_CASE("refining the control grid never raises the value") {
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, 1024);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  double prev = std::numeric_limits<double>::infinity();
  for (int segments : {16, 32, 64}) {
    RateOptions opt;
    opt.control_segments = segments;
    auto r = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp,
                           std::vector<double>{0.5}, 1e-9, opt);
    REQUIRE(r.converged);
    REQUIRE(r.value <= prev + 1e-12);
    prev = r.value;
  }
}

TEST_CASE("the reported value always matches the returned control") {
  auto c = damped(-1.0);
  auto grid = make_grid(1.0, 256);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  auto r = rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp,
                         std::vector<double>{0.6}, 1e-9);
  REQUIRE(r.value == r.control.energy());
  REQUIRE(r.value == action(r.control));
}

TEST_CASE("malformed rate queries are rejected") {
  auto c = flat();
  auto grid = make_grid(1.0, 100);
  auto x0 = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0}, grid);
  REQUIRE_THROWS(rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp,
                               std::vector<double>{1.0, 2.0}, 1e-8));
  REQUIRE_THROWS(rate_endpoint(c, zero_operator(1), x0, SkeletonMode::mdp,
                               std::vector<double>{1.0}, 0.0));
  auto other = solve_limit_ode(c, zero_operator(1), std::vector<double>{0.0},
                               make_grid(1.0, 120));
  REQUIRE_THROWS(rate_tube(c, zero_operator(1), x0, SkeletonMode::mdp, other, 1e-8));
}
