#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <utility>
#include <vector>

#include "mvmv/coefficients.hpp"
#include "mvmv/dynamics.hpp"
#include "mvmv/harness.hpp"
#include "mvmv/monotone.hpp"
#include "mvmv/parallel.hpp"
#include "mvmv/rng.hpp"

using namespace mvmv;
using coefficients::CoefficientSet;
using coefficients::make_base;
using coefficients::preset;
using dynamics::make_grid;
using harness::DeviationReport;
using harness::ExperimentPlan;
using harness::fit_loglog;
using harness::run_clt;
using harness::run_convergence;
using harness::run_ldp_tail;
using harness::run_mdp_equivalence;
using harness::SeriesPoint;
using harness::spearman;
using harness::validate_plan;
using harness::wilson_tail;
using monotone::nonnegative_orthant;
using monotone::zero_operator;

namespace {

ExperimentPlan small_plan(const char* preset_name, int steps, int replicas, int particles) {
  ExperimentPlan p;
  p.coeffs = preset(preset_name);
  p.op = nonnegative_orthant(1);
  p.xi = {1.0};
  p.grid = make_grid(1.0, steps);
  p.epsilons = {1e-1, 1e-2, 1e-3};
  p.replicas = replicas;
  p.particles = particles;
  p.seed = 7;
  return p;
}

double sup_gap(const dynamics::SolvedPath& a, const dynamics::SolvedPath& b) {
  double s = 0.0;
  for (int k = 0; k <= a.grid.steps; ++k)
    s = std::max(s, std::abs(a.state(k)[0] - b.state(k)[0]));
  return s;
}

double variance(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("exact power data fits with the exact slope") {
  std::vector<std::pair<double, double>> pts;
  for (double e : {1e-1, 1e-2, 1e-3, 1e-4}) pts.emplace_back(e, 3.0 * e);
  auto f = fit_loglog(std::span<const std::pair<double, double>>(pts));
  REQUIRE(std::abs(f.slope - 1.0) < 1e-12);
  REQUIRE(std::abs(f.r2 - 1.0) < 1e-12);
  for (auto& [e, v] : pts) v = 0.7 * e * e;
  f = fit_loglog(std::span<const std::pair<double, double>>(pts));
  REQUIRE(std::abs(f.slope - 2.0) < 1e-12);
}

TEST_CASE("noisy power data fits within a tenth of the true slope") {
  rng::NormalStream stream(99, rng::StreamTag::scratch, 0, 0);
  std::vector<std::pair<double, double>> pts;
  for (double e : {0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001}) {
    const double noise = 1.0 + 0.05 * (2.0 * stream.uniform() - 1.0);
    pts.emplace_back(e, 2.5 * std::pow(e, 1.4) * noise);
  }
  const auto f = fit_loglog(std::span<const std::pair<double, double>>(pts));
  REQUIRE(std::abs(f.slope - 1.4) < 0.1);
  REQUIRE(f.r2 >= 0.98);
}

TEST_CASE("censored and non-positive points never enter a fit") {
  std::vector<SeriesPoint> pts;
  for (double e : {1e-1, 1e-2, 1e-3}) pts.push_back({e, 5.0 * e, 0.0, false, 0.0});
  pts.push_back({1e-4, 123.0, 0.0, true, 0.0});  // censored outlier
  pts.push_back({1e-5, 0.0, 0.0, false, 0.0});   // zero statistic
  const auto f = fit_loglog(std::span<const SeriesPoint>(pts));
  REQUIRE(std::abs(f.slope - 1.0) < 1e-12);

  std::vector<SeriesPoint> too_few = {pts[0], pts[1], {1e-3, 1.0, 0.0, true, 0.0}};
  REQUIRE_THROWS_AS(fit_loglog(std::span<const SeriesPoint>(too_few)), InsufficientDataError);
}

TEST_CASE("rank correlation sees monotone trends") {
  std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  std::vector<double> down = {5.0, 3.0, 2.0, -1.0};
  std::vector<double> up = {-2.0, 0.1, 0.2, 7.0};
  REQUIRE(spearman(x, down) == -1.0);
  REQUIRE(spearman(x, up) == 1.0);
  std::vector<double> flat = {1.0, 1.0, 1.0, 1.0};
  REQUIRE(spearman(x, flat) == 0.0);
}

TEST_CASE("binomial summaries censor zero counts") {
  const auto zero = wilson_tail(0, 100);
  REQUIRE(zero.censored);
  REQUIRE(zero.stderr_value == 0.0);
  const double z2 = 1.96 * 1.96;
  REQUIRE(std::abs(zero.estimate - z2 / (100.0 + z2)) < 1e-12);

  const auto half = wilson_tail(50, 100);
  REQUIRE_FALSE(half.censored);
  REQUIRE(half.estimate == 0.5);
  REQUIRE(half.stderr_value > 0.04);
  REQUIRE(half.stderr_value < 0.06);

  const auto full = wilson_tail(100, 100);
  REQUIRE_FALSE(full.censored);
  REQUIRE(full.estimate == 1.0);
  REQUIRE(full.stderr_value < 0.02);
}

TEST_CASE("invalid plans are rejected with precise messages") {
  auto p = small_plan("linear-reflected", 50, 30, 10);
  validate_plan(p, true);

  auto bad = p;
  bad.epsilons = {1e-3, 1e-2};
  REQUIRE_THROWS_WITH(validate_plan(bad, true),
                      Catch::Matchers::ContainsSubstring("strictly decreasing"));
  bad = p;
  bad.epsilons = {1.5, 0.1};
  REQUIRE_THROWS_WITH(validate_plan(bad, true), Catch::Matchers::ContainsSubstring("(0, 1]"));
  bad = p;
  bad.replicas = 10;
  REQUIRE_THROWS_WITH(validate_plan(bad, true),
                      Catch::Matchers::ContainsSubstring("at least 30 replicas"));
  validate_plan(bad, false);  // tails have no replica floor
  bad = p;
  bad.kappa = 0.5;
  REQUIRE_THROWS_WITH(validate_plan(bad, false),
                      Catch::Matchers::ContainsSubstring("(0, 0.5)"));
  bad = p;
  bad.xi = {1.0, 2.0};
  REQUIRE_THROWS(validate_plan(bad, false));
}

TEST_CASE("particle-limit convergence shows a unit slope at desk scale") {
  auto p = small_plan("linear-reflected", 100, 30, 40);
  const auto report = run_convergence(p);
  REQUIRE(report.series.size() == 1);
  const auto& s = report.series[0];
  REQUIRE(s.fit.valid);
  REQUIRE(s.fit.slope >= 0.7);
  REQUIRE(s.fit.slope <= 1.3);
  REQUIRE(s.fit.r2 >= 0.95);
  REQUIRE(report.pass);
  for (const auto& pt : s.points) {
    REQUIRE_FALSE(pt.censored);
    REQUIRE(pt.estimate > 0.0);
    REQUIRE(pt.stderr_value > 0.0);
  }
}

TEST_CASE("a noiseless system reports a degenerate convergence statistic") {
  auto p = small_plan("linear-reflected", 50, 30, 8);
  p.coeffs = make_base(1, 1);
  p.coeffs.M = {-1.0};  // pure drift, sigma identically zero
  p.op = zero_operator(1);
  const auto report = run_convergence(p);
  REQUIRE(report.series[0].degenerate);
  REQUIRE_FALSE(report.series[0].fit.valid);
  REQUIRE(report.pass);
  for (const auto& pt : report.series[0].points) REQUIRE(pt.estimate == 0.0);
}

TEST_CASE("replica spread shrinks like the square root of the replica count") {
  auto p = small_plan("linear-reflected", 60, 32, 20);
  p.epsilons = {1e-2};
  const double se_small = run_convergence(p).series[0].points[0].stderr_value;
  p.replicas = 128;
  const double se_large = run_convergence(p).series[0].points[0].stderr_value;
  const double ratio = se_small / se_large;
  REQUIRE(ratio > 1.0);
  REQUIRE(ratio < 4.0);
}

TEST_CASE("fluctuation pairs scale with the moment order") {
  auto p = small_plan("clt-quadratic", 200, 30, 60);
  p.moment_orders = {1, 2};
  const auto report = run_clt(p);
  REQUIRE(report.series.size() == 2);
  REQUIRE(report.series[0].label == "p=1");
  REQUIRE(report.series[1].label == "p=2");
  REQUIRE(report.series[0].fit.slope >= 0.7);
  REQUIRE(report.series[0].fit.slope <= 1.3);
  REQUIRE(report.series[1].fit.slope >= 1.5);
  REQUIRE(report.series[1].fit.slope <= 2.5);
  REQUIRE(report.pass);
}

TEST_CASE("a linear pair with no interaction is degenerate") {
  auto p = small_plan("linear-reflected", 80, 30, 12);
  p.coeffs = coefficients::preset_linear_reflected(1, 0.0);  // B = 0
  p.op = zero_operator(1);
  p.moment_orders = {1};
  const auto report = run_clt(p);
  REQUIRE(report.series[0].degenerate);
  REQUIRE(report.pass);
}

TEST_CASE("a wide ball around the free endpoint is hit every time") {
  auto p = small_plan("linear-reflected", 80, 200, 1);
  p.epsilons = {0.5, 0.2};
  const auto x0 = dynamics::solve_limit_ode(p.coeffs, p.op, p.xi, p.grid);
  const double zT = x0.state(p.grid.steps)[0];
  const auto report = run_ldp_tail(p, std::vector<double>{zT}, 1.5);
  REQUIRE(report.has_reference);
  REQUIRE(report.reference == 0.0);
  REQUIRE(report.pass);
  for (const auto& pt : report.series[0].points) {
    REQUIRE_FALSE(pt.censored);
    REQUIRE(pt.estimate == 1.0);
    REQUIRE(pt.eps_log == 0.0);
  }
}

TEST_CASE("tail probabilities track the exact quadratic cost") {
  // Driftless unit-noise paths from 0: the end state is sqrt(eps) W_T and the
  // cheapest way into the ball costs (z - r)^2 / 2.
  ExperimentPlan p;
  p.coeffs = make_base(1, 1);
  p.coeffs.Sigma0 = {1.0};
  p.op = zero_operator(1);
  p.xi = {0.0};
  p.grid = make_grid(1.0, 100);
  p.epsilons = {0.1, 0.05};
  p.replicas = 4000;
  p.seed = 11;
  const auto report = run_ldp_tail(p, std::vector<double>{1.0}, 0.35);
  REQUIRE(report.has_reference);
  const double want = -0.5 * 0.65 * 0.65;
  REQUIRE(std::abs(report.reference - want) < 5e-3);
  const auto& pts = report.series[0].points;
  REQUIRE(pts.size() == 2);
  for (const auto& pt : pts) REQUIRE_FALSE(pt.censored);
  // Exact Gaussian interval masses at the two scales.
  auto gauss = [](double eps) {
    const double s = std::sqrt(eps);
    return 0.5 * (std::erf(1.35 / s / std::sqrt(2.0)) - std::erf(0.65 / s / std::sqrt(2.0)));
  };
  for (const auto& pt : pts) {
    const double exact = gauss(pt.epsilon);
    REQUIRE(std::abs(pt.estimate - exact) < 5.0 * std::sqrt(exact / 4000.0) + 2e-3);
    REQUIRE(std::abs(pt.eps_log - pt.epsilon * std::log(exact)) < 0.05);
  }
  // The gap to the action minimum shrinks as the noise fades.
  REQUIRE(std::abs(pts[1].eps_log - report.reference) <
          std::abs(pts[0].eps_log - report.reference));
  REQUIRE(report.pass);
}

TEST_CASE("an unreachable ball censors every point") {
  ExperimentPlan p;
  p.coeffs = make_base(1, 1);
  p.coeffs.M = {-1.0};  // deterministic decay, no noise
  p.op = zero_operator(1);
  p.xi = {1.0};
  p.grid = make_grid(1.0, 60);
  p.epsilons = {0.5, 0.1};
  p.replicas = 50;
  const auto report = run_ldp_tail(p, std::vector<double>{5.0}, 0.1);
  REQUIRE_FALSE(report.has_reference);
  REQUIRE(report.pass);  // nothing observable contradicts the decay
  for (const auto& pt : report.series[0].points) {
    REQUIRE(pt.censored);
    REQUIRE(pt.stderr_value == 0.0);
    REQUIRE(pt.estimate > 0.0);  // upper confidence bound, not a point estimate
  }
}

TEST_CASE("identical moderate-scale systems censor every threshold") {
  auto p = small_plan("tanh-smooth", 60, 4, 30);
  p.coeffs = coefficients::preset_tanh_smooth(1, 0.0);  // B = 0: both sides coincide
  p.epsilons = {1e-1, 1e-2};
  p.deltas = {0.25, 1e6};
  const auto report = run_mdp_equivalence(p);
  REQUIRE(report.series.size() == 2);
  for (const auto& s : report.series) {
    REQUIRE(s.pass);
    for (const auto& pt : s.points) REQUIRE(pt.censored);
  }
  REQUIRE(report.pass);
}

TEST_CASE("moderate-scale gaps pool samples across particles and replicas") {
  auto p = small_plan("linear-reflected", 60, 3, 50);
  p.epsilons = {0.5, 0.2};
  p.deltas = {1e-4};  // tiny threshold: essentially every sample is a hit
  const auto report = run_mdp_equivalence(p);
  const auto& pts = report.series[0].points;
  for (const auto& pt : pts) {
    REQUIRE_FALSE(pt.censored);
    REQUIRE(pt.estimate > 0.5);
  }
}

TEST_CASE("reports are bitwise identical across worker counts") {
  auto p = small_plan("clt-quadratic", 50, 30, 10);
  p.moment_orders = {1, 2};
  p.workers = 1;
  const auto a = run_clt(p);
  p.workers = 3;
  const auto b = run_clt(p);
  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    REQUIRE(a.series[i].fit.slope == b.series[i].fit.slope);
    REQUIRE(a.series[i].fit.r2 == b.series[i].fit.r2);
    for (std::size_t j = 0; j < a.series[i].points.size(); ++j) {
      REQUIRE(a.series[i].points[j].estimate == b.series[i].points[j].estimate);
      REQUIRE(a.series[i].points[j].stderr_value == b.series[i].points[j].stderr_value);
    }
  }

  auto q = small_plan("linear-reflected", 40, 64, 1);
  q.epsilons = {0.5, 0.1};
  q.workers = 1;
  const auto ta = run_ldp_tail(q, std::vector<double>{0.5}, 0.6);
  q.workers = 4;
  const auto tb = run_ldp_tail(q, std::vector<double>{0.5}, 0.6);
  for (std::size_t j = 0; j < ta.series[0].points.size(); ++j)
    REQUIRE(ta.series[0].points[j].estimate == tb.series[0].points[j].estimate);
}

TEST_CASE("shared noise reduces the pair-gap variance on every preset") {
  for (const char* name : {"linear-reflected", "tanh-smooth", "clt-quadratic"}) {
    auto c = preset(name);
    auto op = nonnegative_orthant(1);
    auto grid = make_grid(1.0, 150);
    const int N = 300;
    const auto x0 = dynamics::solve_limit_ode(c, op, std::vector<double>{1.0}, grid);
    const auto shared =
        dynamics::solve_clt_pair(c, op, x0, 1e-2, N, grid, dynamics::NoisePlan{3, 0});
    const auto other =
        dynamics::solve_clt_pair(c, op, x0, 1e-2, N, grid, dynamics::NoisePlan{3, 1});
    std::vector<double> gap_shared(N), gap_indep(N);
    for (int j = 0; j < N; ++j) {
      gap_shared[j] = sup_gap(shared.first.particles[j], shared.second.particles[j]);
      gap_indep[j] = sup_gap(shared.first.particles[j], other.second.particles[j]);
    }
    INFO(name);
    REQUIRE(variance(gap_shared) <= variance(gap_indep));
  }
}

TEST_CASE("worker resolution prefers explicit requests over the environment") {
  REQUIRE(parallel::resolve_workers(3) == 3);
  const char* saved = std::getenv("MVMV_WORKERS");
  setenv("MVMV_WORKERS", "5", 1);
  REQUIRE(parallel::resolve_workers(0) == 5);
  setenv("MVMV_WORKERS", "junk", 1);
  REQUIRE(parallel::resolve_workers(0) == 1);
  if (saved)
    setenv("MVMV_WORKERS", saved, 1);
  else
    unsetenv("MVMV_WORKERS");
}

TEST_CASE("tree reduction is associative-order independent of chunking") {
  std::vector<double> v;
  rng::NormalStream stream(5, rng::StreamTag::scratch, 0, 0);
  for (int i = 0; i < 1000; ++i) v.push_back(stream.normal(1.0));
  const double once = parallel::tree_sum(v);
  const double again = parallel::tree_sum(v);
  REQUIRE(once == again);
  // The tree never depends on how parallel_for chunked the work, because the
  // reduction happens after the per-index slots are filled.
  std::vector<double> slots(1000, 0.0);
  parallel::parallel_for(1000, 4, [&](int i) { slots[i] = v[i]; });
  REQUIRE(parallel::tree_sum(slots) == once);
}
