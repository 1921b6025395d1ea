// Acceptance gate. Each criterion prints exactly one pass/fail line with the
// measured numbers; the process exits 0 only if every criterion passes. All
// tolerances and run sizes are pinned here, sized for a few minutes on one
// core. Criterion 10 shells out to the command-line binary, whose path comes
// from MVMV_CLI_BIN or argv[1].

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mvmv/coefficients.hpp"
#include "mvmv/dynamics.hpp"
#include "mvmv/harness.hpp"
#include "mvmv/measures.hpp"
#include "mvmv/monotone.hpp"
#include "mvmv/rate.hpp"
#include "mvmv/rng.hpp"

namespace fs = std::filesystem;
using namespace mvmv;

namespace {

int g_failures = 0;

void line(int idx, const std::string& name, bool ok, const std::string& detail) {
  std::printf("criterion %2d  %-30s %s  (%s)\n", idx, name.c_str(), ok ? "pass" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// --- 1: mean-square distance to the deterministic limit scales like eps ----

void criterion_convergence() {
  harness::ExperimentPlan plan;
  plan.coeffs = coefficients::preset_linear_reflected(1);
  plan.op = monotone::nonnegative_orthant(1);
  plan.xi = {1.0};
  plan.grid = dynamics::make_grid(1.0, 1000);
  plan.epsilons = {1e-1, 1e-2, 1e-3};
  plan.particles = 2000;
  plan.replicas = 200;
  plan.seed = 42;
  plan.workers = 1;
  const auto rep = harness::run_convergence(plan, {0.7, 1.3, 0.95});
  const auto& f = rep.series[0].fit;
  line(1, "strong convergence slope", rep.pass,
       "slope " + fmt(f.slope) + " in [0.7,1.3], r2 " + fmt(f.r2) + " >= 0.95");
}

// --- 2: fluctuation-pair moments scale like eps^q ---------------------------

void criterion_clt_scaling() {
  harness::ExperimentPlan plan;
  plan.coeffs = coefficients::preset_clt_quadratic(1);
  plan.op = monotone::nonnegative_orthant(1);
  plan.xi = {1.0};
  plan.grid = dynamics::make_grid(1.0, 1000);
  plan.epsilons = {1e-1, 1e-2, 1e-3};
  plan.particles = 2000;
  plan.replicas = 200;
  plan.moment_orders = {1, 2};
  plan.seed = 42;
  plan.workers = 1;
  const auto rep = harness::run_clt(plan);
  line(2, "fluctuation moment scaling", rep.pass,
       "2nd-moment slope " + fmt(rep.series[0].fit.slope) + " in [0.7,1.3], 4th-moment slope " +
           fmt(rep.series[1].fit.slope) + " in [1.5,2.5]");
}

// --- 3: action minima against closed forms ----------------------------------

void criterion_action_closed_forms() {
  const auto grid = dynamics::make_grid(1.0, 1000);
  bool ok = true;
  double worst_flat = 0.0, worst_lq = 0.0;

  // Driftless unit diffusion: reaching z costs z^2/2.
  {
    const auto c = coefficients::preset_brownian(1);
    const auto op = monotone::zero_operator(1);
    const std::vector<double> xi = {0.0};
    const auto x0 = dynamics::solve_limit_ode(c, op, xi, grid);
    for (double z : {0.5, 1.0, 2.0}) {
      const auto rr = rate::rate_endpoint(c, op, x0, dynamics::SkeletonMode::mdp,
                                          std::vector<double>{z}, 1e-9);
      const double rel = std::abs(rr.value - 0.5 * z * z) / (0.5 * z * z);
      worst_flat = std::max(worst_flat, rel);
      ok = ok && rr.converged && rel <= 0.02;
    }
  }

  // Damped drift, unit diffusion: the minimum-energy control of
  // dY = -Y dt + h dt reaching z at T=1 spends z^2/(1-e^-2), the inverse of
  // the controllability Gramian integral of e^{-2(T-s)}.
  {
    const auto c = coefficients::preset_linear_reflected(1, 0.0, 1.0);
    const auto op = monotone::zero_operator(1);
    const std::vector<double> xi = {1.0};
    const auto x0 = dynamics::solve_limit_ode(c, op, xi, grid);
    const double gram = 1.0 - std::exp(-2.0);
    for (double z : {0.5, 1.5}) {
      const auto rr = rate::rate_endpoint(c, op, x0, dynamics::SkeletonMode::mdp,
                                          std::vector<double>{z}, 1e-9);
      const double exact = z * z / gram;
      const double rel = std::abs(rr.value - exact) / exact;
      worst_lq = std::max(worst_lq, rel);
      ok = ok && rr.converged && rel <= 0.05;
    }
  }
  line(3, "action closed forms", ok,
       "flat rel err " + fmt(worst_flat) + " <= 0.02, damped rel err " + fmt(worst_lq) +
           " <= 0.05");
}

// --- 4: tail log-probability against the exact Gaussian ---------------------

void criterion_tail_probability() {
  harness::ExperimentPlan plan;
  plan.coeffs = coefficients::preset_brownian(1);
  plan.op = monotone::zero_operator(1);
  plan.xi = {0.6};
  plan.grid = dynamics::make_grid(1.0, 1000);
  plan.epsilons = {1e-1, 3e-2, 1e-2};
  plan.particles = 1;
  plan.replicas = 100000;
  plan.seed = 42;
  plan.workers = 1;
  const auto rep = harness::run_ldp_tail(plan, std::vector<double>{1.0}, 0.1);
  const auto& pt = rep.series[0].points.back();

  // Terminal state is N(0.6, eps); the window [0.9, 1.1] at eps = 1e-2 spans
  // 3 to 5 standard deviations.
  const double p_exact = phi(5.0) - phi(3.0);
  const double target_el = pt.epsilon * std::log(p_exact);
  const bool ok = !pt.censored && std::abs(pt.eps_log - target_el) <= 0.2;
  line(4, "tail log-probability", ok,
       "eps*log(p) " + fmt(pt.eps_log) + " vs exact " + fmt(target_el) + " at eps 0.01, gap " +
           fmt(std::abs(pt.eps_log - target_el)) + " <= 0.2");
}

// --- 5: moderate-pair exceedance trend ---------------------------------------

void criterion_pair_gap_trend() {
  harness::ExperimentPlan plan;
  plan.coeffs = coefficients::preset_linear_reflected(1);
  plan.op = monotone::nonnegative_orthant(1);
  plan.xi = {1.0};
  plan.grid = dynamics::make_grid(1.0, 1000);
  plan.epsilons = {1e-1, 3e-2, 1e-2};
  plan.particles = 400;
  plan.replicas = 250;
  plan.kappa = 0.25;
  plan.deltas = {0.25};
  plan.seed = 42;
  plan.workers = 1;
  const auto rep = harness::run_mdp_equivalence(plan);
  const auto& s = rep.series[0];

  // The trend constraint binds only where exceedances were observed; censored
  // points certify an upper confidence bound instead.
  std::vector<double> vals;
  double worst_bound = 0.0;
  for (const auto& p : s.points) {
    if (p.censored) worst_bound = std::max(worst_bound, p.estimate);
    else vals.push_back(p.eps_log);
  }
  bool strict = true;
  for (std::size_t i = 1; i < vals.size(); ++i) strict = strict && vals[i] < vals[i - 1];
  std::string detail;
  if (vals.size() < 2) {
    detail = std::to_string(vals.size()) + "/" + std::to_string(s.points.size()) +
             " points uncensored at threshold 0.25 (exceedance prob <= " + fmt(worst_bound) +
             " per scale); decreasing-trend constraint is vacuous";
  } else {
    detail = "eps*log(q) strictly decreasing over " + std::to_string(vals.size()) +
             " uncensored points";
  }
  line(5, "pair-gap tail trend", strict, detail);
}

// --- 6: transport distance against permutation brute force ------------------

double w2_brute_force(const measures::EmpiricalMeasure& a, const measures::EmpiricalMeasure& b) {
  const int n = a.size(), d = a.dim;
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto pa = a.point(i), pb = b.point(perm[static_cast<std::size_t>(i)]);
      for (int j = 0; j < d; ++j) {
        const double e = pa[j] - pb[j];
        cost += e * e;
      }
    }
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / n);
}

void criterion_transport_oracle() {
  rng::NormalStream stream(7, rng::StreamTag::scratch, 0, 0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + t % 8, d = 1 + t % 3;
    measures::EmpiricalMeasure a, b;
    a.dim = b.dim = d;
    a.weights.assign(static_cast<std::size_t>(n), 1.0 / n);
    b.weights = a.weights;
    for (int i = 0; i < n * d; ++i) {
      a.points.push_back(stream.normal());
      b.points.push_back(stream.normal());
    }
    worst = std::max(worst, std::abs(w2_brute_force(a, b) - measures::w2(a, b)));
  }
  line(6, "transport distance oracle", worst <= 1e-9,
       "worst |assignment - brute force| " + fmt(worst) + " <= 1e-9 over 100 instances");
}

// --- 7: measure-derivative kernel against difference quotients --------------

void criterion_measure_derivative() {
  rng::NormalStream stream(9, rng::StreamTag::scratch, 0, 0);
  const int d = 2, n = 5;
  double worst = 0.0;
  bool ok = true;
  for (const char* name : {"linear-reflected", "brownian", "tanh-smooth", "clt-quadratic"}) {
    const auto c = coefficients::preset(name, d);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> x(d), Y(static_cast<std::size_t>(n) * d),
          Z(static_cast<std::size_t>(n) * d);
      for (auto& v : x) v = stream.uniform(-1.0, 1.0);
      for (auto& v : Y) v = stream.uniform(-2.0, 2.0);
      for (auto& v : Z) v = stream.normal();

      std::vector<double> pair(static_cast<std::size_t>(d));
      coefficients::mean_field_pairing(c, x, Y, Z, n, pair);

      // Directional quotient of t -> b(x, law of Y + tZ), Richardson-refined:
      // (4 D(h/2) - D(h)) / 3 cancels the h^2 error of the central quotient.
      const auto drift_at = [&](double t) {
        measures::EmpiricalMeasure mu;
        mu.dim = d;
        mu.weights.assign(static_cast<std::size_t>(n), 1.0 / n);
        mu.points = Y;
        for (std::size_t i = 0; i < mu.points.size(); ++i) mu.points[i] += t * Z[i];
        return coefficients::eval_b(c, x, mu);
      };
      const double h = 0.05;
      const auto pp = drift_at(h), pm = drift_at(-h), hp = drift_at(h / 2),
                 hm = drift_at(-h / 2);
      for (int i = 0; i < d; ++i) {
        const double dh = (pp[i] - pm[i]) / (2.0 * h);
        const double dh2 = (hp[i] - hm[i]) / h;
        const double fd = (4.0 * dh2 - dh) / 3.0;
        const double rel = std::abs(fd - pair[i]) / std::max(std::abs(pair[i]), 1e-8);
        worst = std::max(worst, rel);
        ok = ok && rel <= 1e-4;
      }
    }
  }
  line(7, "measure derivative quotient", ok,
       "worst rel err " + fmt(worst) + " <= 1e-4 across 4 presets x 10 quotients");
}

// --- 8: compensator monotonicity and interior exactness ---------------------

void criterion_compensator_invariants() {
  rng::NormalStream gstream(11, rng::StreamTag::scratch, 1, 0);
  double worst_graph = 0.0, worst_pair = 0.0;
  int interior_steps = 0, interior_violations = 0;
  bool ok = true;

  for (int r = 0; r < 50; ++r) {
    const int d = (r % 3 == 2) ? 2 : 1;
    monotone::MonotoneOperator op;
    std::vector<double> xi(static_cast<std::size_t>(d));
    switch (r % 5) {
      case 0:
        op = monotone::nonnegative_orthant(d);
        xi.assign(static_cast<std::size_t>(d), 0.1);
        break;
      case 1:
        op = monotone::box_operator(std::vector<double>(static_cast<std::size_t>(d), 0.0),
                                    std::vector<double>(static_cast<std::size_t>(d), 0.5));
        xi.assign(static_cast<std::size_t>(d), 0.25);
        break;
      case 2:
        op = monotone::ball_operator(std::vector<double>(static_cast<std::size_t>(d), 0.25), 0.5);
        xi.assign(static_cast<std::size_t>(d), 0.25);
        break;
      case 3:
        op = monotone::l1_operator(d, 0.5);
        xi.assign(static_cast<std::size_t>(d), 0.8);
        break;
      default:
        op = monotone::quadratic_operator(d, 1.0);
        xi.assign(static_cast<std::size_t>(d), 0.8);
        break;
    }
    const auto c = (r % 2 == 0) ? coefficients::preset_linear_reflected(d)
                                : coefficients::preset_tanh_smooth(d);
    const auto grid = dynamics::make_grid(1.0, 100);
    const double dt = grid.dt();
    const double eps = (r % 4 == 0) ? 0.5 : 0.1;
    const auto ens = dynamics::solve_mv_ensemble(c, op, xi, eps, 4, grid,
                                                 dynamics::NoisePlan{1000 + static_cast<std::uint64_t>(r), 0});

    const auto samples = monotone::graph_sample(op, gstream, 3);
    for (const auto& path : ens.particles) {
      // Every graph pair (a, v in A(a)) sees a nonnegative discrete pairing
      // integral against (X, dK); roundoff is far below the dt slack.
      for (const auto& g : samples) {
        double acc = 0.0;
        for (int k = 0; k < grid.steps; ++k) {
          const auto x = path.state(k + 1);
          const auto k1 = path.compensator(k + 1), k0 = path.compensator(k);
          for (int i = 0; i < d; ++i)
            acc += (x[i] - g.x[i]) * ((k1[i] - k0[i]) - dt * g.y[i]);
        }
        worst_graph = std::min(worst_graph, acc);
        ok = ok && acc >= -dt;
      }

      // A state strictly inside the constraint set means the resolvent left
      // the predictor untouched, so the recorded increment is exactly zero.
      // Box clamps write the bound value exactly, so strict comparisons
      // classify every state; the ball projection rounds, so points within a
      // few ulps of the sphere are unclassifiable and stay out of the count.
      const bool componentwise = op.kind == monotone::OperatorKind::normal_cone_box;
      const bool ball = op.kind == monotone::OperatorKind::normal_cone_ball;
      const double r2_interior = op.radius * op.radius * (1.0 - 1e-14);
      if (componentwise || ball) {
        for (int k = 0; k < grid.steps; ++k) {
          const auto x = path.state(k + 1);
          const auto k1 = path.compensator(k + 1), k0 = path.compensator(k);
          if (componentwise) {
            for (int i = 0; i < d; ++i) {
              if (x[i] > op.lower[i] && x[i] < op.upper[i]) {
                ++interior_steps;
                if (k1[i] - k0[i] != 0.0) ++interior_violations;
              }
            }
          } else {
            double r2 = 0.0;
            for (int i = 0; i < d; ++i) {
              const double e = x[i] - op.center[i];
              r2 += e * e;
            }
            if (r2 < r2_interior) {
              ++interior_steps;
              for (int i = 0; i < d; ++i)
                if (k1[i] - k0[i] != 0.0) ++interior_violations;
            }
          }
        }
      }
    }

    // Two solutions under one operator: the compensator difference never
    // works against the state difference.
    for (int p = 0; p + 1 < ens.N; p += 2) {
      const auto& a = ens.particles[static_cast<std::size_t>(p)];
      const auto& b = ens.particles[static_cast<std::size_t>(p) + 1];
      double acc = 0.0;
      for (int k = 0; k < grid.steps; ++k) {
        const auto xa = a.state(k + 1), xb = b.state(k + 1);
        const auto ka1 = a.compensator(k + 1), ka0 = a.compensator(k);
        const auto kb1 = b.compensator(k + 1), kb0 = b.compensator(k);
        for (int i = 0; i < d; ++i)
          acc += (xa[i] - xb[i]) * ((ka1[i] - ka0[i]) - (kb1[i] - kb0[i]));
      }
      worst_pair = std::min(worst_pair, acc);
      ok = ok && acc >= -dt;
    }
  }
  ok = ok && interior_violations == 0 && interior_steps > 0;
  line(8, "compensator monotonicity", ok,
       "worst graph pairing " + fmt(worst_graph) + ", worst pair pairing " + fmt(worst_pair) +
           " >= -dt; " + std::to_string(interior_violations) + "/" +
           std::to_string(interior_steps) + " interior steps with nonzero increment");
}

// --- 9: skeleton stability in the control ----------------------------------

void criterion_skeleton_continuity() {
  rng::NormalStream stream(13, rng::StreamTag::scratch, 2, 0);
  const auto grid = dynamics::make_grid(1.0, 200);
  const char* names[] = {"linear-reflected", "tanh-smooth", "clt-quadratic", "brownian"};
  double worst_ratio = 0.0;
  bool ok = true;
  for (int t = 0; t < 50; ++t) {
    const auto c = coefficients::preset(names[t % 4], 1);
    const auto op = monotone::nonnegative_orthant(1);
    const std::vector<double> xi = {1.0};
    const auto x0 = dynamics::solve_limit_ode(c, op, xi, grid);

    auto h1 = dynamics::Control::zero(c.m, grid), h2 = h1;
    for (auto& v : h1.values) v = stream.normal();
    for (auto& v : h2.values) v = stream.normal();
    const auto y1 = dynamics::solve_skeleton(c, op, x0, h1, dynamics::SkeletonMode::ldp, grid);
    const auto y2 = dynamics::solve_skeleton(c, op, x0, h2, dynamics::SkeletonMode::ldp, grid);

    double sup2 = 0.0;
    for (int k = 0; k <= grid.steps; ++k) {
      const double e = y1.state(k)[0] - y2.state(k)[0];
      sup2 = std::max(sup2, e * e);
    }
    double l2 = 0.0;
    for (std::size_t i = 0; i < h1.values.size(); ++i) {
      const double e = h1.values[i] - h2.values[i];
      l2 += e * e;
    }
    l2 *= grid.dt();
    const double bound = c.L3 * std::exp(3.0 * c.L3 * grid.T) * l2 + 10.0 * grid.dt();
    worst_ratio = std::max(worst_ratio, sup2 / bound);
    ok = ok && sup2 <= bound;
  }
  line(9, "skeleton control continuity", ok,
       "worst sup-gap/bound ratio " + fmt(worst_ratio) + " <= 1 over 50 control pairs");
}

// --- 10: byte-identical artifacts across worker counts ----------------------

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool dirs_equal(const fs::path& a, const fs::path& b, std::string& why) {
  std::vector<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a))
    if (e.is_regular_file()) names_a.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    if (e.is_regular_file()) names_b.push_back(e.path().filename().string());
  std::sort(names_a.begin(), names_a.end());
  std::sort(names_b.begin(), names_b.end());
  if (names_a != names_b) {
    why = "file sets differ";
    return false;
  }
  if (names_a.empty()) {
    why = "no artifacts written";
    return false;
  }
  for (const auto& n : names_a)
    if (slurp(a / n) != slurp(b / n)) {
      why = n + " differs";
      return false;
    }
  return true;
}

void criterion_determinism(const char* cli) {
  if (cli == nullptr) {
    line(10, "determinism across workers", false,
         "command-line binary path missing: set MVMV_CLI_BIN or pass it as argv[1]");
    return;
  }
  const fs::path base = fs::temp_directory_path() / "mvmv_acceptance";
  fs::remove_all(base);
  fs::create_directories(base);

  const auto config = [&](const std::string& name, const std::string& body) {
    std::ofstream(base / name, std::ios::binary) << body;
    return (base / name).string();
  };
  const std::string small_linear = config("small_linear.json", R"({
    "preset": "linear-reflected", "T": 1.0, "dt": 0.05,
    "epsilons": [0.5, 0.25], "particles": 10, "replicas": 30,
    "path_dump": 2, "deltas": [0.25], "seed": 42
  })");
  const std::string small_clt = config("small_clt.json", R"({
    "preset": "clt-quadratic", "T": 1.0, "dt": 0.05,
    "epsilons": [0.5, 0.25], "particles": 10, "replicas": 30,
    "moment_orders": [1], "seed": 42
  })");
  const std::string small_mdp = config("small_mdp.json", R"({
    "preset": "linear-reflected", "T": 1.0, "dt": 0.05,
    "epsilons": [0.5, 0.25], "particles": 10, "replicas": 20,
    "deltas": [0.25], "seed": 42
  })");
  const std::string small_tail = config("small_tail.json", R"({
    "preset": "brownian", "operator": {"kind": "zero"}, "xi": [0.0],
    "T": 1.0, "dt": 0.05, "epsilons": [0.5, 0.25], "replicas": 40,
    "target": [0.4], "radius": 0.5, "control_segments": 8, "seed": 42
  })");
  const std::string small_rate = config("small_rate.json", R"({
    "preset": "brownian", "operator": {"kind": "zero"}, "xi": [0.0],
    "T": 1.0, "dt": 0.05, "mode": "mdp", "tolerance": 1e-9,
    "target": [1.0], "control_segments": 8, "seed": 42
  })");
  const std::string small_validate = config("small_validate.json", R"({
    "preset": "linear-reflected", "T": 1.0, "dt": 0.05, "probes": 200, "seed": 42
  })");

  const std::pair<std::string, std::string> jobs[] = {
      {"simulate", small_linear}, {"limit", small_linear},  {"convergence", small_linear},
      {"clt", small_clt},         {"ldp-tail", small_tail}, {"mdp-equiv", small_mdp},
      {"rate", small_rate},       {"validate", small_validate},
  };

  bool ok = true;
  std::string why = "all 8 commands byte-identical under --workers 1 vs 3";
  for (const auto& [sub, cfg] : jobs) {
    const fs::path out_a = base / sub / "a", out_b = base / sub / "b";
    fs::create_directories(out_a);
    fs::create_directories(out_b);
    const auto run = [&](const fs::path& out, int workers) {
      const std::string log = (out.string() + ".log");
      return std::system((std::string("\"") + cli + "\" " + sub + " -c " + cfg + " -o " +
                          out.string() + " --workers " + std::to_string(workers) + " > " + log +
                          " 2>&1")
                             .c_str());
    };
    const int rc_a = run(out_a, 1);
    const int rc_b = run(out_b, 3);
    std::string mismatch;
    if (rc_a == -1 || rc_b == -1 || rc_a != rc_b || !dirs_equal(out_a, out_b, mismatch)) {
      ok = false;
      why = sub + ": " + (mismatch.empty() ? "exit status differs" : mismatch);
      break;
    }
  }
  line(10, "determinism across workers", ok, why);
}

}  // namespace

int main(int argc, char** argv) {
  const char* cli = std::getenv("MVMV_CLI_BIN");
  if ((cli == nullptr || cli[0] == '\0') && argc > 1) cli = argv[1];

  criterion_convergence();
  criterion_clt_scaling();
  criterion_action_closed_forms();
  criterion_tail_probability();
  criterion_pair_gap_trend();
  criterion_transport_oracle();
  criterion_measure_derivative();
  criterion_compensator_invariants();
  criterion_skeleton_continuity();
  criterion_determinism(cli);

  std::printf("acceptance: %d/10 criteria passed\n", 10 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
