#pragma once
// Batch front end. Eight subcommands share one JSON experiment configuration;
// artifacts are CSV tables plus versioned JSON summaries inside the output
// directory, and the process exit status carries the verdict: 0 pass, 1 a
// well-posed run whose check failed, 2 a malformed or broken run. Timing goes
// to standard error only, so identical inputs rewrite identical artifacts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvmv/coefficients.hpp"
#include "mvmv/common.hpp"
#include "mvmv/config.hpp"
#include "mvmv/csv.hpp"
#include "mvmv/dynamics.hpp"
#include "mvmv/harness.hpp"
#include "mvmv/rate.hpp"
#include "mvmv/rng.hpp"

namespace mvmv::cli {

constexpr int schema_version = 1;

namespace detail {

using nlohmann::ordered_json;

// Flags shared by every subcommand, plus the rate-only extras.
struct Invocation {
  std::string config;
  std::string outdir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  std::vector<double> target;
  std::string tube;
};

inline config::ExperimentConfig load(const Invocation& inv) {
  auto cfg = config::load_config(inv.config);
  if (inv.seed_set) cfg.plan.seed = inv.seed;
  if (inv.workers > 0) cfg.plan.workers = inv.workers;
  if (!inv.outdir.empty()) cfg.outdir = inv.outdir;
  std::filesystem::create_directories(cfg.outdir);
  return cfg;
}

inline std::string fmt(double v) {
  std::string s;
  csv::append_number(s, v);
  return s;
}

inline void write_json(const std::filesystem::path& file, const ordered_json& doc) {
  csv::write_file(file, doc.dump(2) + "\n");
}

inline void note_written(const std::filesystem::path& file) {
  std::printf("wrote %s\n", file.string().c_str());
}

inline void note_runtime(double seconds) {
  std::fprintf(stderr, "runtime: %.2fs\n", seconds);
}

inline ordered_json report_json(const harness::DeviationReport& r) {
  ordered_json out;
  out["schema_version"] = schema_version;
  out["experiment"] = r.experiment;
  out["pass"] = r.pass;
  if (r.has_reference) out["reference"] = r.reference;
  auto series = ordered_json::array();
  for (const auto& s : r.series) {
    ordered_json sj;
    sj["label"] = s.label;
    sj["pass"] = s.pass;
    sj["degenerate"] = s.degenerate;
    if (!s.note.empty()) sj["note"] = s.note;
    if (s.fit.valid) {
      sj["fit"] = ordered_json{{"slope", s.fit.slope},
                               {"intercept", s.fit.intercept},
                               {"r2", s.fit.r2}};
    }
    auto points = ordered_json::array();
    for (const auto& p : s.points) {
      ordered_json pj;
      pj["epsilon"] = p.epsilon;
      pj["estimate"] = p.estimate;
      pj["stderr"] = p.stderr_value;
      pj["censored"] = p.censored;
      if (std::isfinite(p.eps_log)) pj["eps_log"] = p.eps_log;
      points.push_back(std::move(pj));
    }
    sj["points"] = std::move(points);
    series.push_back(std::move(sj));
  }
  out["series"] = std::move(series);
  return out;
}

inline void print_report(const harness::DeviationReport& r) {
  if (r.has_reference) std::printf("reference: %s\n", fmt(r.reference).c_str());
  for (const auto& s : r.series) {
    int censored = 0;
    for (const auto& p : s.points) censored += p.censored ? 1 : 0;
    std::string line = "series " + s.label + ": " + std::to_string(s.points.size()) + " points";
    if (censored > 0) line += " (" + std::to_string(censored) + " censored)";
    if (s.fit.valid) line += ", slope " + fmt(s.fit.slope) + ", r2 " + fmt(s.fit.r2);
    if (!s.note.empty()) line += ", " + s.note;
    line += s.pass ? " [pass]" : " [fail]";
    std::printf("%s\n", line.c_str());
  }
  std::printf("verdict: %s\n", r.pass ? "pass" : "fail");
}

// Writes <name>.csv and <name>_summary.json for a finished experiment and
// maps its verdict to the exit status.
inline int finish_experiment(const config::ExperimentConfig& cfg, const std::string& name,
                             const harness::DeviationReport& report) {
  const std::filesystem::path dir(cfg.outdir);
  const auto table = dir / (name + ".csv");
  const auto summary = dir / (name + "_summary.json");
  csv::write_file(table, csv::experiment_csv(report));
  write_json(summary, report_json(report));
  note_written(table);
  note_written(summary);
  print_report(report);
  note_runtime(report.runtime_seconds);
  return report.pass ? 0 : 1;
}

inline int cmd_simulate(const Invocation& inv) {
  const auto cfg = load(inv);
  const auto& plan = cfg.plan;
  const double eps = plan.epsilons.front();
  const auto ens = dynamics::solve_mv_ensemble(plan.coeffs, plan.op, plan.xi, eps,
                                               plan.particles, plan.grid,
                                               dynamics::NoisePlan{plan.seed, 0});
  const std::filesystem::path dir(cfg.outdir);
  const auto summary = dir / "ensemble.csv";
  csv::write_file(summary, csv::ensemble_csv(ens));
  note_written(summary);
  const int dumps = std::min(cfg.path_dump, plan.particles);
  for (int i = 0; i < dumps; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "path_%04d.csv", i);
    const auto file = dir / name;
    csv::write_file(file, csv::path_csv(ens.particles[static_cast<std::size_t>(i)]));
    note_written(file);
  }
  std::printf("ensemble: %d particles, epsilon %s, %d steps\n", plan.particles,
              fmt(eps).c_str(), plan.grid.steps);
  return 0;
}

inline int cmd_limit(const Invocation& inv) {
  const auto cfg = load(inv);
  const auto& plan = cfg.plan;
  const auto x0 = dynamics::solve_limit_ode(plan.coeffs, plan.op, plan.xi, plan.grid);
  const auto file = std::filesystem::path(cfg.outdir) / "limit.csv";
  csv::write_file(file, csv::path_csv(x0));
  note_written(file);
  return 0;
}

inline int cmd_convergence(const Invocation& inv) {
  const auto cfg = load(inv);
  return finish_experiment(cfg, "convergence", harness::run_convergence(cfg.plan));
}

inline int cmd_clt(const Invocation& inv) {
  const auto cfg = load(inv);
  return finish_experiment(cfg, "clt", harness::run_clt(cfg.plan));
}

inline int cmd_ldp_tail(const Invocation& inv) {
  const auto cfg = load(inv);
  if (cfg.target.empty())
    throw ConfigError("config field 'target': required for ldp-tail");
  rate::RateOptions opt;
  opt.control_segments = cfg.control_segments;
  const auto report =
      harness::run_ldp_tail(cfg.plan, cfg.target, cfg.ball_radius, /*rate_tol=*/1e-4, opt);
  return finish_experiment(cfg, "ldp_tail", report);
}

inline int cmd_mdp_equiv(const Invocation& inv) {
  const auto cfg = load(inv);
  return finish_experiment(cfg, "mdp_equiv", harness::run_mdp_equivalence(cfg.plan));
}

inline int cmd_rate(const Invocation& inv) {
  auto cfg = load(inv);
  if (!inv.target.empty()) cfg.target = inv.target;
  const bool tube = !inv.tube.empty();
  if (!tube && cfg.target.empty())
    throw ConfigError("rate: provide --target, config field 'target', or --tube <path.csv>");

  const auto& plan = cfg.plan;
  const auto mode =
      cfg.mode == "mdp" ? dynamics::SkeletonMode::mdp : dynamics::SkeletonMode::ldp;
  const auto x0 = dynamics::solve_limit_ode(plan.coeffs, plan.op, plan.xi, plan.grid);
  rate::RateOptions opt;
  opt.control_segments = cfg.control_segments;

  const std::filesystem::path dir(cfg.outdir);
  ordered_json summary;
  summary["schema_version"] = schema_version;
  summary["mode"] = cfg.mode;
  summary["query"] = tube ? "tube" : "endpoint";

  rate::RateResult res;
  try {
    if (tube) {
      const auto phi = csv::read_path_csv(inv.tube, plan.grid);
      if (phi.d != plan.coeffs.d)
        throw ConfigError("tube path dimension does not match the configuration");
      res = rate::rate_tube(plan.coeffs, plan.op, x0, mode, phi, cfg.tolerance, opt);
    } else {
      res = rate::rate_endpoint(plan.coeffs, plan.op, x0, mode, cfg.target, cfg.tolerance, opt);
    }
  } catch (const InfeasibleError& e) {
    summary["infeasible"] = true;
    summary["message"] = std::string(e.what());
    const auto file = dir / "rate_summary.json";
    write_json(file, summary);
    note_written(file);
    std::printf("verdict: infeasible (action minimum is infinite)\n");
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return 1;
  }

  summary["infeasible"] = false;
  summary["value"] = res.value;
  summary["residual"] = res.residual;
  summary["iterations"] = res.iterations;
  summary["converged"] = res.converged;

  const auto table = dir / "rate.csv";
  const auto control = dir / "rate_control.csv";
  const auto file = dir / "rate_summary.json";
  csv::write_file(table, csv::rate_report_csv(res));
  csv::write_file(control, csv::control_csv(res.control));
  write_json(file, summary);
  note_written(table);
  note_written(control);
  note_written(file);
  std::printf("value %s, residual %s, %d iterations\n", fmt(res.value).c_str(),
              fmt(res.residual).c_str(), res.iterations);
  std::printf("verdict: %s\n", res.converged ? "pass" : "fail");
  return res.converged ? 0 : 1;
}

inline int cmd_validate(const Invocation& inv) {
  const auto cfg = load(inv);
  rng::NormalStream stream(cfg.plan.seed, rng::StreamTag::probes, 0, 0);
  const auto rep = coefficients::validate_hypotheses(cfg.plan.coeffs, cfg.probes, stream);

  ordered_json out;
  out["schema_version"] = schema_version;
  out["preset"] = cfg.preset_name;
  out["probe_count"] = rep.probe_count;
  out["probe_radius"] = rep.probe_radius;
  out["family_certified_h4"] = rep.family_certified_h4;
  out["pass"] = rep.pass;
  auto checks = ordered_json::array();
  for (const auto& c : rep.checks) {
    checks.push_back(ordered_json{{"label", c.label}, {"worst_ratio", c.worst_ratio},
                                  {"pass", c.pass}});
  }
  out["checks"] = std::move(checks);

  const auto file = std::filesystem::path(cfg.outdir) / "hypothesis_report.json";
  write_json(file, out);
  note_written(file);
  for (const auto& c : rep.checks)
    std::printf("check %s: worst ratio %s %s\n", c.label.c_str(), fmt(c.worst_ratio).c_str(),
                c.pass ? "[pass]" : "[fail]");
  std::printf("verdict: %s\n", rep.pass ? "pass" : "fail");
  return rep.pass ? 0 : 1;
}

}  // namespace detail

inline int run(int argc, char** argv) {
  CLI::App app{"numerical toolkit for reflected mean-field dynamics"};
  app.require_subcommand(1);

  detail::Invocation inv;
  const auto add_shared = [&inv](CLI::App* cmd) {
    cmd->add_option("-c,--config", inv.config, "experiment configuration (JSON)")->required();
    cmd->add_option("-o,--outdir", inv.outdir, "output directory (overrides the config)");
    cmd->add_option("--seed", inv.seed, "master seed (overrides the config)");
    cmd->add_option("--workers", inv.workers,
                    "worker threads (default: MVMV_WORKERS, then 1)");
  };

  add_shared(app.add_subcommand("simulate", "run one noisy ensemble and dump CSV artifacts"));
  add_shared(app.add_subcommand("limit", "solve the zero-noise limit path"));
  add_shared(app.add_subcommand("convergence", "mean-square gap to the limit across scales"));
  add_shared(app.add_subcommand("clt", "fluctuation-pair moments across scales"));
  add_shared(app.add_subcommand("ldp-tail", "terminal tail decay against the action minimum"));
  add_shared(app.add_subcommand("mdp-equiv", "moderate-regime pair tails across scales"));
  auto* rate_cmd = app.add_subcommand("rate", "least-action control for a target or a tube");
  add_shared(rate_cmd);
  rate_cmd->add_option("--target", inv.target, "terminal target point")->expected(-1);
  rate_cmd->add_option("--tube", inv.tube, "path CSV to follow instead of a point target");
  add_shared(app.add_subcommand("validate", "probe the declared coefficient constants"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  inv.seed_set = sub->count("--seed") > 0;
  const std::string name = sub->get_name();
  try {
    if (name == "simulate") return detail::cmd_simulate(inv);
    if (name == "limit") return detail::cmd_limit(inv);
    if (name == "convergence") return detail::cmd_convergence(inv);
    if (name == "clt") return detail::cmd_clt(inv);
    if (name == "ldp-tail") return detail::cmd_ldp_tail(inv);
    if (name == "mdp-equiv") return detail::cmd_mdp_equiv(inv);
    if (name == "rate") return detail::cmd_rate(inv);
    if (name == "validate") return detail::cmd_validate(inv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  std::fprintf(stderr, "error: unknown command '%s'\n", name.c_str());
  return 2;
}

}  // namespace mvmv::cli
