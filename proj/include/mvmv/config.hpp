#pragma once
// Experiment configuration: one JSON document per experiment, covering the
// coefficient preset, the reflection operator, the time grid, and the knobs
// of every runner. README.md documents the schema. Unknown fields are
// rejected so a typo fails loudly instead of silently taking a default.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvmv/coefficients.hpp"
#include "mvmv/common.hpp"
#include "mvmv/harness.hpp"
#include "mvmv/monotone.hpp"

namespace mvmv::config {

// Everything a subcommand can ask for. `plan` feeds the experiment runners;
// the remaining fields parameterize rate queries, tail balls, and artifacts.
struct ExperimentConfig {
  harness::ExperimentPlan plan;
  std::string preset_name;
  std::vector<double> target;  // tail-ball center / rate endpoint; empty = unset
  double ball_radius = 0.1;
  std::string mode = "ldp";  // skeleton mode for rate queries: "ldp" | "mdp"
  double tolerance = 1e-6;   // rate solve tolerance
  int control_segments = 64;
  int probes = 20000;  // hypothesis validation sample count
  std::string outdir = "out";
  int path_dump = 4;  // leading particles dumped as individual path CSVs
};

namespace detail {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& field, const std::string& what) {
  throw ConfigError("config field '" + field + "': " + what);
}

inline double number_at(const json& v, const std::string& field) {
  if (!v.is_number()) fail(field, "expected a number");
  return v.get<double>();
}

inline int int_at(const json& v, const std::string& field) {
  if (!v.is_number_integer()) fail(field, "expected an integer");
  return v.get<int>();
}

inline std::uint64_t seed_at(const json& v, const std::string& field) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    fail(field, "expected a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline std::string string_at(const json& v, const std::string& field) {
  if (!v.is_string()) fail(field, "expected a string");
  return v.get<std::string>();
}

inline std::vector<double> number_list_at(const json& v, const std::string& field) {
  // A bare number is accepted as a one-entry list.
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array() || v.empty()) fail(field, "expected a number or a nonempty array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number()) fail(field, "expected numeric entries");
    out.push_back(e.get<double>());
  }
  return out;
}

inline std::vector<int> int_list_at(const json& v, const std::string& field) {
  if (v.is_number_integer()) return {v.get<int>()};
  if (!v.is_array() || v.empty()) fail(field, "expected an integer or a nonempty array of integers");
  std::vector<int> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number_integer()) fail(field, "expected integer entries");
    out.push_back(e.get<int>());
  }
  return out;
}

inline monotone::MonotoneOperator operator_at(const json& v, int d) {
  if (!v.is_object()) fail("operator", "expected an object");
  std::string kind;
  std::optional<std::vector<double>> lower, upper, center;
  std::optional<double> radius, scale;
  for (const auto& [key, val] : v.items()) {
    const std::string field = "operator." + key;
    if (key == "kind") kind = string_at(val, field);
    else if (key == "lower") lower = number_list_at(val, field);
    else if (key == "upper") upper = number_list_at(val, field);
    else if (key == "center") center = number_list_at(val, field);
    else if (key == "radius") radius = number_at(val, field);
    else if (key == "scale") scale = number_at(val, field);
    else fail(field, "unknown field");
  }
  if (kind.empty()) fail("operator.kind", "required");

  const auto reject = [&](const char* what, bool present) {
    if (present) fail("operator", std::string("'") + what + "' does not apply to kind '" + kind + "'");
  };
  if (kind == "zero" || kind == "orthant") {
    reject("lower", lower.has_value());
    reject("upper", upper.has_value());
    reject("center", center.has_value());
    reject("radius", radius.has_value());
    reject("scale", scale.has_value());
    return kind == "zero" ? monotone::zero_operator(d) : monotone::nonnegative_orthant(d);
  }
  if (kind == "box") {
    reject("center", center.has_value());
    reject("radius", radius.has_value());
    reject("scale", scale.has_value());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> lo = lower.value_or(std::vector<double>(static_cast<std::size_t>(d), -inf));
    std::vector<double> hi = upper.value_or(std::vector<double>(static_cast<std::size_t>(d), inf));
    if (lo.size() == 1 && d > 1) lo.assign(static_cast<std::size_t>(d), lo[0]);
    if (hi.size() == 1 && d > 1) hi.assign(static_cast<std::size_t>(d), hi[0]);
    if (static_cast<int>(lo.size()) != d || static_cast<int>(hi.size()) != d)
      fail("operator", "box bounds must have one entry per dimension");
    return monotone::box_operator(std::move(lo), std::move(hi));
  }
  if (kind == "ball") {
    reject("lower", lower.has_value());
    reject("upper", upper.has_value());
    reject("scale", scale.has_value());
    if (!radius) fail("operator.radius", "required for kind 'ball'");
    std::vector<double> c = center.value_or(std::vector<double>(static_cast<std::size_t>(d), 0.0));
    if (c.size() == 1 && d > 1) c.assign(static_cast<std::size_t>(d), c[0]);
    if (static_cast<int>(c.size()) != d) fail("operator.center", "must have one entry per dimension");
    return monotone::ball_operator(std::move(c), *radius);
  }
  if (kind == "l1" || kind == "quadratic") {
    reject("lower", lower.has_value());
    reject("upper", upper.has_value());
    reject("center", center.has_value());
    reject("radius", radius.has_value());
    if (!scale) fail("operator.scale", std::string("required for kind '") + kind + "'");
    return kind == "l1" ? monotone::l1_operator(d, *scale) : monotone::quadratic_operator(d, *scale);
  }
  fail("operator.kind", "unknown kind '" + kind + "' (zero, orthant, box, ball, l1, quadratic)");
}

inline coefficients::CoefficientSet build_coefficients(const std::string& preset, int d,
                                                       std::optional<double> interaction,
                                                       std::optional<double> sigma0) {
  if (preset == "linear-reflected")
    return coefficients::preset_linear_reflected(d, interaction.value_or(0.5),
                                                 sigma0.value_or(0.4));
  if (preset == "brownian") {
    if (interaction) fail("overrides.interaction", "preset 'brownian' has no interaction knob");
    return coefficients::preset_brownian(d, sigma0.value_or(1.0));
  }
  if (preset == "tanh-smooth") {
    if (sigma0) fail("overrides.sigma0", "preset 'tanh-smooth' has no sigma0 knob");
    return coefficients::preset_tanh_smooth(d, interaction.value_or(0.3));
  }
  if (preset == "clt-quadratic")
    return coefficients::preset_clt_quadratic(d, interaction.value_or(0.4), sigma0.value_or(0.5));
  fail("preset",
       "unknown preset '" + preset +
           "' (linear-reflected, brownian, tanh-smooth, clt-quadratic)");
}

}  // namespace detail

// Parses and validates a configuration file. Defaults: dt = 1e-3 * T,
// particles = 2000, replicas = 200, kappa = 0.25, epsilons = {1e-1, 1e-2,
// 1e-3}, xi = (1,..,1), operator = nonnegative orthant.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config file not found: " + path);

  detail::json doc;
  try {
    doc = detail::json::parse(in);
  } catch (const detail::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config " + path + ": top level must be a JSON object");

  std::string preset;
  int dimension = 1;
  std::optional<double> interaction, sigma0;
  std::optional<std::vector<double>> xi;
  double T = 0.0;
  std::optional<double> dt;
  bool have_T = false;
  const detail::json* op_doc = nullptr;

  ExperimentConfig cfg;
  auto& plan = cfg.plan;
  plan.epsilons = {1e-1, 1e-2, 1e-3};

  for (const auto& [key, val] : doc.items()) {
    if (key == "preset") preset = detail::string_at(val, key);
    else if (key == "dimension") dimension = detail::int_at(val, key);
    else if (key == "overrides") {
      if (!val.is_object()) detail::fail(key, "expected an object");
      for (const auto& [okey, oval] : val.items()) {
        const std::string field = "overrides." + okey;
        if (okey == "interaction") interaction = detail::number_at(oval, field);
        else if (okey == "sigma0") sigma0 = detail::number_at(oval, field);
        else detail::fail(field, "unknown field");
      }
    } else if (key == "operator") op_doc = &val;
    else if (key == "xi") xi = detail::number_list_at(val, key);
    else if (key == "T") { T = detail::number_at(val, key); have_T = true; }
    else if (key == "dt") dt = detail::number_at(val, key);
    else if (key == "epsilons") plan.epsilons = detail::number_list_at(val, key);
    else if (key == "particles") plan.particles = detail::int_at(val, key);
    else if (key == "replicas") plan.replicas = detail::int_at(val, key);
    else if (key == "seed") plan.seed = detail::seed_at(val, key);
    else if (key == "kappa") plan.kappa = detail::number_at(val, key);
    else if (key == "moment_orders") plan.moment_orders = detail::int_list_at(val, key);
    else if (key == "deltas") plan.deltas = detail::number_list_at(val, key);
    else if (key == "target") cfg.target = detail::number_list_at(val, key);
    else if (key == "radius") cfg.ball_radius = detail::number_at(val, key);
    else if (key == "mode") cfg.mode = detail::string_at(val, key);
    else if (key == "tolerance") cfg.tolerance = detail::number_at(val, key);
    else if (key == "control_segments") cfg.control_segments = detail::int_at(val, key);
    else if (key == "probes") cfg.probes = detail::int_at(val, key);
    else if (key == "outdir") cfg.outdir = detail::string_at(val, key);
    else if (key == "path_dump") cfg.path_dump = detail::int_at(val, key);
    else throw ConfigError("config: unknown field '" + key + "'");
  }

  if (preset.empty()) detail::fail("preset", "required");
  if (!have_T) detail::fail("T", "required");
  if (dimension < 1) detail::fail("dimension", "must be a positive integer");
  if (!(T > 0.0)) detail::fail("T", "must be positive");

  cfg.preset_name = preset;
  plan.coeffs = detail::build_coefficients(preset, dimension, interaction, sigma0);

  const double step_len = dt.value_or(1e-3 * T);
  if (!(step_len > 0.0) || step_len > T) detail::fail("dt", "must lie in (0, T]");
  const int steps = static_cast<int>(std::llround(T / step_len));
  plan.grid = dynamics::make_grid(T, std::max(1, steps));

  plan.xi = xi.value_or(std::vector<double>(static_cast<std::size_t>(dimension), 1.0));
  plan.op = op_doc != nullptr ? detail::operator_at(*op_doc, dimension)
                              : monotone::nonnegative_orthant(dimension);

  if (cfg.mode != "ldp" && cfg.mode != "mdp")
    detail::fail("mode", "must be 'ldp' or 'mdp'");
  if (!(cfg.tolerance > 0.0)) detail::fail("tolerance", "must be positive");
  if (cfg.control_segments < 1) detail::fail("control_segments", "must be a positive integer");
  if (cfg.probes < 100) detail::fail("probes", "must be at least 100");
  if (cfg.path_dump < 0) detail::fail("path_dump", "must be nonnegative");
  if (!(cfg.ball_radius > 0.0)) detail::fail("radius", "must be positive");
  if (!cfg.target.empty() && static_cast<int>(cfg.target.size()) != dimension)
    detail::fail("target", "must have one entry per dimension");

  harness::validate_plan(plan, /*slope_experiment=*/false);
  return cfg;
}

// The plan alone, for callers that only run experiments.
inline harness::ExperimentPlan parse_config(const std::string& path) {
  return load_config(path).plan;
}

}  // namespace mvmv::config
