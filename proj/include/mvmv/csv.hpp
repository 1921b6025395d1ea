#pragma once
// CSV artifacts: solved paths, ensemble summaries, experiment series, and
// rate reports. Every number prints in shortest round-trip form through
// std::to_chars and rows end in '\n' regardless of platform, so a rerun with
// identical inputs overwrites each file byte for byte.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "mvmv/common.hpp"
#include "mvmv/dynamics.hpp"
#include "mvmv/harness.hpp"
#include "mvmv/rate.hpp"

namespace mvmv::csv {

using dynamics::Control;
using dynamics::Ensemble;
using dynamics::SolvedPath;
using dynamics::TimeGrid;

inline void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

inline void append_number(std::string& out, long long v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

// Columns: t, X_1..X_d, K_1..K_d, varK.
inline std::string path_csv(const SolvedPath& p) {
  std::string out = "t";
  for (int i = 1; i <= p.d; ++i) out += ",X_" + std::to_string(i);
  for (int i = 1; i <= p.d; ++i) out += ",K_" + std::to_string(i);
  out += ",varK\n";
  for (int k = 0; k <= p.grid.steps; ++k) {
    append_number(out, p.grid.time(k));
    for (double x : p.state(k)) {
      out += ',';
      append_number(out, x);
    }
    for (double x : p.compensator(k)) {
      out += ',';
      append_number(out, x);
    }
    out += ',';
    append_number(out, p.var_K[static_cast<std::size_t>(k)]);
    out += '\n';
  }
  return out;
}

// Columns: t, mean, second_moment, sup_stat. The reduced statistic is the
// Euclidean norm of the state, so mean and second_moment average |X| and
// |X|^2 over the ensemble and sup_stat is the largest |X|.
inline std::string ensemble_csv(const Ensemble& e) {
  std::string out = "t,mean,second_moment,sup_stat\n";
  for (int k = 0; k <= e.grid.steps; ++k) {
    double mean = 0.0, second = 0.0, sup = 0.0;
    for (int i = 0; i < e.N; ++i) {
      const double r = norm2(e.particles[static_cast<std::size_t>(i)].state(k));
      mean += r;
      second += r * r;
      sup = std::max(sup, r);
    }
    mean /= e.N;
    second /= e.N;
    append_number(out, e.grid.time(k));
    out += ',';
    append_number(out, mean);
    out += ',';
    append_number(out, second);
    out += ',';
    append_number(out, sup);
    out += '\n';
  }
  return out;
}

// Columns: epsilon, estimate, stderr, censored. Each series opens with a
// "series,<label>,," tag row and, when a log-log fit exists, closes with a
// "fit,<slope>,<intercept>,<r2>" trailer row.
inline std::string experiment_csv(const harness::DeviationReport& r) {
  std::string out = "epsilon,estimate,stderr,censored\n";
  for (const auto& s : r.series) {
    out += "series," + s.label + ",,\n";
    for (const auto& p : s.points) {
      append_number(out, p.epsilon);
      out += ',';
      append_number(out, p.estimate);
      out += ',';
      append_number(out, p.stderr_value);
      out += p.censored ? ",1\n" : ",0\n";
    }
    if (s.fit.valid) {
      out += "fit,";
      append_number(out, s.fit.slope);
      out += ',';
      append_number(out, s.fit.intercept);
      out += ',';
      append_number(out, s.fit.r2);
      out += '\n';
    }
  }
  return out;
}

inline std::string rate_report_csv(const rate::RateResult& r) {
  std::string out = "value,residual,iterations\n";
  append_number(out, r.value);
  out += ',';
  append_number(out, r.residual);
  out += ',';
  append_number(out, static_cast<long long>(r.iterations));
  out += '\n';
  return out;
}

// Columns: t, h_1..h_m; one row per step, t the left endpoint of the step.
inline std::string control_csv(const Control& h) {
  std::string out = "t";
  for (int j = 1; j <= h.m; ++j) out += ",h_" + std::to_string(j);
  out += '\n';
  for (int k = 0; k < h.grid.steps; ++k) {
    append_number(out, h.grid.time(k));
    for (double v : h.value(k)) {
      out += ',';
      append_number(out, v);
    }
    out += '\n';
  }
  return out;
}

inline void write_file(const std::filesystem::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + file.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw ConfigError("short write to " + file.string());
}

namespace detail {

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline double parse_field(const std::string& field, const std::filesystem::path& file,
                          int row) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = first + field.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError(file.string() + ": row " + std::to_string(row) +
                      ": not a number: '" + field + "'");
  return v;
}

}  // namespace detail

// Reads the state columns of a path CSV back onto a known grid. The header
// must start with t,X_1..X_d; later columns are ignored. Row count and the t
// column must match the grid (compensator data, if any, is not restored).
inline SolvedPath read_path_csv(const std::filesystem::path& file, const TimeGrid& grid) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open path file " + file.string());

  std::string line;
  if (!std::getline(in, line)) throw ConfigError(file.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_row(line);
  if (header.empty() || header[0] != "t")
    throw ConfigError(file.string() + ": header must start with column t");
  int d = 0;
  while (static_cast<std::size_t>(d) + 1 < header.size() &&
         header[static_cast<std::size_t>(d) + 1] == "X_" + std::to_string(d + 1))
    ++d;
  if (d == 0) throw ConfigError(file.string() + ": no X_1.. state columns in header");

  SolvedPath path;
  path.grid = grid;
  path.d = d;
  path.X.assign(static_cast<std::size_t>(grid.steps + 1) * d, 0.0);
  path.K.assign(path.X.size(), 0.0);
  path.var_K.assign(static_cast<std::size_t>(grid.steps) + 1, 0.0);

  const double t_slack = 1e-9 * std::max(1.0, grid.T);
  for (int k = 0; k <= grid.steps; ++k) {
    if (!std::getline(in, line))
      throw ConfigError(file.string() + ": expected " + std::to_string(grid.steps + 1) +
                        " data rows, found " + std::to_string(k));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto row = detail::split_row(line);
    if (row.size() < static_cast<std::size_t>(d) + 1)
      throw ConfigError(file.string() + ": row " + std::to_string(k + 1) + ": expected at least " +
                        std::to_string(d + 1) + " fields");
    const double t = detail::parse_field(row[0], file, k + 1);
    if (std::abs(t - grid.time(k)) > t_slack)
      throw ConfigError(file.string() + ": row " + std::to_string(k + 1) +
                        ": t column does not match the configured grid");
    for (int i = 0; i < d; ++i)
      path.X[static_cast<std::size_t>(k) * d + i] =
          detail::parse_field(row[static_cast<std::size_t>(i) + 1], file, k + 1);
  }
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty())
      throw ConfigError(file.string() + ": trailing data beyond row " +
                        std::to_string(grid.steps + 1));
  }
  return path;
}

}  // namespace mvmv::csv
