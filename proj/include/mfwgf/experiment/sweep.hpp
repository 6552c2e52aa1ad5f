#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfwgf/core/parallel.hpp"
#include "mfwgf/core/stats.hpp"
#include "mfwgf/experiment/run.hpp"

namespace mfwgf::cli {

struct SweepMember {
  std::string label;
  /// Dotted parameter path -> value; "seed" re-seeds the whole run.
  json set = json::object();
};

inline std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

inline std::vector<SweepMember> sweep_members(const json& s) {
  check_keys(s, "sweep", {"parameter", "values", "grid", "runs", "workers", "scaling_key"});
  const int forms = static_cast<int>(s.contains("parameter")) + static_cast<int>(s.contains("grid")) +
                    static_cast<int>(s.contains("runs"));
  require(forms == 1, ErrorCode::kConfig, "sweep: give exactly one of parameter/values, grid or runs");
  std::vector<SweepMember> out;
  if (s.contains("parameter")) {
    const auto param = get_required<std::string>(s, "parameter", "sweep");
    require(s.contains("values") && s.at("values").is_array() && !s.at("values").empty(), ErrorCode::kConfig,
            "sweep.values must be a non-empty array");
    for (const auto& v : s.at("values")) out.push_back({param + "=" + value_label(v), {{param, v}}});
  } else if (s.contains("grid")) {
    const json& g = s.at("grid");
    require(g.is_object() && !g.empty(), ErrorCode::kConfig, "sweep.grid must be a non-empty object");
    out.push_back({"", json::object()});
    for (auto it = g.begin(); it != g.end(); ++it) {
      require(it.value().is_array() && !it.value().empty(), ErrorCode::kConfig,
              "sweep.grid." + it.key() + " must be a non-empty array");
      std::vector<SweepMember> next;
      for (const auto& m : out)
        for (const auto& v : it.value()) {
          SweepMember c = m;
          c.set[it.key()] = v;
          c.label += (c.label.empty() ? "" : ",") + it.key() + "=" + value_label(v);
          next.push_back(std::move(c));
        }
      out = std::move(next);
    }
  } else {
    require(s.at("runs").is_array() && !s.at("runs").empty(), ErrorCode::kConfig,
            "sweep.runs must be a non-empty array");
    std::size_t i = 0;
    for (const auto& r : s.at("runs")) {
      const std::string where = "sweep.runs[" + std::to_string(i++) + "]";
      check_keys(r, where, {"label", "set"});
      SweepMember m{get_or<std::string>(r, "label", "", where), sub(r, "set")};
      require(m.set.is_object(), ErrorCode::kConfig, where + ".set must be an object");
      if (m.label.empty())
        for (auto it = m.set.begin(); it != m.set.end(); ++it)
          m.label += (m.label.empty() ? "" : ",") + it.key() + "=" + value_label(it.value());
      out.push_back(std::move(m));
    }
  }
  return out;
}

inline json member_config(const json& base, const SweepMember& m) {
  json cfg = base;
  cfg.erase("sweep");
  cfg.erase("check");
  for (auto it = m.set.begin(); it != m.set.end(); ++it) {
    if (it.key() == "seed") apply_seed(cfg, it.value().get<std::uint64_t>());
    else set_path(cfg, it.key(), it.value());
  }
  return cfg;
}

struct SweepRow {
  std::string label;
  json set;
  json config;
  double snr = std::numeric_limits<double>::quiet_NaN();
  double snr_dmin = std::numeric_limits<double>::quiet_NaN();
  WindowFit fit;
  std::size_t window_end_k = 0;
  double terminal_statistical = std::numeric_limits<double>::quiet_NaN();
  double terminal_numerical = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  std::string error;
  std::vector<std::string> warnings;
};

struct SnrGroup {
  double snr = 0.0;
  std::vector<std::size_t> members;
  double mean_slope = 0.0;
  /// Largest |s_i - s_j| / max(|s_i|, |s_j|) within the group.
  double max_rel_diff = 0.0;
};

struct SweepAnalysis {
  std::vector<SnrGroup> groups;
  /// Group mean slopes strictly decrease as SNR grows.
  bool monotone = false;
  double max_pair_rel_diff = 0.0;
  std::size_t failures = 0;
  /// Terminal statistical error vs scaling_key (log-log), when requested.
  std::string scaling_key;
  std::vector<std::pair<double, double>> scaling_points;
  std::optional<LinearFit> scaling_fit;
};

inline SweepAnalysis analyze_sweep(const std::vector<SweepRow>& rows, const std::string& scaling_key) {
  SweepAnalysis a;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].ok) {
      ++a.failures;
      continue;
    }
    if (!rows[i].fit.found || std::isnan(rows[i].snr)) continue;
    auto g = std::find_if(a.groups.begin(), a.groups.end(), [&](const SnrGroup& x) {
      return std::abs(x.snr - rows[i].snr) <= 1e-9 * std::max(1.0, std::abs(x.snr));
    });
    if (g == a.groups.end()) {
      a.groups.push_back({rows[i].snr, {}});
      g = a.groups.end() - 1;
    }
    g->members.push_back(i);
  }
  std::sort(a.groups.begin(), a.groups.end(), [](const SnrGroup& x, const SnrGroup& y) { return x.snr < y.snr; });
  for (auto& g : a.groups) {
    double s = 0.0;
    for (auto i : g.members) s += rows[i].fit.fit.slope;
    g.mean_slope = s / static_cast<double>(g.members.size());
    for (auto i : g.members)
      for (auto j : g.members) {
        const double si = rows[i].fit.fit.slope, sj = rows[j].fit.fit.slope;
        const double den = std::max(std::abs(si), std::abs(sj));
        if (den > 0.0) g.max_rel_diff = std::max(g.max_rel_diff, std::abs(si - sj) / den);
      }
    a.max_pair_rel_diff = std::max(a.max_pair_rel_diff, g.max_rel_diff);
  }
  a.monotone = a.groups.size() >= 2 && a.failures == 0;
  for (std::size_t g = 1; g < a.groups.size(); ++g)
    a.monotone = a.monotone && a.groups[g].mean_slope < a.groups[g - 1].mean_slope;
  a.scaling_key = scaling_key;
  if (!scaling_key.empty()) {
    std::map<double, std::vector<double>> by;
    for (const auto& r : rows) {
      if (!r.ok) continue;
      const json* v = find_path(r.config, scaling_key);
      require(v && v->is_number(), ErrorCode::kConfig, "sweep.scaling_key '" + scaling_key + "' is not numeric");
      by[v->get<double>()].push_back(r.terminal_statistical);
    }
    std::vector<double> lx, ly;
    for (const auto& [x, ys] : by) {
      const double m = mean(ys);
      a.scaling_points.emplace_back(x, m);
      lx.push_back(std::log(x));
      ly.push_back(std::log(m));
    }
    if (lx.size() >= 2) a.scaling_fit = linear_fit(lx, ly);
  }
  return a;
}

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepAnalysis analysis;
};

/// Runs every member (in a worker pool of `sweep.workers`); a failing member is recorded and the sweep continues.
/// When out is given each member writes its run files under runs/<label>/.
inline SweepResult execute_sweep(const json& cfg, OutputDir* out) {
  const json& s = sub(cfg, "sweep");
  const auto members = sweep_members(s);
  const int workers = get_or<int>(s, "workers", 1, "sweep");
  require(workers >= 1, ErrorCode::kConfig, "sweep.workers must be >= 1");
  SweepResult res;
  res.rows.resize(members.size());
  parallel_for(members.size(), workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      SweepRow& row = res.rows[i];
      row.label = members[i].label;
      row.set = members[i].set;
      try {
        row.config = member_config(cfg, members[i]);
        validate_top_level(row.config);
        const Seeds seeds = resolve_seeds(row.config);
        with_problem(row.config, seeds, [&](const auto& p) {
          const RunResult r = execute_run(p, row.config, seeds);
          row.snr = r.snr;
          row.snr_dmin = r.snr_dmin;
          row.fit = r.fit;
          row.window_end_k = r.window_end_k();
          row.terminal_statistical = r.terminal_statistical();
          row.terminal_numerical = r.terminal_numerical();
          row.warnings = r.warnings;
          if (out) {
            OutputDir sub_out(out->dir() / "runs" / safe_label(row.label), true);
            write_run(sub_out, r, p, row.config, seeds, "sweep-member");
          }
          return 0;
        });
        row.ok = true;
      } catch (const std::exception& ex) {
        row.ok = false;
        row.error = ex.what();
      }
    }
  });
  res.analysis = analyze_sweep(res.rows, get_or<std::string>(s, "scaling_key", "", "sweep"));
  return res;
}

inline std::string slopes_csv(const SweepResult& r) {
  CsvWriter w({"label", "snr", "snr_dmin", "slope", "r2", "window_points", "window_end_k",
               "terminal_numerical_error_sq", "terminal_statistical_error_sq", "status", "error"});
  for (const auto& row : r.rows) {
    const bool f = row.ok && row.fit.found;
    w.row({row.label, num(row.snr), num(row.snr_dmin), f ? num(row.fit.fit.slope) : "", f ? num(row.fit.fit.r2) : "",
           std::to_string(row.fit.window), std::to_string(row.window_end_k), num(row.terminal_numerical),
           num(row.terminal_statistical), row.ok ? (row.fit.found ? "ok" : "no-window") : "failed", row.error});
  }
  return w.str();
}

inline json sweep_json(const SweepResult& r) {
  json groups = json::array();
  for (const auto& g : r.analysis.groups) {
    json labels = json::array();
    for (auto i : g.members) labels.push_back(r.rows[i].label);
    groups.push_back({{"snr", g.snr}, {"members", labels}, {"mean_slope", g.mean_slope},
                      {"max_rel_diff", g.max_rel_diff}});
  }
  json runs = json::array();
  for (const auto& row : r.rows)
    runs.push_back({{"label", row.label},
                    {"set", row.set},
                    {"ok", row.ok},
                    {"error", row.error},
                    {"snr", num_json(row.snr)},
                    {"fit", {{"found", row.fit.found},
                             {"slope", num_json(row.fit.found ? row.fit.fit.slope : std::nan(""))},
                             {"r2", num_json(row.fit.found ? row.fit.fit.r2 : std::nan(""))},
                             {"points", row.fit.window},
                             {"window_end_k", row.window_end_k}}},
                    {"terminal_statistical_error_sq", num_json(row.terminal_statistical)},
                    {"warnings", row.warnings}});
  json j = {{"runs", runs},
            {"snr_groups", groups},
            {"monotone_decreasing", r.analysis.monotone},
            {"max_pair_rel_diff", r.analysis.max_pair_rel_diff},
            {"failures", r.analysis.failures}};
  if (!r.analysis.scaling_key.empty()) {
    json pts = json::array();
    for (const auto& [x, y] : r.analysis.scaling_points) pts.push_back({{"x", x}, {"mean_terminal_statistical", y}});
    j["scaling"] = {{"key", r.analysis.scaling_key},
                    {"points", pts},
                    {"exponent", num_json(r.analysis.scaling_fit ? r.analysis.scaling_fit->slope : std::nan(""))},
                    {"r2", num_json(r.analysis.scaling_fit ? r.analysis.scaling_fit->r2 : std::nan(""))}};
  }
  return j;
}

inline json cmd_sweep(const json& cfg, bool force) {
  require(cfg.contains("sweep"), ErrorCode::kConfig, "sweep: config needs a sweep block");
  OutputDir out(output_dir_of(cfg), force);
  const SweepResult r = execute_sweep(cfg, &out);
  out.write("slopes.csv", slopes_csv(r));
  const json j = sweep_json(r);
  out.write_json("sweep.json", j);
  std::vector<std::string> warnings;
  for (const auto& row : r.rows)
    if (!row.ok) warnings.push_back(row.label + ": " + row.error);
  out.write_json("manifest.json", make_manifest("sweep", cfg, resolve_seeds(cfg), json::object(), out.hashes(), warnings));
  return j;
}

}  // namespace mfwgf::cli
