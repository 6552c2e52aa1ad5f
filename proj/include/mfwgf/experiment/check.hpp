#pragma once

#include <string>
#include <vector>

#include "mfwgf/experiment/compare.hpp"
#include "mfwgf/experiment/flowlab_cmd.hpp"
#include "mfwgf/experiment/run.hpp"
#include "mfwgf/experiment/sweep.hpp"

namespace mfwgf::cli {

struct CriterionOutcome {
  std::string name;
  std::string command;
  bool passed = false;
  std::string error;
  json details = json::object();
};

struct CheckReport {
  std::vector<CriterionOutcome> criteria;
  [[nodiscard]] bool passed() const {
    for (const auto& c : criteria)
      if (!c.passed) return false;
    return !criteria.empty();
  }
  [[nodiscard]] bool any_error() const {
    for (const auto& c : criteria)
      if (!c.error.empty()) return true;
    return false;
  }
};

inline json criterion_config(const json& base, const json& set) {
  json cfg = base;
  cfg.erase("check");
  for (auto it = set.begin(); it != set.end(); ++it) {
    if (it.key() == "seed") apply_seed(cfg, it.value().get<std::uint64_t>());
    else set_path(cfg, it.key(), it.value());
  }
  validate_top_level(cfg);
  return cfg;
}

/// Runs one criterion and judges it against its `require` thresholds.
inline CriterionOutcome evaluate_criterion(const json& base, const json& entry, std::size_t index,
                                           const std::filesystem::path* out_root) {
  const std::string where = "check.criteria[" + std::to_string(index) + "]";
  check_keys(entry, where, {"name", "command", "set", "require"});
  CriterionOutcome o;
  o.name = get_or<std::string>(entry, "name", "criterion_" + std::to_string(index + 1), where);
  o.command = get_required<std::string>(entry, "command", where);
  const json& req = sub(entry, "require");
  try {
    const json cfg = criterion_config(base, sub(entry, "set"));
    std::optional<OutputDir> out;
    if (out_root) out.emplace(*out_root / safe_label(o.name), true);
    if (o.command == "run") {
      check_keys(req, where + ".require", {"min_r2", "negative_slope", "max_terminal_statistical"});
      const Seeds seeds = resolve_seeds(cfg);
      with_problem(cfg, seeds, [&](const auto& p) {
        const RunResult r = execute_run(p, cfg, seeds);
        o.details = out ? write_run(*out, r, p, cfg, seeds, "check") : run_summary(r);
        const double min_r2 = get_or<double>(req, "min_r2", 0.9, where + ".require");
        o.passed = r.fit.found && r.fit.fit.r2 >= min_r2;
        if (get_or<bool>(req, "negative_slope", true, where + ".require")) o.passed = o.passed && r.fit.fit.slope < 0.0;
        if (req.contains("max_terminal_statistical"))
          o.passed = o.passed && r.terminal_statistical() <= req.at("max_terminal_statistical").get<double>();
        return 0;
      });
    } else if (o.command == "sweep") {
      check_keys(req, where + ".require", {"monotone", "max_pair_rel_diff", "exponent_min", "exponent_max"});
      const SweepResult r = execute_sweep(cfg, out ? &*out : nullptr);
      o.details = sweep_json(r);
      if (out) {
        out->write("slopes.csv", slopes_csv(r));
        out->write_json("sweep.json", o.details);
      }
      o.passed = r.analysis.failures == 0;
      if (get_or<bool>(req, "monotone", false, where + ".require")) o.passed = o.passed && r.analysis.monotone;
      if (req.contains("max_pair_rel_diff"))
        o.passed = o.passed && r.analysis.max_pair_rel_diff <= req.at("max_pair_rel_diff").get<double>();
      if (req.contains("exponent_min") || req.contains("exponent_max")) {
        const double e = r.analysis.scaling_fit ? r.analysis.scaling_fit->slope : std::nan("");
        o.passed = o.passed && std::isfinite(e) &&
                   e >= get_or<double>(req, "exponent_min", -std::numeric_limits<double>::infinity(), where) &&
                   e <= get_or<double>(req, "exponent_max", std::numeric_limits<double>::infinity(), where);
      }
    } else if (o.command == "compare-gibbs") {
      check_keys(req, where + ".require", {"max_abs_z"});
      const Seeds seeds = resolve_seeds(cfg);
      with_problem(cfg, seeds, [&](const auto& p) {
        const CompareResult r = execute_compare(p, cfg, seeds);
        o.details = compare_json(r);
        if (out) {
          out->write("comparison.csv", comparison_csv(r.rows));
          out->write_json("report.json", o.details);
        }
        o.passed = r.max_abs_z <= get_or<double>(req, "max_abs_z", 3.0, where + ".require");
        return 0;
      });
    } else if (o.command == "flowlab") {
      check_keys(req, where + ".require", {});
      const auto r = execute_flowlab(sub(cfg, "flowlab"));
      o.details = r.result;
      if (out) {
        out->write("sweep.csv", r.csv);
        out->write_json("result.json", r.result);
      }
      o.passed = r.passed;
    } else {
      fail(ErrorCode::kConfig, where + ".command must be run, sweep, compare-gibbs or flowlab");
    }
  } catch (const std::exception& e) {
    o.passed = false;
    o.error = e.what();
  }
  return o;
}

inline CheckReport execute_check(const json& cfg, const std::filesystem::path* out_root) {
  const json& c = sub(cfg, "check");
  check_keys(c, "check", {"criteria"});
  require(c.contains("criteria") && c.at("criteria").is_array() && !c.at("criteria").empty(), ErrorCode::kConfig,
          "check.criteria must be a non-empty array");
  CheckReport rep;
  std::size_t i = 0;
  for (const auto& entry : c.at("criteria")) rep.criteria.push_back(evaluate_criterion(cfg, entry, i++, out_root));
  return rep;
}

inline json check_json(const CheckReport& r) {
  json rows = json::array();
  for (const auto& c : r.criteria)
    rows.push_back({{"name", c.name}, {"command", c.command}, {"passed", c.passed}, {"error", c.error},
                    {"details", c.details}});
  return {{"passed", r.passed()}, {"criteria", rows}};
}

/// Returns the report; the caller maps passed() to the exit status.
inline CheckReport cmd_check(const json& cfg, bool force) {
  OutputDir out(output_dir_of(cfg), force);
  const auto root = out.dir();
  CheckReport rep = execute_check(cfg, &root);
  out.write_json("check_report.json", check_json(rep));
  out.write_json("manifest.json", make_manifest("check", cfg, resolve_seeds(cfg), json::object(), out.hashes(), {}));
  return rep;
}

}  // namespace mfwgf::cli
