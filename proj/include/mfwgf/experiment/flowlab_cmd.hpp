#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfwgf/experiment/config.hpp"
#include "mfwgf/experiment/output.hpp"
#include "mfwgf/flowlab.hpp"

namespace mfwgf::cli {

inline flow::Potential1D parse_potential(const json& j) {
  check_keys(j, "flowlab.potential", {"type", "c"});
  const auto type = get_or<std::string>(j, "type", "quartic", "flowlab.potential");
  if (type == "quartic") return flow::Potential1D::quartic(get_or<double>(j, "c", 0.1, "flowlab.potential"));
  if (type == "quadratic") return flow::Potential1D::quadratic();
  if (type == "zero") return flow::Potential1D::zero();
  fail(ErrorCode::kConfig, "flowlab.potential.type must be quartic, quadratic or zero");
}

inline flow::Start1D parse_start(const json& j) {
  check_keys(j, "flowlab.start", {"mean", "sd", "L", "cells"});
  flow::Start1D s;
  s.mean = get_or<double>(j, "mean", s.mean, "flowlab.start");
  s.sd = get_or<double>(j, "sd", s.sd, "flowlab.start");
  s.L = get_or<double>(j, "L", s.L, "flowlab.start");
  s.cells = get_or<std::size_t>(j, "cells", s.cells, "flowlab.start");
  require(s.sd > 0.0 && s.L > 0.0 && s.cells >= 16, ErrorCode::kConfig, "flowlab.start: invalid grid or spread");
  return s;
}

struct FlowlabOutcome {
  std::string experiment;
  std::string csv;
  json result;
  bool passed = false;
};

struct OrderThreshold {
  double min_order = 0.0;
  double min_r2 = 0.0;
};

inline OrderThreshold default_order_threshold(flow::SchemePair p) {
  switch (p) {
    case flow::SchemePair::kFpLangevin: return {1.4, 0.95};
    case flow::SchemePair::kExplicitJko: return {1.8, 0.0};
    default: return {0.0, 0.0};
  }
}

/// Dispatches one flowlab experiment: order (one-step scheme gaps vs tau), contraction (repeated JKO),
/// or cumulative (Langevin chain vs Fokker-Planck over growing horizons).
inline FlowlabOutcome execute_flowlab(const json& fl) {
  check_keys(fl, "flowlab",
             {"experiment", "potential", "start", "pairs", "taus", "quantiles", "fp_dt_ratio", "newton_tol",
              "thresholds", "tau", "floor", "max_steps", "max_ratio", "horizons", "max_slope", "threads"});
  FlowlabOutcome out;
  out.experiment = get_required<std::string>(fl, "experiment", "flowlab");
  const auto V = parse_potential(sub(fl, "potential"));
  const int threads = get_or<int>(fl, "threads", 1, "flowlab");
  const auto N = get_or<std::size_t>(fl, "quantiles", 1 << 15, "flowlab");
  out.result = {{"experiment", out.experiment}, {"potential", V.name}};
  if (out.experiment == "order") {
    const auto start = parse_start(sub(fl, "start"));
    const auto taus = get_or<std::vector<double>>(fl, "taus", {0.02, 0.01, 0.005, 0.002, 0.001}, "flowlab");
    const auto pairs = get_or<std::vector<std::string>>(fl, "pairs", {"fp_langevin", "explicit_jko"}, "flowlab");
    flow::SweepOptions opt;
    opt.quantiles = N;
    opt.fp_dt_ratio = get_or<double>(fl, "fp_dt_ratio", opt.fp_dt_ratio, "flowlab");
    opt.newton.tol = get_or<double>(fl, "newton_tol", opt.newton.tol, "flowlab");
    opt.threads = threads;
    const json& th = sub(fl, "thresholds");
    CsvWriter w({"tau", "error_w2", "scheme_pair"});
    out.passed = true;
    json per = json::array();
    for (const auto& name : pairs) {
      const auto pair = flow::scheme_pair_from_string(name);
      OrderThreshold t = default_order_threshold(pair);
      const json& tj = sub(th, name);
      check_keys(tj, "flowlab.thresholds." + name, {"min_order", "min_r2"});
      t.min_order = get_or<double>(tj, "min_order", t.min_order, "flowlab.thresholds." + name);
      t.min_r2 = get_or<double>(tj, "min_r2", t.min_r2, "flowlab.thresholds." + name);
      const auto r = flow::order_sweep(V, start, pair, taus, opt);
      for (const auto& pt : r.points) w.row({num(pt.tau), num(pt.error_w2), name});
      const bool ok = r.failure.empty() && !r.degenerate && r.fit.slope >= t.min_order && r.fit.r2 >= t.min_r2;
      out.passed = out.passed && ok;
      json slack = json::array();
      for (const auto& pt : r.points) slack.push_back(num_json(pt.triangle_slack));
      per.push_back({{"pair", name},
                     {"order", num_json(r.fit.slope)},
                     {"r2", num_json(r.fit.r2)},
                     {"min_order", t.min_order},
                     {"min_r2", t.min_r2},
                     {"degenerate", r.degenerate},
                     {"failure", r.failure},
                     {"triangle_slack", slack},
                     {"passed", ok}});
    }
    out.result["pairs"] = per;
    out.csv = w.str();
  } else if (out.experiment == "contraction") {
    const auto start = parse_start(sub(fl, "start").empty() ? json{{"mean", 2.0}, {"sd", 1.0}} : sub(fl, "start"));
    const double tau = get_or<double>(fl, "tau", 0.5, "flowlab");
    const double floor = get_or<double>(fl, "floor", 1e-6, "flowlab");
    const auto steps = get_or<std::size_t>(fl, "max_steps", 200, "flowlab");
    const auto P0 = flow::gaussian_quantiles(start.mean, start.sd, N);
    const auto r = flow::contraction_check(V, P0, tau, steps, floor, start.L);
    const double max_ratio = get_or<double>(fl, "max_ratio", r.bound, "flowlab");
    CsvWriter w({"step", "distance_sq", "ratio", "energy"});
    double worst = 0.0;
    bool energy_monotone = true;
    for (std::size_t k = 0; k < r.distances_sq.size(); ++k) {
      w.row({std::to_string(k), num(r.distances_sq[k]), k ? num(r.ratios[k - 1]) : "", num(r.energies[k])});
      if (k) {
        worst = std::max(worst, r.ratios[k - 1]);
        energy_monotone = energy_monotone && r.energies[k] <= r.energies[k - 1] + 1e-12 * std::abs(r.energies[k - 1]);
      }
    }
    const bool reached = std::sqrt(r.distances_sq.back()) < floor;
    out.passed = r.passed && worst <= max_ratio && reached;
    out.result.update({{"tau", tau},
                       {"bound", r.bound},
                       {"max_ratio", max_ratio},
                       {"worst_ratio", worst},
                       {"steps", r.ratios.size()},
                       {"reached_floor", reached},
                       {"energy_monotone", energy_monotone},
                       {"passed", out.passed}});
    out.csv = w.str();
  } else if (out.experiment == "cumulative") {
    const auto start = parse_start(sub(fl, "start"));
    const double tau = get_or<double>(fl, "tau", 0.005, "flowlab");
    const auto horizons = get_or<std::vector<double>>(fl, "horizons", {0.5, 1.0, 2.0, 4.0}, "flowlab");
    const double max_slope = get_or<double>(fl, "max_slope", 2.2, "flowlab");
    const auto r = flow::cumulative_error(V, start, tau, horizons, get_or<double>(fl, "fp_dt_ratio", 0.2, "flowlab"), N);
    CsvWriter w({"T", "error_w2", "scheme_pair"});
    for (const auto& pt : r.points) w.row({num(pt.horizon), num(pt.error_w2), "fp_langevin"});
    out.passed = r.points.size() >= 2 && r.fit.slope <= max_slope;
    out.result.update({{"tau", tau}, {"slope", num_json(r.fit.slope)}, {"r2", num_json(r.fit.r2)},
                       {"max_slope", max_slope}, {"passed", out.passed}});
    out.csv = w.str();
  } else {
    fail(ErrorCode::kConfig, "flowlab.experiment must be order, contraction or cumulative");
  }
  out.result["passed"] = out.passed;
  return out;
}

inline json cmd_flowlab(const json& cfg, bool force) {
  require(cfg.contains("flowlab"), ErrorCode::kConfig, "flowlab: config needs a flowlab block");
  OutputDir out(output_dir_of(cfg), force);
  const auto r = execute_flowlab(cfg.at("flowlab"));
  out.write("sweep.csv", r.csv);
  out.write_json("result.json", r.result);
  out.write_json("manifest.json", make_manifest("flowlab", cfg, resolve_seeds(cfg), json::object(), out.hashes(), {}));
  return r.result;
}

}  // namespace mfwgf::cli
