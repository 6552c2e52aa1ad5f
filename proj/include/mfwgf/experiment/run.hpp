#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfwgf/baselines.hpp"
#include "mfwgf/core/parallel.hpp"
#include "mfwgf/core/stats.hpp"
#include "mfwgf/engine.hpp"
#include "mfwgf/experiment/config.hpp"
#include "mfwgf/experiment/output.hpp"
#include "mfwgf/experiment/problem.hpp"

namespace mfwgf::cli {

/// Engine block; exactly one of step_size, step_size_per_spacing (tau = c d) or step_size_per_n (tau = c / n).
template <class M>
EngineConfig parse_engine(const json& e, const Seeds& seeds, const Problem<M>& p) {
  check_keys(e, "engine",
             {"scheme", "step_size", "step_size_per_spacing", "step_size_per_n", "step_decay", "iterations",
              "particles", "seed", "kde_bandwidth", "threads"});
  EngineConfig c;
  c.scheme = scheme_from_string(get_or<std::string>(e, "scheme", "langevin", "engine"));
  const int forms = static_cast<int>(e.contains("step_size")) + static_cast<int>(e.contains("step_size_per_spacing")) +
                    static_cast<int>(e.contains("step_size_per_n"));
  require(forms <= 1, ErrorCode::kConfig,
          "engine: give at most one of step_size, step_size_per_spacing, step_size_per_n");
  c.step_size = get_or<double>(e, "step_size", c.step_size, "engine");
  if (e.contains("step_size_per_spacing")) {
    require(!std::isnan(p.spacing), ErrorCode::kConfig,
            "engine.step_size_per_spacing needs a triangle spacing in data.generate");
    c.step_size = get_or<double>(e, "step_size_per_spacing", 0.0, "engine") * p.spacing;
  }
  if (e.contains("step_size_per_n")) {
    require(p.data.size() > 0, ErrorCode::kConfig, "engine.step_size_per_n needs a non-empty dataset");
    c.step_size = get_or<double>(e, "step_size_per_n", 0.0, "engine") / static_cast<double>(p.data.size());
  }
  c.step_decay = get_or<double>(e, "step_decay", 1.0, "engine");
  c.iterations = get_or<std::size_t>(e, "iterations", c.iterations, "engine");
  c.particles = get_or<std::size_t>(e, "particles", c.particles, "engine");
  c.seed = seeds.engine;
  c.kde_bandwidth = get_or<double>(e, "kde_bandwidth", 0.0, "engine");
  c.threads = get_or<int>(e, "threads", 1, "engine");
  require(c.threads >= 1, ErrorCode::kConfig, "engine.threads must be >= 1");
  c.validate();
  return c;
}

struct MetricsOptions {
  bool numerical = true;
  bool statistical = true;
  bool potential = false;
  std::string reference = "fixed_point";
  double extension_factor = 2.0;
  std::size_t dense_until = 100;
  std::size_t snapshot_every = 10;
  double fixed_point_threshold = 0.1;

  [[nodiscard]] bool scheduled(std::size_t k, std::size_t T) const {
    return k <= T && (k <= dense_until || k % snapshot_every == 0 || k == T);
  }
};

inline MetricsOptions parse_metrics(const json& m) {
  check_keys(m, "metrics",
             {"numerical_error", "statistical_error", "potential", "reference", "extension_factor", "dense_until",
              "snapshot_every", "fixed_point_threshold"});
  MetricsOptions o;
  o.numerical = get_or<bool>(m, "numerical_error", true, "metrics");
  o.statistical = get_or<bool>(m, "statistical_error", true, "metrics");
  o.potential = get_or<bool>(m, "potential", false, "metrics");
  o.reference = get_or<std::string>(m, "reference", "fixed_point", "metrics");
  require(o.reference == "fixed_point" || o.reference == "true_param" || o.reference == "gibbs", ErrorCode::kConfig,
          "metrics.reference must be fixed_point, true_param or gibbs");
  o.extension_factor = get_or<double>(m, "extension_factor", 2.0, "metrics");
  require(o.extension_factor >= 2.0, ErrorCode::kConfig, "metrics.extension_factor must be >= 2");
  o.dense_until = get_or<std::size_t>(m, "dense_until", 100, "metrics");
  o.snapshot_every = get_or<std::size_t>(m, "snapshot_every", 10, "metrics");
  require(o.snapshot_every >= 1, ErrorCode::kConfig, "metrics.snapshot_every must be >= 1");
  o.fixed_point_threshold = get_or<double>(m, "fixed_point_threshold", 0.1, "metrics");
  return o;
}

struct GibbsSpec {
  GibbsOptions options;
  std::size_t batches = 20;
};

inline GibbsSpec parse_gibbs(const json& g, const Seeds& seeds) {
  check_keys(g, "gibbs", {"iterations", "burn_in", "seed", "mh_step", "thin", "batches"});
  GibbsSpec s;
  s.options.iterations = get_or<std::size_t>(g, "iterations", 5000, "gibbs");
  s.options.burn_in = get_or<long long>(g, "burn_in", -1, "gibbs");
  s.options.seed = seeds.gibbs;
  s.options.mh_step = get_or<double>(g, "mh_step", 0.1, "gibbs");
  s.options.thin = get_or<std::size_t>(g, "thin", 1, "gibbs");
  s.batches = get_or<std::size_t>(g, "batches", 20, "gibbs");
  require(s.options.thin >= 1, ErrorCode::kConfig, "gibbs.thin must be >= 1");
  return s;
}

inline GibbsResult run_gibbs(const Problem<GmmModel>& p, GibbsOptions opt) { return gibbs_gmm(p.model, p.data, opt); }

inline GibbsResult run_gibbs(const Problem<MorModel>& p, GibbsOptions opt) {
  if (opt.init.empty() && p.data.size() > 0) opt.init = spectral_point(p);
  return gibbs_mor(p.model, p.data, opt);
}

struct MetricsRow {
  std::size_t k = 0;
  double numerical = std::numeric_limits<double>::quiet_NaN();
  double statistical = std::numeric_limits<double>::quiet_NaN();
  double potential = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

struct RunResult {
  EngineConfig engine;
  MetricsOptions metrics;
  std::vector<MetricsRow> rows;
  std::vector<std::pair<std::size_t, ParticleCloud>> snapshots;
  WindowFit fit;
  std::string fit_series;
  ParticleCloud initial;
  ParticleCloud final_cloud;
  std::optional<ParticleCloud> reference;
  std::optional<FixedPointEstimate> fixed_point;
  std::vector<std::string> warnings;
  std::size_t iterations_run = 0;
  double snr = std::numeric_limits<double>::quiet_NaN();
  double snr_dmin = std::numeric_limits<double>::quiet_NaN();

  [[nodiscard]] double terminal_statistical() const {
    return rows.empty() ? std::numeric_limits<double>::quiet_NaN() : rows.back().statistical;
  }
  [[nodiscard]] double terminal_numerical() const {
    return rows.empty() ? std::numeric_limits<double>::quiet_NaN() : rows.back().numerical;
  }
  /// Iteration at the end of the fitted window.
  [[nodiscard]] std::size_t window_end_k() const { return fit.found ? rows[fit.window - 1].k : 0; }
};

template <class M>
double mean_potential(const Problem<M>& p, const ParticleCloud& c, int threads) {
  if (p.data.size() == 0) return 0.0;
  const auto resp = responsibilities(p.model, p.data, c, threads);
  double u = 0.0;
  for (std::size_t b = 0; b < c.size(); ++b) u += c.weight(b) * sample_potential(p.model, p.data, resp, c.point(b));
  return u;
}

/// One extended engine run: iterations 0..T form the trajectory, and for
/// reference = fixed_point the terminal cloud at extension_factor * T is q-hat.
template <class M>
RunResult execute_run(const Problem<M>& p, const json& cfg, const Seeds& seeds) {
  RunResult res;
  res.engine = parse_engine(sub(cfg, "engine"), seeds, p);
  res.metrics = parse_metrics(sub(cfg, "metrics"));
  res.snr = p.snr;
  res.snr_dmin = p.snr_dmin;
  const auto& mo = res.metrics;
  const bool need_truth = mo.statistical || mo.reference == "true_param";
  require(!need_truth || !p.truth.empty(), ErrorCode::kConfig,
          "statistical error needs the true parameter (generate the data or give it in data.load)");
  const std::size_t T = res.engine.iterations;
  const bool extend = mo.numerical && mo.reference == "fixed_point";
  const std::size_t H =
      extend ? static_cast<std::size_t>(std::llround(mo.extension_factor * static_cast<double>(T))) : T;

  std::optional<ParticleCloud> gibbs_ref;
  if (mo.numerical && mo.reference == "gibbs") {
    auto g = run_gibbs(p, parse_gibbs(sub(cfg, "gibbs"), seeds).options);
    for (auto& w : g.warnings) res.warnings.push_back("gibbs: " + w);
    gibbs_ref = align_cloud(p, g.samples, alignment_reference(p, g.samples), true);
  }

  res.initial = build_init(p, sub(cfg, "init"), res.engine.particles, seeds.init);
  EngineConfig rc = res.engine;
  rc.iterations = H;
  rc.snapshot_every = std::max<std::size_t>(H, 1);
  rc.keep_clouds = false;
  rc.record_potential = false;
  FixedPointCapture cap(H);
  std::vector<double> wall;
  const auto t0 = std::chrono::steady_clock::now();
  auto traj = run(p.model, p.data, res.initial, rc, {}, [&](std::size_t k, const ParticleCloud& c) {
    if (mo.scheduled(k, T)) {
      res.snapshots.emplace_back(k, c);
      wall.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    if (k == T) res.final_cloud = c;
    if (extend) cap.observe(k, c);
  });
  res.iterations_run = H;
  res.warnings.insert(res.warnings.end(), traj.warnings.begin(), traj.warnings.end());
  if (extend) {
    res.fixed_point = cap.finish(res.initial, traj.final_state.cloud, mo.fixed_point_threshold);
    res.reference = traj.final_state.cloud;
    if (res.fixed_point->warning)
      res.warnings.push_back("fixed-point estimate not settled: W2 between iterations " + std::to_string(cap.early) +
                             " and " + std::to_string(H) + " is " + num(res.fixed_point->diagnostic) +
                             ", above " + num(mo.fixed_point_threshold) + " x travel " + num(res.fixed_point->travel));
  } else if (gibbs_ref) {
    res.reference = gibbs_ref;
  }

  res.rows.resize(res.snapshots.size());
  parallel_for(res.snapshots.size(), res.engine.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& [k, c] = res.snapshots[i];
      MetricsRow& r = res.rows[i];
      r.k = k;
      r.wall_ms = wall[i];
      if (need_truth) r.statistical = statistical_error_sq(p, c);
      if (mo.numerical) {
        if (mo.reference == "fixed_point") r.numerical = w2_auto(*res.reference, c).squared();
        else if (mo.reference == "gibbs")
          r.numerical = w2_auto(*res.reference, align_cloud(p, c, alignment_reference(p, *res.reference), false))
                            .squared();
        else r.numerical = r.statistical;
      }
      if (mo.potential) r.potential = mean_potential(p, c, 1);
    }
  });
  if (!mo.statistical)
    for (auto& r : res.rows) r.statistical = std::numeric_limits<double>::quiet_NaN();

  std::vector<double> x, y;
  res.fit_series = mo.numerical ? "numerical_error_sq" : "statistical_error_sq";
  for (const auto& r : res.rows) {
    x.push_back(static_cast<double>(r.k));
    y.push_back(mo.numerical ? r.numerical : r.statistical);
  }
  if (mo.numerical || mo.statistical) res.fit = fit_log_prefix(x, y, 0.9, 10);
  return res;
}

inline std::string metrics_csv(const RunResult& r) {
  CsvWriter w({"k", "numerical_error_sq", "statistical_error_sq", "mean_potential", "wall_ms"});
  for (const auto& m : r.rows)
    w.row({std::to_string(m.k), num(m.numerical), num(m.statistical), num(m.potential), num(m.wall_ms)});
  return w.str();
}

inline json fit_json(const WindowFit& f, const RunResult* r = nullptr) {
  json j = {{"found", f.found},
            {"slope", num_json(f.found ? f.fit.slope : std::nan(""))},
            {"intercept", num_json(f.found ? f.fit.intercept : std::nan(""))},
            {"r2", num_json(f.found ? f.fit.r2 : std::nan(""))},
            {"points", f.window}};
  if (r) j["window_end_k"] = r->window_end_k();
  return j;
}

inline json run_summary(const RunResult& r) {
  json j = {{"iterations", r.engine.iterations},
            {"iterations_run", r.iterations_run},
            {"step_size", r.engine.step_size},
            {"particles", r.engine.particles},
            {"snr", num_json(r.snr)},
            {"snr_dmin", num_json(r.snr_dmin)},
            {"fit_series", r.fit_series},
            {"fit", fit_json(r.fit, &r)},
            {"terminal_numerical_error_sq", num_json(r.terminal_numerical())},
            {"terminal_statistical_error_sq", num_json(r.terminal_statistical())},
            {"final_mean", r.final_cloud.size() ? r.final_cloud.mean() : std::vector<double>{}},
            {"warnings", r.warnings}};
  if (r.fixed_point)
    j["fixed_point"] = {{"horizon", r.fixed_point->horizon},
                        {"diagnostic", r.fixed_point->diagnostic},
                        {"travel", r.fixed_point->travel},
                        {"warning", r.fixed_point->warning}};
  return j;
}

template <class M>
json problem_inputs(const Problem<M>& p) {
  return {{"dataset", {{"source", p.source}, {"rows", p.data.size()}, {"hash", p.input_hash}}}};
}

/// Writes metrics.csv, clouds, summary.json and manifest.json for a run.
template <class M>
json write_run(OutputDir& out, const RunResult& r, const Problem<M>& p, const json& cfg, const Seeds& seeds,
               const std::string& command) {
  out.write("metrics.csv", metrics_csv(r));
  out.write("initial_cloud.bin", encode_cloud(r.initial));
  out.write("final_cloud.bin", encode_cloud(r.final_cloud));
  if (r.reference) out.write("reference_cloud.bin", encode_cloud(*r.reference));
  if (get_or<bool>(sub(cfg, "output"), "save_snapshots", false, "output"))
    for (const auto& [k, c] : r.snapshots) out.write("snapshots/k" + std::to_string(k) + ".bin", encode_cloud(c));
  const json summary = run_summary(r);
  out.write_json("summary.json", summary);
  out.write_json("manifest.json", make_manifest(command, cfg, seeds, problem_inputs(p), out.hashes(), r.warnings));
  return summary;
}

inline json cmd_run(const json& cfg, bool force) {
  OutputDir out(output_dir_of(cfg), force);
  const Seeds seeds = resolve_seeds(cfg);
  return with_problem(cfg, seeds, [&](const auto& p) {
    const RunResult r = execute_run(p, cfg, seeds);
    return write_run(out, r, p, cfg, seeds, "run");
  });
}

inline json cmd_generate(const json& cfg, bool force) {
  require(sub(cfg, "data").contains("generate"), ErrorCode::kConfig, "generate: config needs data.generate");
  OutputDir out(output_dir_of(cfg), force);
  const Seeds seeds = resolve_seeds(cfg);
  return with_problem(cfg, seeds, [&](const auto& p) {
    out.write("dataset.csv", dataset_to_csv(p.data, p.obs_dim));
    out.write("dataset.json", dataset_sidecar(p.data.provenance, p.data.labels));
    json manifest = make_manifest("generate", cfg, seeds, json::object(), out.hashes(), {});
    manifest["rows"] = p.data.size();
    manifest["snr"] = num_json(p.snr);
    out.write_json("manifest.json", manifest);
    return json{{"rows", p.data.size()}, {"dataset", out.path("dataset.csv")}, {"hash", p.input_hash}};
  });
}

}  // namespace mfwgf::cli
