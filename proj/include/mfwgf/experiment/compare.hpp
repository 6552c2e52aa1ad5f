#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mfwgf/baselines.hpp"
#include "mfwgf/experiment/run.hpp"

namespace mfwgf::cli {

struct CoordinateComparison {
  std::string name;
  double mf_mean = 0.0, mf_se = 0.0, mf_sd = 0.0;
  double gibbs_mean = 0.0, gibbs_se = 0.0, gibbs_sd = 0.0;
  double diff = 0.0;
  double combined_se = 0.0;
  /// diff / combined_se; 0 when both are 0.
  double z = 0.0;
  double sd_ratio = 0.0;
};

/// Per-coordinate mean differences; batches = 0 treats draws as independent, otherwise batch means.
inline std::vector<CoordinateComparison> compare_clouds(const ParticleCloud& a, const ParticleCloud& b,
                                                        std::size_t a_batches, std::size_t b_batches,
                                                        const std::vector<std::string>& names) {
  require(a.dim() == b.dim(), ErrorCode::kDimensionMismatch, "compare: clouds differ in dimension");
  const auto ea = batch_mean_estimate(a, a_batches), eb = batch_mean_estimate(b, b_batches);
  const auto va = a.variance(), vb = b.variance();
  std::vector<CoordinateComparison> out(a.dim());
  for (std::size_t j = 0; j < a.dim(); ++j) {
    auto& c = out[j];
    c.name = j < names.size() ? names[j] : "coord_" + std::to_string(j + 1);
    c.mf_mean = ea.mean[j];
    c.mf_se = ea.se[j];
    c.mf_sd = std::sqrt(va[j]);
    c.gibbs_mean = eb.mean[j];
    c.gibbs_se = eb.se[j];
    c.gibbs_sd = std::sqrt(vb[j]);
    c.diff = c.mf_mean - c.gibbs_mean;
    c.combined_se = std::sqrt(c.mf_se * c.mf_se + c.gibbs_se * c.gibbs_se);
    c.z = c.combined_se > 0.0 ? c.diff / c.combined_se
                              : (c.diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    c.sd_ratio = c.gibbs_sd > 0.0 ? c.mf_sd / c.gibbs_sd : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline double max_abs_z(const std::vector<CoordinateComparison>& rows) {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, std::abs(r.z));
  return m;
}

struct ContourGrid {
  std::string method;
  std::string component;
  std::vector<double> xs, ys;
  /// density[iy * xs.size() + ix]
  std::vector<double> density;
};

/// Gaussian-kernel-smoothed histogram of coordinates (cx, cy) on a grid x grid lattice.
inline ContourGrid smoothed_histogram(const ParticleCloud& c, std::size_t cx, std::size_t cy, double x0, double x1,
                                      double y0, double y1, std::size_t grid) {
  ContourGrid g;
  g.xs.resize(grid);
  g.ys.resize(grid);
  for (std::size_t i = 0; i < grid; ++i) {
    g.xs[i] = x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(grid - 1);
    g.ys[i] = y0 + (y1 - y0) * static_cast<double>(i) / static_cast<double>(grid - 1);
  }
  const std::size_t stride = std::max<std::size_t>(1, c.size() / 4000);
  std::vector<double> px, py, pw;
  for (std::size_t b = 0; b < c.size(); b += stride) {
    px.push_back(c.point(b)[cx]);
    py.push_back(c.point(b)[cy]);
    pw.push_back(c.weight(b));
  }
  const double n = static_cast<double>(px.size());
  const double f = std::pow(n, -1.0 / 6.0);
  const double hx = std::max(1e-12, f * std::sqrt(std::max(variance(px), 0.0)));
  const double hy = std::max(1e-12, f * std::sqrt(std::max(variance(py), 0.0)));
  double wsum = 0.0;
  for (double w : pw) wsum += w;
  g.density.assign(grid * grid, 0.0);
  const double norm = 1.0 / (2.0 * std::numbers::pi * hx * hy * wsum);
  for (std::size_t iy = 0; iy < grid; ++iy)
    for (std::size_t ix = 0; ix < grid; ++ix) {
      double s = 0.0;
      for (std::size_t b = 0; b < px.size(); ++b) {
        const double u = (g.xs[ix] - px[b]) / hx, v = (g.ys[iy] - py[b]) / hy;
        s += pw[b] * std::exp(-0.5 * (u * u + v * v));
      }
      g.density[iy * grid + ix] = s * norm;
    }
  return g;
}

/// Pairs of coordinates plotted as contours: each center for the GMM, (theta_1, theta_2) for MR.
inline std::vector<std::pair<std::size_t, std::size_t>> contour_pairs(const GmmModel& m) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (m.config().d != 2) return out;
  for (std::size_t k = 0; k < m.config().K; ++k) out.emplace_back(2 * k, 2 * k + 1);
  return out;
}

inline std::vector<std::pair<std::size_t, std::size_t>> contour_pairs(const MorModel& m) {
  if (m.config().d != 2) return {};
  return {{0, 1}};
}

struct CompareResult {
  std::vector<CoordinateComparison> rows;
  std::vector<ContourGrid> contours;
  ParticleCloud mf;
  ParticleCloud gibbs;
  std::vector<std::string> warnings;
  double max_abs_z = 0.0;
  double gibbs_acceptance = std::numeric_limits<double>::quiet_NaN();
};

/// Mean-field cloud after engine.iterations steps against the Gibbs posterior, both aligned to the
/// truth (or to the mean-field mean when the truth is unknown).
template <class M>
CompareResult execute_compare(const Problem<M>& p, const json& cfg, const Seeds& seeds, std::size_t grid = 60) {
  CompareResult res;
  const EngineConfig ec = parse_engine(sub(cfg, "engine"), seeds, p);
  const GibbsSpec gs = parse_gibbs(sub(cfg, "gibbs"), seeds);
  const auto init = build_init(p, sub(cfg, "init"), ec.particles, seeds.init);
  EngineConfig rc = ec;
  rc.snapshot_every = std::max<std::size_t>(ec.iterations, 1);
  auto traj = run(p.model, p.data, init, rc);
  res.warnings = traj.warnings;
  const ParticleCloud& mf_raw = traj.final_state.cloud;
  const auto ref = alignment_reference(p, mf_raw);
  res.mf = align_cloud(p, mf_raw, ref, false);
  auto g = run_gibbs(p, gs.options);
  for (auto& w : g.warnings) res.warnings.push_back("gibbs: " + w);
  if (!g.acceptance.empty()) res.gibbs_acceptance = mean(g.acceptance);
  res.gibbs = align_cloud(p, g.samples, ref, true);
  res.rows = compare_clouds(res.mf, res.gibbs, 0, gs.batches, coordinate_names(p.model));
  res.max_abs_z = max_abs_z(res.rows);
  for (const auto& [cx, cy] : contour_pairs(p.model)) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const ParticleCloud* c : {&res.mf, &res.gibbs})
      for (std::size_t b = 0; b < c->size(); ++b) {
        x0 = std::min(x0, c->point(b)[cx]);
        x1 = std::max(x1, c->point(b)[cx]);
        y0 = std::min(y0, c->point(b)[cy]);
        y1 = std::max(y1, c->point(b)[cy]);
      }
    const double mx = 0.1 * (x1 - x0) + 1e-9, my = 0.1 * (y1 - y0) + 1e-9;
    const auto names = coordinate_names(p.model);
    const std::string comp = names[cx] + "/" + names[cy];
    for (auto [method, c] : {std::pair{"mf-wgf", &res.mf}, std::pair{"gibbs", &res.gibbs}}) {
      auto cg = smoothed_histogram(*c, cx, cy, x0 - mx, x1 + mx, y0 - my, y1 + my, grid);
      cg.method = method;
      cg.component = comp;
      res.contours.push_back(std::move(cg));
    }
  }
  return res;
}

inline std::string comparison_csv(const std::vector<CoordinateComparison>& rows) {
  CsvWriter w({"coordinate", "mf_mean", "mf_se", "gibbs_mean", "gibbs_se", "mean_diff", "combined_se", "z",
               "mf_sd", "gibbs_sd", "sd_ratio"});
  for (const auto& r : rows)
    w.row({r.name, num(r.mf_mean), num(r.mf_se), num(r.gibbs_mean), num(r.gibbs_se), num(r.diff), num(r.combined_se),
           num(r.z), num(r.mf_sd), num(r.gibbs_sd), num(r.sd_ratio)});
  return w.str();
}

inline std::string contours_csv(const std::vector<ContourGrid>& grids) {
  CsvWriter w({"method", "component", "x", "y", "density"});
  for (const auto& g : grids)
    for (std::size_t iy = 0; iy < g.ys.size(); ++iy)
      for (std::size_t ix = 0; ix < g.xs.size(); ++ix)
        w.row({g.method, g.component, num(g.xs[ix]), num(g.ys[iy]), num(g.density[iy * g.xs.size() + ix])});
  return w.str();
}

inline json compare_json(const CompareResult& r) {
  json rows = json::array();
  for (const auto& c : r.rows)
    rows.push_back({{"coordinate", c.name}, {"mean_diff", c.diff}, {"combined_se", c.combined_se}, {"z", c.z},
                    {"sd_ratio", num_json(c.sd_ratio)}});
  return {{"coordinates", rows},
          {"max_abs_z", r.max_abs_z},
          {"mf_particles", r.mf.size()},
          {"gibbs_samples", r.gibbs.size()},
          {"gibbs_acceptance", num_json(r.gibbs_acceptance)},
          {"warnings", r.warnings}};
}

inline json cmd_compare_gibbs(const json& cfg, bool force) {
  OutputDir out(output_dir_of(cfg), force);
  const Seeds seeds = resolve_seeds(cfg);
  return with_problem(cfg, seeds, [&](const auto& p) {
    const CompareResult r = execute_compare(p, cfg, seeds);
    out.write("comparison.csv", comparison_csv(r.rows));
    out.write("contours.csv", contours_csv(r.contours));
    out.write("mf_cloud.bin", encode_cloud(r.mf));
    out.write("gibbs_samples.bin", encode_cloud(r.gibbs));
    const json j = compare_json(r);
    out.write_json("report.json", j);
    out.write_json("manifest.json", make_manifest("compare-gibbs", cfg, seeds, problem_inputs(p), out.hashes(), r.warnings));
    return j;
  });
}

}  // namespace mfwgf::cli
