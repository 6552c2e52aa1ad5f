#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfwgf/cloud_io.hpp"
#include "mfwgf/core/error.hpp"
#include "mfwgf/core/parallel.hpp"
#include "mfwgf/core/rng.hpp"
#include "mfwgf/flowlab.hpp"
#include "mfwgf/measures.hpp"
#include "mfwgf/model.hpp"

namespace mfwgf {

enum class Scheme { kLangevin, kExplicitKde };

inline const char* to_string(Scheme s) { return s == Scheme::kLangevin ? "langevin" : "explicit-kde"; }

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "langevin") return Scheme::kLangevin;
  if (s == "explicit-kde") return Scheme::kExplicitKde;
  fail(ErrorCode::kConfig, "unknown scheme '" + s + "' (expected langevin | explicit-kde)");
}

struct EngineConfig {
  Scheme scheme = Scheme::kLangevin;
  double step_size = 1e-3;
  /// tau_k = step_size * step_decay^k; 1 keeps the step constant.
  double step_decay = 1.0;
  std::size_t iterations = 100;
  std::size_t particles = 1000;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 1;
  /// Gaussian KDE bandwidth; 0 selects Silverman's rule per dimension.
  double kde_bandwidth = 0.0;
  bool record_potential = false;
  bool keep_clouds = false;
  int threads = 1;

  [[nodiscard]] double tau(std::size_t k) const {
    return step_decay == 1.0 ? step_size : step_size * std::pow(step_decay, static_cast<double>(k));
  }

  void validate() const {
    require(step_size > 0.0 && std::isfinite(step_size), ErrorCode::kConfig, "engine: step size must be positive");
    require(step_decay > 0.0 && step_decay <= 1.0, ErrorCode::kConfig, "engine: step decay must lie in (0, 1]");
    require(particles >= 1, ErrorCode::kConfig, "engine: need at least one particle");
    require(snapshot_every >= 1, ErrorCode::kConfig, "engine: snapshot_every must be >= 1");
    require(kde_bandwidth >= 0.0, ErrorCode::kConfig, "engine: kde bandwidth must be >= 0 (0 = silverman)");
  }
};

struct EngineState {
  ParticleCloud cloud;
  Responsibilities resp;
  std::size_t k = 0;
  /// Noise for particle b at iteration k is drawn from CounterStream(seed, k, b).
  std::uint64_t seed = 0;
};

/// Standard-normal vector used by the Langevin update of particle b at iteration k.
inline std::vector<double> langevin_noise(std::uint64_t seed, std::size_t k, std::size_t b, std::size_t p) {
  CounterStream s(seed, k, b);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> eta(p);
  for (double& v : eta) v = nd(s);
  return eta;
}

namespace detail {

inline void check_particle(std::span<const double> th, std::size_t b, std::size_t k) {
  for (double v : th)
    if (!std::isfinite(v))
      fail(ErrorCode::kNonFinite, "particle " + std::to_string(b) + " became non-finite at iteration " +
                                       std::to_string(k) + "; reduce the step size",
           {static_cast<std::int64_t>(b), static_cast<std::int64_t>(k)});
}

template <LatentModel M>
void drift_checked(const M& model, const Dataset<typename M::observation_type>& data, const Responsibilities& resp,
                   std::span<const double> th, std::span<double> g, std::size_t b) {
  try {
    drift_into(model, data, resp, th, g);
  } catch (const Error& e) {
    auto where = e.where();
    where.push_back(static_cast<std::int64_t>(b));
    fail(e.code(), std::string(e.what()) + " (particle " + std::to_string(b) + ")", where);
  }
  for (double v : g)
    if (!std::isfinite(v))
      fail(ErrorCode::kNonFinite, "drift is non-finite at particle " + std::to_string(b),
           {static_cast<std::int64_t>(b)});
}

}  // namespace detail

inline EngineState make_state(ParticleCloud cloud, std::uint64_t seed) {
  EngineState s;
  s.cloud = std::move(cloud);
  s.seed = seed;
  return s;
}

/// E-step then Langevin M-step: theta_b <- theta_b - tau grad V(theta_b) + sqrt(2 tau) eta_b.
template <LatentModel M>
EngineState mfwgf_step(const M& model, const Dataset<typename M::observation_type>& data, EngineState state,
                       const EngineConfig& cfg) {
  const std::size_t p = model.param_dim(), B = state.cloud.size();
  require(state.cloud.dim() == p, ErrorCode::kDimensionMismatch, "mfwgf_step: cloud dimension != model dimension");
  state.resp = responsibilities(model, data, state.cloud, cfg.threads);
  const double tau = cfg.tau(state.k), noise = std::sqrt(2.0 * tau);
  std::vector<double> next = state.cloud.data();
  parallel_for(B, cfg.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> g(p);
    for (std::size_t b = begin; b < end; ++b) {
      const auto th = state.cloud.point(b);
      detail::drift_checked(model, data, state.resp, th, g, b);
      const auto eta = langevin_noise(state.seed, state.k, b, p);
      std::span<double> out(next.data() + b * p, p);
      for (std::size_t j = 0; j < p; ++j) out[j] = th[j] - tau * g[j] + noise * eta[j];
      if constexpr (HasProjection<M>) model.project(out);
      detail::check_particle(out, b, state.k);
    }
  });
  state.cloud = ParticleCloud(p, std::move(next), state.cloud.weights());
  ++state.k;
  return state;
}

/// Per-dimension Silverman bandwidth (4/(p+2))^{1/(p+4)} sigma_j B^{-1/(p+4)}.
inline std::vector<double> silverman_bandwidth(const ParticleCloud& cloud) {
  const double p = static_cast<double>(cloud.dim()), B = static_cast<double>(cloud.size());
  const double factor = std::pow(4.0 / (p + 2.0), 1.0 / (p + 4.0)) * std::pow(B, -1.0 / (p + 4.0));
  const auto var = cloud.variance();
  std::vector<double> h(cloud.dim());
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = factor * std::sqrt(var[j]);
  return h;
}

/// grad log of the Gaussian KDE at `query`: softmax-weighted mean of (theta_b - query)/h^2.
inline std::vector<double> kde_score(const ParticleCloud& cloud, std::span<const double> bandwidth,
                                     std::span<const double> query) {
  const std::size_t p = cloud.dim(), B = cloud.size();
  require(bandwidth.size() == p && query.size() == p, ErrorCode::kDimensionMismatch, "kde_score: dimension mismatch");
  for (double h : bandwidth) require(h > 0.0 && std::isfinite(h), ErrorCode::kInvalidArgument, "kde_score: bandwidth must be positive");
  std::vector<double> logk(B);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    const auto th = cloud.point(b);
    for (std::size_t j = 0; j < p; ++j) {
      const double e = (th[j] - query[j]) / bandwidth[j];
      s += e * e;
    }
    logk[b] = std::log(cloud.weight(b)) - 0.5 * s;
  }
  const double m = *std::max_element(logk.begin(), logk.end());
  double z = 0.0;
  std::vector<double> score(p, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double w = std::exp(logk[b] - m);
    z += w;
    const auto th = cloud.point(b);
    for (std::size_t j = 0; j < p; ++j) score[j] += w * (th[j] - query[j]);
  }
  for (std::size_t j = 0; j < p; ++j) score[j] /= z * bandwidth[j] * bandwidth[j];
  return score;
}

inline std::vector<double> kde_score(const ParticleCloud& cloud, double bandwidth, std::span<const double> query) {
  require(bandwidth > 0.0, ErrorCode::kInvalidArgument, "kde_score: bandwidth must be positive");
  const std::vector<double> h(cloud.dim(), bandwidth);
  return kde_score(cloud, h, query);
}

/// Score override for explicit_step: writes grad log rho at theta into out.
using ScoreFn = std::function<void(std::span<const double> theta, std::span<double> out)>;

/// E-step then theta_b <- theta_b - tau [grad V(theta_b) + score(theta_b)], no noise.
template <LatentModel M>
EngineState explicit_step(const M& model, const Dataset<typename M::observation_type>& data, EngineState state,
                          const EngineConfig& cfg, const ScoreFn& score_override = {}) {
  const std::size_t p = model.param_dim(), B = state.cloud.size();
  require(state.cloud.dim() == p, ErrorCode::kDimensionMismatch, "explicit_step: cloud dimension != model dimension");
  std::vector<double> h;
  if (!score_override) {
    require(B >= 10, ErrorCode::kInvalidArgument, "explicit_step: the KDE score needs at least 10 particles");
    if (cfg.kde_bandwidth > 0.0) {
      h.assign(p, cfg.kde_bandwidth);
    } else {
      h = silverman_bandwidth(state.cloud);
      for (std::size_t j = 0; j < p; ++j) {
        const auto c = state.cloud.coordinate(j);
        const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
        require(*hi > *lo && h[j] > 0.0, ErrorCode::kDegenerate, "explicit_step: degenerate cloud, KDE score undefined");
      }
    }
  }
  state.resp = responsibilities(model, data, state.cloud, cfg.threads);
  const double tau = cfg.tau(state.k);
  std::vector<double> next = state.cloud.data();
  parallel_for(B, cfg.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> g(p), s(p);
    for (std::size_t b = begin; b < end; ++b) {
      const auto th = state.cloud.point(b);
      detail::drift_checked(model, data, state.resp, th, g, b);
      if (score_override) {
        score_override(th, s);
      } else {
        s = kde_score(state.cloud, h, th);
      }
      std::span<double> out(next.data() + b * p, p);
      for (std::size_t j = 0; j < p; ++j) out[j] = th[j] - tau * (g[j] + s[j]);
      if constexpr (HasProjection<M>) model.project(out);
      detail::check_particle(out, b, state.k);
    }
  });
  state.cloud = ParticleCloud(p, std::move(next), state.cloud.weights());
  ++state.k;
  return state;
}

template <LatentModel M>
EngineState engine_step(const M& model, const Dataset<typename M::observation_type>& data, EngineState state,
                        const EngineConfig& cfg) {
  return cfg.scheme == Scheme::kLangevin ? mfwgf_step(model, data, std::move(state), cfg)
                                         : explicit_step(model, data, std::move(state), cfg);
}

/// Largest observed ratio |grad V(a) - grad V(b)| / |a - b| over small random
/// perturbations of sampled particles, with resp frozen at the cloud's E-step.
template <LatentModel M>
double estimate_drift_lipschitz(const M& model, const Dataset<typename M::observation_type>& data,
                                const ParticleCloud& cloud, std::size_t probes = 16, std::uint64_t seed = 7,
                                double delta = 1e-3, int threads = 1) {
  const std::size_t p = model.param_dim();
  const auto resp = responsibilities(model, data, cloud, threads);
  double L = 0.0;
  std::vector<double> g0(p), g1(p), t1(p);
  for (std::size_t q = 0; q < probes; ++q) {
    CounterStream s(seed, 0x4C49, q);
    const std::size_t b = static_cast<std::size_t>(s() % cloud.size());
    const auto th = cloud.point(b);
    std::normal_distribution<double> nd(0.0, 1.0);
    double nrm = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      t1[j] = nd(s);
      nrm += t1[j] * t1[j];
    }
    nrm = std::sqrt(nrm);
    for (std::size_t j = 0; j < p; ++j) t1[j] = th[j] + delta * t1[j] / nrm;
    drift_into(model, data, resp, th, g0);
    drift_into(model, data, resp, t1, g1);
    double dg = 0.0;
    for (std::size_t j = 0; j < p; ++j) dg += (g1[j] - g0[j]) * (g1[j] - g0[j]);
    L = std::max(L, std::sqrt(dg) / delta);
  }
  return L;
}

/// True when tau exceeds 1/(2L + 1).
inline bool step_size_too_large(double tau, double lipschitz) { return tau > 1.0 / (2.0 * lipschitz + 1.0); }

struct Snapshot {
  std::size_t k = 0;
  std::string digest;
  std::optional<ParticleCloud> cloud;
  std::map<std::string, double> metrics;
  double wall_ms = 0.0;
};

struct RunTrajectory {
  nlohmann::json config;
  std::vector<Snapshot> snapshots;
  std::vector<double> iteration_ms;
  std::vector<std::string> warnings;
  EngineState final_state;
};

/// Per-snapshot metric hook: fills `metrics` for the cloud at iteration k.
using MetricHook = std::function<void(std::size_t k, const ParticleCloud& cloud, std::map<std::string, double>& metrics)>;
/// Called with the cloud after every iteration (and at k = 0).
using IterationObserver = std::function<void(std::size_t k, const ParticleCloud& cloud)>;

inline nlohmann::json to_json(const EngineConfig& c) {
  return {{"scheme", to_string(c.scheme)},
          {"step_size", c.step_size},
          {"step_decay", c.step_decay},
          {"iterations", c.iterations},
          {"particles", c.particles},
          {"seed", c.seed},
          {"snapshot_every", c.snapshot_every},
          {"kde_bandwidth", c.kde_bandwidth == 0.0 ? nlohmann::json("silverman") : nlohmann::json(c.kde_bandwidth)}};
}

template <LatentModel M>
RunTrajectory run(const M& model, const Dataset<typename M::observation_type>& data, const ParticleCloud& init,
                  const EngineConfig& cfg, const MetricHook& metrics = {}, const IterationObserver& observer = {}) {
  cfg.validate();
  require(init.dim() == model.param_dim(), ErrorCode::kDimensionMismatch,
          "run: init cloud dimension " + std::to_string(init.dim()) + " != model dimension " +
              std::to_string(model.param_dim()));
  RunTrajectory traj;
  traj.config = to_json(cfg);
  EngineState state = make_state(init, cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  auto snap = [&](const EngineState& s) {
    Snapshot sn;
    sn.k = s.k;
    sn.digest = content_hash(encode_cloud(s.cloud));
    if (cfg.keep_clouds) sn.cloud = s.cloud;
    if (metrics) metrics(s.k, s.cloud, sn.metrics);
    if (cfg.record_potential) {
      const auto resp = responsibilities(model, data, s.cloud, cfg.threads);
      double u = 0.0;
      for (std::size_t b = 0; b < s.cloud.size(); ++b)
        u += s.cloud.weight(b) * sample_potential(model, data, resp, s.cloud.point(b));
      sn.metrics["mean_potential"] = u;
    }
    sn.wall_ms = elapsed_ms();
    traj.snapshots.push_back(std::move(sn));
  };
  if (cfg.iterations > 0 && data.size() > 0) {
    const double L = estimate_drift_lipschitz(model, data, init, 8, cfg.seed, 1e-3, cfg.threads);
    if (step_size_too_large(cfg.step_size, L))
      traj.warnings.push_back("step size " + std::to_string(cfg.step_size) + " exceeds 1/(2L+1) = " +
                              std::to_string(1.0 / (2.0 * L + 1.0)) + " for measured drift Lipschitz constant " +
                              std::to_string(L));
  }
  if (observer) observer(0, state.cloud);
  snap(state);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto s0 = std::chrono::steady_clock::now();
    try {
      state = engine_step(model, data, std::move(state), cfg);
    } catch (const Error& e) {
      auto where = e.where();
      where.push_back(static_cast<std::int64_t>(it));
      fail(e.code(), "iteration " + std::to_string(it) + ": " + e.what(), where);
    }
    traj.iteration_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s0).count());
    if (observer) observer(state.k, state.cloud);
    if (state.k % cfg.snapshot_every == 0 || state.k == cfg.iterations) snap(state);
  }
  traj.final_state = std::move(state);
  return traj;
}

struct FixedPointEstimate {
  ParticleCloud cloud;
  std::size_t horizon = 0;
  /// W2 between clouds at 0.9 * horizon and horizon.
  double diagnostic = 0.0;
  /// W2(init, terminal), the scale the diagnostic is judged against.
  double travel = 0.0;
  bool warning = false;
};

/// Both clouds named in the diagnostic, captured while a run passes through them.
struct FixedPointCapture {
  std::size_t horizon = 0;
  std::size_t early = 0;
  std::optional<ParticleCloud> at_early;

  explicit FixedPointCapture(std::size_t h) : horizon(h), early(static_cast<std::size_t>(std::floor(0.9 * h))) {}
  void observe(std::size_t k, const ParticleCloud& c) {
    if (k == early) at_early = c;
  }
  [[nodiscard]] FixedPointEstimate finish(const ParticleCloud& init, const ParticleCloud& terminal,
                                          double threshold = 0.1) const {
    FixedPointEstimate est;
    est.cloud = terminal;
    est.horizon = horizon;
    est.diagnostic = w2_auto(*at_early, terminal).distance;
    est.travel = w2_auto(init, terminal).distance;
    est.warning = est.diagnostic > threshold * est.travel;
    return est;
  }
};

/// Terminal cloud of an extension_factor * T run, tagged with a stationarity diagnostic.
template <LatentModel M>
FixedPointEstimate estimate_fixed_point(const M& model, const Dataset<typename M::observation_type>& data,
                                        const ParticleCloud& init, EngineConfig cfg, double extension_factor = 2.0) {
  require(extension_factor >= 2.0, ErrorCode::kInvalidArgument, "estimate_fixed_point: extension factor must be >= 2");
  const auto H = static_cast<std::size_t>(std::llround(extension_factor * static_cast<double>(cfg.iterations)));
  cfg.iterations = H;
  cfg.snapshot_every = std::max<std::size_t>(H, 1);
  cfg.keep_clouds = false;
  FixedPointCapture cap(H);
  auto traj = run(model, data, init, cfg, {}, [&](std::size_t k, const ParticleCloud& c) { cap.observe(k, c); });
  return cap.finish(init, traj.final_state.cloud);
}

struct FixedPointReport {
  double distance = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::vector<double> grid;
  std::vector<double> density;
};

/// For p = 1: W2 between the cloud and the normalized density prior(theta) exp(-n U_n(theta; resp(cloud))).
template <LatentModel M>
FixedPointReport verify_fixed_point(const M& model, const Dataset<typename M::observation_type>& data,
                                    const ParticleCloud& cloud, double tolerance, std::size_t cells = 4096,
                                    std::size_t quantiles = 1 << 14) {
  if (model.param_dim() != 1)
    fail(ErrorCode::kUnsupported, "verify_fixed_point: only one-dimensional parameter models are supported");
  const auto resp = responsibilities(model, data, cloud);
  const double n = static_cast<double>(data.size());
  auto logf = [&](double t) {
    const double th[1] = {t};
    return model.log_prior(th) - n * sample_potential(model, data, resp, th);
  };
  // bracket the density around its mode using the cloud spread and a coarse scan
  const double m = cloud.mean()[0];
  const double sd = std::sqrt(std::max(cloud.variance()[0], 1e-12));
  double lo = m - 20.0 * sd, hi = m + 20.0 * sd;
  std::vector<double> grid(cells + 1), lv(cells + 1);
  for (std::size_t i = 0; i <= cells; ++i) {
    grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cells);
    lv[i] = logf(grid[i]);
  }
  const double mx = *std::max_element(lv.begin(), lv.end());
  flow::Density1D d{lo, hi, std::vector<double>(cells + 1)};
  for (std::size_t i = 0; i <= cells; ++i) d.values[i] = std::exp(lv[i] - mx);
  d.normalize();
  const auto q = flow::density_to_quantiles(d, quantiles);
  // weighted empirical quantile function of the cloud
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cloud.point(a)[0] < cloud.point(b)[0]; });
  double s = 0.0, cum = cloud.weight(order[0]);
  std::size_t r = 0;
  for (std::size_t j = 0; j < quantiles; ++j) {
    const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(quantiles);
    while (cum < u && r + 1 < order.size()) cum += cloud.weight(order[++r]);
    const double e = cloud.point(order[r])[0] - q[j];
    s += e * e;
  }
  FixedPointReport rep;
  rep.distance = std::sqrt(s / static_cast<double>(quantiles));
  rep.tolerance = tolerance;
  rep.passed = rep.distance <= tolerance;
  rep.grid = std::move(grid);
  rep.density = d.values;
  return rep;
}

}  // namespace mfwgf
