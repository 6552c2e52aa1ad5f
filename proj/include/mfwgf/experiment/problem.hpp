#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfwgf/baselines.hpp"
#include "mfwgf/dataset_io.hpp"
#include "mfwgf/experiment/config.hpp"
#include "mfwgf/measures.hpp"
#include "mfwgf/models/gmm.hpp"
#include "mfwgf/models/mor.hpp"

namespace mfwgf::cli {

template <class M>
struct Problem {
  M model;
  Dataset<typename M::observation_type> data;
  /// Flattened true parameter; empty when unknown.
  std::vector<double> truth = {};
  /// GMM true centers, used as the label-alignment reference.
  std::vector<std::vector<double>> truth_centers = {};
  /// Triangle spacing d (GMM triangle setups), NaN otherwise.
  double spacing = std::numeric_limits<double>::quiet_NaN();
  double snr = std::numeric_limits<double>::quiet_NaN();
  double snr_dmin = std::numeric_limits<double>::quiet_NaN();
  std::size_t obs_dim = 0;
  std::string input_hash = {};
  std::string source = {};
};

inline double min_pair_distance(const std::vector<std::vector<double>>& c) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j) best = std::min(best, std::sqrt(squared_distance(c[i], c[j])));
  return best;
}

inline GmmConfig parse_gmm_model(const json& m) {
  check_keys(m, "model", {"type", "K", "d", "beta", "weights", "prior", "sigma_w2", "norm_cap"});
  GmmConfig c;
  c.K = get_or<std::size_t>(m, "K", 3, "model");
  c.d = get_or<std::size_t>(m, "d", 2, "model");
  c.beta = get_or<double>(m, "beta", 1.0, "model");
  if (m.contains("weights")) {
    if (m.at("weights").is_string()) {
      require(m.at("weights") == "unknown", ErrorCode::kConfig, "model.weights: expected an array or \"unknown\"");
      c.weights.clear();
    } else {
      c.weights = get_or<std::vector<double>>(m, "weights", {}, "model");
    }
  } else {
    c.weights.assign(c.K, 1.0 / static_cast<double>(c.K));
  }
  const json& pr = sub(m, "prior");
  check_keys(pr, "model.prior", {"type", "g0", "sigma2"});
  const auto type = get_or<std::string>(pr, "type", "repulsive", "model.prior");
  require(type == "repulsive" || type == "gaussian", ErrorCode::kConfig,
          "model.prior.type must be repulsive or gaussian");
  c.prior = type == "repulsive" ? GmmPrior::kRepulsive : GmmPrior::kGaussian;
  c.g0 = get_or<double>(pr, "g0", 1.0, "model.prior");
  c.sigma2 = get_or<double>(pr, "sigma2", 1.0, "model.prior");
  c.sigma_w2 = get_or<double>(m, "sigma_w2", 1.0, "model");
  c.norm_cap = get_or<double>(m, "norm_cap", 0.0, "model");
  c.validate();
  return c;
}

inline MorConfig parse_mor_model(const json& m, std::vector<double>* theta_star) {
  check_keys(m, "model", {"type", "d", "beta", "prior", "theta_star"});
  MorConfig c;
  c.d = get_or<std::size_t>(m, "d", 2, "model");
  c.beta = get_or<double>(m, "beta", 1.0, "model");
  const json& pr = sub(m, "prior");
  check_keys(pr, "model.prior", {"sigma2"});
  c.sigma2 = get_or<double>(pr, "sigma2", 1.0, "model.prior");
  c.validate();
  *theta_star = get_or<std::vector<double>>(m, "theta_star", {}, "model");
  return c;
}

inline void check_data_block(const json& d) {
  check_keys(d, "data", {"generate", "load"});
  require(d.contains("generate") != d.contains("load"), ErrorCode::kConfig,
          "data: exactly one of data.generate or data.load is required");
}

template <class Obs>
std::string dataset_hash(const Dataset<Obs>& data, std::size_t dim) {
  return content_hash(dataset_to_csv(data, dim));
}

inline Problem<GmmModel> build_gmm(const json& cfg, const Seeds& seeds) {
  const GmmConfig mc = parse_gmm_model(sub(cfg, "model"));
  const json& d = sub(cfg, "data");
  check_data_block(d);
  GmmParams truth;
  double spacing = std::numeric_limits<double>::quiet_NaN();
  Dataset<std::vector<double>> data;
  std::string source = "generated";
  if (d.contains("generate")) {
    const json& g = d.at("generate");
    check_keys(g, "data.generate", {"n", "seed", "centers", "triangle", "weights"});
    require(g.contains("centers") != g.contains("triangle"), ErrorCode::kConfig,
            "data.generate: exactly one of centers or triangle is required");
    if (g.contains("triangle")) {
      check_keys(g.at("triangle"), "data.generate.triangle", {"spacing"});
      spacing = get_required<double>(g.at("triangle"), "spacing", "data.generate.triangle");
      require(mc.K == 3 && mc.d == 2, ErrorCode::kConfig, "data.generate.triangle needs model K = 3 and d = 2");
      truth = triangle_params(spacing);
    } else {
      truth.centers = get_required<std::vector<std::vector<double>>>(g, "centers", "data.generate");
      truth.weights = mc.weights;
    }
    if (g.contains("weights")) truth.weights = get_or<std::vector<double>>(g, "weights", {}, "data.generate");
    else if (!mc.unknown_weights()) truth.weights = mc.weights;
    require(!truth.weights.empty(), ErrorCode::kConfig,
            "data.generate.weights is required when the model weights are unknown");
    const auto n = get_required<std::size_t>(g, "n", "data.generate");
    data = gmm_generate(mc, truth, n, seeds.data);
  } else {
    const json& l = d.at("load");
    check_keys(l, "data.load", {"path", "centers", "weights"});
    source = get_required<std::string>(l, "path", "data.load");
    data = load_dataset<std::vector<double>>(source);
    if (l.contains("centers")) {
      truth.centers = get_or<std::vector<std::vector<double>>>(l, "centers", {}, "data.load");
    } else if (data.provenance.contains("generator") && data.provenance["generator"].contains("centers")) {
      truth.centers = data.provenance["generator"]["centers"].get<std::vector<std::vector<double>>>();
      truth.weights = data.provenance["generator"].value("weights", std::vector<double>{});
    }
    if (l.contains("weights")) truth.weights = get_or<std::vector<double>>(l, "weights", {}, "data.load");
    // recover the spacing when the true centers are the standard triangle
    if (mc.K == 3 && mc.d == 2 && truth.centers.size() == 3 && truth.centers[0].size() == 2) {
      const auto tri = triangle_params(truth.centers[0][0]).centers;
      bool same = truth.centers[0][0] > 0.0;
      for (std::size_t k = 0; k < 3 && same; ++k)
        for (std::size_t j = 0; j < 2; ++j) same = same && std::abs(tri[k][j] - truth.centers[k][j]) <= 1e-12 * tri[0][0];
      if (same) spacing = truth.centers[0][0];
    }
  }
  for (const auto& x : data.observations)
    require(x.size() == mc.d, ErrorCode::kDimensionMismatch, "dataset dimension does not match model.d");
  Problem<GmmModel> p{GmmModel(mc), std::move(data)};
  p.obs_dim = mc.d;
  p.source = source;
  p.spacing = spacing;
  if (!truth.centers.empty()) {
    require(truth.centers.size() == mc.K, ErrorCode::kConfig, "true centers: need K of them");
    p.truth_centers = truth.centers;
    for (const auto& c : truth.centers) {
      require(c.size() == mc.d, ErrorCode::kConfig, "true centers: wrong dimension");
      p.truth.insert(p.truth.end(), c.begin(), c.end());
    }
    p.snr_dmin = mc.K >= 2 ? min_pair_distance(truth.centers) / mc.beta : std::numeric_limits<double>::infinity();
    p.snr = std::isnan(spacing) ? p.snr_dmin : spacing / mc.beta;
  }
  p.input_hash = dataset_hash(p.data, mc.d);
  return p;
}

inline Problem<MorModel> build_mor(const json& cfg, const Seeds& seeds) {
  std::vector<double> theta_star;
  const MorConfig mc = parse_mor_model(sub(cfg, "model"), &theta_star);
  const json& d = sub(cfg, "data");
  check_data_block(d);
  Dataset<MorObservation> data;
  std::string source = "generated";
  if (d.contains("generate")) {
    const json& g = d.at("generate");
    check_keys(g, "data.generate", {"n", "seed", "theta_star"});
    if (g.contains("theta_star")) theta_star = get_or<std::vector<double>>(g, "theta_star", {}, "data.generate");
    require(!theta_star.empty(), ErrorCode::kConfig, "data.generate: theta_star is required (here or in model)");
    data = mor_generate(mc, theta_star, get_required<std::size_t>(g, "n", "data.generate"), seeds.data);
  } else {
    const json& l = d.at("load");
    check_keys(l, "data.load", {"path", "theta_star"});
    source = get_required<std::string>(l, "path", "data.load");
    data = load_dataset<MorObservation>(source);
    if (l.contains("theta_star")) theta_star = get_or<std::vector<double>>(l, "theta_star", {}, "data.load");
    else if (theta_star.empty() && data.provenance.contains("generator") &&
             data.provenance["generator"].contains("theta_star"))
      theta_star = data.provenance["generator"]["theta_star"].get<std::vector<double>>();
  }
  for (const auto& o : data.observations)
    require(o.x.size() == mc.d, ErrorCode::kDimensionMismatch, "dataset dimension does not match model.d");
  Problem<MorModel> p{MorModel(mc), std::move(data)};
  p.obs_dim = mc.d;
  p.source = source;
  if (!theta_star.empty()) {
    require(theta_star.size() == mc.d, ErrorCode::kConfig, "theta_star must have length d");
    p.truth = theta_star;
    double s = 0.0;
    for (double v : theta_star) s += v * v;
    p.snr = p.snr_dmin = std::sqrt(s) / mc.beta;
  }
  p.input_hash = dataset_hash(p.data, mc.d);
  return p;
}

template <class F>
decltype(auto) with_problem(const json& cfg, const Seeds& seeds, F&& f) {
  const auto type = get_or<std::string>(sub(cfg, "model"), "type", "", "model");
  if (type == "gmm") return f(build_gmm(cfg, seeds));
  if (type == "mor") return f(build_mor(cfg, seeds));
  fail(ErrorCode::kConfig, "model.type must be gmm or mor (got '" + type + "')");
}

inline std::vector<std::string> coordinate_names(const GmmModel& m) {
  std::vector<std::string> n;
  const auto& c = m.config();
  for (std::size_t k = 0; k < c.K; ++k)
    for (std::size_t j = 0; j < c.d; ++j) n.push_back("m" + std::to_string(k + 1) + "_" + std::to_string(j + 1));
  if (c.unknown_weights())
    for (std::size_t k = 0; k < c.K; ++k) n.push_back("logit" + std::to_string(k + 1));
  return n;
}

inline std::vector<std::string> coordinate_names(const MorModel& m) {
  std::vector<std::string> n;
  for (std::size_t j = 0; j < m.config().d; ++j) n.push_back("theta_" + std::to_string(j + 1));
  return n;
}

/// First m coordinates of every particle.
inline ParticleCloud leading_coordinates(const ParticleCloud& c, std::size_t m) {
  if (m == c.dim()) return c;
  std::vector<double> out(c.size() * m);
  for (std::size_t b = 0; b < c.size(); ++b) std::copy_n(c.point(b).data(), m, out.data() + b * m);
  return ParticleCloud(m, std::move(out), c.weights());
}

inline std::vector<std::vector<double>> mean_centers(const GmmModel& m, const ParticleCloud& c) {
  const auto mu = c.mean();
  const auto& cfg = m.config();
  std::vector<std::vector<double>> out(cfg.K);
  for (std::size_t k = 0; k < cfg.K; ++k) out[k].assign(mu.begin() + k * cfg.d, mu.begin() + (k + 1) * cfg.d);
  return out;
}

/// Alignment reference: true centers when known, else the given cloud's mean.
inline std::vector<std::vector<double>> alignment_reference(const Problem<GmmModel>& p, const ParticleCloud& fallback) {
  return p.truth_centers.empty() ? mean_centers(p.model, fallback) : p.truth_centers;
}

inline std::vector<double> alignment_reference(const Problem<MorModel>& p, const ParticleCloud& fallback) {
  return p.truth.empty() ? fallback.mean() : p.truth;
}

/// Per-particle label alignment (GMM).
inline ParticleCloud align_cloud(const Problem<GmmModel>& p, const ParticleCloud& c,
                                 const std::vector<std::vector<double>>& ref, bool /*per_particle*/) {
  return align_components(c, p.model.layout(), ref);
}

/// Sign alignment (MR): one global flip for a mean-field cloud, per sample for a posterior chain.
inline ParticleCloud align_cloud(const Problem<MorModel>&, const ParticleCloud& c, const std::vector<double>& ref,
                                 bool per_particle) {
  return per_particle ? sign_align_each(c, ref) : sign_align_global(c, ref);
}

/// E||theta - theta*||^2 under the cloud after alignment; GMM uses the center coordinates only.
inline double statistical_error_sq(const Problem<GmmModel>& p, const ParticleCloud& c) {
  const auto aligned = leading_coordinates(align_components(c, p.model.layout(), p.truth_centers), p.truth.size());
  return std::pow(w2_point_mass(aligned, p.truth), 2);
}

inline double statistical_error_sq(const Problem<MorModel>& p, const ParticleCloud& c) {
  return std::pow(w2_point_mass(sign_align_global(c, p.truth), p.truth), 2);
}

struct InitSpec {
  std::string type;
  double noise = 0.5;
  std::vector<double> point;
  int restarts = 5;
};

inline InitSpec parse_init(const json& j, const std::string& fallback_type) {
  check_keys(j, "init", {"type", "noise", "point", "restarts", "seed"});
  InitSpec s;
  s.type = get_or<std::string>(j, "type", fallback_type, "init");
  s.noise = get_or<double>(j, "noise", 0.5, "init");
  s.point = get_or<std::vector<double>>(j, "point", {}, "init");
  s.restarts = get_or<int>(j, "restarts", 5, "init");
  require(s.noise >= 0.0, ErrorCode::kConfig, "init.noise must be >= 0");
  return s;
}

/// K-means centers; unknown weights start from log cluster proportions.
inline std::vector<double> kmeans_point(const Problem<GmmModel>& p, std::uint64_t seed, int restarts) {
  const auto& cfg = p.model.config();
  const auto km = kmeans_init(p.data.observations, cfg.K, seed, restarts);
  GmmParams g{km.centers, cfg.weights};
  if (cfg.unknown_weights()) {
    std::vector<double> cnt(cfg.K, 1.0);
    for (int a : km.assignment) cnt[static_cast<std::size_t>(a)] += 1.0;
    const double tot = static_cast<double>(p.data.size() + cfg.K);
    g.weights.clear();
    for (double c : cnt) g.weights.push_back(c / tot);
  }
  return g.flatten(cfg);
}

/// Top eigenvector of (1/n) sum y^2 x x', scaled by sqrt((lambda_max - beta^2)/3); recovers +-theta*.
inline std::vector<double> spectral_point(const Problem<MorModel>& p) {
  const auto& cfg = p.model.config();
  const auto d = static_cast<Eigen::Index>(cfg.d);
  require(p.data.size() > 0, ErrorCode::kInvalidArgument, "spectral init: empty dataset");
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(d, d);
  for (const auto& o : p.data.observations)
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) M(a, b) += o.y * o.y * o.x[a] * o.x[b];
  M /= static_cast<double>(p.data.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  const double lmax = es.eigenvalues()(d - 1);
  const double scale = std::sqrt(std::max((lmax - cfg.beta * cfg.beta) / 3.0, 1e-6));
  std::vector<double> th(cfg.d);
  for (Eigen::Index j = 0; j < d; ++j) th[j] = scale * es.eigenvectors()(j, d - 1);
  return th;
}

/// Prior draws; the repulsive factor d_min/(d_min+g0) <= 1 is applied by rejection.
inline ParticleCloud prior_cloud(const GmmModel& m, std::size_t B, std::uint64_t seed) {
  const auto& cfg = m.config();
  const std::size_t p = m.param_dim();
  std::vector<double> pts(B * p);
  for (std::size_t b = 0; b < B; ++b) {
    CounterStream s(seed, 0x5052, b);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int attempt = 0;; ++attempt) {
      require(attempt < 100000, ErrorCode::kNotConverged, "prior draw: rejection sampler did not accept");
      double* th = pts.data() + b * p;
      for (std::size_t j = 0; j < cfg.K * cfg.d; ++j) th[j] = std::sqrt(cfg.sigma2) * nd(s);
      for (std::size_t j = cfg.K * cfg.d; j < p; ++j) th[j] = std::sqrt(cfg.sigma_w2) * nd(s);
      if (cfg.prior != GmmPrior::kRepulsive || cfg.K < 2) break;
      const double dm = m.min_pair(std::span<const double>(th, p)).dist;
      if (uniform01(s) < dm / (dm + cfg.g0)) break;
    }
  }
  return ParticleCloud(p, std::move(pts));
}

inline ParticleCloud prior_cloud(const MorModel& m, std::size_t B, std::uint64_t seed) {
  return init_cloud(std::vector<double>(m.param_dim(), 0.0), std::sqrt(m.config().sigma2), B, seed);
}

inline std::vector<double> init_point(const Problem<GmmModel>& p, const InitSpec& s, std::uint64_t seed) {
  if (s.type == "kmeans") return kmeans_point(p, seed, s.restarts);
  if (s.type == "truth") {
    require(!p.truth.empty(), ErrorCode::kConfig, "init.type truth needs known true parameters");
    GmmParams g{p.truth_centers, p.model.config().weights};
    if (p.model.config().unknown_weights()) g.weights.assign(p.model.config().K, 1.0 / p.model.config().K);
    return g.flatten(p.model.config());
  }
  fail(ErrorCode::kConfig, "init.type '" + s.type + "' is not available for gmm (kmeans | point | prior | truth)");
}

inline std::vector<double> init_point(const Problem<MorModel>& p, const InitSpec& s, std::uint64_t) {
  if (s.type == "spectral") return spectral_point(p);
  if (s.type == "truth") {
    require(!p.truth.empty(), ErrorCode::kConfig, "init.type truth needs theta_star");
    return p.truth;
  }
  fail(ErrorCode::kConfig, "init.type '" + s.type + "' is not available for mor (spectral | point | prior | truth)");
}

inline std::string default_init_type(const GmmModel&) { return "kmeans"; }
inline std::string default_init_type(const MorModel&) { return "spectral"; }

template <class M>
ParticleCloud build_init(const Problem<M>& p, const json& init, std::size_t B, std::uint64_t seed) {
  const InitSpec s = parse_init(init, default_init_type(p.model));
  if (s.type == "prior") return prior_cloud(p.model, B, seed);
  std::vector<double> point = s.type == "point" ? s.point : init_point(p, s, derive_seed(seed, 1));
  require(point.size() == p.model.param_dim(), ErrorCode::kConfig,
          "init point has " + std::to_string(point.size()) + " coordinates, model needs " +
              std::to_string(p.model.param_dim()));
  return init_cloud(point, s.noise, B, derive_seed(seed, 2));
}

}  // namespace mfwgf::cli
