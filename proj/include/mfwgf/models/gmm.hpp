#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfwgf/core/error.hpp"
#include "mfwgf/core/rng.hpp"
#include "mfwgf/measures.hpp"
#include "mfwgf/model.hpp"

namespace mfwgf {

enum class GmmPrior { kRepulsive, kGaussian };

struct GmmConfig {
  std::size_t K = 3;
  std::size_t d = 2;
  double beta = 1.0;
  /// Known mixing weights; empty means unknown (logits are inferred).
  std::vector<double> weights;
  GmmPrior prior = GmmPrior::kRepulsive;
  double g0 = 1.0;
  double sigma2 = 1.0;
  double sigma_w2 = 1.0;
  /// Per-center norm cap applied by projection; 0 disables it.
  double norm_cap = 0.0;

  [[nodiscard]] bool unknown_weights() const { return weights.empty(); }

  void validate() const {
    require(K >= 1 && d >= 1, ErrorCode::kConfig, "gmm: K and d must be >= 1");
    require(beta > 0.0, ErrorCode::kConfig, "gmm: beta must be positive");
    require(g0 > 0.0, ErrorCode::kConfig, "gmm: g0 must be positive");
    require(sigma2 > 0.0 && sigma_w2 > 0.0, ErrorCode::kConfig, "gmm: prior variances must be positive");
    require(norm_cap >= 0.0, ErrorCode::kConfig, "gmm: norm_cap must be >= 0");
    if (!unknown_weights()) {
      require(weights.size() == K, ErrorCode::kConfig, "gmm: need K weights");
      double s = 0.0;
      for (double w : weights) {
        require(w > 0.0, ErrorCode::kConfig, "gmm: weights must be positive");
        s += w;
      }
      require(std::abs(s - 1.0) <= 1e-9, ErrorCode::kConfig, "gmm: weights must sum to 1");
    }
  }
};

struct GmmParams {
  std::vector<std::vector<double>> centers;
  /// Used for generation; in unknown-weights mode flatten() stores log-weights as logits.
  std::vector<double> weights;

  [[nodiscard]] std::vector<double> flatten(const GmmConfig& cfg) const {
    std::vector<double> t;
    for (const auto& c : centers) t.insert(t.end(), c.begin(), c.end());
    if (cfg.unknown_weights())
      for (double w : weights) t.push_back(std::log(w));
    return t;
  }
};

/// Centers (d,0), (0, sqrt(3) d), (-d, 0) with weights (0.3, 0.3, 0.4).
inline GmmParams triangle_params(double d) {
  return {{{d, 0.0}, {0.0, std::sqrt(3.0) * d}, {-d, 0.0}}, {0.3, 0.3, 0.4}};
}

class GmmModel {
 public:
  using observation_type = std::vector<double>;

  explicit GmmModel(GmmConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    beta2_ = cfg_.beta * cfg_.beta;
    norm_const_ = -0.5 * static_cast<double>(cfg_.d) * std::log(2.0 * std::numbers::pi * beta2_);
    for (double w : cfg_.weights) log_w_.push_back(std::log(w));
  }

  [[nodiscard]] const GmmConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return cfg_.K; }
  [[nodiscard]] std::size_t param_dim() const noexcept {
    return cfg_.K * cfg_.d + (cfg_.unknown_weights() ? cfg_.K : 0);
  }
  [[nodiscard]] ComponentLayout layout() const {
    return {cfg_.K, cfg_.d, cfg_.unknown_weights() ? std::size_t{1} : std::size_t{0}};
  }

  [[nodiscard]] double log_joint(const observation_type& x, std::size_t z, std::span<const double> th) const {
    return log_weight(z, th) - 0.5 * sq_to_center(x, z, th) / beta2_ + norm_const_;
  }

  void log_joint_all(const observation_type& x, std::span<const double> th, std::span<double> out) const {
    const std::size_t K = cfg_.K;
    double lse = 0.0;
    if (cfg_.unknown_weights()) lse = logits_lse(th);
    for (std::size_t z = 0; z < K; ++z) {
      const double lw = cfg_.unknown_weights() ? th[K * cfg_.d + z] - lse : log_w_[z];
      out[z] = lw - 0.5 * sq_to_center(x, z, th) / beta2_ + norm_const_;
    }
  }

  void add_grad_log_joint(const observation_type& x, std::size_t z, std::span<const double> th, double scale,
                          std::span<double> out) const {
    const std::size_t d = cfg_.d;
    const double s = scale / beta2_;
    for (std::size_t j = 0; j < d; ++j) out[z * d + j] += s * (x[j] - th[z * d + j]);
    if (cfg_.unknown_weights()) {
      const std::size_t off = cfg_.K * d;
      const double lse = logits_lse(th);
      for (std::size_t k = 0; k < cfg_.K; ++k) out[off + k] -= scale * std::exp(th[off + k] - lse);
      out[off + z] += scale;
    }
  }

  [[nodiscard]] double log_prior(std::span<const double> th) const {
    double s = 0.0;
    const std::size_t Kd = cfg_.K * cfg_.d;
    for (std::size_t j = 0; j < Kd; ++j) s += th[j] * th[j];
    double lp = -0.5 * s / cfg_.sigma2;
    if (cfg_.prior == GmmPrior::kRepulsive && cfg_.K >= 2) {
      const auto mp = min_pair(th);
      lp += std::log(mp.dist) - std::log(mp.dist + cfg_.g0);
    }
    if (cfg_.unknown_weights()) {
      double a = 0.0;
      for (std::size_t k = 0; k < cfg_.K; ++k) a += th[Kd + k] * th[Kd + k];
      lp -= 0.5 * a / cfg_.sigma_w2;
    }
    return lp;
  }

  void add_grad_log_prior(std::span<const double> th, double scale, std::span<double> out) const {
    const std::size_t d = cfg_.d, Kd = cfg_.K * d;
    for (std::size_t j = 0; j < Kd; ++j) out[j] -= scale * th[j] / cfg_.sigma2;
    if (cfg_.prior == GmmPrior::kRepulsive && cfg_.K >= 2) {
      const auto mp = min_pair(th);
      const double c = scale * (1.0 / mp.dist - 1.0 / (mp.dist + cfg_.g0)) / mp.dist;
      for (std::size_t j = 0; j < d; ++j) {
        const double u = th[mp.i * d + j] - th[mp.j * d + j];
        out[mp.i * d + j] += c * u;
        out[mp.j * d + j] -= c * u;
      }
    }
    if (cfg_.unknown_weights())
      for (std::size_t k = 0; k < cfg_.K; ++k) out[Kd + k] -= scale * th[Kd + k] / cfg_.sigma_w2;
  }

  void project(std::span<double> th) const {
    if (cfg_.norm_cap <= 0.0) return;
    const std::size_t d = cfg_.d;
    for (std::size_t k = 0; k < cfg_.K; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += th[k * d + j] * th[k * d + j];
      const double r = std::sqrt(s);
      if (r > cfg_.norm_cap)
        for (std::size_t j = 0; j < d; ++j) th[k * d + j] *= cfg_.norm_cap / r;
    }
  }

  /// Mixing weights implied by theta.
  [[nodiscard]] std::vector<double> weights_of(std::span<const double> th) const {
    if (!cfg_.unknown_weights()) return cfg_.weights;
    const double lse = logits_lse(th);
    std::vector<double> w(cfg_.K);
    for (std::size_t k = 0; k < cfg_.K; ++k) w[k] = std::exp(th[cfg_.K * cfg_.d + k] - lse);
    return w;
  }

  struct MinPair {
    std::size_t i, j;
    double dist;
  };

  /// Closest pair of centers; ties resolve to the lexicographically smallest (i, j).
  [[nodiscard]] MinPair min_pair(std::span<const double> th) const {
    const std::size_t d = cfg_.d;
    MinPair best{0, 1, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < cfg_.K; ++i)
      for (std::size_t j = i + 1; j < cfg_.K; ++j) {
        const double s = squared_distance(th.subspan(i * d, d), th.subspan(j * d, d));
        if (s < best.dist) best = {i, j, s};
      }
    best.dist = std::sqrt(best.dist);
    if (!(best.dist > 0.0))
      fail(ErrorCode::kDegenerate,
           "repulsive prior: centers " + std::to_string(best.i) + " and " + std::to_string(best.j) + " coincide",
           {static_cast<std::int64_t>(best.i), static_cast<std::int64_t>(best.j)});
    return best;
  }

 private:
  [[nodiscard]] double sq_to_center(const observation_type& x, std::size_t z, std::span<const double> th) const {
    const std::size_t d = cfg_.d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = x[j] - th[z * d + j];
      s += e * e;
    }
    return s;
  }

  [[nodiscard]] double logits_lse(std::span<const double> th) const {
    return logsumexp(th.subspan(cfg_.K * cfg_.d, cfg_.K));
  }

  [[nodiscard]] double log_weight(std::size_t z, std::span<const double> th) const {
    if (!cfg_.unknown_weights()) return log_w_[z];
    return th[cfg_.K * cfg_.d + z] - logits_lse(th);
  }

  GmmConfig cfg_;
  double beta2_ = 1.0;
  double norm_const_ = 0.0;
  std::vector<double> log_w_;
};

static_assert(LatentModel<GmmModel>);

inline double uniform01(CounterStream& s) { return static_cast<double>(s() >> 11) * 0x1.0p-53; }

/// n i.i.d. draws: class ~ Categorical(w), x ~ N(m_class, beta^2 I). Observation i uses its own stream.
inline Dataset<std::vector<double>> gmm_generate(const GmmConfig& cfg, const GmmParams& truth, std::size_t n,
                                                std::uint64_t seed) {
  cfg.validate();
  require(truth.centers.size() == cfg.K, ErrorCode::kConfig, "gmm_generate: need K true centers");
  const std::vector<double>& w = truth.weights.empty() ? cfg.weights : truth.weights;
  require(w.size() == cfg.K, ErrorCode::kConfig, "gmm_generate: need K true weights");
  Dataset<std::vector<double>> data;
  data.observations.reserve(n);
  data.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterStream s(seed, 0x6D6D, i);
    const double u = uniform01(s);
    std::size_t z = 0;
    double c = w[0];
    while (z + 1 < cfg.K && u >= c) c += w[++z];
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> x(cfg.d);
    require(truth.centers[z].size() == cfg.d, ErrorCode::kConfig, "gmm_generate: center dimension");
    for (std::size_t j = 0; j < cfg.d; ++j) x[j] = truth.centers[z][j] + cfg.beta * nd(s);
    data.observations.push_back(std::move(x));
    data.labels.push_back(static_cast<int>(z));
  }
  data.provenance = {{"model", "gmm"},
                     {"n", n},
                     {"seed", seed},
                     {"generator", {{"centers", truth.centers}, {"weights", w}, {"beta", cfg.beta}}}};
  return data;
}

}  // namespace mfwgf
