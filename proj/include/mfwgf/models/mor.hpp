#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfwgf/core/error.hpp"
#include "mfwgf/core/rng.hpp"
#include "mfwgf/dataset_io.hpp"
#include "mfwgf/model.hpp"

namespace mfwgf {

struct MorObservation {
  std::vector<double> x;
  double y = 0.0;
};

template <>
struct ObservationCodec<MorObservation> {
  static std::vector<std::string> header(std::size_t d) {
    auto h = ObservationCodec<std::vector<double>>::header(d);
    h.push_back("y");
    return h;
  }
  static std::vector<double> to_row(const MorObservation& o) {
    std::vector<double> r = o.x;
    r.push_back(o.y);
    return r;
  }
  static MorObservation from_row(const std::vector<double>& row) {
    require(row.size() >= 2, ErrorCode::kIo, "mor dataset: need at least one covariate and y");
    return {std::vector<double>(row.begin(), row.end() - 1), row.back()};
  }
};

struct MorConfig {
  std::size_t d = 2;
  double beta = 1.0;
  double sigma2 = 1.0;

  void validate() const {
    require(d >= 1, ErrorCode::kConfig, "mor: d must be >= 1");
    require(beta > 0.0, ErrorCode::kConfig, "mor: beta must be positive");
    require(sigma2 > 0.0, ErrorCode::kConfig, "mor: sigma2 must be positive");
  }
};

/// Class index 0 is z = +1, index 1 is z = -1.
inline constexpr double mor_sign(std::size_t z) { return z == 0 ? 1.0 : -1.0; }

class MorModel {
 public:
  using observation_type = MorObservation;

  explicit MorModel(MorConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    beta2_ = cfg_.beta * cfg_.beta;
    const double two_pi = 2.0 * std::numbers::pi;
    const_ = -std::log(2.0) - 0.5 * std::log(two_pi * beta2_) - 0.5 * static_cast<double>(cfg_.d) * std::log(two_pi);
  }

  [[nodiscard]] const MorConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return 2; }
  [[nodiscard]] std::size_t param_dim() const noexcept { return cfg_.d; }

  [[nodiscard]] double log_joint(const observation_type& o, std::size_t z, std::span<const double> th) const {
    double xx = 0.0;
    for (double v : o.x) xx += v * v;
    const double r = o.y - mor_sign(z) * dot(o.x, th);
    return -0.5 * xx - 0.5 * r * r / beta2_ + const_;
  }

  void log_joint_all(const observation_type& o, std::span<const double> th, std::span<double> out) const {
    double xx = 0.0;
    for (double v : o.x) xx += v * v;
    const double xt = dot(o.x, th);
    const double rp = o.y - xt, rm = o.y + xt;
    out[0] = -0.5 * xx - 0.5 * rp * rp / beta2_ + const_;
    out[1] = -0.5 * xx - 0.5 * rm * rm / beta2_ + const_;
  }

  void add_grad_log_joint(const observation_type& o, std::size_t z, std::span<const double> th, double scale,
                          std::span<double> out) const {
    const double c = scale * (mor_sign(z) * o.y - dot(o.x, th)) / beta2_;
    for (std::size_t j = 0; j < cfg_.d; ++j) out[j] += c * o.x[j];
  }

  [[nodiscard]] double log_prior(std::span<const double> th) const {
    double s = 0.0;
    for (double v : th) s += v * v;
    return -0.5 * s / cfg_.sigma2;
  }

  void add_grad_log_prior(std::span<const double> th, double scale, std::span<double> out) const {
    for (std::size_t j = 0; j < cfg_.d; ++j) out[j] -= scale * th[j] / cfg_.sigma2;
  }

  /// p(z = +1 | x, y, theta) = logistic(2 y x'theta / beta^2).
  [[nodiscard]] double conditional(const observation_type& o, std::span<const double> th) const {
    const double a = 2.0 * o.y * dot(o.x, th) / beta2_;
    return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
  }

 private:
  static double dot(const std::vector<double>& x, std::span<const double> th) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * th[j];
    return s;
  }

  MorConfig cfg_;
  double beta2_ = 1.0;
  double const_ = 0.0;
};

static_assert(LatentModel<MorModel>);

/// x ~ N(0, I), z ~ Unif{+1, -1}, y ~ N(z x'theta*, beta^2).
inline Dataset<MorObservation> mor_generate(const MorConfig& cfg, const std::vector<double>& theta_star,
                                            std::size_t n, std::uint64_t seed) {
  cfg.validate();
  require(theta_star.size() == cfg.d, ErrorCode::kConfig, "mor_generate: theta_star must have length d");
  Dataset<MorObservation> data;
  for (std::size_t i = 0; i < n; ++i) {
    CounterStream s(seed, 0x6D6F72, i);
    std::normal_distribution<double> nd(0.0, 1.0);
    MorObservation o;
    o.x.resize(cfg.d);
    for (double& v : o.x) v = nd(s);
    const bool plus = (s() >> 63) == 0;
    double xt = 0.0;
    for (std::size_t j = 0; j < cfg.d; ++j) xt += o.x[j] * theta_star[j];
    o.y = (plus ? xt : -xt) + cfg.beta * nd(s);
    data.observations.push_back(std::move(o));
    data.labels.push_back(plus ? 0 : 1);
  }
  data.provenance = {{"model", "mor"},
                     {"n", n},
                     {"seed", seed},
                     {"generator", {{"theta_star", theta_star}, {"beta", cfg.beta}}}};
  return data;
}

}  // namespace mfwgf
