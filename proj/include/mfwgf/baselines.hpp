#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "mfwgf/core/error.hpp"
#include "mfwgf/core/rng.hpp"
#include "mfwgf/models/gmm.hpp"
#include "mfwgf/models/mor.hpp"
#include "mfwgf/particle_cloud.hpp"

namespace mfwgf {

/// B particles point + noise_scale * N(0, I); particle b uses its own stream.
inline ParticleCloud init_cloud(std::span<const double> point, double noise_scale, std::size_t B, std::uint64_t seed) {
  require(B >= 1, ErrorCode::kInvalidArgument, "init_cloud: need B >= 1");
  require(noise_scale >= 0.0, ErrorCode::kInvalidArgument, "init_cloud: noise scale must be >= 0");
  const std::size_t p = point.size();
  std::vector<double> pts(B * p);
  for (std::size_t b = 0; b < B; ++b) {
    CounterStream s(seed, 0x1C1C, b);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t j = 0; j < p; ++j) pts[b * p + j] = point[j] + noise_scale * nd(s);
  }
  return ParticleCloud(p, std::move(pts));
}

struct KMeansResult {
  std::vector<std::vector<double>> centers;
  std::vector<int> assignment;
  double objective = 0.0;
  /// Within-cluster sum of squares after each Lloyd iteration of the best restart.
  std::vector<double> history;
};

namespace detail {

inline KMeansResult lloyd(const std::vector<std::vector<double>>& X, std::size_t K, std::size_t first,
                          int max_iter) {
  const std::size_t n = X.size(), d = X.front().size();
  KMeansResult r;
  // greedy farthest-point seeding from X[first]
  r.centers.push_back(X[first]);
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  while (r.centers.size() < K) {
    std::size_t far = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mind[i] = std::min(mind[i], squared_distance(X[i], r.centers.back()));
      if (mind[i] > mind[far]) far = i;
    }
    r.centers.push_back(X[far]);
  }
  r.assignment.assign(n, 0);
  std::vector<double> dist(n);
  for (int it = 0; it < max_iter; ++it) {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        const double dd = squared_distance(X[i], r.centers[k]);
        if (dd < bd) {
          bd = dd;
          best = k;
        }
      }
      r.assignment[i] = static_cast<int>(best);
      dist[i] = bd;
      obj += bd;
    }
    r.history.push_back(obj);
    r.objective = obj;
    if (r.history.size() >= 2 && r.history[r.history.size() - 2] == obj) break;
    std::vector<std::vector<double>> sum(K, std::vector<double>(d, 0.0));
    std::vector<std::size_t> cnt(K, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto z = static_cast<std::size_t>(r.assignment[i]);
      ++cnt[z];
      for (std::size_t j = 0; j < d; ++j) sum[z][j] += X[i][j];
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (cnt[k] == 0) {
        // empty cluster: reseed at the point worst served by its center
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        r.centers[k] = X[far];
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) r.centers[k][j] = sum[k][j] / static_cast<double>(cnt[k]);
    }
  }
  return r;
}

}  // namespace detail

/// Lloyd's algorithm with farthest-point seeding; best of `restarts` by within-cluster sum of squares.
inline KMeansResult kmeans_init(const std::vector<std::vector<double>>& X, std::size_t K, std::uint64_t seed,
                                int restarts = 5, int max_iter = 200) {
  require(!X.empty(), ErrorCode::kInvalidArgument, "kmeans: no data");
  require(K >= 1 && K <= X.size(), ErrorCode::kInvalidArgument, "kmeans: need 1 <= K <= n");
  require(restarts >= 1, ErrorCode::kInvalidArgument, "kmeans: need >= 1 restart");
  KMeansResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    CounterStream s(seed, 0x4B4D, static_cast<std::uint64_t>(r));
    const std::size_t first = static_cast<std::size_t>(s() % X.size());
    auto res = detail::lloyd(X, K, first, max_iter);
    if (res.objective < best.objective) best = std::move(res);
  }
  return best;
}

struct GibbsResult {
  /// Post-burn-in draws in the model's flattened parameter layout.
  ParticleCloud samples;
  std::vector<double> acceptance;
  double final_mh_step = 0.0;
  std::vector<std::string> warnings;
};

struct GibbsOptions {
  std::size_t iterations = 5000;
  /// Negative selects 20% of iterations.
  long long burn_in = -1;
  std::uint64_t seed = 0;
  double mh_step = 0.1;
  std::size_t thin = 1;
  /// Starting parameter; empty selects K-means centers (GMM) or a prior draw (MR).
  std::vector<double> init;

  [[nodiscard]] std::size_t burn() const {
    return burn_in < 0 ? iterations / 5 : static_cast<std::size_t>(burn_in);
  }
};

namespace detail {

inline double gamma_draw(CounterStream& s, double shape) {
  std::gamma_distribution<double> g(shape, 1.0);
  return g(s);
}

}  // namespace detail

/// z | m, w; then m | z (conjugate draw, or random-walk Metropolis per center under the
/// repulsive prior); then w | z ~ Dirichlet(1 + counts) when weights are unknown.
inline GibbsResult gibbs_gmm(const GmmModel& model, const Dataset<std::vector<double>>& data,
                             const GibbsOptions& opt) {
  const GmmConfig& cfg = model.config();
  const std::size_t K = cfg.K, d = cfg.d, n = data.size(), p = model.param_dim();
  const std::size_t burn = opt.burn();
  require(opt.iterations > burn, ErrorCode::kInvalidArgument, "gibbs: iterations must exceed burn-in");
  require(opt.mh_step > 0.0, ErrorCode::kInvalidArgument, "gibbs: mh_step must be positive");
  const double beta2 = cfg.beta * cfg.beta;
  std::vector<double> th = opt.init;
  if (th.empty()) {
    require(n >= K, ErrorCode::kInvalidArgument, "gibbs: need n >= K for the K-means start");
    const auto km = kmeans_init(data.observations, K, derive_seed(opt.seed, 1));
    GmmParams init{km.centers, cfg.unknown_weights() ? std::vector<double>(K, 1.0 / K) : cfg.weights};
    th = init.flatten(cfg);
  }
  require(th.size() == p, ErrorCode::kDimensionMismatch, "gibbs: init has the wrong dimension");
  std::vector<int> z(n, 0);
  std::vector<double> samples, lp(K);
  double step = opt.mh_step;
  std::vector<std::size_t> acc(K, 0), tried(K, 0), win_acc(K, 0), win_try(K, 0);
  const bool repulsive = cfg.prior == GmmPrior::kRepulsive && K >= 2;
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    CounterStream s(opt.seed, 0x6769, it);
    std::normal_distribution<double> nd(0.0, 1.0);
    // (a) labels
    for (std::size_t i = 0; i < n; ++i) {
      model.log_joint_all(data[i], th, lp);
      const double m = *std::max_element(lp.begin(), lp.end());
      double tot = 0.0;
      for (double& v : lp) tot += (v = std::exp(v - m));
      double u = uniform01(s) * tot;
      std::size_t k = 0;
      while (k + 1 < K && u >= lp[k]) u -= lp[k++];
      z[i] = static_cast<int>(k);
    }
    std::vector<std::vector<double>> S(K, std::vector<double>(d, 0.0));
    std::vector<double> cnt(K, 0.0), sxx(K, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(z[i]);
      cnt[k] += 1.0;
      for (std::size_t j = 0; j < d; ++j) {
        S[k][j] += data[i][j];
        sxx[k] += data[i][j] * data[i][j];
      }
    }
    // (b) centers
    for (std::size_t k = 0; k < K; ++k) {
      if (!repulsive) {
        const double prec = cnt[k] / beta2 + 1.0 / cfg.sigma2;
        for (std::size_t j = 0; j < d; ++j) th[k * d + j] = (S[k][j] / beta2) / prec + nd(s) / std::sqrt(prec);
        continue;
      }
      auto loglik = [&](std::span<const double> m) {
        double mm = 0.0, ms = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          mm += m[j] * m[j];
          ms += m[j] * S[k][j];
        }
        return -(sxx[k] - 2.0 * ms + cnt[k] * mm) / (2.0 * beta2);
      };
      std::vector<double> prop = th;
      for (std::size_t j = 0; j < d; ++j) prop[k * d + j] += step * nd(s);
      const double u = uniform01(s);
      double log_ratio = -std::numeric_limits<double>::infinity();
      try {
        log_ratio = loglik(std::span<const double>(prop).subspan(k * d, d)) + model.log_prior(prop) -
                    loglik(std::span<const double>(th).subspan(k * d, d)) - model.log_prior(th);
      } catch (const Error&) {
        // coincident centers: zero prior mass, reject
      }
      ++tried[k];
      ++win_try[k];
      if (std::log(u) < log_ratio) {
        th = std::move(prop);
        ++acc[k];
        ++win_acc[k];
      }
    }
    // (c) weights
    if (cfg.unknown_weights()) {
      std::vector<double> g(K);
      double tot = 0.0;
      for (std::size_t k = 0; k < K; ++k) tot += (g[k] = std::max(detail::gamma_draw(s, 1.0 + cnt[k]), 1e-300));
      for (std::size_t k = 0; k < K; ++k) th[K * d + k] = std::log(g[k] / tot);
    }
    // step tuning toward 0.3 acceptance, burn-in only
    if (repulsive && it < burn && (it + 1) % 50 == 0) {
      double a = 0.0, t = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        a += static_cast<double>(win_acc[k]);
        t += static_cast<double>(win_try[k]);
      }
      step *= std::exp(a / t - 0.3);
      std::fill(win_acc.begin(), win_acc.end(), 0);
      std::fill(win_try.begin(), win_try.end(), 0);
    }
    if (it + 1 == burn) {
      std::fill(acc.begin(), acc.end(), 0);
      std::fill(tried.begin(), tried.end(), 0);
    }
    if (it >= burn && (it - burn) % opt.thin == 0) samples.insert(samples.end(), th.begin(), th.end());
  }
  GibbsResult res{ParticleCloud(p, std::move(samples)), {}, step, {}};
  if (repulsive) {
    for (std::size_t k = 0; k < K; ++k) {
      const double a = tried[k] ? static_cast<double>(acc[k]) / static_cast<double>(tried[k]) : 0.0;
      res.acceptance.push_back(a);
      if (a < 0.05 || a > 0.8)
        res.warnings.push_back("center " + std::to_string(k) + " Metropolis acceptance " + std::to_string(a) +
                               " outside [0.05, 0.8]");
    }
  }
  return res;
}

/// z_i | theta ~ Bernoulli(p(z=+1|x,y,theta)); theta | z ~ N(Lambda^{-1} sum z_i y_i x_i / beta^2, Lambda^{-1}),
/// Lambda = X'X/beta^2 + I/sigma^2.
inline GibbsResult gibbs_mor(const MorModel& model, const Dataset<MorObservation>& data, const GibbsOptions& opt,
                             const std::vector<int>* fixed_labels = nullptr) {
  const MorConfig& cfg = model.config();
  const std::size_t d = cfg.d, n = data.size();
  const std::size_t burn = opt.burn();
  require(opt.iterations > burn, ErrorCode::kInvalidArgument, "gibbs: iterations must exceed burn-in");
  const double beta2 = cfg.beta * cfg.beta;
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) / cfg.sigma2;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        lambda(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += data[i].x[a] * data[i].x[b] / beta2;
  Eigen::LLT<Eigen::MatrixXd> llt(lambda);
  require(llt.info() == Eigen::Success, ErrorCode::kDegenerate, "gibbs_mor: posterior precision is singular");
  const Eigen::MatrixXd L = llt.matrixL();
  std::vector<double> th = opt.init;
  if (th.empty()) {
    CounterStream s(opt.seed, 0x696E, 0);
    std::normal_distribution<double> nd(0.0, std::sqrt(cfg.sigma2));
    th.resize(d);
    for (double& v : th) v = nd(s);
  }
  require(th.size() == d, ErrorCode::kDimensionMismatch, "gibbs_mor: init has the wrong dimension");
  std::vector<double> samples;
  std::vector<double> zs(n, 1.0);
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    CounterStream s(opt.seed, 0x6D72, it);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed_labels) {
        zs[i] = mor_sign(static_cast<std::size_t>((*fixed_labels)[i]));
        continue;
      }
      zs[i] = uniform01(s) < model.conditional(data[i], th) ? 1.0 : -1.0;
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < d; ++a) rhs(static_cast<Eigen::Index>(a)) += zs[i] * data[i].y * data[i].x[a] / beta2;
    Eigen::VectorXd mean = llt.solve(rhs);
    Eigen::VectorXd xi(static_cast<Eigen::Index>(d));
    for (Eigen::Index a = 0; a < xi.size(); ++a) xi(a) = nd(s);
    // Lambda = L L', so L'^{-1} xi has covariance Lambda^{-1}
    const Eigen::VectorXd draw = mean + L.transpose().triangularView<Eigen::Upper>().solve(xi);
    for (std::size_t a = 0; a < d; ++a) th[a] = draw(static_cast<Eigen::Index>(a));
    if (it >= burn && (it - burn) % opt.thin == 0) samples.insert(samples.end(), th.begin(), th.end());
  }
  return {ParticleCloud(d, std::move(samples)), {}, 0.0, {}};
}

/// Mean and standard error of the mean per coordinate, using batch means for autocorrelated chains.
struct MeanEstimate {
  std::vector<double> mean;
  std::vector<double> se;
};

inline MeanEstimate batch_mean_estimate(const ParticleCloud& cloud, std::size_t batches = 0) {
  const std::size_t B = cloud.size(), p = cloud.dim();
  MeanEstimate est{cloud.mean(), std::vector<double>(p, 0.0)};
  if (batches == 0) {
    // independent particles
    const auto var = cloud.variance();
    for (std::size_t j = 0; j < p; ++j)
      est.se[j] = std::sqrt(var[j] * static_cast<double>(B) / std::max<double>(1.0, static_cast<double>(B) - 1.0) /
                            static_cast<double>(B));
    return est;
  }
  const std::size_t per = B / batches;
  require(per >= 2, ErrorCode::kInvalidArgument, "batch means: too few samples per batch");
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> bm(batches, 0.0);
    for (std::size_t c = 0; c < batches; ++c) {
      for (std::size_t b = c * per; b < (c + 1) * per; ++b) bm[c] += cloud.point(b)[j];
      bm[c] /= static_cast<double>(per);
    }
    est.se[j] = std::sqrt(variance(bm) / static_cast<double>(batches));
  }
  return est;
}

}  // namespace mfwgf
