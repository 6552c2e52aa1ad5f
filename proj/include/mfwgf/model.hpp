#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfwgf/core/error.hpp"
#include "mfwgf/core/parallel.hpp"
#include "mfwgf/particle_cloud.hpp"

namespace mfwgf {

/// A Bayesian latent-variable model with discrete latent class z in [0, K).
/// Gradients are accumulated: add_grad_*(..., scale, out) performs out += scale * grad.
template <class M>
concept LatentModel = requires(const M& m, const typename M::observation_type& x, std::size_t z,
                               std::span<const double> theta, double scale, std::span<double> out) {
  typename M::observation_type;
  { m.num_classes() } -> std::convertible_to<std::size_t>;
  { m.param_dim() } -> std::convertible_to<std::size_t>;
  { m.log_joint(x, z, theta) } -> std::convertible_to<double>;
  m.add_grad_log_joint(x, z, theta, scale, out);
  { m.log_prior(theta) } -> std::convertible_to<double>;
  m.add_grad_log_prior(theta, scale, out);
};

/// Optional fast path: all K log-joints of one observation at once.
template <class M>
concept HasLogJointAll = requires(const M& m, const typename M::observation_type& x, std::span<const double> theta,
                                  std::span<double> out) { m.log_joint_all(x, theta, out); };

/// Optional projection applied after every particle update (parameter-space cap).
template <class M>
concept HasProjection = requires(const M& m, std::span<double> theta) { m.project(theta); };

template <class Obs>
struct Dataset {
  std::vector<Obs> observations;
  nlohmann::json provenance = nlohmann::json::object();
  /// Generating classes, kept for diagnostics only; inference never reads them.
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const noexcept { return observations.size(); }
  [[nodiscard]] const Obs& operator[](std::size_t i) const { return observations[i]; }
};

/// n x K row-stochastic matrix, row-major.
class Responsibilities {
 public:
  Responsibilities() = default;
  Responsibilities(std::size_t n, std::size_t k) : n_(n), k_(k), values_(n * k, 0.0) {}

  [[nodiscard]] std::size_t rows() const noexcept { return n_; }
  [[nodiscard]] std::size_t classes() const noexcept { return k_; }
  [[nodiscard]] double operator()(std::size_t i, std::size_t z) const { return values_[i * k_ + z]; }
  double& operator()(std::size_t i, std::size_t z) { return values_[i * k_ + z]; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return {values_.data() + i * k_, k_}; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }

  /// One-hot rows from labels.
  static Responsibilities one_hot(const std::vector<int>& labels, std::size_t k) {
    Responsibilities r(labels.size(), k);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k, ErrorCode::kInvalidArgument,
              "one_hot: label out of range");
      r(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return r;
  }

  [[nodiscard]] double max_row_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t z = 0; z < k_; ++z) s += (*this)(i, z);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

  friend bool operator==(const Responsibilities&, const Responsibilities&) = default;

 private:
  std::size_t n_ = 0, k_ = 0;
  std::vector<double> values_;
};

namespace detail {

template <LatentModel M>
void all_log_joints(const M& model, const typename M::observation_type& x, std::span<const double> theta,
                    std::span<double> out) {
  if constexpr (HasLogJointAll<M>) {
    model.log_joint_all(x, theta, out);
  } else {
    for (std::size_t z = 0; z < out.size(); ++z) out[z] = model.log_joint(x, z, theta);
  }
}

inline void softmax_inplace(std::span<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& x : v) {
    const double e = x - m;
    // exp underflows to an exact zero below this floor
    x = e < -745.0 ? 0.0 : std::exp(e);
    s += x;
  }
  for (double& x : v) x /= s;
}

}  // namespace detail

template <LatentModel M>
Responsibilities responsibilities(const M& model, const Dataset<typename M::observation_type>& data,
                                  const ParticleCloud& cloud, int threads = 1) {
  const std::size_t K = model.num_classes(), n = data.size(), B = cloud.size();
  require(cloud.dim() == model.param_dim(), ErrorCode::kDimensionMismatch,
          "responsibilities: cloud dimension " + std::to_string(cloud.dim()) + " != model dimension " +
              std::to_string(model.param_dim()));
  Responsibilities resp(n, K);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> lj(K), acc(K);
    for (std::size_t i = begin; i < end; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        detail::all_log_joints(model, data[i], cloud.point(b), lj);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t z = 0; z < K; ++z) {
          if (!std::isfinite(lj[z]))
            fail(ErrorCode::kNonFinite,
                 "responsibilities: non-finite log_joint at observation " + std::to_string(i) + ", class " +
                     std::to_string(z) + ", particle " + std::to_string(b),
                 {static_cast<std::int64_t>(i), static_cast<std::int64_t>(z), static_cast<std::int64_t>(b)});
          m = std::max(m, lj[z]);
        }
        double s = 0.0;
        for (std::size_t z = 0; z < K; ++z) s += lj[z] == m ? 1.0 : std::exp(lj[z] - m);
        const double lse = m + std::log(s);
        const double w = cloud.weight(b);
        for (std::size_t z = 0; z < K; ++z) acc[z] += w * (lj[z] - lse);
      }
      detail::softmax_inplace(acc);
      for (std::size_t z = 0; z < K; ++z) resp(i, z) = acc[z];
    }
  });
  return resp;
}

namespace detail {

template <LatentModel M>
void check_resp_shape(const M& model, std::size_t n, const Responsibilities& resp, std::span<const double> theta) {
  require(resp.rows() == n && resp.classes() == model.num_classes(), ErrorCode::kDimensionMismatch,
          "responsibilities shape does not match data/model");
  require(theta.size() == model.param_dim(), ErrorCode::kDimensionMismatch, "parameter dimension mismatch");
}

}  // namespace detail

/// U_n(theta; resp) = -(1/n) sum_i sum_z resp(i,z) log p(x_i, z | theta); zero when n = 0.
template <LatentModel M>
double sample_potential(const M& model, const Dataset<typename M::observation_type>& data,
                        const Responsibilities& resp, std::span<const double> theta) {
  const std::size_t n = data.size(), K = model.num_classes();
  detail::check_resp_shape(model, n, resp, theta);
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t z = 0; z < K; ++z) {
      const double r = resp(i, z);
      if (r == 0.0) continue;
      const double term = r * model.log_joint(data[i], z, theta);
      if (!std::isfinite(term))
        fail(ErrorCode::kNonFinite,
             "sample_potential: non-finite term at observation " + std::to_string(i) + ", class " + std::to_string(z),
             {static_cast<std::int64_t>(i), static_cast<std::int64_t>(z)});
      s += term;
    }
  return -s / static_cast<double>(n);
}

/// grad V(theta) = -sum_i sum_k resp(i,k) grad log p(x_i, k | theta) - grad log prior(theta),
/// summed observations outer, classes inner.
template <LatentModel M>
void drift_into(const M& model, const Dataset<typename M::observation_type>& data, const Responsibilities& resp,
                std::span<const double> theta, std::span<double> out) {
  const std::size_t n = data.size(), K = model.num_classes();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double r = resp(i, k);
      if (r == 0.0) continue;
      model.add_grad_log_joint(data[i], k, theta, -r, out);
    }
  for (std::size_t j = 0; j < out.size(); ++j)
    if (!std::isfinite(out[j])) {
      // locate the offending term for the report
      std::vector<double> g(out.size());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          std::fill(g.begin(), g.end(), 0.0);
          model.add_grad_log_joint(data[i], k, theta, 1.0, g);
          for (double v : g)
            if (!std::isfinite(v))
              fail(ErrorCode::kNonFinite,
                   "drift: non-finite gradient at observation " + std::to_string(i) + ", class " + std::to_string(k),
                   {static_cast<std::int64_t>(i), static_cast<std::int64_t>(k)});
        }
      fail(ErrorCode::kNonFinite, "drift: non-finite accumulated gradient component " + std::to_string(j));
    }
  model.add_grad_log_prior(theta, -1.0, out);
}

template <LatentModel M>
std::vector<double> drift(const M& model, const Dataset<typename M::observation_type>& data,
                          const Responsibilities& resp, std::span<const double> theta) {
  detail::check_resp_shape(model, data.size(), resp, theta);
  std::vector<double> out(model.param_dim());
  drift_into(model, data, resp, theta, out);
  return out;
}

/// Central finite-difference gradient, used by tests and the step-size guard.
template <class F>
std::vector<double> finite_difference_gradient(F&& f, std::span<const double> theta, double h = 1e-5) {
  std::vector<double> t(theta.begin(), theta.end()), g(theta.size());
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double t0 = t[j];
    t[j] = t0 + h;
    const double fp = f(std::span<const double>(t));
    t[j] = t0 - h;
    const double fm = f(std::span<const double>(t));
    t[j] = t0;
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace mfwgf
