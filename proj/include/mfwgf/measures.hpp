#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfwgf/core/error.hpp"
#include "mfwgf/core/stats.hpp"
#include "mfwgf/lap.hpp"
#include "mfwgf/particle_cloud.hpp"
#include "mfwgf/sinkhorn.hpp"
#include "mfwgf/transport.hpp"

namespace mfwgf {

enum class W2Method { kExactAssignment, kSorted1d, kSinkhornDivergence, kPointMass, kExactTransport };

inline const char* to_string(W2Method m) {
  switch (m) {
    case W2Method::kExactAssignment: return "exact-assignment";
    case W2Method::kSorted1d: return "sorted-1d";
    case W2Method::kSinkhornDivergence: return "sinkhorn-divergence";
    case W2Method::kPointMass: return "point-mass";
    case W2Method::kExactTransport: return "exact-transport";
  }
  return "unknown";
}

struct W2Report {
  double distance = 0.0;
  W2Method method = W2Method::kExactAssignment;
  int iterations = 0;
  std::optional<double> dual_gap;  // marginal violation for the entropic route
  bool warning = false;            // entropic solver hit max_iter
  [[nodiscard]] double squared() const { return distance * distance; }
};

/// sqrt(sum_b w_b ||theta_b - point||^2)
inline double w2_point_mass(const ParticleCloud& cloud, std::span<const double> point) {
  require(point.size() == cloud.dim(), ErrorCode::kDimensionMismatch,
          "w2_point_mass: point has dimension " + std::to_string(point.size()) + ", cloud has " +
              std::to_string(cloud.dim()));
  double s = 0.0;
  for (std::size_t b = 0; b < cloud.size(); ++b) s += cloud.weight(b) * squared_distance(cloud.point(b), point);
  return std::sqrt(s);
}

/// Monotone matching of two equal-size uniform 1-D clouds.
inline double w2_1d(const ParticleCloud& a, const ParticleCloud& b) {
  require(a.dim() == 1 && b.dim() == 1, ErrorCode::kDimensionMismatch, "w2_1d: clouds must be one-dimensional");
  require(a.size() == b.size(), ErrorCode::kInvalidArgument, "w2_1d: clouds differ in size; use w2_exact");
  require(a.uniform_weights() && b.uniform_weights(), ErrorCode::kInvalidArgument,
          "w2_1d: non-uniform weights; use w2_exact");
  std::vector<double> x = a.data(), y = b.data();
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s / static_cast<double>(x.size()));
}

struct ExactOptions {
  std::size_t transport_cap = 250'000;  // max B_a * B_b for the general-weight route
};

inline W2Report w2_exact(const ParticleCloud& a, const ParticleCloud& b, const ExactOptions& opt = {}) {
  require(a.dim() == b.dim(), ErrorCode::kDimensionMismatch, "w2_exact: clouds differ in dimension");
  W2Report r;
  if (a.size() == b.size() && a.uniform_weights() && b.uniform_weights()) {
    const auto cost = squared_cost_matrix(a, b);
    const Assignment asg = solve_assignment(cost, a.size());
    r.method = W2Method::kExactAssignment;
    r.distance = std::sqrt(std::max(0.0, asg.cost / static_cast<double>(a.size())));
    return r;
  }
  if (a.size() * b.size() > opt.transport_cap)
    fail(ErrorCode::kCapacityExceeded, "w2_exact: B_a*B_b = " + std::to_string(a.size() * b.size()) +
                                           " exceeds the transport cap; use w2_sinkhorn");
  const auto cost = squared_cost_matrix(a, b);
  const TransportPlan plan = solve_transport(cost, a.weights(), b.weights());
  r.method = W2Method::kExactTransport;
  r.distance = std::sqrt(std::max(0.0, plan.cost));
  return r;
}

/// Debiased entropic distance sqrt(max(S_eps, 0)).
inline W2Report w2_sinkhorn(const ParticleCloud& a, const ParticleCloud& b, double epsilon, int max_iter = 20000,
                            double tol = 1e-9) {
  require(a.dim() == b.dim(), ErrorCode::kDimensionMismatch, "w2_sinkhorn: clouds differ in dimension");
  require(epsilon > 0.0, ErrorCode::kInvalidArgument, "w2_sinkhorn: epsilon must be positive");
  SinkhornOptions opt;
  opt.epsilon = epsilon;
  opt.max_iter = max_iter;
  opt.tol = tol;
  const auto cab = squared_cost_matrix(a, b);
  const auto caa = squared_cost_matrix(a, a);
  const auto cbb = squared_cost_matrix(b, b);
  const EntropicResult ab = entropic_ot(cab, a.weights(), b.weights(), opt);
  const EntropicResult aa = entropic_ot_self(caa, a.weights(), opt);
  const EntropicResult bb = entropic_ot_self(cbb, b.weights(), opt);
  W2Report r;
  r.method = W2Method::kSinkhornDivergence;
  r.distance = std::sqrt(std::max(0.0, ab.value - 0.5 * aa.value - 0.5 * bb.value));
  r.iterations = ab.iterations;
  r.dual_gap = ab.marginal_violation;
  r.warning = !(ab.converged && aa.converged && bb.converged);
  return r;
}

/// Median of pairwise squared distances between the two clouds (subsampled
/// on a fixed stride when large).
inline double median_pairwise_cost(const ParticleCloud& a, const ParticleCloud& b) {
  std::vector<double> c;
  const std::size_t sa = std::max<std::size_t>(1, a.size() / 256), sb = std::max<std::size_t>(1, b.size() / 256);
  for (std::size_t i = 0; i < a.size(); i += sa)
    for (std::size_t j = 0; j < b.size(); j += sb) c.push_back(squared_distance(a.point(i), b.point(j)));
  return median(std::move(c));
}

/// Exact assignment up to exact_limit particles, Sinkhorn divergence with
/// epsilon = 0.01 x median pairwise squared distance above it.
inline W2Report w2_auto(const ParticleCloud& a, const ParticleCloud& b, std::size_t exact_limit = 2048) {
  if (a.size() == 1 && b.size() == 1) {
    W2Report r;
    r.method = W2Method::kPointMass;
    r.distance = std::sqrt(squared_distance(a.point(0), b.point(0)));
    return r;
  }
  if (b.size() == 1) {
    W2Report r;
    r.method = W2Method::kPointMass;
    r.distance = w2_point_mass(a, b.point(0));
    return r;
  }
  if (std::max(a.size(), b.size()) <= exact_limit &&
      ((a.size() == b.size() && a.uniform_weights() && b.uniform_weights()) || a.size() * b.size() <= 250'000))
    return w2_exact(a, b);
  const double med = median_pairwise_cost(a, b);
  return w2_sinkhorn(a, b, std::max(1e-12, 0.01 * med), 5000, 1e-6);
}

/// K blocks of d coordinates starting at offset 0, optionally followed by
/// `trailing` scalars per component stored as a block of length K at
/// offset K*d (e.g. mixture logits).
struct ComponentLayout {
  std::size_t components = 1;
  std::size_t block = 1;
  std::size_t trailing = 0;
  [[nodiscard]] std::size_t dim() const { return components * block + components * trailing; }
};

namespace detail {

inline std::vector<std::vector<int>> all_permutations(std::size_t k) {
  std::vector<int> p(k);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<int>> out;
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

}  // namespace detail

/// Best relabeling sigma for one particle: block k is moved to slot sigma(k)
/// minimizing sum_k ||m_k - ref_{sigma(k)}||^2.
inline std::vector<int> best_relabeling(std::span<const double> particle, const ComponentLayout& layout,
                                        const std::vector<std::vector<double>>& refs) {
  const std::size_t K = layout.components, d = layout.block;
  std::vector<double> cost(K * K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t s = 0; s < K; ++s) cost[k * K + s] = squared_distance(particle.subspan(k * d, d), refs[s]);
  if (K <= 8) {
    static thread_local std::vector<std::vector<std::vector<int>>> cache(9);
    if (cache[K].empty()) cache[K] = detail::all_permutations(K);
    const std::vector<int>* best = nullptr;
    double best_cost = std::numeric_limits<double>::infinity();
    for (const auto& p : cache[K]) {
      double c = 0.0;
      for (std::size_t k = 0; k < K; ++k) c += cost[k * K + p[k]];
      if (c < best_cost) {
        best_cost = c;
        best = &p;
      }
    }
    return *best;
  }
  return solve_assignment(cost, K).row_to_col;
}

inline ParticleCloud align_components(const ParticleCloud& cloud, const ComponentLayout& layout,
                                      const std::vector<std::vector<double>>& reference_centers) {
  require(layout.dim() == cloud.dim(), ErrorCode::kDimensionMismatch,
          "align_components: layout describes " + std::to_string(layout.dim()) + " coordinates, cloud has " +
              std::to_string(cloud.dim()));
  require(reference_centers.size() == layout.components, ErrorCode::kDimensionMismatch,
          "align_components: need one reference center per component");
  for (const auto& r : reference_centers)
    require(r.size() == layout.block, ErrorCode::kDimensionMismatch, "align_components: reference block size");
  const std::size_t K = layout.components, d = layout.block, p = cloud.dim();
  std::vector<double> out(cloud.data().size());
  for (std::size_t b = 0; b < cloud.size(); ++b) {
    const auto src = cloud.point(b);
    const auto sigma = best_relabeling(src, layout, reference_centers);
    double* dst = out.data() + b * p;
    for (std::size_t k = 0; k < K; ++k) {
      std::copy_n(src.data() + k * d, d, dst + sigma[k] * d);
      for (std::size_t t = 0; t < layout.trailing; ++t)
        dst[K * d + t * K + sigma[k]] = src[K * d + t * K + k];
    }
  }
  return ParticleCloud(p, std::move(out), cloud.weights());
}

/// Flips each particle's sign when that brings it closer to `reference`
/// (global sign symmetry of the symmetric two-component regression).
inline ParticleCloud sign_align_each(const ParticleCloud& cloud, std::span<const double> reference) {
  require(reference.size() == cloud.dim(), ErrorCode::kDimensionMismatch, "sign_align: dimension");
  std::vector<double> out = cloud.data();
  for (std::size_t b = 0; b < cloud.size(); ++b) {
    double dot = 0.0;
    for (std::size_t j = 0; j < cloud.dim(); ++j) dot += out[b * cloud.dim() + j] * reference[j];
    if (dot < 0.0)
      for (std::size_t j = 0; j < cloud.dim(); ++j) out[b * cloud.dim() + j] = -out[b * cloud.dim() + j];
  }
  return ParticleCloud(cloud.dim(), std::move(out), cloud.weights());
}

/// Applies the single global sign (+1 or -1) that minimizes w2_point_mass
/// against `reference`.
inline ParticleCloud sign_align_global(const ParticleCloud& cloud, std::span<const double> reference) {
  std::vector<double> flipped = cloud.data();
  for (double& x : flipped) x = -x;
  ParticleCloud neg(cloud.dim(), std::move(flipped), cloud.weights());
  return w2_point_mass(neg, reference) < w2_point_mass(cloud, reference) ? neg : cloud;
}

}  // namespace mfwgf
