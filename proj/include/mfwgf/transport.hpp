#pragma once

// Exact discrete optimal transport between weighted point sets via
// successive shortest augmenting paths (Dijkstra with node potentials) on the
// dense bipartite residual network.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mfwgf/core/error.hpp"

namespace mfwgf {

struct TransportPlan {
  std::vector<double> flow;  // m x n row-major
  double cost = 0.0;
  std::size_t augmentations = 0;
};

inline TransportPlan solve_transport(std::span<const double> cost, std::span<const double> supply,
                                     std::span<const double> demand) {
  const std::size_t m = supply.size(), n = demand.size();
  require(cost.size() == m * n, ErrorCode::kDimensionMismatch, "solve_transport: cost must be m x n");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double mass_tol = 1e-14;

  TransportPlan plan;
  plan.flow.assign(m * n, 0.0);
  std::vector<double> left(supply.begin(), supply.end());
  std::vector<double> need(demand.begin(), demand.end());
  // Nodes 0..m-1 sources, m..m+n-1 sinks.
  std::vector<double> pot(m + n, 0.0), dist(m + n);
  std::vector<int> pred(m + n);
  std::vector<char> done(m + n);

  auto remaining = [&] {
    double s = 0.0;
    for (double x : need) s += std::max(x, 0.0);
    return s;
  };

  const std::size_t max_aug = 50 * (m + n) + 1000;
  while (remaining() > mass_tol) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(pred.begin(), pred.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (std::size_t i = 0; i < m; ++i)
      if (left[i] > mass_tol) dist[i] = 0.0;
    int target = -1;
    for (;;) {
      int u = -1;
      double best = kInf;
      for (std::size_t k = 0; k < m + n; ++k)
        if (!done[k] && dist[k] < best) {
          best = dist[k];
          u = static_cast<int>(k);
        }
      if (u < 0) break;
      done[u] = 1;
      if (static_cast<std::size_t>(u) >= m && need[u - m] > mass_tol) {
        target = u;
        break;
      }
      if (static_cast<std::size_t>(u) < m) {
        const std::size_t i = static_cast<std::size_t>(u);
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t v = m + j;
          if (done[v]) continue;
          const double nd = dist[u] + cost[i * n + j] + pot[u] - pot[v];
          if (nd < dist[v]) {
            dist[v] = nd;
            pred[v] = u;
          }
        }
      } else {
        const std::size_t j = static_cast<std::size_t>(u) - m;
        for (std::size_t i = 0; i < m; ++i) {
          if (done[i] || plan.flow[i * n + j] <= 0.0) continue;
          const double nd = dist[u] - cost[i * n + j] + pot[u] - pot[i];
          if (nd < dist[i]) {
            dist[i] = nd;
            pred[i] = u;
          }
        }
      }
    }
    if (target < 0) fail(ErrorCode::kNotConverged, "solve_transport: no augmenting path (mass mismatch?)");
    const double dt = dist[target];
    for (std::size_t k = 0; k < m + n; ++k) pot[k] += std::min(dist[k], dt);

    // Bottleneck along the path.
    double delta = need[target - m];
    int v = target;
    while (pred[v] >= 0) {
      const int u = pred[v];
      if (static_cast<std::size_t>(u) >= m) {  // backward arc sink u -> source v
        delta = std::min(delta, plan.flow[static_cast<std::size_t>(v) * n + (u - m)]);
      }
      v = u;
    }
    delta = std::min(delta, left[v]);
    v = target;
    while (pred[v] >= 0) {
      const int u = pred[v];
      if (static_cast<std::size_t>(u) < m)
        plan.flow[static_cast<std::size_t>(u) * n + (v - m)] += delta;
      else
        plan.flow[static_cast<std::size_t>(v) * n + (u - m)] -= delta;
      v = u;
    }
    left[v] -= delta;
    need[target - m] -= delta;
    if (++plan.augmentations > max_aug)
      fail(ErrorCode::kNotConverged, "solve_transport: augmentation budget exhausted");
  }
  for (std::size_t k = 0; k < m * n; ++k) {
    if (plan.flow[k] < 0.0) plan.flow[k] = 0.0;
    plan.cost += plan.flow[k] * cost[k];
  }
  return plan;
}

}  // namespace mfwgf
