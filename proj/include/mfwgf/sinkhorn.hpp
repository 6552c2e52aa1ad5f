#pragma once

// Log-domain entropic optimal transport with epsilon annealing, and the
// debiased Sinkhorn divergence S = OT(a,b) - OT(a,a)/2 - OT(b,b)/2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mfwgf/core/error.hpp"

namespace mfwgf {

struct SinkhornOptions {
  double epsilon = 1e-2;
  int max_iter = 20000;
  double tol = 1e-9;     // L1 marginal violation at the target epsilon
  double anneal = 0.5;   // epsilon multiplier per annealing stage
  bool annealing = true;
};

struct EntropicResult {
  double value = 0.0;  // <a,f> + <b,g>
  int iterations = 0;
  double marginal_violation = 0.0;
  bool converged = false;
};

namespace detail {

inline double lse_row(std::span<const double> cost, std::size_t row, std::size_t n, std::span<const double> log_w,
                      std::span<const double> pot, double eps) {
  double mx = -std::numeric_limits<double>::infinity();
  const double* c = cost.data() + row * n;
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, log_w[j] + (pot[j] - c[j]) / eps);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(log_w[j] + (pot[j] - c[j]) / eps - mx);
  return mx + std::log(s);
}

inline double lse_col(std::span<const double> cost, std::size_t col, std::size_t m, std::size_t n,
                      std::span<const double> log_w, std::span<const double> pot, double eps) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) mx = std::max(mx, log_w[i] + (pot[i] - cost[i * n + col]) / eps);
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += std::exp(log_w[i] + (pot[i] - cost[i * n + col]) / eps - mx);
  return mx + std::log(s);
}

inline std::vector<double> safe_log(std::span<const double> w) {
  std::vector<double> l(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    l[i] = w[i] > 0.0 ? std::log(w[i]) : -std::numeric_limits<double>::infinity();
  return l;
}

inline std::vector<double> epsilon_schedule(double start, double target, const SinkhornOptions& opt) {
  std::vector<double> eps;
  if (opt.annealing)
    for (double e = start; e > target; e *= opt.anneal) eps.push_back(e);
  eps.push_back(target);
  return eps;
}

}  // namespace detail

/// Entropic OT cost with regularization epsilon * KL(pi | a x b).
inline EntropicResult entropic_ot(std::span<const double> cost, std::span<const double> a,
                                  std::span<const double> b, const SinkhornOptions& opt) {
  const std::size_t m = a.size(), n = b.size();
  require(cost.size() == m * n, ErrorCode::kDimensionMismatch, "sinkhorn: cost must be m x n");
  require(opt.epsilon > 0.0, ErrorCode::kInvalidArgument, "sinkhorn: epsilon must be positive");
  const auto la = detail::safe_log(a), lb = detail::safe_log(b);
  std::vector<double> f(m, 0.0), g(n, 0.0);
  const double cmax = cost.empty() ? 1.0 : *std::max_element(cost.begin(), cost.end());
  const auto schedule = detail::epsilon_schedule(std::max(cmax, opt.epsilon), opt.epsilon, opt);
  EntropicResult res;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const double eps = schedule[s];
    const bool last = s + 1 == schedule.size();
    const int budget = last ? opt.max_iter : 50;
    for (int it = 0; it < budget; ++it) {
      for (std::size_t i = 0; i < m; ++i) f[i] = -eps * detail::lse_row(cost, i, n, lb, g, eps);
      for (std::size_t j = 0; j < n; ++j) g[j] = -eps * detail::lse_col(cost, j, m, n, la, f, eps);
      ++res.iterations;
      if (last && (it % 5 == 4 || it + 1 == budget)) {
        double viol = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          if (a[i] <= 0.0) continue;
          const double row = std::exp(la[i] + f[i] / eps + detail::lse_row(cost, i, n, lb, g, eps));
          viol += std::abs(row - a[i]);
        }
        res.marginal_violation = viol;
        if (viol <= opt.tol) {
          res.converged = true;
          break;
        }
      }
    }
  }
  double v = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (a[i] > 0.0) v += a[i] * f[i];
  for (std::size_t j = 0; j < n; ++j)
    if (b[j] > 0.0) v += b[j] * g[j];
  res.value = v;
  return res;
}

/// Symmetric entropic OT(a, a) via the averaged fixed-point iteration.
inline EntropicResult entropic_ot_self(std::span<const double> cost, std::span<const double> a,
                                       const SinkhornOptions& opt) {
  const std::size_t m = a.size();
  require(cost.size() == m * m, ErrorCode::kDimensionMismatch, "sinkhorn: self cost must be m x m");
  const auto la = detail::safe_log(a);
  std::vector<double> f(m, 0.0), next(m);
  const double cmax = cost.empty() ? 1.0 : *std::max_element(cost.begin(), cost.end());
  const auto schedule = detail::epsilon_schedule(std::max(cmax, opt.epsilon), opt.epsilon, opt);
  EntropicResult res;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const double eps = schedule[s];
    const bool last = s + 1 == schedule.size();
    const int budget = last ? opt.max_iter : 50;
    for (int it = 0; it < budget; ++it) {
      double change = 0.0;
      for (std::size_t i = 0; i < m; ++i) next[i] = -eps * detail::lse_row(cost, i, m, la, f, eps);
      for (std::size_t i = 0; i < m; ++i) {
        const double nf = 0.5 * (f[i] + next[i]);
        change = std::max(change, std::abs(nf - f[i]));
        f[i] = nf;
      }
      ++res.iterations;
      if (last && change <= opt.tol * std::max(1.0, cmax)) {
        res.converged = true;
        break;
      }
    }
  }
  double v = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (a[i] > 0.0) v += 2.0 * a[i] * f[i];
  res.value = v;
  return res;
}

}  // namespace mfwgf
