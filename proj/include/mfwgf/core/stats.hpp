#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "mfwgf/core/error.hpp"

namespace mfwgf {

inline double logsumexp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorCode::kDimensionMismatch, "linear_fit: x and y differ in length");
  require(x.size() >= 2, ErrorCode::kInvalidArgument, "linear_fit: need at least two points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, ErrorCode::kDegenerate, "linear_fit: x has zero spread");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  fit.points = x.size();
  return fit;
}

struct WindowFit {
  LinearFit fit;
  std::size_t window = 0;  // number of leading points used
  bool found = false;
};

/// Largest prefix of (x, log y) whose linear fit reaches r2_min, with at
/// least min_points points. Non-positive y terminate the usable prefix.
inline WindowFit fit_log_prefix(std::span<const double> x, std::span<const double> y, double r2_min = 0.9,
                                std::size_t min_points = 10) {
  require(x.size() == y.size(), ErrorCode::kDimensionMismatch, "fit_log_prefix: length mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0) || !std::isfinite(y[i])) break;
    lx.push_back(x[i]);
    ly.push_back(std::log(y[i]));
  }
  WindowFit best;
  for (std::size_t len = lx.size(); len >= std::max<std::size_t>(min_points, 2); --len) {
    LinearFit f = linear_fit(std::span(lx).first(len), std::span(ly).first(len));
    if (f.r2 >= r2_min) {
      best.fit = f;
      best.window = len;
      best.found = true;
      break;
    }
  }
  return best;
}

}  // namespace mfwgf
