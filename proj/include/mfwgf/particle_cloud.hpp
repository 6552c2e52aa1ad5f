#pragma once

#include <cmath>
#include <limits>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfwgf/core/error.hpp"

namespace mfwgf {

/// Weighted point set in R^p, stored row-major (particle b occupies
/// data()[b*p, (b+1)*p)). Weights sum to one.
class ParticleCloud {
 public:
  ParticleCloud() = default;

  /// Uniform weights 1/B.
  ParticleCloud(std::size_t dim, std::vector<double> points) : dim_(dim), points_(std::move(points)) {
    validate_shape();
    weights_.assign(size(), 1.0 / static_cast<double>(size()));
  }

  ParticleCloud(std::size_t dim, std::vector<double> points, std::vector<double> weights)
      : dim_(dim), points_(std::move(points)), weights_(std::move(weights)) {
    validate_shape();
    require(weights_.size() == size(), ErrorCode::kDimensionMismatch, "ParticleCloud: one weight per particle");
    double total = 0.0;
    for (double w : weights_) {
      require(w >= 0.0 && std::isfinite(w), ErrorCode::kInvalidArgument, "ParticleCloud: weights must be >= 0");
      total += w;
    }
    const double tol = 1e-12 + 4.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(weights_.size());
    require(std::abs(total - 1.0) <= tol, ErrorCode::kInvalidArgument,
            "ParticleCloud: weights must sum to 1 (got " + std::to_string(total) + ")");
  }

  static ParticleCloud from_rows(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), ErrorCode::kInvalidArgument, "ParticleCloud: need at least one particle");
    const std::size_t p = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * p);
    for (const auto& r : rows) {
      require(r.size() == p, ErrorCode::kDimensionMismatch, "ParticleCloud: ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return ParticleCloud(p, std::move(flat));
  }

  /// Rescales arbitrary nonnegative weights to sum to one.
  static ParticleCloud with_unnormalized_weights(std::size_t dim, std::vector<double> points,
                                                 std::vector<double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    require(total > 0.0, ErrorCode::kInvalidArgument, "ParticleCloud: total weight must be positive");
    for (double& w : weights) w /= total;
    double s = 0.0;
    for (double w : weights) s += w;
    if (!weights.empty()) weights.back() += 1.0 - s;
    return ParticleCloud(dim, std::move(points), std::move(weights));
  }

  [[nodiscard]] std::size_t size() const noexcept { return dim_ == 0 ? 0 : points_.size() / dim_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

  [[nodiscard]] std::span<const double> point(std::size_t b) const { return {points_.data() + b * dim_, dim_}; }
  [[nodiscard]] std::span<double> point(std::size_t b) { return {points_.data() + b * dim_, dim_}; }

  [[nodiscard]] double weight(std::size_t b) const { return weights_[b]; }
  [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }
  [[nodiscard]] const std::vector<double>& data() const noexcept { return points_; }
  [[nodiscard]] std::vector<double>& mutable_data() noexcept { return points_; }

  [[nodiscard]] bool uniform_weights() const {
    const double u = 1.0 / static_cast<double>(size());
    for (double w : weights_)
      if (std::abs(w - u) > 1e-15) return false;
    return true;
  }

  [[nodiscard]] std::vector<double> mean() const {
    std::vector<double> m(dim_, 0.0);
    for (std::size_t b = 0; b < size(); ++b)
      for (std::size_t j = 0; j < dim_; ++j) m[j] += weights_[b] * points_[b * dim_ + j];
    return m;
  }

  /// Weighted per-coordinate variance (population form).
  [[nodiscard]] std::vector<double> variance() const {
    const auto m = mean();
    std::vector<double> v(dim_, 0.0);
    for (std::size_t b = 0; b < size(); ++b)
      for (std::size_t j = 0; j < dim_; ++j) {
        const double d = points_[b * dim_ + j] - m[j];
        v[j] += weights_[b] * d * d;
      }
    return v;
  }

  [[nodiscard]] std::vector<double> coordinate(std::size_t j) const {
    std::vector<double> c(size());
    for (std::size_t b = 0; b < size(); ++b) c[b] = points_[b * dim_ + j];
    return c;
  }

  [[nodiscard]] bool all_finite() const {
    for (double x : points_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const ParticleCloud& a, const ParticleCloud& b) {
    return a.dim_ == b.dim_ && a.points_ == b.points_ && a.weights_ == b.weights_;
  }

 private:
  void validate_shape() const {
    require(dim_ >= 1, ErrorCode::kInvalidArgument, "ParticleCloud: dimension must be >= 1");
    require(!points_.empty() && points_.size() % dim_ == 0, ErrorCode::kDimensionMismatch,
            "ParticleCloud: point buffer must hold B >= 1 rows of length p");
  }

  std::size_t dim_ = 0;
  std::vector<double> points_;
  std::vector<double> weights_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

/// Dense m x n row-major matrix of squared Euclidean distances.
inline std::vector<double> squared_cost_matrix(const ParticleCloud& a, const ParticleCloud& b) {
  require(a.dim() == b.dim(), ErrorCode::kDimensionMismatch, "cost matrix: clouds differ in dimension");
  const std::size_t m = a.size(), n = b.size();
  std::vector<double> c(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = squared_distance(a.point(i), b.point(j));
  return c;
}

}  // namespace mfwgf
