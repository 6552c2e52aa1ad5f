#pragma once

// Dense linear assignment (Jonker-Volgenant): column reduction, two rounds of
// augmenting row reduction, then shortest augmenting paths.

#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "mfwgf/core/error.hpp"

namespace mfwgf {

struct Assignment {
  std::vector<int> row_to_col;
  double cost = 0.0;
};

namespace detail {

class LapSolver {
 public:
  LapSolver(std::span<const double> cost, int n) : c_(cost), n_(n) {}

  Assignment solve() {
    x_.assign(n_, -1);
    y_.assign(n_, -1);
    v_.assign(n_, 0.0);
    free_rows_.assign(n_, 0);
    int free = column_reduction();
    for (int round = 0; round < 2 && free > 0; ++round) free = augmenting_row_reduction(free);
    if (free > 0) augment(free);
    Assignment a;
    a.row_to_col = x_;
    for (int i = 0; i < n_; ++i) a.cost += at(i, x_[i]);
    return a;
  }

 private:
  static constexpr double kLarge = std::numeric_limits<double>::max();

  double at(int i, int j) const { return c_[static_cast<std::size_t>(i) * n_ + j]; }

  int column_reduction() {
    std::vector<double>& v = v_;
    for (int j = 0; j < n_; ++j) {
      v[j] = kLarge;
      y_[j] = 0;
    }
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        const double c = at(i, j);
        if (c < v[j]) {
          v[j] = c;
          y_[j] = i;
        }
      }
    std::vector<char> unique(n_, 1);
    for (int j = n_ - 1; j >= 0; --j) {
      const int i = y_[j];
      if (x_[i] < 0) {
        x_[i] = j;
      } else {
        unique[i] = 0;
        y_[j] = -1;
      }
    }
    int free = 0;
    for (int i = 0; i < n_; ++i) {
      if (x_[i] < 0) {
        free_rows_[free++] = i;
      } else if (unique[i]) {
        const int j = x_[i];
        double min = kLarge;
        for (int j2 = 0; j2 < n_; ++j2) {
          if (j2 == j) continue;
          const double c = at(i, j2) - v[j2];
          if (c < min) min = c;
        }
        if (min < kLarge) v[j] -= min;
      }
    }
    return free;
  }

  int augmenting_row_reduction(int n_free) {
    int current = 0, new_free = 0;
    long long rr_cnt = 0;
    while (current < n_free) {
      ++rr_cnt;
      const int free_i = free_rows_[current++];
      int j1 = 0, j2 = -1;
      double v1 = at(free_i, 0) - v_[0], v2 = kLarge;
      for (int j = 1; j < n_; ++j) {
        const double c = at(free_i, j) - v_[j];
        if (c < v2) {
          if (c >= v1) {
            v2 = c;
            j2 = j;
          } else {
            v2 = v1;
            v1 = c;
            j2 = j1;
            j1 = j;
          }
        }
      }
      int i0 = y_[j1];
      const double v1_new = v_[j1] - (v2 - v1);
      const bool v1_lowers = v1_new < v_[j1];
      if (rr_cnt < static_cast<long long>(current) * n_) {
        if (v1_lowers) {
          v_[j1] = v1_new;
        } else if (i0 >= 0 && j2 >= 0) {
          j1 = j2;
          i0 = y_[j2];
        }
        if (i0 >= 0) {
          if (v1_lowers)
            free_rows_[--current] = i0;
          else
            free_rows_[new_free++] = i0;
        }
      } else if (i0 >= 0) {
        free_rows_[new_free++] = i0;
      }
      x_[free_i] = j1;
      y_[j1] = free_i;
    }
    return new_free;
  }

  int find_minimum(int lo, std::vector<double>& d, std::vector<int>& cols) const {
    int hi = lo + 1;
    double mind = d[cols[lo]];
    for (int k = hi; k < n_; ++k) {
      const int j = cols[k];
      if (d[j] <= mind) {
        if (d[j] < mind) {
          hi = lo;
          mind = d[j];
        }
        cols[k] = cols[hi];
        cols[hi++] = j;
      }
    }
    return hi;
  }

  int scan(int& plo, int& phi, std::vector<double>& d, std::vector<int>& cols, std::vector<int>& pred) const {
    int lo = plo, hi = phi;
    while (lo != hi) {
      int j = cols[lo++];
      const int i = y_[j];
      const double mind = d[j];
      const double h = at(i, j) - v_[j] - mind;
      for (int k = hi; k < n_; ++k) {
        j = cols[k];
        const double cred = at(i, j) - v_[j] - h;
        if (cred < d[j]) {
          d[j] = cred;
          pred[j] = i;
          if (cred == mind) {
            if (y_[j] < 0) return j;
            cols[k] = cols[hi];
            cols[hi++] = j;
          }
        }
      }
    }
    plo = lo;
    phi = hi;
    return -1;
  }

  int find_path(int start_i, std::vector<int>& pred) {
    std::vector<int> cols(n_);
    std::vector<double> d(n_);
    for (int j = 0; j < n_; ++j) {
      cols[j] = j;
      pred[j] = start_i;
      d[j] = at(start_i, j) - v_[j];
    }
    int lo = 0, hi = 0, final_j = -1, n_ready = 0;
    while (final_j == -1) {
      if (lo == hi) {
        n_ready = lo;
        hi = find_minimum(lo, d, cols);
        for (int k = lo; k < hi; ++k) {
          const int j = cols[k];
          if (y_[j] < 0) final_j = j;
        }
      }
      if (final_j == -1) final_j = scan(lo, hi, d, cols, pred);
    }
    const double mind = d[cols[lo]];
    for (int k = 0; k < n_ready; ++k) {
      const int j = cols[k];
      v_[j] += d[j] - mind;
    }
    return final_j;
  }

  void augment(int n_free) {
    std::vector<int> pred(n_);
    for (int f = 0; f < n_free; ++f) {
      const int free_i = free_rows_[f];
      int i = -1, j = find_path(free_i, pred);
      int guard = 0;
      while (i != free_i) {
        i = pred[j];
        y_[j] = i;
        std::swap(j, x_[i]);
        if (++guard > n_) fail(ErrorCode::kNotConverged, "assignment: augmenting path did not terminate");
      }
    }
  }

  std::span<const double> c_;
  int n_;
  std::vector<int> x_, y_, free_rows_;
  std::vector<double> v_;
};

}  // namespace detail

/// Minimum-cost perfect matching for a square n x n row-major cost matrix.
inline Assignment solve_assignment(std::span<const double> cost, std::size_t n) {
  require(cost.size() == n * n, ErrorCode::kDimensionMismatch, "solve_assignment: cost must be n x n");
  if (n == 0) return {};
  if (n == 1) return Assignment{{0}, cost[0]};
  return detail::LapSolver(cost, static_cast<int>(n)).solve();
}

}  // namespace mfwgf
