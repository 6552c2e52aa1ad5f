#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

#include "mfwgf/core/error.hpp"
#include "mfwgf/core/parallel.hpp"
#include "mfwgf/core/stats.hpp"

namespace mfwgf::flow {

/// Grid density on M+1 uniform nodes spanning [lo, hi].
struct Density1D {
  double lo = -8.0;
  double hi = 8.0;
  std::vector<double> values;

  [[nodiscard]] std::size_t cells() const { return values.size() - 1; }
  [[nodiscard]] double h() const { return (hi - lo) / static_cast<double>(cells()); }
  [[nodiscard]] double x(std::size_t i) const { return lo + static_cast<double>(i) * h(); }

  [[nodiscard]] double integral() const {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) s += 0.5 * (values[i] + values[i + 1]);
    return s * h();
  }

  void normalize() {
    const double z = integral();
    require(z > 0.0 && std::isfinite(z), ErrorCode::kDegenerate, "density has no mass");
    for (double& v : values) v /= z;
  }

  void validate(double tol = 1e-8) const {
    require(values.size() >= 3 && hi > lo, ErrorCode::kInvalidArgument, "density grid needs >= 2 cells");
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
        fail(ErrorCode::kInvalidArgument, "density value at node " + std::to_string(i) + " is negative or non-finite",
             {static_cast<std::int64_t>(i)});
    const double z = integral();
    require(std::abs(z - 1.0) <= tol, ErrorCode::kInvalidArgument,
            "density is not normalized (integral " + std::to_string(z) + ")");
  }

  [[nodiscard]] double mean() const {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) s += 0.5 * (x(i) * values[i] + x(i + 1) * values[i + 1]);
    return s * h();
  }

  [[nodiscard]] double variance() const {
    const double m = mean();
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double w = (i == 0 || i + 1 == values.size()) ? 0.5 : 1.0;
      s += w * (x(i) - m) * (x(i) - m) * values[i];
    }
    return s * h();
  }

  static Density1D from_function(double lo, double hi, std::size_t cells, const std::function<double(double)>& f) {
    Density1D d{lo, hi, std::vector<double>(cells + 1)};
    for (std::size_t i = 0; i <= cells; ++i) d.values[i] = f(d.x(i));
    d.normalize();
    return d;
  }

  static Density1D gaussian(double mu, double sd, double L = 8.0, std::size_t cells = 4096) {
    return from_function(-L, L, cells, [=](double t) { return std::exp(-0.5 * (t - mu) * (t - mu) / (sd * sd)); });
  }
};

struct Potential1D {
  std::string name;
  std::function<double(double)> V, dV, d2V;
  std::optional<double> lambda;

  static Potential1D zero() {
    return {"zero", [](double) { return 0.0; }, [](double) { return 0.0; }, [](double) { return 0.0; }, 0.0};
  }
  static Potential1D quadratic() {
    return {"quadratic", [](double x) { return 0.5 * x * x; }, [](double x) { return x; }, [](double) { return 1.0; },
            1.0};
  }
  /// x^2/2 + c x^4.
  static Potential1D quartic(double c = 0.1) {
    return {"quartic", [c](double x) { return 0.5 * x * x + c * x * x * x * x; },
            [c](double x) { return x + 4.0 * c * x * x * x; }, [c](double x) { return 1.0 + 12.0 * c * x * x; }, 1.0};
  }
};

/// Gibbs density e^{-V}/Z on the grid.
inline Density1D stationary_density(const Potential1D& V, double L = 8.0, std::size_t cells = 4096) {
  double vmin = std::numeric_limits<double>::infinity();
  Density1D d{-L, L, std::vector<double>(cells + 1)};
  for (std::size_t i = 0; i <= cells; ++i) vmin = std::min(vmin, V.V(d.x(i)));
  for (std::size_t i = 0; i <= cells; ++i) d.values[i] = std::exp(-(V.V(d.x(i)) - vmin));
  d.normalize();
  return d;
}

namespace detail {

/// Solves a tridiagonal system in place (sub, diag, sup, rhs); rhs becomes the solution.
inline void thomas(std::vector<double> sub, std::vector<double> diag, const std::vector<double>& sup,
                   std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = sub[i] / diag[i - 1];
    diag[i] -= m * sup[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

/// Bernoulli function s / (e^s - 1).
inline double bernoulli_fn(double s) {
  if (std::abs(s) < 1e-6) return 1.0 - 0.5 * s + s * s / 12.0;
  return s / std::expm1(s);
}

}  // namespace detail

/// No-flux Fokker-Planck d rho/dt = d/dx (rho' + rho V') on the density grid.
/// Scharfetter-Gummel fluxes keep e^{-V} an exact discrete equilibrium; Crank-Nicolson
/// time stepping, started with backward-Euler half steps to damp the initial transient.
inline Density1D fp_solve(const Density1D& rho0, const Potential1D& V, double T, double dt) {
  rho0.validate();
  require(T >= 0.0, ErrorCode::kInvalidArgument, "fp_solve: horizon must be >= 0");
  require(dt > 0.0, ErrorCode::kInvalidArgument, "fp_solve: dt must be positive");
  Density1D rho = rho0;
  if (T == 0.0) return rho;
  const std::size_t n = rho.values.size();
  const double h = rho.h();
  std::vector<double> bp(n - 1), bm(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double dv = V.V(rho.x(i + 1)) - V.V(rho.x(i));
    bp[i] = detail::bernoulli_fn(dv);
    bm[i] = detail::bernoulli_fn(-dv);
  }
  // (A rho)_i = (1/h)[-bp_{i-1} rho_{i-1} + (bp_i + bm_{i-1}) rho_i - bm_i rho_{i+1}]; cell widths h, h/2 at ends.
  std::vector<double> a_sub(n, 0.0), a_diag(n, 0.0), a_sup(n, 0.0), width(n, h);
  width[0] = width[n - 1] = 0.5 * h;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      a_sub[i] = -bp[i - 1] / h;
      a_diag[i] += bm[i - 1] / h;
    }
    if (i + 1 < n) {
      a_sup[i] = -bm[i] / h;
      a_diag[i] += bp[i] / h;
    }
  }
  auto apply = [&](const std::vector<double>& r, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = a_diag[i] * r[i];
      if (i > 0) s += a_sub[i] * r[i - 1];
      if (i + 1 < n) s += a_sup[i] * r[i + 1];
      out[i] = s;
    }
  };
  // theta-scheme: (W + theta k A) r' = (W - (1 - theta) k A) r
  auto step = [&](double k, double theta) {
    std::vector<double> ar(n), rhs(n), sub(n), diag(n), sup(n);
    apply(rho.values, ar);
    for (std::size_t i = 0; i < n; ++i) {
      rhs[i] = width[i] * rho.values[i] - (1.0 - theta) * k * ar[i];
      sub[i] = theta * k * a_sub[i];
      diag[i] = width[i] + theta * k * a_diag[i];
      sup[i] = theta * k * a_sup[i];
    }
    detail::thomas(std::move(sub), std::move(diag), sup, rhs);
    rho.values = std::move(rhs);
  };
  const auto steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  const double k = T / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    if (s < 2) {
      step(0.5 * k, 1.0);
      step(0.5 * k, 1.0);
    } else {
      step(k, 0.5);
    }
    const double vmax = *std::max_element(rho.values.begin(), rho.values.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (rho.values[i] < -1e-10 * vmax)
        fail(ErrorCode::kNotConverged,
             "fp_solve: negative density at node " + std::to_string(i) + " after step " + std::to_string(s) +
                 "; reduce dt",
             {static_cast<std::int64_t>(i), static_cast<std::int64_t>(s)});
      if (rho.values[i] < 0.0) rho.values[i] = 0.0;
    }
  }
  return rho;
}

// ---------------------------------------------------------------------------
// Quantile representation: Q_j = F^{-1}(u_j), u_j = (j + 1/2)/N.

inline std::vector<double> probability_grid(std::size_t N) {
  std::vector<double> u(N);
  for (std::size_t j = 0; j < N; ++j) u[j] = (static_cast<double>(j) + 0.5) / static_cast<double>(N);
  return u;
}

/// Exact inversion of the CDF of the piecewise-linear interpolant.
inline std::vector<double> density_to_quantiles(const Density1D& rho, std::size_t N = 1 << 15) {
  rho.validate();
  const std::size_t n = rho.values.size();
  const double h = rho.h();
  std::vector<double> cdf(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) cdf[i + 1] = cdf[i] + 0.5 * h * (rho.values[i] + rho.values[i + 1]);
  const double total = cdf[n - 1];
  std::vector<double> q(N);
  std::size_t cell = 0;
  for (std::size_t j = 0; j < N; ++j) {
    const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(N) * total;
    while (cell + 2 < n && cdf[cell + 1] < u) ++cell;
    const double r0 = rho.values[cell], r1 = rho.values[cell + 1];
    const double a = 0.5 * h * (r1 - r0), b = h * r0, du = u - cdf[cell];
    const double disc = std::max(0.0, b * b + 4.0 * a * du);
    double t = (b + std::sqrt(disc)) > 0.0 ? 2.0 * du / (b + std::sqrt(disc)) : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    q[j] = rho.x(cell) + t * h;
  }
  return q;
}

inline std::vector<double> gaussian_quantiles(double mu, double sd, std::size_t N = 1 << 15) {
  boost::math::normal_distribution<double> nd(mu, sd);
  std::vector<double> q(N);
  for (std::size_t j = 0; j < N; ++j) q[j] = boost::math::quantile(nd, (static_cast<double>(j) + 0.5) / N);
  return q;
}

/// Density on a grid from quantile points: mass 1/N per gap, placed at gap midpoints.
inline Density1D quantiles_to_density(const std::vector<double>& q, double lo, double hi, std::size_t cells) {
  Density1D d{lo, hi, std::vector<double>(cells + 1, 0.0)};
  const std::size_t N = q.size();
  std::vector<double> mid, val;
  for (std::size_t j = 0; j + 1 < N; ++j) {
    const double g = q[j + 1] - q[j];
    require(g > 0.0, ErrorCode::kInvalidArgument, "quantiles must be strictly increasing");
    mid.push_back(0.5 * (q[j] + q[j + 1]));
    val.push_back(1.0 / (static_cast<double>(N) * g));
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i <= cells; ++i) {
    const double x = d.x(i);
    if (x < mid.front() || x > mid.back()) continue;
    while (k + 2 < mid.size() && mid[k + 1] < x) ++k;
    const double t = (x - mid[k]) / (mid[k + 1] - mid[k]);
    d.values[i] = (1.0 - t) * val[k] + t * val[k + 1];
  }
  d.normalize();
  return d;
}

/// W2 between two quantile vectors on the same probability grid.
inline double w2_quantiles(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::kDimensionMismatch, "w2_quantiles: size mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

inline double w2_densities_1d(const Density1D& a, const Density1D& b, std::size_t N = 1 << 15) {
  return w2_quantiles(density_to_quantiles(a, N), density_to_quantiles(b, N));
}

/// F_KL = int V rho + int rho log rho (trapezoid, rho floored at 1e-300 inside the log).
inline double kl_energy(const Density1D& rho, const Potential1D& V) {
  double s = 0.0;
  const std::size_t n = rho.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rho.values[i];
    const double w = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
    s += w * r * (V.V(rho.x(i)) + std::log(std::max(r, 1e-300)));
  }
  return s * rho.h();
}

/// Discrete F_KL of a quantile vector: mean V(Q_j) - mean log(N g_j).
inline double kl_energy_quantiles(const std::vector<double>& q, const Potential1D& V) {
  const double N = static_cast<double>(q.size());
  double s = 0.0;
  for (double x : q) s += V.V(x);
  for (std::size_t j = 0; j + 1 < q.size(); ++j) s -= std::log(N * (q[j + 1] - q[j]));
  return s / N;
}

// ---------------------------------------------------------------------------
// JKO step in quantile form: minimize sum V(Q_j) + |Q - P|^2/(2 tau) - sum log g_j,
// g_j = Q_{j+1} - Q_j, by damped Newton with the tridiagonal Hessian.

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

struct NewtonReport {
  int iterations = 0;
  double residual = 0.0;
  /// Rounding noise of the residual at the solution; convergence means residual <= max(tol, noise).
  double noise = 0.0;
};

namespace detail {

/// tau <= 0 means no proximal term (stationary state of the discrete energy).
inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline NewtonReport quantile_newton(const std::vector<double>& P, const Potential1D& V, double tau,
                                    std::vector<double>& Q, const NewtonOptions& opt) {
  const std::size_t N = Q.size();
  const bool prox = tau > 0.0;
  const double itau = prox ? 1.0 / tau : 0.0;
  auto objective = [&](const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      s += V.V(q[j]);
      if (prox) s += 0.5 * itau * (q[j] - P[j]) * (q[j] - P[j]);
    }
    for (std::size_t j = 0; j + 1 < N; ++j) {
      const double g = q[j + 1] - q[j];
      if (!(g > 0.0)) return std::numeric_limits<double>::infinity();
      s -= std::log(g);
    }
    return s;
  };
  std::vector<double> r(N), sub(N), diag(N), sup(N), rhs(N), trial(N), ig(N > 0 ? N - 1 : 0);
  // residual RMS, and the RMS rounding noise of evaluating it (the 1/g_j terms lose
  // eps*|Q|/g_j^2 each), below which no iteration can push it
  double noise = 0.0;
  auto residual = [&](const std::vector<double>& q) {
    for (std::size_t j = 0; j + 1 < N; ++j) ig[j] = 1.0 / (q[j + 1] - q[j]);
    constexpr double eps = std::numeric_limits<double>::epsilon();
    double s = 0.0, fl = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      double v = V.dV(q[j]);
      double e = std::abs(v) + std::abs(itau * q[j]);
      if (prox) v += itau * (q[j] - P[j]);
      if (j + 1 < N) {
        v += ig[j];
        e += (std::abs(q[j]) + std::abs(q[j + 1])) * ig[j] * ig[j];
      }
      if (j > 0) {
        v -= ig[j - 1];
        e += (std::abs(q[j - 1]) + std::abs(q[j])) * ig[j - 1] * ig[j - 1];
      }
      r[j] = v;
      s += v * v;
      fl += eps * eps * e * e;
    }
    noise = std::sqrt(fl / static_cast<double>(N));
    return std::sqrt(s / static_cast<double>(N));
  };
  NewtonReport rep;
  double f = objective(Q);
  require(std::isfinite(f), ErrorCode::kInvalidArgument, "jko: initial quantiles must be strictly increasing");
  double best_res = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (rep.iterations = 0; rep.iterations < opt.max_iter; ++rep.iterations) {
    rep.residual = residual(Q);
    rep.noise = noise;
    if (rep.residual <= std::max(opt.tol, noise)) return rep;
    if (rep.residual < 0.5 * best_res) {
      best_res = rep.residual;
      stalled = 0;
    } else if (++stalled > 8) {
      break;
    }
    for (std::size_t j = 0; j < N; ++j) {
      double dg = V.d2V(Q[j]) + itau;
      if (j + 1 < N) dg += ig[j] * ig[j];
      if (j > 0) dg += ig[j - 1] * ig[j - 1];
      diag[j] = dg;
      sup[j] = j + 1 < N ? -ig[j] * ig[j] : 0.0;
      sub[j] = j > 0 ? -ig[j - 1] * ig[j - 1] : 0.0;
      rhs[j] = -r[j];
    }
    detail::thomas(sub, diag, sup, rhs);
    double slope = 0.0;
    for (std::size_t j = 0; j < N; ++j) slope += r[j] * rhs[j];
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      for (std::size_t j = 0; j < N; ++j) trial[j] = Q[j] + step * rhs[j];
      const double ft = objective(trial);
      // near the optimum the objective change drowns in rounding; accept any non-increasing full step
      if (ft <= f + 1e-4 * step * slope || (step == 1.0 && ft <= f + 1e-12 * std::abs(f))) {
        Q.swap(trial);
        f = ft;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  rep.residual = residual(Q);
  rep.noise = noise;
  if (rep.residual > std::max(opt.tol, noise))
    fail(ErrorCode::kNotConverged,
         "jko: Newton stopped with first-order residual " + sci(rep.residual) + " after " +
             std::to_string(rep.iterations) + " iterations");
  return rep;
}

}  // namespace detail

inline std::vector<double> jko_step_quantiles(const std::vector<double>& P, const Potential1D& V, double tau,
                                              const NewtonOptions& opt = {}, NewtonReport* report = nullptr) {
  require(tau > 0.0, ErrorCode::kInvalidArgument, "jko_step: tau must be positive");
  std::vector<double> Q = P;
  const auto rep = detail::quantile_newton(P, V, tau, Q, opt);
  if (report) *report = rep;
  return Q;
}

/// Minimizer of the discrete F_KL: the stationary point of the quantile JKO scheme.
inline std::vector<double> stationary_quantiles(const Potential1D& V, std::size_t N = 1 << 15, double L = 8.0,
                                                const NewtonOptions& opt = {1e-12, 400}) {
  auto Q = density_to_quantiles(stationary_density(V, L, 4096), N);
  detail::quantile_newton(Q, V, 0.0, Q, opt);
  return Q;
}

inline Density1D jko_step_1d(const Density1D& rho, const Potential1D& V, double tau, std::size_t N = 1 << 15,
                             const NewtonOptions& opt = {}) {
  const auto Q = jko_step_quantiles(density_to_quantiles(rho, N), V, tau, opt);
  return quantiles_to_density(Q, rho.lo, rho.hi, rho.cells());
}

// ---------------------------------------------------------------------------
// One-step particle schemes on the grid.

/// {[Id - tau V']_# rho} * N(0, 2 tau), by quadrature over source nodes.
inline Density1D langevin_step_1d(const Density1D& rho, const Potential1D& V, double tau) {
  rho.validate();
  require(tau > 0.0, ErrorCode::kInvalidArgument, "langevin_step: tau must be positive");
  const std::size_t n = rho.values.size();
  const double h = rho.h(), var = 2.0 * tau, sd = std::sqrt(var);
  const double reach = 12.0 * sd;
  const double norm = 1.0 / std::sqrt(2.0 * 3.14159265358979323846 * var);
  const double vmax = *std::max_element(rho.values.begin(), rho.values.end());
  Density1D out{rho.lo, rho.hi, std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rho.values[i] * ((i == 0 || i + 1 == n) ? 0.5 : 1.0) * h;
    if (rho.values[i] <= 1e-300 * vmax || w == 0.0) continue;
    const double t = rho.x(i) - tau * V.dV(rho.x(i));
    const auto k0 = static_cast<std::ptrdiff_t>(std::floor((t - reach - rho.lo) / h));
    const auto k1 = static_cast<std::ptrdiff_t>(std::ceil((t + reach - rho.lo) / h));
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, k0); k <= std::min<std::ptrdiff_t>(n - 1, k1); ++k) {
      const double e = out.x(static_cast<std::size_t>(k)) - t;
      out.values[static_cast<std::size_t>(k)] += w * norm * std::exp(-0.5 * e * e / var);
    }
  }
  out.normalize();
  return out;
}

using Score1D = std::function<double(double)>;

/// Pushforward by T(x) = x - tau (V'(x) + score(x)) via change of variables. Without an
/// exact score, (log rho)' comes from a cubic B-spline of the log grid values, which
/// keeps its relative accuracy in the tails.
inline Density1D explicit_step_1d(const Density1D& rho, const Potential1D& V, double tau,
                                  const Score1D& exact_score = {}, double support_floor = 1e-12) {
  rho.validate();
  require(tau > 0.0, ErrorCode::kInvalidArgument, "explicit_step: tau must be positive");
  const std::size_t n = rho.values.size();
  const double h = rho.h();
  const double vmax = *std::max_element(rho.values.begin(), rho.values.end());
  boost::math::interpolators::cardinal_cubic_b_spline<double> spline(rho.values.begin(), rho.values.end(), rho.lo, h);
  std::vector<double> logv(n);
  for (std::size_t i = 0; i < n; ++i) logv[i] = std::log(std::max(rho.values[i], 1e-300 * vmax));
  boost::math::interpolators::cardinal_cubic_b_spline<double> log_spline(logv.begin(), logv.end(), rho.lo, h);
  auto dens = [&](double x) { return std::max(0.0, spline(x)); };
  auto score = [&](double x) {
    if (exact_score) return exact_score(x);
    return log_spline.prime(x);
  };
  auto T = [&](double x) { return x - tau * (V.dV(x) + score(x)); };
  std::size_t first = n, last = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (rho.values[i] > support_floor * vmax) {
      first = std::min(first, i);
      last = i;
    }
  require(first < last, ErrorCode::kDegenerate, "explicit_step: density support too small");
  std::vector<double> tx(n);
  for (std::size_t i = first; i <= last; ++i) {
    tx[i] = T(rho.x(i));
    if (i > first && !(tx[i] > tx[i - 1]))
      fail(ErrorCode::kInvalidArgument,
           "explicit_step: transport map is not monotone near x = " + std::to_string(rho.x(i)) + "; reduce tau",
           {static_cast<std::int64_t>(i)});
  }
  Density1D out{rho.lo, rho.hi, std::vector<double>(n, 0.0)};
  std::size_t seg = first;
  const double dx = 1e-4 * h;
  for (std::size_t k = 0; k < n; ++k) {
    const double y = out.x(k);
    if (y < tx[first] || y > tx[last]) continue;
    while (seg + 1 < last && tx[seg + 1] < y) ++seg;
    double a = rho.x(seg), b = rho.x(seg + 1);
    for (int it = 0; it < 60 && b - a > 1e-15 * (1.0 + std::abs(a)); ++it) {
      const double m = 0.5 * (a + b);
      (T(m) < y ? a : b) = m;
    }
    const double x = 0.5 * (a + b);
    const double jac = (T(x + dx) - T(x - dx)) / (2.0 * dx);
    require(jac > 0.0, ErrorCode::kInvalidArgument, "explicit_step: transport map is not monotone; reduce tau");
    out.values[k] = dens(x) / jac;
  }
  out.normalize();
  return out;
}

/// Quantile form: sorted T(P_j). Without an exact score, the discrete score
/// 1/g_j - 1/g_{j-1} of the quantile vector is used.
inline std::vector<double> explicit_step_quantiles(const std::vector<double>& P, const Potential1D& V, double tau,
                                                   const Score1D& exact_score = {}) {
  const std::size_t N = P.size();
  std::vector<double> Q(N);
  for (std::size_t j = 0; j < N; ++j) {
    double s = 0.0;
    if (exact_score) {
      s = exact_score(P[j]);
    } else {
      if (j + 1 < N) s += 1.0 / (P[j + 1] - P[j]);
      if (j > 0) s -= 1.0 / (P[j] - P[j - 1]);
    }
    Q[j] = P[j] - tau * (V.dV(P[j]) + s);
  }
  std::sort(Q.begin(), Q.end());
  return Q;
}

// ---------------------------------------------------------------------------
// Sweeps.

enum class SchemePair { kFpLangevin, kExplicitJko, kFpJko, kFpExplicit, kIdentical };

inline const char* to_string(SchemePair p) {
  switch (p) {
    case SchemePair::kFpLangevin: return "fp_langevin";
    case SchemePair::kExplicitJko: return "explicit_jko";
    case SchemePair::kFpJko: return "fp_jko";
    case SchemePair::kFpExplicit: return "fp_explicit";
    case SchemePair::kIdentical: return "identical";
  }
  return "?";
}

inline SchemePair scheme_pair_from_string(const std::string& s) {
  for (auto p : {SchemePair::kFpLangevin, SchemePair::kExplicitJko, SchemePair::kFpJko, SchemePair::kFpExplicit,
                 SchemePair::kIdentical})
    if (s == to_string(p)) return p;
  fail(ErrorCode::kConfig, "unknown scheme pair '" + s + "'");
}

/// Gaussian start N(mean, sd^2) with its exact score available.
struct Start1D {
  double mean = 0.5;
  double sd = 0.8;
  double L = 8.0;
  std::size_t cells = 4096;

  [[nodiscard]] Density1D density() const { return Density1D::gaussian(mean, sd, L, cells); }
  [[nodiscard]] Score1D score() const {
    const double m = mean, v = sd * sd;
    return [m, v](double x) { return -(x - m) / v; };
  }
};

struct SweepOptions {
  std::size_t quantiles = 1 << 15;
  /// FP time step = tau * fp_dt_ratio.
  double fp_dt_ratio = 0.01;
  NewtonOptions newton{1e-10, 200};
  int threads = 1;
};

struct SweepPoint {
  double tau = 0.0;
  double error_w2 = 0.0;
  /// W2(FP, explicit) <= W2(FP, JKO) + W2(JKO, explicit) slack on this point; NaN when not computed.
  double triangle_slack = std::numeric_limits<double>::quiet_NaN();
};

struct OrderSweepResult {
  SchemePair pair = SchemePair::kFpLangevin;
  std::vector<SweepPoint> points;
  LinearFit fit;
  bool degenerate = false;
  std::string failure;
};

/// One sweep point: all quantities on one probability grid so W2 is the exact quantile L2 norm.
inline SweepPoint sweep_point(const Potential1D& V, const Start1D& start, SchemePair pair, double tau,
                              const SweepOptions& opt) {
  const auto rho0 = start.density();
  const std::size_t N = opt.quantiles;
  const auto P = gaussian_quantiles(start.mean, start.sd, N);
  SweepPoint pt;
  pt.tau = tau;
  auto fp_q = [&] { return density_to_quantiles(fp_solve(rho0, V, tau, tau * opt.fp_dt_ratio), N); };
  auto jko_q = [&] { return jko_step_quantiles(P, V, tau, opt.newton); };
  auto ex_q = [&] { return explicit_step_quantiles(P, V, tau, start.score()); };
  switch (pair) {
    case SchemePair::kFpLangevin:
      pt.error_w2 = w2_quantiles(fp_q(), density_to_quantiles(langevin_step_1d(rho0, V, tau), N));
      break;
    case SchemePair::kExplicitJko:
      pt.error_w2 = w2_quantiles(ex_q(), jko_q());
      break;
    case SchemePair::kFpJko:
      pt.error_w2 = w2_quantiles(fp_q(), jko_q());
      break;
    case SchemePair::kFpExplicit: {
      const auto f = fp_q(), j = jko_q(), e = ex_q();
      pt.error_w2 = w2_quantiles(f, e);
      pt.triangle_slack = w2_quantiles(f, j) + w2_quantiles(j, e) - pt.error_w2;
      break;
    }
    case SchemePair::kIdentical:
      pt.error_w2 = w2_quantiles(jko_q(), jko_q());
      break;
  }
  return pt;
}

/// Least-squares slope of log W2 error against log tau.
inline OrderSweepResult order_sweep(const Potential1D& V, const Start1D& start, SchemePair pair,
                                    const std::vector<double>& taus, const SweepOptions& opt = {}) {
  require(taus.size() >= 4, ErrorCode::kInvalidArgument, "order_sweep: need >= 4 step sizes");
  const auto [mn, mx] = std::minmax_element(taus.begin(), taus.end());
  require(*mn > 0.0 && *mx / *mn >= 10.0 - 1e-9, ErrorCode::kInvalidArgument,
          "order_sweep: step sizes must be positive and span at least one decade");
  OrderSweepResult res;
  res.pair = pair;
  res.points.resize(taus.size());
  std::vector<std::string> errors(taus.size());
  parallel_for(taus.size(), opt.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      try {
        res.points[i] = sweep_point(V, start, pair, taus[i], opt);
      } catch (const std::exception& ex) {
        res.points[i].tau = taus[i];
        res.points[i].error_w2 = std::numeric_limits<double>::quiet_NaN();
        errors[i] = ex.what();
      }
    }
  });
  for (std::size_t i = 0; i < taus.size(); ++i)
    if (!errors[i].empty()) {
      res.failure = "tau = " + std::to_string(taus[i]) + ": " + errors[i];
      return res;
    }
  double worst = 0.0;
  for (const auto& p : res.points) worst = std::max(worst, p.error_w2);
  res.degenerate = worst < 1e-12;
  if (res.degenerate) return res;
  std::vector<double> lx, ly;
  for (const auto& p : res.points) {
    lx.push_back(std::log(p.tau));
    ly.push_back(std::log(std::max(p.error_w2, 1e-300)));
  }
  res.fit = linear_fit(lx, ly);
  return res;
}

struct ContractionResult {
  double bound = 0.0;
  std::vector<double> distances_sq;
  std::vector<double> ratios;
  std::vector<double> energies;
  bool passed = true;
  std::size_t violation_step = 0;
};

/// Repeated quantile JKO steps from rho0 toward the discrete minimizer pi*; reports
/// W2^2(k+1)/W2^2(k), stopping once the distance falls below `floor`.
inline ContractionResult contraction_check(const Potential1D& V, const std::vector<double>& P0, double tau,
                                           std::size_t steps, double floor = 1e-6, double L = 8.0,
                                           const NewtonOptions& newton = {1e-12, 400}) {
  require(V.lambda.has_value() && *V.lambda > 0.0, ErrorCode::kInvalidArgument,
          "contraction_check: potential must declare lambda > 0");
  const double lambda = *V.lambda;
  for (int i = 0; i <= 4096; ++i) {
    const double x = -L + 2.0 * L * i / 4096.0;
    require(V.d2V(x) >= lambda - 1e-12, ErrorCode::kInvalidArgument,
            "contraction_check: V'' < lambda at x = " + std::to_string(x));
  }
  const auto star = stationary_quantiles(V, P0.size(), L, newton);
  ContractionResult res;
  res.bound = 1.0 / (1.0 + tau * lambda) + 1e-3;
  auto Q = P0;
  double d2 = std::pow(w2_quantiles(Q, star), 2);
  res.distances_sq.push_back(d2);
  res.energies.push_back(kl_energy_quantiles(Q, V));
  for (std::size_t k = 0; k < steps && std::sqrt(d2) >= floor; ++k) {
    Q = jko_step_quantiles(Q, V, tau, newton);
    const double next = std::pow(w2_quantiles(Q, star), 2);
    res.distances_sq.push_back(next);
    res.energies.push_back(kl_energy_quantiles(Q, V));
    const double ratio = next / d2;
    res.ratios.push_back(ratio);
    if (ratio > res.bound && res.passed) {
      res.passed = false;
      res.violation_step = k;
    }
    d2 = next;
  }
  return res;
}

struct CumulativePoint {
  double horizon = 0.0;
  std::size_t steps = 0;
  double error_w2 = 0.0;
};

struct CumulativeResult {
  double tau = 0.0;
  std::vector<CumulativePoint> points;
  LinearFit fit;
};

/// W2 between T/tau Langevin steps and the Fokker-Planck solution at time T, per horizon.
inline CumulativeResult cumulative_error(const Potential1D& V, const Start1D& start, double tau,
                                         std::vector<double> horizons, double fp_dt_ratio = 0.2,
                                         std::size_t N = 1 << 15) {
  require(!horizons.empty(), ErrorCode::kInvalidArgument, "cumulative_error: need horizons");
  std::sort(horizons.begin(), horizons.end());
  CumulativeResult res;
  res.tau = tau;
  auto chain = start.density();
  auto fp = chain;
  std::size_t done = 0;
  double t_fp = 0.0;
  for (double T : horizons) {
    const auto steps = static_cast<std::size_t>(std::llround(T / tau));
    require(std::abs(static_cast<double>(steps) * tau - T) <= 1e-9 * std::max(1.0, T), ErrorCode::kInvalidArgument,
            "cumulative_error: horizon must be a multiple of tau");
    for (; done < steps; ++done) chain = langevin_step_1d(chain, V, tau);
    fp = fp_solve(fp, V, T - t_fp, tau * fp_dt_ratio);
    t_fp = T;
    res.points.push_back({T, steps, w2_densities_1d(chain, fp, N)});
  }
  if (res.points.size() >= 2) {
    std::vector<double> lx, ly;
    for (const auto& p : res.points) {
      lx.push_back(std::log(p.horizon));
      ly.push_back(std::log(std::max(p.error_w2, 1e-300)));
    }
    res.fit = linear_fit(lx, ly);
  }
  return res;
}

}  // namespace mfwgf::flow
