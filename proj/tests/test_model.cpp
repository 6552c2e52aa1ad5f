#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "mfwgf/model.hpp"
#include "mfwgf/models/gmm.hpp"
#include "mfwgf/models/mor.hpp"
#include "test_util.hpp"

using namespace mfwgf;
using mfwgf::testing::random_cloud;

namespace {

/// Two-class 1-D model: z in {0,1}, x | z ~ N(theta_z, 1), weight 1/2, flat prior.
struct ToyModel {
  using observation_type = double;
  double shift = 0.0;
  [[nodiscard]] std::size_t num_classes() const { return 2; }
  [[nodiscard]] std::size_t param_dim() const { return 2; }
  [[nodiscard]] double log_joint(double x, std::size_t z, std::span<const double> th) const {
    const double e = x - th[z];
    return std::log(0.5) - 0.5 * e * e - 0.5 * std::log(2.0 * std::numbers::pi) + shift;
  }
  void add_grad_log_joint(double x, std::size_t z, std::span<const double> th, double s, std::span<double> out) const {
    out[z] += s * (x - th[z]);
  }
  [[nodiscard]] double log_prior(std::span<const double>) const { return 0.0; }
  void add_grad_log_prior(std::span<const double>, double, std::span<double>) const {}
};

GmmConfig gmm3() {
  GmmConfig c;
  c.K = 3;
  c.d = 2;
  c.beta = 1.3;
  c.weights = {0.2, 0.5, 0.3};
  return c;
}

Dataset<std::vector<double>> small_gmm_data(std::size_t n, std::uint64_t seed) {
  return gmm_generate(gmm3(), triangle_params(2.0), n, seed);
}

}  // namespace

TEST(Responsibilities, SingleParticleIsExactConditional) {
  GmmModel m(gmm3());
  const auto data = small_gmm_data(20, 1);
  const std::vector<double> th = {1.0, 0.5, -0.3, 2.0, -1.5, -0.2};
  const auto r = responsibilities(m, data, ParticleCloud(6, th));
  for (std::size_t i = 0; i < data.size(); ++i) {
    double lj[3], s = 0.0;
    for (std::size_t z = 0; z < 3; ++z) s += std::exp(lj[z] = m.log_joint(data[i], z, th));
    for (std::size_t z = 0; z < 3; ++z) EXPECT_NEAR(r(i, z), std::exp(lj[z]) / s, 1e-14);
  }
}

TEST(Responsibilities, EquidistantObservationSplitsEvenly) {
  GmmConfig c;
  c.K = 2;
  c.d = 1;
  c.weights = {0.5, 0.5};
  GmmModel m(c);
  Dataset<std::vector<double>> data;
  data.observations = {{0.0}};
  ParticleCloud cloud(2, {-1.0, 1.0, -2.5, 2.5, 3.0, -3.0});
  const auto r = responsibilities(m, data, cloud);
  EXPECT_NEAR(r(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(r(0, 1), 0.5, 1e-15);
}

TEST(Responsibilities, MatchesIndependentReevaluation) {
  GmmModel m(gmm3());
  const auto data = small_gmm_data(2, 7);
  const auto cloud = random_cloud(3, 6, 8, 2.0);
  const auto r = responsibilities(m, data, cloud);
  for (std::size_t i = 0; i < 2; ++i) {
    double acc[3] = {0, 0, 0};
    for (std::size_t b = 0; b < 3; ++b) {
      const auto th = cloud.point(b);
      double dens[3], tot = 0.0;
      for (std::size_t z = 0; z < 3; ++z) {
        double q = 0.0;
        for (std::size_t j = 0; j < 2; ++j) q += std::pow(data[i][j] - th[2 * z + j], 2);
        dens[z] = std::vector<double>{0.2, 0.5, 0.3}[z] * std::exp(-q / (2 * 1.3 * 1.3));
        tot += dens[z];
      }
      for (std::size_t z = 0; z < 3; ++z) acc[z] += std::log(dens[z] / tot) / 3.0;
    }
    double norm = 0.0;
    for (double a : acc) norm += std::exp(a);
    for (std::size_t z = 0; z < 3; ++z) EXPECT_NEAR(r(i, z), std::exp(acc[z]) / norm, 1e-12);
  }
}

TEST(Responsibilities, RowsAreStochastic) {
  GmmModel m(gmm3());
  const auto data = small_gmm_data(200, 3);
  const auto r = responsibilities(m, data, random_cloud(50, 6, 4, 3.0));
  EXPECT_LE(r.max_row_error(), 1e-10);
  for (double v : r.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Responsibilities, InvariantToDuplicatingParticles) {
  GmmModel m(gmm3());
  const auto data = small_gmm_data(50, 5);
  const auto cloud = random_cloud(10, 6, 6, 2.0);
  std::vector<double> dup = cloud.data();
  dup.insert(dup.end(), cloud.data().begin(), cloud.data().end());
  const auto r1 = responsibilities(m, data, cloud), r2 = responsibilities(m, data, ParticleCloud(6, dup));
  for (std::size_t k = 0; k < r1.values().size(); ++k) EXPECT_NEAR(r1.values()[k], r2.values()[k], 1e-12);
}

TEST(Responsibilities, PermutationEquivariant) {
  GmmConfig c = gmm3();
  GmmConfig cp = c;
  cp.weights = {c.weights[2], c.weights[0], c.weights[1]};
  GmmModel m(c), mp(cp);
  const auto data = small_gmm_data(30, 9);
  const auto cloud = random_cloud(5, 6, 10, 2.0);
  std::vector<double> perm(cloud.data().size());
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t j = 0; j < 2; ++j) {
      perm[b * 6 + 0 + j] = cloud.point(b)[4 + j];
      perm[b * 6 + 2 + j] = cloud.point(b)[0 + j];
      perm[b * 6 + 4 + j] = cloud.point(b)[2 + j];
    }
  const auto r = responsibilities(m, data, cloud), rp = responsibilities(mp, data, ParticleCloud(6, perm));
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_NEAR(rp(i, 0), r(i, 2), 1e-12);
    EXPECT_NEAR(rp(i, 1), r(i, 0), 1e-12);
    EXPECT_NEAR(rp(i, 2), r(i, 1), 1e-12);
  }
}

TEST(Responsibilities, ThreadCountDoesNotChangeResult) {
  GmmModel m(gmm3());
  const auto data = small_gmm_data(300, 11);
  const auto cloud = random_cloud(20, 6, 12, 2.0);
  EXPECT_EQ(responsibilities(m, data, cloud, 1), responsibilities(m, data, cloud, 4));
}

TEST(Responsibilities, DimensionMismatchAndNonFinite) {
  GmmModel m(gmm3());
  const auto data = small_gmm_data(3, 1);
  EXPECT_THROW(responsibilities(m, data, random_cloud(2, 4, 1)), Error);
  auto bad = data;
  bad.observations[1][0] = NAN;
  try {
    (void)responsibilities(m, bad, random_cloud(2, 6, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    ASSERT_EQ(e.where().size(), 3u);
    EXPECT_EQ(e.where()[0], 1);
  }
}

TEST(SamplePotential, SingleTermAndOneHot) {
  GmmConfig c;
  c.K = 1;
  c.d = 2;
  c.weights = {1.0};
  GmmModel m1(c);
  Dataset<std::vector<double>> one;
  one.observations = {{0.3, -0.4}};
  const std::vector<double> th = {1.0, 2.0};
  EXPECT_NEAR(sample_potential(m1, one, Responsibilities::one_hot({0}, 1), th), -m1.log_joint(one[0], 0, th), 1e-15);

  GmmModel m(gmm3());
  const auto data = small_gmm_data(40, 2);
  const auto th3 = random_cloud(1, 6, 3).data();
  const auto resp = Responsibilities::one_hot(data.labels, 3);
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += m.log_joint(data[i], data.labels[i], th3);
  EXPECT_NEAR(sample_potential(m, data, resp, th3), -s / 40.0, 1e-12);
}

TEST(SamplePotential, GradientMatchesFiniteDifference) {
  GmmModel m(gmm3());
  const auto data = small_gmm_data(25, 4);
  const auto resp = responsibilities(m, data, random_cloud(4, 6, 5, 2.0));
  const auto th = random_cloud(1, 6, 6, 2.0).data();
  const auto fd = finite_difference_gradient(
      [&](std::span<const double> t) { return static_cast<double>(data.size()) * sample_potential(m, data, resp, t); },
      th);
  // drift minus its prior part is n * grad U_n
  auto g = drift(m, data, resp, th);
  std::vector<double> prior(6, 0.0);
  m.add_grad_log_prior(th, 1.0, prior);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(g[j] + prior[j], fd[j], 1e-5 * std::max(1.0, std::abs(fd[j])));
}

TEST(Drift, SingleComponentGaussianPriorClosedForm) {
  GmmConfig c;
  c.K = 1;
  c.d = 2;
  c.beta = 0.7;
  c.weights = {1.0};
  c.prior = GmmPrior::kGaussian;
  c.sigma2 = 4.0;
  GmmModel m(c);
  const auto data = gmm_generate(c, {{{1.0, -1.0}}, {1.0}}, 30, 3);
  const std::vector<double> th = {0.2, 0.4};
  const auto resp = Responsibilities::one_hot(std::vector<int>(30, 0), 1);
  const auto g = drift(m, data, resp, th);
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 30; ++i) s += (th[j] - data[i][j]) / (0.7 * 0.7);
    EXPECT_NEAR(g[j], s + th[j] / 4.0, 1e-12);
  }
}

TEST(Drift, EmptyDataFlatPriorIsZero) {
  ToyModel m;
  Dataset<double> empty;
  const std::vector<double> th = {0.3, -0.2};
  const auto g = drift(m, empty, Responsibilities(0, 2), th);
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(sample_potential(m, empty, Responsibilities(0, 2), th), 0.0);
}

TEST(Drift, MatchesFiniteDifferenceOfNegativeLogPosterior) {
  for (auto prior : {GmmPrior::kRepulsive, GmmPrior::kGaussian}) {
    GmmConfig c = gmm3();
    c.prior = prior;
    GmmModel m(c);
    const auto data = small_gmm_data(30, 13);
    const auto resp = responsibilities(m, data, random_cloud(3, 6, 14, 2.0));
    const auto th = random_cloud(1, 6, 15, 2.0).data();
    const auto fd = finite_difference_gradient(
        [&](std::span<const double> t) {
          return static_cast<double>(data.size()) * sample_potential(m, data, resp, t) - m.log_prior(t);
        },
        th);
    const auto g = drift(m, data, resp, th);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(g[j], fd[j], 1e-5 * std::max(1.0, std::abs(fd[j])));
  }
}

TEST(Drift, OneHotEqualsCompleteDataGradient) {
  GmmConfig c = gmm3();
  c.prior = GmmPrior::kGaussian;
  GmmModel m(c);
  const auto data = small_gmm_data(40, 16);
  const auto resp = Responsibilities::one_hot(data.labels, 3);
  const auto th = random_cloud(1, 6, 17).data();
  const auto fd = finite_difference_gradient(
      [&](std::span<const double> t) {
        double s = -m.log_prior(t);
        for (std::size_t i = 0; i < data.size(); ++i) s -= m.log_joint(data[i], data.labels[i], t);
        return s;
      },
      th);
  const auto g = drift(m, data, resp, th);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(g[j], fd[j], 1e-5 * std::max(1.0, std::abs(fd[j])));
}

TEST(Drift, ConstantShiftInLogJoint) {
  ToyModel a, b;
  b.shift = 2.5;
  Dataset<double> data;
  data.observations = {0.1, -1.2, 2.0, 0.7};
  const auto cloud = random_cloud(3, 2, 1);
  const auto ra = responsibilities(a, data, cloud), rb = responsibilities(b, data, cloud);
  for (std::size_t k = 0; k < ra.values().size(); ++k) EXPECT_NEAR(ra.values()[k], rb.values()[k], 1e-14);
  const std::vector<double> th = {0.4, -0.6};
  EXPECT_EQ(drift(a, data, ra, th), drift(b, data, ra, th));
  EXPECT_NEAR(sample_potential(b, data, ra, th), sample_potential(a, data, ra, th) - 2.5, 1e-13);
}

TEST(ToyModel, DensityIntegratesToOne) {
  ToyModel m;
  const std::vector<double> th = {-1.0, 2.0};
  double s = 0.0;
  const double h = 1e-3;
  for (double x = -15.0; x <= 15.0; x += h) s += h * (std::exp(m.log_joint(x, 0, th)) + std::exp(m.log_joint(x, 1, th)));
  EXPECT_NEAR(s, 1.0, 1e-8);
}

TEST(FiniteDifference, QuadraticExact) {
  const std::vector<double> th = {1.0, -2.0, 0.5};
  const auto g = finite_difference_gradient(
      [](std::span<const double> t) { return t[0] * t[0] + 3 * t[1] * t[2]; }, th);
  EXPECT_NEAR(g[0], 2.0, 1e-9);
  EXPECT_NEAR(g[1], 1.5, 1e-9);
  EXPECT_NEAR(g[2], -6.0, 1e-9);
}
