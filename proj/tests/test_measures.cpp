#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "mfwgf/measures.hpp"
#include "test_util.hpp"

using namespace mfwgf;
using mfwgf::testing::brute_force_w2;
using mfwgf::testing::random_cloud;

TEST(ParticleCloud, RejectsBadWeightsAndShapes) {
  EXPECT_THROW(ParticleCloud(2, {1.0, 2.0}, {0.5, 0.6}), Error);
  EXPECT_THROW(ParticleCloud(2, {1.0, 2.0, 3.0}), Error);
  EXPECT_THROW(ParticleCloud(0, {}), Error);
  EXPECT_NO_THROW(ParticleCloud(1, {1.0, 2.0}, {0.25, 0.75}));
}

TEST(W2PointMass, IdentityAndSymmetricPair) {
  ParticleCloud one(2, {1.0, -3.0});
  const double p[2] = {1.0, -3.0};
  EXPECT_EQ(w2_point_mass(one, p), 0.0);
  ParticleCloud two(1, {0.0, 2.0});
  const double c[1] = {1.0};
  EXPECT_DOUBLE_EQ(w2_point_mass(two, c), 1.0);
}

TEST(W2PointMass, MatchesDirectSummation) {
  const auto c = random_cloud(10, 3, 11);
  double s = 0.0;
  for (std::size_t b = 0; b < 10; ++b)
    for (std::size_t j = 0; j < 3; ++j) s += c.point(b)[j] * c.point(b)[j];
  const double origin[3] = {0.0, 0.0, 0.0};
  EXPECT_NEAR(w2_point_mass(c, origin), std::sqrt(s / 10.0), 1e-14);
}

TEST(W2PointMass, DimensionMismatchIsStructured) {
  const auto c = random_cloud(4, 2, 1);
  const double p[3] = {0, 0, 0};
  try {
    (void)w2_point_mass(c, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(W2OneD, TrivialCases) {
  EXPECT_EQ(w2_1d(ParticleCloud(1, {0.0, 1.0}), ParticleCloud(1, {1.0, 0.0})), 0.0);
  EXPECT_DOUBLE_EQ(w2_1d(ParticleCloud(1, {0.0}), ParticleCloud(1, {3.0})), 3.0);
  EXPECT_THROW(w2_1d(ParticleCloud(1, {0.0}), ParticleCloud(1, {3.0, 1.0})), Error);
  EXPECT_THROW(w2_1d(ParticleCloud(1, {0.0, 1.0}, {0.3, 0.7}), ParticleCloud(1, {3.0, 1.0})), Error);
}

TEST(W2OneD, FrozenSixPointOracle) {
  // brute force over all 720 pairings, evaluated offline
  ParticleCloud a(1, {0.4, -1.3, 2.2, 0.9, -0.1, 1.7}), b(1, {1.0, 0.2, -0.6, 3.1, -2.0, 0.5});
  EXPECT_NEAR(w2_1d(a, b), 0.6110100926607787, 1e-14);
  EXPECT_NEAR(w2_1d(a, b), brute_force_w2(a, b), 1e-14);
}

TEST(W2OneD, RandomMatchesPermutationOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = random_cloud(6, 1, 100 + s), b = random_cloud(6, 1, 200 + s, 2.0);
    EXPECT_NEAR(w2_1d(a, b), brute_force_w2(a, b), 1e-12);
  }
}

TEST(W2Exact, TrivialCases) {
  const auto a = random_cloud(7, 3, 5);
  EXPECT_NEAR(w2_exact(a, a).distance, 0.0, 1e-12);
  ParticleCloud x(2, {0, 0, 1, 0}), y(2, {0, 1, 1, 1});
  const auto r = w2_exact(x, y);
  EXPECT_NEAR(r.distance, 1.0, 1e-14);
  EXPECT_EQ(r.method, W2Method::kExactAssignment);
}

TEST(W2Exact, FrozenFivePointOracle) {
  auto a = ParticleCloud::from_rows({{0.3, -1.2}, {1.5, 0.4}, {-0.7, 0.9}, {2.1, -0.5}, {-1.4, -0.3}});
  auto b = ParticleCloud::from_rows({{0.1, 0.2}, {1.1, -1.0}, {-0.9, -0.8}, {0.6, 1.7}, {2.4, 0.3}});
  EXPECT_NEAR(w2_exact(a, b).distance, 1.0526157893552612, 1e-13);
}

TEST(W2Exact, RandomMatchesPermutationOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t B = 2 + s % 5;
    const auto a = random_cloud(B, 2, 300 + s), b = random_cloud(B, 2, 400 + s, 1.5);
    EXPECT_NEAR(w2_exact(a, b).distance, brute_force_w2(a, b), 1e-12) << "B = " << B;
  }
}

TEST(W2Exact, TransportFormForUnequalWeights) {
  // mass 1/2 at 0 and 1/2 at 2 against a single atom at 1: every unit moves distance 1
  ParticleCloud a(1, {0.0, 2.0}), b(1, {1.0, 5.0}, {1.0 - 1e-15, 1e-15});
  EXPECT_NEAR(w2_exact(a, b).distance, 1.0, 1e-6);
  // duplicated points with halved weights equal the original cloud
  const auto c = random_cloud(4, 2, 9);
  std::vector<double> dup = c.data();
  dup.insert(dup.end(), c.data().begin(), c.data().end());
  ParticleCloud c2(2, dup);
  const auto d = random_cloud(3, 2, 10);
  EXPECT_NEAR(w2_exact(c2, d).distance, w2_exact(c, d).distance, 1e-10);
  EXPECT_EQ(w2_exact(c, d).method, W2Method::kExactTransport);
}

TEST(W2Exact, CapacityExceededDirectsToSinkhorn) {
  const auto a = random_cloud(30, 1, 1), b = random_cloud(40, 1, 2);
  ExactOptions opt;
  opt.transport_cap = 100;
  try {
    (void)w2_exact(a, b, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCapacityExceeded);
    EXPECT_NE(std::string(e.what()).find("sinkhorn"), std::string::npos);
  }
}

TEST(W2Exact, MetricAxiomsOnRandomClouds) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::size_t B = 1 + s % 8;
    const auto a = random_cloud(B, 2, 1000 + s), b = random_cloud(B, 2, 2000 + s), c = random_cloud(B, 2, 3000 + s);
    const double ab = w2_exact(a, b).distance, ba = w2_exact(b, a).distance;
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(w2_exact(a, c).distance, ab + w2_exact(b, c).distance + 1e-9);
    EXPECT_NEAR(w2_exact(a, a).distance, 0.0, 1e-12);
  }
}

TEST(W2Exact, OneDimensionalConsistency) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = random_cloud(50, 1, 50 + s), b = random_cloud(50, 1, 60 + s, 3.0);
    EXPECT_NEAR(w2_1d(a, b), w2_exact(a, b).distance, 1e-10);
  }
}

TEST(W2Exact, PointMassConsistency) {
  const auto a = random_cloud(25, 3, 77);
  ParticleCloud pt(3, {0.5, -1.0, 2.0});
  EXPECT_NEAR(w2_exact(a, pt).distance, w2_point_mass(a, pt.point(0)), 1e-10);
}

TEST(W2Sinkhorn, IdenticalCloudsVanish) {
  const auto a = random_cloud(40, 2, 3);
  EXPECT_NEAR(w2_sinkhorn(a, a, 0.05).distance, 0.0, 1e-6);
}

TEST(W2Sinkhorn, PointMassLimit) {
  ParticleCloud a(1, {0.0}), b(1, {3.0});
  double prev_gap = INFINITY;
  for (double eps : {1.0, 0.1, 0.01}) {
    const double gap = std::abs(w2_sinkhorn(a, b, eps).distance - 3.0);
    EXPECT_LE(gap, prev_gap + 1e-12);
    prev_gap = gap;
  }
  EXPECT_LT(prev_gap, 1e-6);
}

TEST(W2Sinkhorn, ApproachesExactOnRandomClouds) {
  const auto a = random_cloud(64, 2, 21), b = random_cloud(64, 2, 22, 1.3);
  const double exact = w2_exact(a, b).distance;
  const double med = median_pairwise_cost(a, b);
  double prev = INFINITY;
  for (double eps : {1.0, 0.1, 0.01}) {
    const double d = w2_sinkhorn(a, b, eps * med).distance;
    const double gap = std::abs(d - exact);
    EXPECT_LE(gap, prev + 1e-9) << "eps factor " << eps;
    prev = gap;
  }
  EXPECT_LT(prev / exact, 0.02);
}

TEST(W2Sinkhorn, RejectsNonPositiveEpsilon) {
  const auto a = random_cloud(4, 1, 1);
  EXPECT_THROW(w2_sinkhorn(a, a, 0.0), Error);
}

TEST(W2Auto, DispatchesByCase) {
  const auto a = random_cloud(20, 2, 1), b = random_cloud(20, 2, 2);
  EXPECT_EQ(w2_auto(a, b).method, W2Method::kExactAssignment);
  ParticleCloud pt(2, {0.0, 0.0});
  EXPECT_EQ(w2_auto(a, pt).method, W2Method::kPointMass);
  EXPECT_EQ(w2_auto(a, b, 10).method, W2Method::kSinkhornDivergence);
}

TEST(AlignComponents, AlignedParticleUnchanged) {
  ComponentLayout L{3, 2, 0};
  std::vector<std::vector<double>> ref = {{2, 0}, {0, 3}, {-2, 0}};
  ParticleCloud c(6, {2.1, 0.1, 0.2, 2.9, -1.8, 0.0});
  EXPECT_EQ(align_components(c, L, ref), c);
}

TEST(AlignComponents, SwappedBlocksRestored) {
  ComponentLayout L{2, 2, 0};
  std::vector<std::vector<double>> ref = {{1, 1}, {-1, -1}};
  ParticleCloud c(4, {-1.1, -0.9, 0.9, 1.2});
  const auto out = align_components(c, L, ref);
  EXPECT_EQ(out.data(), (std::vector<double>{0.9, 1.2, -1.1, -0.9}));
}

TEST(AlignComponents, TrailingLogitsFollowTheirCenter) {
  ComponentLayout L{2, 1, 1};
  std::vector<std::vector<double>> ref = {{-5}, {5}};
  ParticleCloud c(4, {5.0, -5.0, 0.7, 0.3});
  EXPECT_EQ(align_components(c, L, ref).data(), (std::vector<double>{-5.0, 5.0, 0.3, 0.7}));
}

TEST(AlignComponents, MatchesSixPermutationOracle) {
  ComponentLayout L{3, 2, 0};
  std::vector<std::vector<double>> ref = {{2, 0}, {0, 3.4}, {-2, 0}};
  const auto c = random_cloud(30, 6, 5, 2.5);
  const auto out = align_components(c, L, ref);
  std::vector<int> perm = {0, 1, 2};
  for (std::size_t b = 0; b < c.size(); ++b) {
    double best = INFINITY;
    std::sort(perm.begin(), perm.end());
    do {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += squared_distance(c.point(b).subspan(2 * k, 2), ref[perm[k]]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    double got = 0.0;
    for (int k = 0; k < 3; ++k) got += squared_distance(out.point(b).subspan(2 * k, 2), ref[k]);
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(AlignComponents, NeverIncreasesPointMassDistance) {
  ComponentLayout L{3, 2, 0};
  std::vector<std::vector<double>> ref = {{2, 0}, {0, 3.4}, {-2, 0}};
  const std::vector<double> flat = {2, 0, 0, 3.4, -2, 0};
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto c = random_cloud(40, 6, 600 + s, 3.0);
    EXPECT_LE(w2_point_mass(align_components(c, L, ref), flat), w2_point_mass(c, flat) + 1e-12);
  }
}

TEST(AlignComponents, LayoutMismatchIsStructured) {
  const auto c = random_cloud(3, 5, 1);
  EXPECT_THROW(align_components(c, ComponentLayout{3, 2, 0}, {{0, 0}, {1, 1}, {2, 2}}), Error);
}

TEST(SignAlign, GlobalAndPerParticle) {
  ParticleCloud c(2, {-2.0, -3.0, -1.9, -3.1, 2.1, 2.9});
  const double ref[2] = {2.0, 3.0};
  const auto g = sign_align_global(c, ref);
  EXPECT_DOUBLE_EQ(g.point(0)[0], 2.0);
  const auto e = sign_align_each(c, ref);
  for (std::size_t b = 0; b < 3; ++b) EXPECT_GT(e.point(b)[0], 0.0);
}
