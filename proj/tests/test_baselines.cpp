#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mfwgf/baselines.hpp"
#include "mfwgf/engine.hpp"
#include "test_util.hpp"

using namespace mfwgf;

namespace {

GmmConfig gmm(std::size_t K, double beta, GmmPrior prior, std::vector<double> w) {
  GmmConfig c;
  c.K = K;
  c.d = 2;
  c.beta = beta;
  c.prior = prior;
  c.weights = std::move(w);
  return c;
}

}  // namespace

TEST(InitCloud, ZeroNoiseCopiesPoint) {
  const std::vector<double> pt = {1.0, -2.0, 0.5};
  const auto c = init_cloud(pt, 0.0, 7, 3);
  for (std::size_t b = 0; b < 7; ++b) EXPECT_EQ(std::vector<double>(c.point(b).begin(), c.point(b).end()), pt);
  EXPECT_THROW(init_cloud(pt, -1.0, 7, 3), Error);
}

TEST(InitCloud, MomentsOfPerturbation) {
  const std::vector<double> pt = {1.0, -2.0, 0.5, 4.0};
  const std::size_t B = 5000;
  const double s = 0.5;
  const auto c = init_cloud(pt, s, B, 11);
  const auto mu = c.mean();
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(mu[j], pt[j], 3 * s / std::sqrt(static_cast<double>(B)));
  // ||eta||^2 ~ chi^2_p with mean p and variance 2p
  const double w2sq = std::pow(w2_point_mass(c, pt), 2);
  EXPECT_NEAR(w2sq, s * s * 4.0, 3 * s * s * std::sqrt(8.0 / B));
  EXPECT_EQ(c, init_cloud(pt, s, B, 11));
}

TEST(KMeans, SingleClusterIsSampleMean) {
  std::vector<std::vector<double>> X = {{1, 2}, {3, 0}, {-1, 1}, {5, 5}};
  const auto r = kmeans_init(X, 1, 3);
  EXPECT_NEAR(r.centers[0][0], 2.0, 1e-14);
  EXPECT_NEAR(r.centers[0][1], 2.0, 1e-14);
}

TEST(KMeans, SeparatedClustersGiveClassMeans) {
  const auto cfg = gmm(3, 1e-3, GmmPrior::kRepulsive, {0.3, 0.3, 0.4});
  const auto truth = triangle_params(3.0);
  const auto data = gmm_generate(cfg, truth, 300, 5);
  const auto r = kmeans_init(data.observations, 3, 7);
  std::vector<std::vector<double>> mean(3, std::vector<double>(2, 0.0));
  std::vector<double> cnt(3, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    cnt[data.labels[i]] += 1;
    for (int j = 0; j < 2; ++j) mean[data.labels[i]][j] += data[i][j];
  }
  for (std::size_t k = 0; k < 3; ++k) {
    bool found = false;
    for (const auto& c : r.centers)
      if (std::hypot(c[0] - mean[k][0] / cnt[k], c[1] - mean[k][1] / cnt[k]) < 1e-12) found = true;
    EXPECT_TRUE(found) << "class " << k;
  }
}

TEST(KMeans, ObjectiveNeverIncreases) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto data = gmm_generate(gmm(3, 2.0, GmmPrior::kRepulsive, {0.3, 0.3, 0.4}), triangle_params(1.0), 400, s);
    const auto r = kmeans_init(data.observations, 4, s, 3);
    ASSERT_FALSE(r.history.empty());
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1] + 1e-9);
    EXPECT_NEAR(r.history.back(), r.objective, 1e-9 * r.objective);
  }
}

TEST(KMeans, RejectsBadK) {
  std::vector<std::vector<double>> X = {{1, 2}};
  EXPECT_THROW(kmeans_init(X, 2, 1), Error);
}

TEST(GibbsGmm, ConjugateSingleComponent) {
  GmmConfig c = gmm(1, 1.2, GmmPrior::kGaussian, {1.0});
  c.sigma2 = 3.0;
  GmmModel m(c);
  const auto data = gmm_generate(c, {{{0.7, -1.1}}, {1.0}}, 40, 2);
  GibbsOptions opt;
  opt.iterations = 20000;
  opt.seed = 9;
  const auto res = gibbs_gmm(m, data, opt);
  const double prec = 40.0 / 1.44 + 1.0 / 3.0, var = 1.0 / prec;
  const auto est = batch_mean_estimate(res.samples, 20);
  const auto v = res.samples.variance();
  const double N = static_cast<double>(res.samples.size());
  for (std::size_t j = 0; j < 2; ++j) {
    double sx = 0.0;
    for (std::size_t i = 0; i < 40; ++i) sx += data[i][j];
    EXPECT_NEAR(est.mean[j], (sx / 1.44) / prec, 3 * std::max(est.se[j], std::sqrt(var / N)));
    EXPECT_NEAR(v[j], var, 3 * var * std::sqrt(2.0 / N));
  }
}

TEST(GibbsGmm, DegenerateLikelihoodFixesLabels) {
  const double beta = 1e-3;
  GmmConfig c = gmm(2, beta, GmmPrior::kGaussian, {0.5, 0.5});
  GmmModel m(c);
  GmmParams truth{{{3.0, 0.0}, {-3.0, 0.0}}, {0.5, 0.5}};
  const auto data = gmm_generate(c, truth, 60, 4);
  GibbsOptions opt;
  opt.iterations = 200;
  opt.seed = 3;
  const auto res = gibbs_gmm(m, data, opt);
  std::vector<std::vector<double>> mean(2, std::vector<double>(2, 0.0));
  std::vector<double> cnt(2, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    cnt[data.labels[i]] += 1;
    for (int j = 0; j < 2; ++j) mean[data.labels[i]][j] += data[i][j];
  }
  const auto aligned = align_components(res.samples, m.layout(), truth.centers);
  const auto mu = aligned.mean();
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(mu[2 * k + j], mean[k][j] / cnt[k], 1e-3);
}

TEST(GibbsGmm, RepulsiveTriangleConcentratesNearTruth) {
  GmmConfig c = gmm(3, 1.0, GmmPrior::kRepulsive, {0.3, 0.3, 0.4});
  GmmModel m(c);
  const auto truth = triangle_params(2.0);
  const auto data = gmm_generate(c, truth, 500, 2024);
  GibbsOptions opt;
  opt.iterations = 4000;
  opt.seed = 5;
  const auto res = gibbs_gmm(m, data, opt);
  EXPECT_TRUE(res.warnings.empty()) << res.warnings.front();
  const auto mu = align_components(res.samples, m.layout(), truth.centers).mean();
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(mu[2 * k + j], truth.centers[k][j], 0.2) << k << "," << j;
}

TEST(GibbsGmm, DeterministicGivenSeed) {
  GmmConfig c = gmm(3, 1.0, GmmPrior::kRepulsive, {});
  GmmModel m(c);
  const auto data = gmm_generate(c, triangle_params(2.0), 100, 1);
  GibbsOptions opt;
  opt.iterations = 300;
  opt.seed = 8;
  const auto a = gibbs_gmm(m, data, opt), b = gibbs_gmm(m, data, opt);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.samples.dim(), m.param_dim());
  opt.seed = 9;
  EXPECT_NE(gibbs_gmm(m, data, opt).samples, a.samples);
}

TEST(GibbsGmm, OptionValidation) {
  GmmModel m(gmm(2, 1.0, GmmPrior::kGaussian, {0.5, 0.5}));
  const auto data = gmm_generate(m.config(), {{{1, 0}, {-1, 0}}, {0.5, 0.5}}, 10, 1);
  GibbsOptions opt;
  opt.iterations = 10;
  opt.burn_in = 10;
  EXPECT_THROW(gibbs_gmm(m, data, opt), Error);
  opt.burn_in = 0;
  opt.init = {0.0, 0.0};
  EXPECT_THROW(gibbs_gmm(m, data, opt), Error);
}

TEST(GibbsMor, NoDataSamplesPrior) {
  MorConfig c;
  c.sigma2 = 2.0;
  MorModel m(c);
  Dataset<MorObservation> none;
  GibbsOptions opt;
  opt.iterations = 10000;
  opt.seed = 4;
  const auto res = gibbs_mor(m, none, opt);
  const auto mu = res.samples.mean();
  const auto v = res.samples.variance();
  const double N = static_cast<double>(res.samples.size());
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(mu[j], 0.0, 3 * std::sqrt(2.0 / N));
    EXPECT_NEAR(v[j], 2.0, 3 * 2.0 * std::sqrt(2.0 / N));
  }
}

TEST(GibbsMor, FixedLabelsMatchBayesianLinearRegression) {
  MorConfig c;
  c.beta = 1.5;
  c.sigma2 = 1.0;
  MorModel m(c);
  const auto data = mor_generate(c, {-2.0, -3.0}, 30, 6);
  GibbsOptions opt;
  opt.iterations = 20000;
  opt.seed = 2;
  const auto res = gibbs_mor(m, data, opt, &data.labels);
  Eigen::Matrix2d lam = Eigen::Matrix2d::Identity();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < data.size(); ++i) {
    Eigen::Vector2d x(data[i].x[0], data[i].x[1]);
    lam += x * x.transpose() / 2.25;
    rhs += mor_sign(data.labels[i]) * data[i].y * x / 2.25;
  }
  const Eigen::Matrix2d cov = lam.inverse();
  const Eigen::Vector2d mean = cov * rhs;
  const auto mu = res.samples.mean();
  const auto v = res.samples.variance();
  const double N = static_cast<double>(res.samples.size());
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(mu[j], mean(j), 3 * std::sqrt(cov(j, j) / N));
    EXPECT_NEAR(v[j], cov(j, j), 3 * cov(j, j) * std::sqrt(2.0 / N));
  }
}

TEST(GibbsMor, TwoDimensionalRegressionRecoversThetaStar) {
  MorConfig c;
  c.beta = 1.5;
  MorModel m(c);
  const std::vector<double> ts = {-2.0, -3.0};
  const auto data = mor_generate(c, ts, 100, 2024);
  GibbsOptions opt;
  opt.iterations = 5000;
  opt.seed = 3;
  const auto res = gibbs_mor(m, data, opt);
  const auto mu = sign_align_each(res.samples, ts).mean();
  EXPECT_NEAR(mu[0], ts[0], 0.3);
  EXPECT_NEAR(mu[1], ts[1], 0.3);
}

TEST(GibbsMor, DeterministicGivenSeed) {
  MorConfig c;
  MorModel m(c);
  const auto data = mor_generate(c, {1.0, 2.0}, 40, 1);
  GibbsOptions opt;
  opt.iterations = 200;
  opt.seed = 12;
  EXPECT_EQ(gibbs_mor(m, data, opt).samples, gibbs_mor(m, data, opt).samples);
}

TEST(BatchMeans, IndependentAndBatched) {
  const auto c = mfwgf::testing::random_cloud(4000, 2, 3);
  const auto a = batch_mean_estimate(c), b = batch_mean_estimate(c, 20);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(a.mean[j], c.mean()[j]);
    EXPECT_NEAR(a.se[j], 1.0 / std::sqrt(4000.0), 0.1 / std::sqrt(4000.0));
    EXPECT_NEAR(b.se[j], a.se[j], 0.5 * a.se[j]);
  }
  EXPECT_THROW(batch_mean_estimate(c, 3000), Error);
}

TEST(GibbsVsMeanField, ConjugateMeansAgree) {
  GmmConfig c = gmm(3, 1.0, GmmPrior::kGaussian, {0.3, 0.3, 0.4});
  c.sigma2 = 25.0;
  GmmModel m(c);
  const auto truth = triangle_params(4.0);
  const auto data = gmm_generate(c, truth, 200, 77);
  GibbsOptions opt;
  opt.iterations = 6000;
  opt.seed = 1;
  const auto g = gibbs_gmm(m, data, opt);
  const auto ge = batch_mean_estimate(align_components(g.samples, m.layout(), truth.centers), 20);

  EngineConfig ec;
  ec.step_size = 2e-3;
  ec.iterations = 300;
  ec.snapshot_every = 300;
  ec.seed = 2;
  const auto km = kmeans_init(data.observations, 3, 3);
  const auto init = init_cloud(GmmParams{km.centers, c.weights}.flatten(c), 0.3, 800, 4);
  const auto mf = run(m, data, init, ec).final_state.cloud;
  const auto me = batch_mean_estimate(align_components(mf, m.layout(), truth.centers));
  for (std::size_t j = 0; j < 6; ++j)
    EXPECT_NEAR(me.mean[j], ge.mean[j], 3 * std::hypot(me.se[j], ge.se[j])) << "coordinate " << j;
}
