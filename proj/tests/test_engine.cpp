#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mfwgf/baselines.hpp"
#include "mfwgf/engine.hpp"
#include "mfwgf/models/gmm.hpp"
#include "test_util.hpp"

using namespace mfwgf;
using mfwgf::testing::random_cloud;

namespace {

/// Flat prior, no likelihood contribution: zero drift.
struct FlatModel {
  using observation_type = double;
  std::size_t p = 1;
  [[nodiscard]] std::size_t num_classes() const { return 1; }
  [[nodiscard]] std::size_t param_dim() const { return p; }
  [[nodiscard]] double log_joint(double, std::size_t, std::span<const double>) const { return 0.0; }
  void add_grad_log_joint(double, std::size_t, std::span<const double>, double, std::span<double>) const {}
  [[nodiscard]] double log_prior(std::span<const double>) const { return 0.0; }
  void add_grad_log_prior(std::span<const double>, double, std::span<double>) const {}
};

GmmModel gaussian_k1(std::size_t d, double beta, double sigma2) {
  GmmConfig c;
  c.K = 1;
  c.d = d;
  c.beta = beta;
  c.weights = {1.0};
  c.prior = GmmPrior::kGaussian;
  c.sigma2 = sigma2;
  return GmmModel(c);
}

EngineConfig langevin(double tau, std::size_t T, std::uint64_t seed = 1) {
  EngineConfig c;
  c.step_size = tau;
  c.iterations = T;
  c.seed = seed;
  return c;
}

ParticleCloud scaled_cloud(std::size_t B, double sd, std::uint64_t seed) { return random_cloud(B, 1, seed, sd); }

double sample_variance(const ParticleCloud& c) { return c.variance()[0]; }

GmmConfig desk_config() {
  GmmConfig c;
  c.K = 3;
  c.d = 2;
  c.beta = 1.0;
  c.weights = {0.3, 0.3, 0.4};
  return c;
}

}  // namespace

TEST(EngineConfig, Validation) {
  EngineConfig c;
  c.step_size = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.particles = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.step_decay = 1.5;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(scheme_from_string("euler"), Error);
  EXPECT_EQ(scheme_from_string("explicit-kde"), Scheme::kExplicitKde);
  c = {};
  c.step_size = 0.5;
  c.step_decay = 0.5;
  EXPECT_DOUBLE_EQ(c.tau(2), 0.125);
}

TEST(LangevinStep, ZeroDriftIsPureDiffusion) {
  FlatModel m;
  Dataset<double> none;
  const auto init = scaled_cloud(50, 1.0, 3);
  const auto cfg = langevin(0.04, 1, 99);
  const auto out = mfwgf_step(m, none, make_state(init, 99), cfg);
  EXPECT_EQ(out.k, 1u);
  for (std::size_t b = 0; b < 50; ++b)
    EXPECT_DOUBLE_EQ(out.cloud.point(b)[0], init.point(b)[0] + std::sqrt(0.08) * langevin_noise(99, 0, b, 1)[0]);
}

TEST(LangevinStep, DiffusionVarianceGrowsBy2Tau) {
  FlatModel m;
  Dataset<double> none;
  const std::size_t B = 40000;
  const auto init = ParticleCloud(1, std::vector<double>(B, 0.0));
  const auto out = mfwgf_step(m, none, make_state(init, 5), langevin(0.1, 1, 5));
  EXPECT_NEAR(sample_variance(out.cloud), 0.2, 3 * 0.2 * std::sqrt(2.0 / B));
}

TEST(LangevinStep, Ar1StationaryVariance) {
  // no data, N(0,1) prior: Y = (1 - tau) X + sqrt(2 tau) eta
  const auto m = gaussian_k1(1, 1.0, 1.0);
  Dataset<std::vector<double>> none;
  const std::size_t B = 20000;
  auto cfg = langevin(0.1, 200, 17);
  cfg.particles = B;
  cfg.snapshot_every = 200;
  const auto traj = run(m, none, ParticleCloud(1, std::vector<double>(B, 0.0)), cfg);
  const double v = sample_variance(traj.final_state.cloud), target = 20.0 / 19.0;
  EXPECT_NEAR(v, target, 3 * target * std::sqrt(2.0 / B));
}

TEST(LangevinStep, ZeroDataTargetsPrior) {
  const auto m = gaussian_k1(2, 1.0, 2.0);
  Dataset<std::vector<double>> none;
  const std::size_t B = 20000;
  auto cfg = langevin(0.01, 300, 23);
  cfg.snapshot_every = 300;
  const auto init = random_cloud(B, 2, 24, std::sqrt(2.0));
  const auto c = run(m, none, init, cfg).final_state.cloud;
  const auto mu = c.mean();
  const auto var = c.variance();
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(mu[j], 0.0, 3 * std::sqrt(2.0 / B));
    EXPECT_NEAR(var[j], 2.0, 3 * 2.0 * std::sqrt(2.0 / B));
  }
}

TEST(ExplicitStep, ZeroScoreIsGradientStepOnK1Gmm) {
  const auto m = gaussian_k1(2, 0.8, 3.0);
  const auto data = gmm_generate(m.config(), {{{1.0, 2.0}}, {1.0}}, 25, 4);
  const std::vector<double> th = {0.3, -0.5};
  EngineConfig cfg;
  cfg.step_size = 0.01;
  const auto out = explicit_step(m, data, make_state(ParticleCloud(2, th), 0), cfg,
                                 [](std::span<const double>, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  for (std::size_t j = 0; j < 2; ++j) {
    double xbar = 0.0;
    for (std::size_t i = 0; i < 25; ++i) xbar += data[i][j] / 25.0;
    const double g = (th[j] - xbar) * 25.0 / 0.64 + th[j] / 3.0;
    EXPECT_NEAR(out.cloud.point(0)[j], th[j] - 0.01 * g, 1e-12);
  }
}

TEST(ExplicitStep, ExactScoreKeepsStationaryGaussianFixed) {
  const auto m = gaussian_k1(1, 1.0, 1.0);
  Dataset<std::vector<double>> none;
  EngineConfig cfg;
  cfg.step_size = 0.1;
  for (double s : {1.0, 2.0}) {
    const auto init = scaled_cloud(100, s, 8);
    const auto out = explicit_step(m, none, make_state(init, 0), cfg,
                                   [s](std::span<const double> t, std::span<double> o) { o[0] = -t[0] / (s * s); });
    const double factor = 1.0 - 0.1 * (1.0 - 1.0 / (s * s));
    for (std::size_t b = 0; b < 100; ++b) EXPECT_NEAR(out.cloud.point(b)[0], factor * init.point(b)[0], 1e-14);
  }
}

TEST(ExplicitStep, HeatFlowExpandsByOnePlusTauOverS2) {
  FlatModel m;
  Dataset<double> none;
  EngineConfig cfg;
  cfg.step_size = 0.05;
  const double s = 1.5;
  const auto init = scaled_cloud(200, s, 9);
  const auto out = explicit_step(m, none, make_state(init, 0), cfg,
                                 [s](std::span<const double> t, std::span<double> o) { o[0] = -t[0] / (s * s); });
  EXPECT_NEAR(sample_variance(out.cloud), std::pow(1 + 0.05 / (s * s), 2) * sample_variance(init), 1e-12);
}

TEST(ExplicitStep, KdeRequirements) {
  FlatModel m;
  Dataset<double> none;
  EngineConfig cfg;
  cfg.scheme = Scheme::kExplicitKde;
  EXPECT_THROW(engine_step(m, none, make_state(scaled_cloud(5, 1.0, 1), 0), cfg), Error);
  try {
    (void)engine_step(m, none, make_state(ParticleCloud(1, std::vector<double>(20, 1.0)), 0), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
  }
  EXPECT_NO_THROW(engine_step(m, none, make_state(scaled_cloud(20, 1.0, 1), 0), cfg));
}

TEST(SchemeAgreement, ExplicitAndLangevinAgreeToFirstOrder) {
  const auto m = gaussian_k1(1, 1.0, 1.0);
  Dataset<std::vector<double>> none;
  const double s = 2.0;
  const auto quant = flow::gaussian_quantiles(0.0, s, 200000);
  const ParticleCloud init(1, quant);
  auto gap_over_tau = [&](double tau) {
    EngineConfig cfg;
    cfg.step_size = tau;
    const auto ex = explicit_step(m, none, make_state(init, 0), cfg,
                                  [s](std::span<const double> t, std::span<double> o) { o[0] = -t[0] / (s * s); });
    const auto lv = mfwgf_step(m, none, make_state(init, 31), cfg);
    return std::abs(std::sqrt(sample_variance(ex.cloud)) - std::sqrt(sample_variance(lv.cloud))) / tau;
  };
  const double coarse = gap_over_tau(0.3), fine = gap_over_tau(0.05);
  EXPECT_LT(fine, 0.5 * coarse);
}

TEST(KdeScore, SingleParticleAndSymmetry) {
  ParticleCloud one(1, {2.0});
  const double q[1] = {0.5};
  EXPECT_NEAR(kde_score(one, 0.5, q)[0], (2.0 - 0.5) / 0.25, 1e-14);
  ParticleCloud two(1, {-1.3, 1.3});
  const double z[1] = {0.0};
  EXPECT_NEAR(kde_score(two, 0.7, z)[0], 0.0, 1e-15);
  EXPECT_THROW(kde_score(two, 0.0, z), Error);
}

TEST(KdeScore, GaussianSampleScore) {
  const auto c = scaled_cloud(1000, 1.0, 12);
  const double q[1] = {0.5};
  EXPECT_NEAR(kde_score(c, silverman_bandwidth(c), q)[0], -0.5, 0.15);
}

TEST(Run, ZeroIterationsGivesInitSnapshot) {
  const auto m = gaussian_k1(1, 1.0, 1.0);
  const auto data = gmm_generate(m.config(), {{{0.5}}, {1.0}}, 10, 2);
  const auto init = scaled_cloud(30, 1.0, 2);
  auto cfg = langevin(0.01, 0);
  cfg.keep_clouds = true;
  const auto traj = run(m, data, init, cfg);
  ASSERT_EQ(traj.snapshots.size(), 1u);
  EXPECT_EQ(traj.snapshots[0].k, 0u);
  EXPECT_EQ(*traj.snapshots[0].cloud, init);
  EXPECT_EQ(traj.final_state.cloud, init);
}

TEST(Run, DeterministicAcrossRepeatsAndThreads) {
  GmmModel m(desk_config());
  const auto data = gmm_generate(m.config(), triangle_params(3.0), 120, 5);
  const auto init = init_cloud(triangle_params(3.0).flatten(m.config()), 0.5, 64, 6);
  auto cfg = langevin(1e-3, 20, 7);
  cfg.snapshot_every = 5;
  cfg.record_potential = true;
  const auto a = run(m, data, init, cfg);
  const auto b = run(m, data, init, cfg);
  cfg.threads = 3;
  const auto c = run(m, data, init, cfg);
  ASSERT_EQ(a.snapshots.size(), 5u);
  for (std::size_t s = 0; s < a.snapshots.size(); ++s) {
    EXPECT_EQ(a.snapshots[s].digest, b.snapshots[s].digest);
    EXPECT_EQ(a.snapshots[s].digest, c.snapshots[s].digest);
    EXPECT_EQ(a.snapshots[s].metrics, c.snapshots[s].metrics);
    if (s > 0) {
      EXPECT_GT(a.snapshots[s].k, a.snapshots[s - 1].k);
    }
  }
  EXPECT_EQ(a.final_state.cloud, c.final_state.cloud);
}

TEST(Run, DifferentSeedsDiffer) {
  GmmModel m(desk_config());
  const auto data = gmm_generate(m.config(), triangle_params(3.0), 50, 5);
  const auto init = init_cloud(triangle_params(3.0).flatten(m.config()), 0.5, 16, 6);
  EXPECT_NE(run(m, data, init, langevin(1e-3, 3, 1)).final_state.cloud,
            run(m, data, init, langevin(1e-3, 3, 2)).final_state.cloud);
}

TEST(Run, ObserverSeesEveryIterationAfterResponsibilityRefresh) {
  GmmModel m(desk_config());
  const auto data = gmm_generate(m.config(), triangle_params(3.0), 40, 5);
  const auto init = init_cloud(triangle_params(3.0).flatten(m.config()), 0.5, 8, 6);
  std::vector<std::size_t> seen;
  const auto cfg = langevin(1e-3, 4, 3);
  const auto traj = run(m, data, init, cfg, {}, [&](std::size_t k, const ParticleCloud&) { seen.push_back(k); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(traj.iteration_ms.size(), 4u);
  // the resp stored with the final state belongs to the cloud before the last update
  EngineState st = make_state(init, 3);
  for (int i = 0; i < 3; ++i) st = mfwgf_step(m, data, std::move(st), cfg);
  EXPECT_EQ(traj.final_state.resp, responsibilities(m, data, st.cloud));
}

TEST(Run, StepSizeGuardWarns) {
  GmmModel m(desk_config());
  const auto data = gmm_generate(m.config(), triangle_params(3.0), 200, 5);
  const auto init = init_cloud(triangle_params(3.0).flatten(m.config()), 0.5, 16, 6);
  EXPECT_FALSE(run(m, data, init, langevin(1e-4, 1)).warnings.size() > 0);
  EXPECT_FALSE(run(m, data, init, langevin(0.05, 1)).warnings.empty());
}

TEST(Run, NonFiniteParticleAbortsWithIndices) {
  const auto m = gaussian_k1(1, 1e-3, 1.0);
  const auto data = gmm_generate(m.config(), {{{1.0}}, {1.0}}, 50, 2);
  try {
    (void)run(m, data, scaled_cloud(4, 1.0, 1), langevin(10.0, 2000));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    EXPECT_FALSE(e.where().empty());
  }
}

TEST(FixedPoint, ZeroIterationsHasZeroDiagnostic) {
  const auto m = gaussian_k1(1, 1.0, 1.0);
  const auto data = gmm_generate(m.config(), {{{0.5}}, {1.0}}, 10, 2);
  const auto est = estimate_fixed_point(m, data, scaled_cloud(20, 1.0, 3), langevin(0.01, 0));
  EXPECT_EQ(est.diagnostic, 0.0);
  EXPECT_THROW(estimate_fixed_point(m, data, scaled_cloud(20, 1.0, 3), langevin(0.01, 5), 1.5), Error);
}

TEST(FixedPoint, DeskInstanceIsStationary) {
  GmmModel m(desk_config());
  const auto truth = triangle_params(3.0);
  const auto data = gmm_generate(m.config(), truth, 200, 8);
  auto start = truth.flatten(m.config());
  for (double& v : start) v += 1.0;
  const auto init = init_cloud(start, 0.5, 200, 9);
  const auto est = estimate_fixed_point(m, data, init, langevin(3e-4, 400, 10));
  EXPECT_LT(est.diagnostic, 0.1 * est.travel);
  EXPECT_FALSE(est.warning);
}

TEST(FixedPoint, TwoSeedsAgreeInMean) {
  const auto m = gaussian_k1(1, 1.0, 4.0);
  const auto data = gmm_generate(m.config(), {{{1.0}}, {1.0}}, 30, 2);
  const auto init = scaled_cloud(400, 0.3, 3);
  const auto a = estimate_fixed_point(m, data, init, langevin(0.005, 200, 1));
  const auto b = estimate_fixed_point(m, data, init, langevin(0.005, 200, 2));
  const auto ea = batch_mean_estimate(a.cloud), eb = batch_mean_estimate(b.cloud);
  EXPECT_NEAR(ea.mean[0], eb.mean[0], 3 * std::hypot(ea.se[0], eb.se[0]));
}

TEST(VerifyFixedPoint, NoDataMatchesPrior) {
  const auto m = gaussian_k1(1, 1.0, 1.0);
  Dataset<std::vector<double>> none;
  const auto cloud = scaled_cloud(4000, 1.0, 44);
  const auto rep = verify_fixed_point(m, none, cloud, 0.05);
  EXPECT_TRUE(rep.passed) << rep.distance;
}

TEST(VerifyFixedPoint, ConjugatePosterior) {
  const double beta = 0.8, sigma2 = 2.0;
  const auto m = gaussian_k1(1, beta, sigma2);
  const auto data = gmm_generate(m.config(), {{{1.5}}, {1.0}}, 40, 5);
  double sx = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) sx += data[i][0];
  const double prec = 40.0 / (beta * beta) + 1.0 / sigma2, mu = (sx / (beta * beta)) / prec, sd = 1.0 / std::sqrt(prec);
  const std::size_t B = 4000;
  auto cloud = scaled_cloud(B, sd, 45);
  std::vector<double> pts = cloud.data();
  for (double& v : pts) v += mu;
  const auto rep = verify_fixed_point(m, data, ParticleCloud(1, pts), 3 * sd / std::sqrt(static_cast<double>(B)));
  EXPECT_TRUE(rep.passed) << rep.distance << " vs " << rep.tolerance;
}

TEST(VerifyFixedPoint, DistanceShrinksAlongRun) {
  const auto m = gaussian_k1(1, 1.0, 4.0);
  const auto data = gmm_generate(m.config(), {{{1.0}}, {1.0}}, 20, 6);
  auto init = scaled_cloud(2000, 0.1, 7);
  std::vector<double> pts = init.data();
  for (double& v : pts) v += 5.0;
  double prev = INFINITY;
  for (std::size_t T : {5, 20, 80}) {
    const auto c = run(m, data, ParticleCloud(1, pts), langevin(0.01, T, 8)).final_state.cloud;
    const double d = verify_fixed_point(m, data, c, 0.0).distance;
    EXPECT_LT(d, prev) << "T = " << T;
    prev = d;
  }
}

TEST(VerifyFixedPoint, RejectsMultidimensionalModels) {
  const auto m = gaussian_k1(2, 1.0, 1.0);
  Dataset<std::vector<double>> none;
  try {
    (void)verify_fixed_point(m, none, random_cloud(10, 2, 1), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupported);
  }
}
