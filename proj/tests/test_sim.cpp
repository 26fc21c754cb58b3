#include <gtest/gtest.h>

#include <cmath>

#include "lrinfer/rng.hpp"
#include "lrinfer/sim.hpp"
#include "lrinfer/weights.hpp"

using namespace lrinfer;
using sim::CoverageReport;
using sim::DgpConfig;
using sim::ExperimentOptions;

TEST(Rngs, SplitmixSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(42, 7), derive_seed(42, 7));
}

TEST(Generate, NoiselessFullyObservedEqualsTruth) {
  DgpConfig cfg;
  cfg.n = 20;
  cfg.t = 16;
  cfg.sigma = 0.0;
  cfg.p_scalar = 1.0;
  cfg.r_weights = 4;
  cfg.seed = 5;
  sim::GeneratedPanel gp = sim::generate(cfg);
  EXPECT_EQ((gp.panel.Y - gp.truth).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(gp.panel.X.minCoeff(), 1.0);
}

TEST(Generate, DeterministicBitwise) {
  DgpConfig cfg;
  cfg.n = 18;
  cfg.t = 22;
  cfg.sigma = 1.2;
  cfg.seed = 99;
  cfg.r_weights = 4;
  sim::GeneratedPanel a = sim::generate(cfg);
  sim::GeneratedPanel b = sim::generate(cfg);
  EXPECT_EQ((a.panel.Y - b.panel.Y).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.panel.X - b.panel.X).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.weights.W_beta - b.weights.W_beta).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.truth - b.truth).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Generate, NoiseMomentsMatchSigma) {
  Rng rng(1234);
  const int draws = 1000000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double x = rng.normal(0.0, 1.7);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / draws;
  const double var = sum2 / draws - mean * mean;
  EXPECT_NEAR(var, 1.7 * 1.7, 0.01 * 1.7 * 1.7);
  EXPECT_NEAR(mean, 0.0, 0.01);
}

TEST(Generate, ConfigValidation) {
  DgpConfig cfg;
  cfg.n = 20;
  cfg.t = 20;
  cfg.r = 3;
  cfg.r_weights = 2;  // R < r
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.r_weights = 20;  // R > min(N,T)/4
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.r_weights = 4;
  cfg.p_scalar = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.p_scalar = 0.5;
  cfg.sigma = -1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Generate, SchemesProduceValidWeights) {
  for (auto scheme : {sim::WeightScheme::OracleAugmented, sim::WeightScheme::Characteristics,
                      sim::WeightScheme::ScaledSingularVectors}) {
    DgpConfig cfg;
    cfg.n = 40;
    cfg.t = 36;
    cfg.r = 2;
    cfg.r_weights = 4;
    cfg.scheme = scheme;
    cfg.seed = 17;
    sim::GeneratedPanel gp = sim::generate(cfg);
    WeightsDiagnostics d = validate_weights(gp.weights, cfg.n, cfg.t);
    EXPECT_GT(d.sigma_r_beta, 1e-6) << sim::to_string(scheme);
    EXPECT_GT(d.sigma_r_f, 1e-6) << sim::to_string(scheme);
  }
}

TEST(GenerateHte, ZeroEffectGivesZeroGamma) {
  DgpConfig cfg;
  cfg.n = 16;
  cfg.t = 14;
  cfg.r_weights = 3;
  cfg.seed = 23;
  cfg.p_scalar = 0.5;
  sim::HtePair pair = sim::generate_hte(cfg, 0.0);
  EXPECT_EQ(pair.gamma.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GenerateHte, MasksComplementary) {
  DgpConfig cfg;
  cfg.n = 16;
  cfg.t = 14;
  cfg.r_weights = 3;
  cfg.seed = 29;
  cfg.p_scalar = 0.6;
  sim::HtePair pair = sim::generate_hte(cfg, 0.5);
  EXPECT_EQ(((pair.arm1.panel.X + pair.arm0.panel.X).array() - 1.0).abs().maxCoeff(), 0.0);
}

TEST(GenerateHte, GammaAverageMatchesLoadingRelation) {
  DgpConfig cfg;
  cfg.n = 50;
  cfg.t = 40;
  cfg.r_weights = 3;
  cfg.seed = 31;
  cfg.p_scalar = 0.5;
  const double effect = 0.8;
  sim::HtePair pair = sim::generate_hte(cfg, effect);
  // Gamma = effect * beta(:, 1) * 1_T'
  const double avg_beta1 = pair.arm1.beta.col(0).mean();
  GroupSpec serial = GroupSpec::serial({0, 1, 2}, cfg.t);
  const double expected =
      effect * (pair.arm1.beta(0, 0) + pair.arm1.beta(1, 0) + pair.arm1.beta(2, 0)) / 3.0;
  EXPECT_NEAR(group_average(pair.gamma, serial), expected, 1e-12);
  GroupSpec cs = GroupSpec::cross_sectional({0, 1}, cfg.n);
  EXPECT_NEAR(group_average(pair.gamma, cs), effect * avg_beta1, 1e-12);
}

TEST(Coverage, NoiselessDegenerateReportedWithoutError) {
  DgpConfig cfg;
  cfg.n = 24;
  cfg.t = 24;
  cfg.sigma = 0.0;
  cfg.p_scalar = 1.0;
  cfg.r_weights = 3;
  cfg.seed = 37;
  ExperimentOptions opts;
  opts.reps = 5;
  opts.force_sigma0 = true;
  opts.threads = 2;
  CoverageReport rep = sim::coverage_experiment(cfg, GroupSpec::block({0, 1}, {0, 1}), opts);
  EXPECT_EQ(rep.failed_reps, 0);
  EXPECT_EQ(rep.reps, 5);
  EXPECT_LE(std::abs(rep.mean_bias), 1e-6);
  EXPECT_LE(rep.mean_ci_width, 1e-9);
}

TEST(Coverage, BitwiseStableAcrossThreadCounts) {
  DgpConfig cfg;
  cfg.n = 24;
  cfg.t = 20;
  cfg.sigma = 1.0;
  cfg.p_scalar = 0.9;
  cfg.r_weights = 3;
  cfg.seed = 41;
  GroupSpec g = GroupSpec::block({0, 1}, {0, 1});
  ExperimentOptions opts;
  opts.reps = 8;

  opts.threads = 1;
  CoverageReport a = sim::coverage_experiment(cfg, g, opts);
  opts.threads = 2;
  CoverageReport b = sim::coverage_experiment(cfg, g, opts);
  opts.threads = 5;
  CoverageReport c = sim::coverage_experiment(cfg, g, opts);

  EXPECT_EQ(a.coverage, b.coverage);
  EXPECT_EQ(a.mean_bias, b.mean_bias);
  EXPECT_EQ(a.rmse, c.rmse);
  EXPECT_EQ(a.variance_ratio, c.variance_ratio);
  ASSERT_EQ(a.per_rep.size(), c.per_rep.size());
  for (std::size_t k = 0; k < a.per_rep.size(); ++k) {
    EXPECT_EQ(a.per_rep[k].estimate, b.per_rep[k].estimate);
    EXPECT_EQ(a.per_rep[k].estimate, c.per_rep[k].estimate);
    EXPECT_EQ(a.per_rep[k].variance, c.per_rep[k].variance);
  }
}

TEST(Coverage, FailedRepsExcludedWithCount) {
  // tiny observation probability: some replications lose a whole row and
  // fail the p-floor check; they must be counted, not crash the harness
  DgpConfig cfg;
  cfg.n = 10;
  cfg.t = 20;
  cfg.sigma = 0.5;
  cfg.p_scalar = 0.05;
  cfg.r = 1;
  cfg.r_weights = 2;
  cfg.seed = 43;
  ExperimentOptions opts;
  opts.reps = 20;
  opts.threads = 2;
  CoverageReport rep = sim::coverage_experiment(cfg, GroupSpec::block({0}, {0}), opts);
  EXPECT_EQ(rep.reps + rep.failed_reps, 20);
  EXPECT_GE(rep.failed_reps, 1);
  for (const auto& r : rep.per_rep)
    if (!r.ok) EXPECT_FALSE(r.error.empty());
}

TEST(Coverage, SerialGroupCoverageInBand) {
  DgpConfig cfg;
  cfg.n = 80;
  cfg.t = 80;
  cfg.r = 2;
  cfg.r_weights = 4;
  cfg.sigma = 1.0;
  cfg.p_scalar = 0.8;
  cfg.seed = 47;
  GroupSpec serial = GroupSpec::serial({0, 1, 2}, cfg.t);
  ExperimentOptions opts;
  opts.reps = 300;
  opts.level = 0.95;
  CoverageReport rep = sim::coverage_experiment(cfg, serial, opts);
  EXPECT_EQ(rep.failed_reps, 0);
  EXPECT_GE(rep.coverage, 0.90);
  EXPECT_LE(rep.coverage, 0.98);
}

TEST(Coverage, MultiVariantMatchesSeparateRuns) {
  DgpConfig cfg;
  cfg.n = 24;
  cfg.t = 24;
  cfg.sigma = 1.0;
  cfg.p_scalar = 0.9;
  cfg.r_weights = 3;
  cfg.seed = 53;
  GroupSpec g = GroupSpec::block({0, 1}, {0, 1});
  ExperimentOptions opts;
  opts.reps = 6;
  opts.threads = 2;

  auto both = sim::coverage_experiment_multi(cfg, g, opts, {false, true});
  opts.ablate_b2 = false;
  CoverageReport plain = sim::coverage_experiment(cfg, g, opts);
  opts.ablate_b2 = true;
  CoverageReport ablated = sim::coverage_experiment(cfg, g, opts);

  EXPECT_EQ(both[0].mean_bias, plain.mean_bias);
  EXPECT_EQ(both[0].coverage, plain.coverage);
  EXPECT_EQ(both[1].mean_bias, ablated.mean_bias);
  EXPECT_EQ(both[1].coverage, ablated.coverage);
}
