#include <gtest/gtest.h>

#include <cmath>

#include "lrinfer/pipeline.hpp"
#include "lrinfer/rng.hpp"
#include "lrinfer/sim.hpp"
#include "oracle_helpers.hpp"

using namespace lrinfer;

namespace {

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

// noiseless factor-model panel with X = 1
struct NoiselessCase {
  ObservedPanel panel;
  Matrix truth;
  Matrix beta;
  Matrix f;
};

NoiselessCase noiseless_case(Index n, Index t, int r, std::uint64_t seed) {
  Rng rng(seed);
  Matrix beta = rng.normal_matrix(n, r);
  Matrix f = rng.normal_matrix(t, r);
  Matrix truth = beta * f.transpose();
  return {ObservedPanel::make(truth, Matrix::Ones(n, t), PanelMode::GeneralRegressor), truth, beta, f};
}

DiversifiedWeights oracle_weights(const Matrix& beta, const Matrix& f, Index r_total, Rng& rng) {
  const Index extra = r_total - beta.cols();
  Matrix wb(beta.rows(), r_total), wf(f.rows(), r_total);
  wb.leftCols(beta.cols()) = beta;
  wf.leftCols(f.cols()) = f;
  if (extra > 0) {
    wb.rightCols(extra) = rng.normal_matrix(beta.rows(), extra);
    wf.rightCols(extra) = rng.normal_matrix(f.rows(), extra);
  }
  return DiversifiedWeights::user_supplied(wb, wf);
}

}  // namespace

TEST(Bias1, ExactFitGivesZero) {
  Rng rng(3);
  Matrix y = rng.normal_matrix(6, 5);
  ObservedPanel panel = ObservedPanel::make(y, Matrix::Ones(6, 5), PanelMode::GeneralRegressor);
  HeterogeneityWeights hw = compute_heterogeneity(panel);
  EXPECT_EQ(max_abs(bias1(panel, hw, y)), 0.0);
}

TEST(Bias1, AllOnesXMakesMnaiveEqualY) {
  Rng rng(5);
  Matrix y = rng.normal_matrix(7, 6);
  Matrix m_init = rng.normal_matrix(7, 6);
  ObservedPanel panel = ObservedPanel::make(y, Matrix::Ones(7, 6), PanelMode::GeneralRegressor);
  HeterogeneityWeights hw = compute_heterogeneity(panel);
  Matrix b1 = bias1(panel, hw, m_init);
  EXPECT_LE(max_abs(m_init - b1 - y), 1e-13);
}

TEST(Bias1, ZeroWhereMaskIsZero) {
  auto [panel, truth] = oracle::random_masked_panel(9, 8, 2, 0.5, 0.6, 11);
  HeterogeneityWeights hw = compute_heterogeneity(panel);
  Rng rng(13);
  Matrix b1 = bias1(panel, hw, rng.normal_matrix(9, 8));
  for (Index i = 0; i < 9; ++i)
    for (Index t = 0; t < 8; ++t)
      if (panel.X(i, t) == 0.0) EXPECT_EQ(b1(i, t), 0.0);
}

TEST(Bias1, MatchesDoubleLoopOracle) {
  auto [panel, truth] = oracle::random_masked_panel(10, 12, 2, 0.7, 0.8, 17);
  HeterogeneityWeights hw = compute_heterogeneity(panel);
  Rng rng(19);
  Matrix m_init = rng.normal_matrix(10, 12);
  Matrix b1 = bias1(panel, hw, m_init);
  Matrix b1_oracle = oracle::bias1_loops(panel.Y, panel.X, m_init, hw.p_hat);
  EXPECT_LE(max_abs(b1 - b1_oracle), 1e-12);
}

TEST(DiversifiedFactors, ExactFactorRecoveryUpToRotation) {
  NoiselessCase c = noiseless_case(20, 18, 2, 23);
  Rng rng(29);
  DiversifiedWeights w = oracle_weights(c.beta, c.f, 2, rng);
  auto [beta_tilde, f_tilde] = diversified_factors(c.truth, w);
  // beta_tilde = beta (F'F/T); same span as beta
  Matrix expected = c.beta * (c.f.transpose() * c.f) / double(18);
  EXPECT_LE(max_abs(beta_tilde - expected), 1e-10);
  EXPECT_LE(max_abs(projector(beta_tilde) - projector(c.beta)), 1e-9);
}

TEST(DiversifiedFactors, ZeroInputGivesZero) {
  Rng rng(31);
  DiversifiedWeights w =
      DiversifiedWeights::user_supplied(rng.normal_matrix(8, 3), rng.normal_matrix(7, 3));
  auto [beta_tilde, f_tilde] = diversified_factors(Matrix::Zero(8, 7), w);
  EXPECT_EQ(max_abs(beta_tilde), 0.0);
  EXPECT_EQ(max_abs(f_tilde), 0.0);
}

TEST(DiversifiedFactors, MatchesDoubleLoopOracle) {
  Rng rng(37);
  Matrix m_naive = rng.normal_matrix(10, 12);
  DiversifiedWeights w =
      DiversifiedWeights::user_supplied(rng.normal_matrix(10, 4), rng.normal_matrix(12, 4));
  auto [beta_tilde, f_tilde] = diversified_factors(m_naive, w);
  EXPECT_LE(max_abs(beta_tilde - oracle::beta_tilde_loops(m_naive, w.W_F)), 1e-12);
  EXPECT_LE(max_abs(f_tilde - oracle::f_tilde_loops(m_naive, w.W_beta)), 1e-12);
}

TEST(Project, NoiselessProjectionFixesOwnSpan) {
  NoiselessCase c = noiseless_case(16, 14, 2, 41);
  Rng rng(43);
  DiversifiedWeights w = oracle_weights(c.beta, c.f, 2, rng);
  auto [beta_tilde, f_tilde] = diversified_factors(c.truth, w);
  Matrix m_proj = project(c.truth, beta_tilde, f_tilde);
  EXPECT_LE(max_abs(m_proj - c.truth), 1e-9);
}

TEST(Project, OverSpecifiedRankStillExact) {
  NoiselessCase c = noiseless_case(24, 22, 2, 47);
  Rng rng(53);
  DiversifiedWeights w = oracle_weights(c.beta, c.f, 4, rng);  // R = 4 > r = 2
  auto [beta_tilde, f_tilde] = diversified_factors(c.truth, w);
  // beta_tilde = beta (F' W_F / T) spans exactly span(beta)
  Matrix m_proj = project(c.truth, beta_tilde, f_tilde);
  EXPECT_LE(max_abs(m_proj - c.truth), 1e-9);
}

TEST(Project, IdempotentProjectorsAndRankBound) {
  auto [panel, truth] = oracle::random_masked_panel(15, 13, 2, 1.0, 0.8, 59);
  Rng rng(61);
  DiversifiedWeights w =
      DiversifiedWeights::user_supplied(rng.normal_matrix(15, 3), rng.normal_matrix(13, 3));
  HeterogeneityWeights hw = compute_heterogeneity(panel);
  Matrix m_init = panel.Y;  // any matrix works for exercising the projection
  Matrix m_naive = m_init - bias1(panel, hw, m_init);
  auto [beta_tilde, f_tilde] = diversified_factors(m_naive, w);
  Matrix pb = projector(beta_tilde), pf = projector(f_tilde);
  EXPECT_LE(max_abs(pb * pb - pb), 1e-9);
  EXPECT_LE(max_abs(pf * pf - pf), 1e-9);
  Matrix m_proj = project(m_naive, beta_tilde, f_tilde);
  EXPECT_LE(numerical_rank(m_proj), 3);
}

TEST(Project, BothZeroProjectorsWarn) {
  Warnings warnings;
  Matrix m_proj = project(Matrix::Ones(4, 5), Matrix::Zero(4, 2), Matrix::Zero(5, 2), &warnings);
  EXPECT_EQ(max_abs(m_proj), 0.0);
  EXPECT_FALSE(warnings.empty());
}

TEST(Sigma2, ExactFitGivesZero) {
  Rng rng(67);
  Matrix y = rng.normal_matrix(6, 6);
  ObservedPanel panel = ObservedPanel::make(y, Matrix::Ones(6, 6), PanelMode::GeneralRegressor);
  EXPECT_EQ(estimate_sigma2(panel, y), 0.0);
}

TEST(Sigma2, ConstantResidualOnObservedCells) {
  auto [panel, truth] = oracle::random_masked_panel(8, 8, 1, 0.0, 0.7, 71);
  // Y = X o truth exactly; shift M_init by c on every cell
  const double c = 0.37;
  Matrix m_init = truth - c * Matrix::Ones(8, 8);
  EXPECT_NEAR(estimate_sigma2(panel, m_init), c * c, 1e-12);
}

TEST(Bias2, ZeroSigmaGivesZeroAndLinearity) {
  Rng rng(73);
  const Index n = 10, t = 9, r = 3;
  DiversifiedWeights w = DiversifiedWeights::user_supplied(rng.normal_matrix(n, r), rng.normal_matrix(t, r));
  Matrix beta_tilde = rng.normal_matrix(n, r);
  Matrix f_tilde = rng.normal_matrix(t, r);
  HeterogeneityWeights hw;
  hw.p_hat = Vector::Constant(n, 0.8);
  hw.psi_hat = Vector::Constant(t, 1.3);

  EXPECT_EQ(max_abs(bias2(w, hw, beta_tilde, f_tilde, 0.0)), 0.0);
  Matrix b1 = bias2(w, hw, beta_tilde, f_tilde, 1.0);
  Matrix b3 = bias2(w, hw, beta_tilde, f_tilde, 3.0);
  EXPECT_LE(max_abs(b3 - 3.0 * b1), 1e-12);
}

TEST(Bias2, MatchesRidgeNormalEquationOracle) {
  Rng rng(79);
  const Index n = 8, t = 8, r = 3;
  DiversifiedWeights w = DiversifiedWeights::user_supplied(rng.normal_matrix(n, r), rng.normal_matrix(t, r));
  Matrix beta_tilde = rng.normal_matrix(n, r);
  Matrix f_tilde = rng.normal_matrix(t, r);
  HeterogeneityWeights hw;
  hw.p_hat = Vector::LinSpaced(n, 0.5, 1.2);
  hw.psi_hat = Vector::LinSpaced(t, 0.7, 2.0);
  const double sigma2 = 1.7;

  Matrix b2 = bias2(w, hw, beta_tilde, f_tilde, sigma2);
  Matrix b2_oracle =
      oracle::bias2_ridge(w.W_beta, w.W_F, hw.p_hat, hw.psi_hat, beta_tilde, f_tilde, sigma2);
  EXPECT_LE(max_abs(b2 - b2_oracle), 1e-8);
}

TEST(Pipeline, NoiselessExactnessWithForcedSigma) {
  for (Index r_total : {2, 4}) {
    NoiselessCase c = noiseless_case(30, 30, 2, 83);
    Rng rng(89);
    DiversifiedWeights w = oracle_weights(c.beta, c.f, r_total, rng);
    PipelineOptions opts;
    opts.force_sigma0 = true;
    FitResult fit = run_pipeline(c.panel, w, GroupSpec::block({0, 1, 2}, {0, 1, 2}), opts);
    EXPECT_LE(max_abs(fit.M_hat - c.truth), 1e-6) << "R=" << r_total;
  }
}

TEST(Pipeline, AblationMakesMhatEqualMproj) {
  auto [panel, truth] = oracle::random_masked_panel(14, 14, 2, 0.8, 0.85, 97);
  Rng rng(101);
  DiversifiedWeights w =
      DiversifiedWeights::user_supplied(rng.normal_matrix(14, 3), rng.normal_matrix(14, 3));
  PipelineOptions opts;
  opts.ablate_b2 = true;
  FitResult fit = run_pipeline(panel, w, GroupSpec::block({0, 1}, {0, 1}), opts);
  EXPECT_EQ(max_abs(fit.M_hat - fit.M_proj), 0.0);
  EXPECT_TRUE(fit.ablation_no_b2);
  EXPECT_GT(max_abs(fit.B2), 0.0);  // B2 still recorded
}

TEST(Pipeline, WeightRecombinationInvariance) {
  auto [panel, truth] = oracle::random_masked_panel(16, 15, 2, 0.6, 0.9, 103);
  Rng rng(107);
  const Index r = 3;
  DiversifiedWeights w =
      DiversifiedWeights::user_supplied(rng.normal_matrix(16, r), rng.normal_matrix(15, r));
  GroupSpec group = GroupSpec::block({0, 1}, {0, 1});
  PipelineOptions opts;
  opts.nuclear.lambda = 2.0;
  FitResult base = run_pipeline(panel, w, group, opts);

  Matrix a = rng.normal_matrix(r, r) + 4.0 * Matrix::Identity(r, r);
  Matrix b = rng.normal_matrix(r, r) + 4.0 * Matrix::Identity(r, r);
  DiversifiedWeights recombined = DiversifiedWeights::user_supplied(w.W_beta * a, w.W_F * b);
  FitResult rec = run_pipeline(panel, recombined, group, opts);

  const double scale = std::max(1.0, max_abs(base.M_hat));
  EXPECT_LE(max_abs(rec.M_hat - base.M_hat) / scale, 1e-8);
}

TEST(Pipeline, JointScalingEquivariance) {
  auto [panel, truth] = oracle::random_masked_panel(15, 16, 2, 0.7, 0.85, 109);
  Rng rng(113);
  DiversifiedWeights w =
      DiversifiedWeights::user_supplied(rng.normal_matrix(15, 3), rng.normal_matrix(16, 3));
  GroupSpec group = GroupSpec::block({0, 1}, {0, 1});
  PipelineOptions opts;
  opts.nuclear.lambda = 1.5;
  FitResult base = run_pipeline(panel, w, group, opts);

  for (double c : {0.5, 3.0}) {
    ObservedPanel scaled = ObservedPanel::make(c * panel.Y, panel.X, panel.mode);
    PipelineOptions sopts = opts;
    sopts.nuclear.lambda = c * (*opts.nuclear.lambda);
    FitResult sc = run_pipeline(scaled, w, group, sopts);

    auto rel = [&](const Matrix& got, const Matrix& want) {
      return max_abs(got - want) / std::max(1.0, max_abs(want));
    };
    EXPECT_LE(rel(sc.M_hat, c * base.M_hat), 1e-7) << "c=" << c;
    EXPECT_LE(rel(sc.B1, c * base.B1), 1e-7);
    EXPECT_LE(rel(sc.B2, c * base.B2), 1e-7);
    EXPECT_NEAR(sc.sigma2_tilde, c * c * base.sigma2_tilde,
                1e-7 * std::max(1.0, c * c * base.sigma2_tilde));
  }
}

TEST(Pipeline, RankBounds) {
  auto [panel, truth] = oracle::random_masked_panel(18, 17, 2, 1.0, 0.8, 127);
  Rng rng(131);
  const Index r = 4;
  DiversifiedWeights w =
      DiversifiedWeights::user_supplied(rng.normal_matrix(18, r), rng.normal_matrix(17, r));
  FitResult fit = run_pipeline(panel, w, GroupSpec::block({0, 1}, {0, 1}), PipelineOptions{});
  EXPECT_LE(numerical_rank(fit.M_proj), r);
  EXPECT_LE(numerical_rank(fit.M_hat), 2 * r);
}

TEST(Pipeline, Sigma2IntervalOverSeeds) {
  // sigma = 1.5 (sigma^2 = 2.25), strong factors, fully observed
  const int seeds = 100;
  std::vector<double> sigma2(seeds, 0.0);
  sim::sim_detail::parallel_for(seeds, 2, [&](int k) {
    sim::DgpConfig cfg;
    cfg.n = 150;
    cfg.t = 150;
    cfg.r = 2;
    cfg.r_weights = 4;
    cfg.sigma = 1.5;
    cfg.p_scalar = 1.0;
    cfg.seed = 1000 + static_cast<std::uint64_t>(k);
    sim::GeneratedPanel gp = sim::generate(cfg);
    HeterogeneityWeights hw = compute_heterogeneity(gp.panel);
    InitEstimate init =
        build_init(gp.panel, hw, GroupSpec::block({0, 1, 2}, {0, 1, 2}), NuclearConfig{}, cfg.r_weights);
    sigma2[static_cast<std::size_t>(k)] = estimate_sigma2(gp.panel, init.M_init);
  });
  for (int k = 0; k < seeds; ++k) {
    EXPECT_GE(sigma2[static_cast<std::size_t>(k)], 1.8) << "seed " << k;
    EXPECT_LE(sigma2[static_cast<std::size_t>(k)], 2.7) << "seed " << k;
  }
}
