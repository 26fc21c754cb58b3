#pragma once

//
// Steps 2-3 of the estimation procedure. Starting from the merged initial
// estimator: the first debias B1 removes the penalization shrinkage, the
// diversified projection compresses onto the weight-spanned low-rank spaces,
// and the second debias B2 removes the ridge-type bias those over-specified
// projection spaces pick up from the noise.
//

#include <string>
#include <utility>

#include "lrinfer/linalg.hpp"
#include "lrinfer/nuclear.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/types.hpp"
#include "lrinfer/weights.hpp"

namespace lrinfer {

struct PipelineOptions {
  NuclearConfig nuclear;
  bool ablate_b2 = false;    // skip the second debias: M_hat = M_proj
  bool force_sigma0 = false; // pin sigma2_tilde to zero (noiseless runs)
};

struct FitResult {
  Matrix M_init;
  Matrix B1;
  Matrix M_naive;     // M_init - B1
  Matrix beta_tilde;  // N x R
  Matrix F_tilde;     // T x R
  Matrix M_proj;
  Matrix B2;
  Matrix M_hat;       // M_proj - B2, or M_proj when ablated
  double sigma2_tilde = 0.0;
  bool ablation_no_b2 = false;
  double lambda_used = 0.0;
  std::pair<int, int> solver_iters{0, 0};
  Warnings warnings;
};

// B1_it = p_i^{-1} X_it (X_it M_init,it - Y_it).
inline Matrix bias1(const ObservedPanel& panel, const HeterogeneityWeights& hw, const Matrix& m_init) {
  if (m_init.rows() != panel.n() || m_init.cols() != panel.t())
    throw ValidationError("bias1: M_init shape does not match the panel");
  Matrix b1 = (panel.X.cwiseProduct(m_init) - panel.Y).cwiseProduct(panel.X);
  b1.array().colwise() *= hw.p_hat.array().inverse();
  return b1;
}

// beta_tilde = T^{-1} M_naive W_F,  F_tilde = N^{-1} M_naive' W_beta.
inline std::pair<Matrix, Matrix> diversified_factors(const Matrix& m_naive, const DiversifiedWeights& w) {
  if (w.W_F.rows() != m_naive.cols() || w.W_beta.rows() != m_naive.rows())
    throw ValidationError("diversified_factors: weight shapes do not match M_naive");
  Matrix beta_tilde = m_naive * w.W_F / static_cast<double>(m_naive.cols());
  Matrix f_tilde = m_naive.transpose() * w.W_beta / static_cast<double>(m_naive.rows());
  return {std::move(beta_tilde), std::move(f_tilde)};
}

// M_proj = P_beta_tilde M_naive P_F_tilde with rank-tolerant projectors.
inline Matrix project(const Matrix& m_naive, const Matrix& beta_tilde, const Matrix& f_tilde,
                      Warnings* warnings = nullptr) {
  if (beta_tilde.rows() != m_naive.rows() || f_tilde.rows() != m_naive.cols())
    throw ValidationError("project: factor shapes do not match M_naive");
  const Matrix p_beta = projector(beta_tilde);
  const Matrix p_f = projector(f_tilde);
  if (p_beta.norm() == 0.0 && p_f.norm() == 0.0) {
    append_warning(warnings, "project: both projectors are zero; returning the zero matrix");
    return Matrix::Zero(m_naive.rows(), m_naive.cols());
  }
  return p_beta * m_naive * p_f;
}

// Residual noise-variance estimate from the initial estimator. General
// regressors average over all NT cells; binary masks average over the
// observed cells only.
inline double estimate_sigma2(const ObservedPanel& panel, const Matrix& m_init) {
  if (m_init.rows() != panel.n() || m_init.cols() != panel.t())
    throw ValidationError("estimate_sigma2: M_init shape does not match the panel");
  const double rss = (panel.Y - panel.X.cwiseProduct(m_init)).squaredNorm();
  if (panel.mode == PanelMode::BinaryMask) {
    const double observed = panel.X.sum();
    if (observed <= 0.0) throw ValidationError("estimate_sigma2: binary mask with no observed cells");
    return rss / observed;
  }
  return rss / static_cast<double>(panel.n() * panel.t());
}

// Second debias:
//   B2 = sigma2 [ N^{-1} T P_beta Pi^{-1} W_beta (F~'F~)^{-1} F~'
//               + T^{-1} N beta~ (beta~'beta~)^{-1} W_F' Psi P_F ],
// every inverse realized as a rank-tolerant pseudo-inverse since the spectra
// of beta~ and F~ can decay very fast when R exceeds the true rank.
inline Matrix bias2(const DiversifiedWeights& w, const HeterogeneityWeights& hw, const Matrix& beta_tilde,
                    const Matrix& f_tilde, double sigma2, Warnings* warnings = nullptr) {
  const Index n = beta_tilde.rows();
  const Index t = f_tilde.rows();
  if (w.W_beta.rows() != n || w.W_F.rows() != t || beta_tilde.cols() != w.R || f_tilde.cols() != w.R)
    throw ValidationError("bias2: shapes do not agree");

  const Matrix p_beta = projector(beta_tilde);
  const Matrix p_f = projector(f_tilde);
  const Matrix gram_f = f_tilde.transpose() * f_tilde;
  const Matrix gram_b = beta_tilde.transpose() * beta_tilde;
  const double rtol = rank_tolerance(std::max(n, t), w.R);
  if (numerical_rank(gram_f, rtol) < w.R || numerical_rank(gram_b, rtol) < w.R)
    append_warning(warnings, "bias2: rank-deficient projected factors; using pseudo-inverses");

  Matrix w_beta_scaled = w.W_beta;
  w_beta_scaled.array().colwise() *= hw.p_hat.array().inverse();
  Matrix w_f_scaled = w.W_F;
  w_f_scaled.array().colwise() *= hw.psi_hat.array();

  const double tn = static_cast<double>(t) / static_cast<double>(n);
  const double nt = static_cast<double>(n) / static_cast<double>(t);
  Matrix term1 = tn * (p_beta * w_beta_scaled) * pinv_psd(gram_f) * f_tilde.transpose();
  Matrix term2 = nt * beta_tilde * pinv_psd(gram_b) * (w_f_scaled.transpose() * p_f);
  return sigma2 * (term1 + term2);
}

// Full pipeline: build_init -> B1 -> diversified factors -> projection ->
// sigma2 (from M_init) -> B2 -> M_hat, recording every intermediate.
inline FitResult run_pipeline(const ObservedPanel& panel, const DiversifiedWeights& w, const GroupSpec& group,
                              const PipelineOptions& opts) {
  const HeterogeneityWeights hw = compute_heterogeneity(panel);
  FitResult fit;

  WeightsDiagnostics wd = validate_weights(w, panel.n(), panel.t());
  for (auto& msg : wd.warnings) fit.warnings.push_back(msg);

  InitEstimate init = build_init(panel, hw, group, opts.nuclear, w.R);
  for (auto& msg : init.warnings) fit.warnings.push_back(msg);
  fit.lambda_used = init.lambda_used;
  fit.solver_iters = init.solver_iters;
  fit.M_init = std::move(init.M_init);

  fit.B1 = bias1(panel, hw, fit.M_init);
  fit.M_naive = fit.M_init - fit.B1;
  std::tie(fit.beta_tilde, fit.F_tilde) = diversified_factors(fit.M_naive, w);
  fit.M_proj = project(fit.M_naive, fit.beta_tilde, fit.F_tilde, &fit.warnings);
  fit.sigma2_tilde = opts.force_sigma0 ? 0.0 : estimate_sigma2(panel, fit.M_init);
  fit.B2 = bias2(w, hw, fit.beta_tilde, fit.F_tilde, fit.sigma2_tilde, &fit.warnings);
  fit.ablation_no_b2 = opts.ablate_b2;
  fit.M_hat = opts.ablate_b2 ? fit.M_proj : Matrix(fit.M_proj - fit.B2);
  return fit;
}

}  // namespace lrinfer
