#pragma once

//
// Group-average point estimates, the plug-in covariance estimator, and
// CLT-based confidence intervals, including the two-arm treatment-effect
// case. The block-average covariance is
//
//   V = sigma2/(|T|^2 N^2) sum_{t in T} sum_j (m_I' F~ (F~'F~)^{-1} W_beta,j p_j^{-1} X_jt)^2
//     + sigma2/(|I|^2 T^2) sum_{i in I} sum_s (m_T' b~ (b~'b~)^{-1} W_F,s  p_i^{-1} X_is)^2
//
// with m_I / m_T the group-averaged rows / columns of M_hat. Serial and
// cross-sectional groups evaluate the same formula with the full column /
// row set; results carry an "appendix-specialization" flag so users know the
// exact appendix variants were not used.
//

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <string>

#include "lrinfer/linalg.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/pipeline.hpp"
#include "lrinfer/types.hpp"
#include "lrinfer/weights.hpp"

namespace lrinfer {

inline double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> unit_normal;
  return boost::math::quantile(unit_normal, p);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

struct InferenceResult {
  double estimate = 0.0;
  double variance = 0.0;
  double std_error = 0.0;
  double z_stat = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double level = 0.95;
  double null_value = 0.0;
  double p_one_sided = 0.0;  // upper tail: P(Z > z)
  double p_two_sided = 0.0;
  GroupSpec group;
  Warnings flags;
};

inline double group_average(const Matrix& m, const GroupSpec& group) {
  group.validate(m.rows(), m.cols());
  double acc = 0.0;
  for (Index t : group.cols)
    for (Index i : group.rows) acc += m(i, t);
  return acc / static_cast<double>(group.size());
}

namespace inference_detail {

inline double block_variance_impl(const FitResult& fit, const ObservedPanel& panel,
                                  const HeterogeneityWeights& hw, const DiversifiedWeights& w,
                                  const std::vector<Index>& rows_i, const std::vector<Index>& cols_t) {
  const Index n = panel.n();
  const Index t = panel.t();
  if (fit.beta_tilde.norm() == 0.0 || fit.F_tilde.norm() == 0.0)
    throw SolverError("variance: projected factors are zero; covariance estimator undefined");

  Eigen::RowVectorXd m_rows = Eigen::RowVectorXd::Zero(t);  // group-averaged rows of M_hat
  for (Index i : rows_i) m_rows += fit.M_hat.row(i);
  m_rows /= static_cast<double>(rows_i.size());
  Vector m_cols = Vector::Zero(n);  // group-averaged columns of M_hat
  for (Index s : cols_t) m_cols += fit.M_hat.col(s);
  m_cols /= static_cast<double>(cols_t.size());

  const Eigen::RowVectorXd u = m_rows * fit.F_tilde * pinv_psd(fit.F_tilde.transpose() * fit.F_tilde);
  const Eigen::RowVectorXd v =
      m_cols.transpose() * fit.beta_tilde * pinv_psd(fit.beta_tilde.transpose() * fit.beta_tilde);

  double term_rows = 0.0;
  for (Index s : cols_t)
    for (Index j = 0; j < n; ++j) {
      const double a = u.dot(w.W_beta.row(j)) * panel.X(j, s) / hw.p_hat(j);
      term_rows += a * a;
    }
  const double tsz = static_cast<double>(cols_t.size());
  term_rows *= fit.sigma2_tilde / (tsz * tsz * static_cast<double>(n) * static_cast<double>(n));

  double term_cols = 0.0;
  for (Index i : rows_i)
    for (Index s = 0; s < t; ++s) {
      const double b = v.dot(w.W_F.row(s)) * panel.X(i, s) / hw.p_hat(i);
      term_cols += b * b;
    }
  const double isz = static_cast<double>(rows_i.size());
  term_cols *= fit.sigma2_tilde / (isz * isz * static_cast<double>(t) * static_cast<double>(t));

  return term_rows + term_cols;
}

}  // namespace inference_detail

inline double variance_block(const FitResult& fit, const ObservedPanel& panel, const HeterogeneityWeights& hw,
                             const DiversifiedWeights& w, const GroupSpec& group) {
  if (group.kind != GroupKind::Block) throw ValidationError("variance_block: group kind must be block");
  group.validate(panel.n(), panel.t());
  return inference_detail::block_variance_impl(fit, panel, hw, w, group.rows, group.cols);
}

// Serial and cross-sectional variances reuse the block formula with the
// implied full row/column set.
inline double variance_group(const FitResult& fit, const ObservedPanel& panel, const HeterogeneityWeights& hw,
                             const DiversifiedWeights& w, const GroupSpec& group, Warnings* flags = nullptr) {
  group.validate(panel.n(), panel.t());
  if (group.kind != GroupKind::Block)
    append_warning(flags, "appendix-specialization: " + std::string(to_string(group.kind)) +
                              " variance evaluated with the block formula");
  return inference_detail::block_variance_impl(fit, panel, hw, w, group.rows, group.cols);
}

inline InferenceResult infer(const FitResult& fit, const ObservedPanel& panel, const HeterogeneityWeights& hw,
                             const DiversifiedWeights& w, const GroupSpec& group, double level,
                             double null_value = 0.0) {
  if (!(level > 0.5 && level < 1.0)) throw ValidationError("infer: level must be in (0.5, 1)");
  InferenceResult out;
  out.group = group;
  out.level = level;
  out.null_value = null_value;
  out.estimate = group_average(fit.M_hat, group);
  out.variance = variance_group(fit, panel, hw, w, group, &out.flags);
  out.std_error = std::sqrt(out.variance);

  if (out.std_error > 0.0) {
    out.z_stat = (out.estimate - null_value) / out.std_error;
  } else if (out.estimate == null_value) {
    out.z_stat = 0.0;
  } else {
    out.z_stat = out.estimate > null_value ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
    out.flags.push_back("variance is zero but the estimate differs from the null; z set to +/-inf");
  }
  const double q = normal_quantile(0.5 * (1.0 + level));
  out.ci_lower = out.estimate - q * out.std_error;
  out.ci_upper = out.estimate + q * out.std_error;
  out.p_one_sided = 1.0 - normal_cdf(out.z_stat);
  out.p_two_sided = 2.0 * (1.0 - normal_cdf(std::abs(out.z_stat)));
  return out;
}

// Two-arm treatment-effect inference. Both arms must share dimensions and
// the weighting matrices, and their masks must be complementary. The arm
// variances add because the arms see disjoint noise entries.
inline InferenceResult hte_infer(const FitResult& fit1, const FitResult& fit0, const ObservedPanel& panel1,
                                 const ObservedPanel& panel0, const HeterogeneityWeights& hw1,
                                 const HeterogeneityWeights& hw0, const DiversifiedWeights& w,
                                 const GroupSpec& group, double level, double null_value = 0.0) {
  if (!(level > 0.5 && level < 1.0)) throw ValidationError("hte_infer: level must be in (0.5, 1)");
  if (panel1.n() != panel0.n() || panel1.t() != panel0.t())
    throw ValidationError("hte_infer: arm panels have different dimensions");
  if (panel1.mode != PanelMode::BinaryMask || panel0.mode != PanelMode::BinaryMask)
    throw ValidationError("hte_infer: both arms must be binary-mask panels");
  if (((panel1.X + panel0.X).array() != 1.0).any())
    throw ValidationError("hte_infer: treatment and control masks are not complementary");

  InferenceResult out;
  out.group = group;
  out.level = level;
  out.null_value = null_value;
  out.estimate = group_average(fit1.M_hat - fit0.M_hat, group);
  const double v1 = variance_group(fit1, panel1, hw1, w, group, &out.flags);
  const double v0 = variance_group(fit0, panel0, hw0, w, group, nullptr);
  out.variance = v1 + v0;
  out.std_error = std::sqrt(out.variance);

  if (out.std_error > 0.0) {
    out.z_stat = (out.estimate - null_value) / out.std_error;
  } else if (out.estimate == null_value) {
    out.z_stat = 0.0;
  } else {
    out.z_stat = out.estimate > null_value ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
    out.flags.push_back("variance is zero but the estimate differs from the null; z set to +/-inf");
  }
  const double q = normal_quantile(0.5 * (1.0 + level));
  out.ci_lower = out.estimate - q * out.std_error;
  out.ci_upper = out.estimate + q * out.std_error;
  out.p_one_sided = 1.0 - normal_cdf(out.z_stat);
  out.p_two_sided = 2.0 * (1.0 - normal_cdf(std::abs(out.z_stat)));
  return out;
}

}  // namespace lrinfer
