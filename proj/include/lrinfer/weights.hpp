#pragma once

//
// Construction and validation of the diversified weighting matrices
// W_beta (N x R) and W_F (T x R). Weights are pre-specified, not estimated
// eigenvectors; inference is valid whenever their rank R is at least the
// unknown true rank.
//

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lrinfer/linalg.hpp"
#include "lrinfer/types.hpp"

namespace lrinfer {

enum class WeightProvenance { Characteristics, SubsampleAverages, ScaledSingularVectors, UserSupplied };

inline const char* to_string(WeightProvenance p) {
  switch (p) {
    case WeightProvenance::Characteristics: return "characteristics";
    case WeightProvenance::SubsampleAverages: return "subsample-averages";
    case WeightProvenance::ScaledSingularVectors: return "scaled-singular-vectors";
    default: return "user-supplied";
  }
}

enum class WeightSide { Beta, F };

struct DiversifiedWeights {
  Matrix W_beta;  // N x R
  Matrix W_F;     // T x R
  Index R = 0;
  WeightProvenance provenance = WeightProvenance::UserSupplied;

  static DiversifiedWeights user_supplied(Matrix w_beta, Matrix w_f) {
    if (w_beta.cols() != w_f.cols())
      throw ValidationError("weights: W_beta has " + std::to_string(w_beta.cols()) + " columns but W_F has " +
                            std::to_string(w_f.cols()));
    if (w_beta.cols() < 1) throw ValidationError("weights: need at least one column");
    if (!w_beta.allFinite() || !w_f.allFinite()) throw ValidationError("weights: non-finite entries");
    DiversifiedWeights w;
    w.R = w_beta.cols();
    w.W_beta = std::move(w_beta);
    w.W_F = std::move(w_f);
    return w;
  }
};

namespace weights_detail {

// Standardize (zero mean, unit variance), raise to powers 1..degree,
// optionally prefix an all-ones column, then rescale every column to
// l2-norm sqrt(rows). Raw powers of large-scale covariates would wreck the
// Gram conditioning; standardization only reparametrizes the span.
inline Matrix polynomial_columns(const Matrix& chars, int degree, bool include_constant, const char* side_name) {
  const Index n = chars.rows();
  const Index d = chars.cols();
  if (degree < 1) throw ValidationError("weights: degree must be >= 1");
  if (d < 1 && !include_constant) throw ValidationError("weights: no characteristic columns");
  if (!chars.allFinite()) throw ValidationError("weights: non-finite characteristics");

  const Index r = (include_constant ? 1 : 0) + d * degree;
  Matrix w(n, r);
  Index col = 0;
  if (include_constant) w.col(col++).setOnes();
  for (Index j = 0; j < d; ++j) {
    const double mean = chars.col(j).mean();
    const double var = (chars.col(j).array() - mean).square().mean();
    if (var <= 1e-24)
      throw ValidationError(std::string("weights: ") + side_name + " characteristic " + std::to_string(j + 1) +
                            " has zero variance; powers would be rank-deficient");
    const Vector z = (chars.col(j).array() - mean) / std::sqrt(var);
    Vector pw = Vector::Ones(n);
    for (int q = 1; q <= degree; ++q) {
      pw = pw.cwiseProduct(z);
      w.col(col++) = pw;
    }
  }
  const double target = std::sqrt(static_cast<double>(n));
  for (Index k = 0; k < r; ++k) {
    const double norm = w.col(k).norm();
    if (norm <= 0.0)
      throw ValidationError(std::string("weights: ") + side_name + " produced a zero column");
    w.col(k) *= target / norm;
  }
  return w;
}

}  // namespace weights_detail

// Weights from observed characteristics: entrywise powers 1..degree of each
// standardized characteristic column, optionally with a constant column.
inline DiversifiedWeights from_characteristics(const Matrix& z, const Matrix& ff, int degree,
                                               bool include_constant) {
  const Index r_beta = (include_constant ? 1 : 0) + z.cols() * degree;
  const Index r_f = (include_constant ? 1 : 0) + ff.cols() * degree;
  if (r_beta != r_f)
    throw ValidationError("weights: characteristic construction gives R = " + std::to_string(r_beta) +
                          " on the beta side but R = " + std::to_string(r_f) + " on the F side");
  DiversifiedWeights w;
  w.W_beta = weights_detail::polynomial_columns(z, degree, include_constant, "beta-side");
  w.W_F = weights_detail::polynomial_columns(ff, degree, include_constant, "F-side");
  w.R = r_beta;
  w.provenance = WeightProvenance::Characteristics;
  return w;
}

// One side of the weights from an extra panel: per-subject regression
// slopes b_i = sum_t X_it Y_it / sum_t X_it^2 over the extra sample, fed
// through the same polynomial machinery as observed characteristics.
inline Matrix from_subsample_averages(const Matrix& extra_y, const Matrix& extra_x, WeightSide side, int degree,
                                      bool include_constant) {
  Matrix y = side == WeightSide::Beta ? extra_y : extra_y.transpose();
  Matrix x = side == WeightSide::Beta ? extra_x : extra_x.transpose();
  if (y.rows() != x.rows() || y.cols() != x.cols())
    throw ValidationError("weights: extra Y and X shapes differ");
  const Index n = y.rows();
  Vector b(n);
  for (Index i = 0; i < n; ++i) {
    const double denom = x.row(i).squaredNorm();
    if (denom <= 0.0)
      throw ValidationError(std::string("weights: ") +
                            (side == WeightSide::Beta ? "subject " : "period ") + std::to_string(i + 1) +
                            " has no observations in the extra sample");
    b(i) = x.row(i).dot(y.row(i)) / denom;
  }
  return weights_detail::polynomial_columns(b, degree, include_constant,
                                            side == WeightSide::Beta ? "beta-side" : "F-side");
}

// One side of the weights from top-R singular vectors of a disjoint
// subsample, diversified by per-column truncation:
//   W_ik = sqrt(N) U_ik / max{1, (sqrt(N)/gamma) max_i |U_ik|}.
// The subsample matrix is X o Y with each row scaled by the row second
// moment of X. Every entry of the result is bounded by gamma. The caller is
// responsible for the subsample being disjoint from the inference sample.
inline Matrix from_scaled_singular_vectors(const Matrix& sub_y, const Matrix& sub_x, Index r, double gamma,
                                           WeightSide side) {
  if (sub_y.rows() != sub_x.rows() || sub_y.cols() != sub_x.cols())
    throw ValidationError("weights: subsample Y and X shapes differ");
  if (gamma <= 0.0) throw ValidationError("weights: gamma must be positive");
  if (r < 1 || r > std::min(sub_y.rows(), sub_y.cols()))
    throw ValidationError("weights: R out of range for the subsample dimensions");

  Matrix scaled = sub_x.cwiseProduct(sub_y);
  for (Index i = 0; i < scaled.rows(); ++i) {
    const double p = sub_x.row(i).squaredNorm() / static_cast<double>(sub_x.cols());
    if (p > 0.0) scaled.row(i) /= p;
    else scaled.row(i).setZero();
  }

  ThinSVD svd = thin_svd(scaled, r);
  const double smax = svd.s.size() > 0 ? svd.s(0) : 0.0;
  if (numerical_rank(svd.s, rank_tolerance(scaled.rows(), scaled.cols()) * smax) < r)
    throw ValidationError("weights: subsample matrix rank is below R = " + std::to_string(r) +
                          "; cannot produce R diversified columns");

  const Matrix u = side == WeightSide::Beta ? svd.U : svd.V;
  const Index n = u.rows();
  const double root_n = std::sqrt(static_cast<double>(n));
  Matrix w(n, r);
  for (Index k = 0; k < r; ++k) {
    const double peak = u.col(k).cwiseAbs().maxCoeff();
    const double denom = std::max(1.0, root_n / gamma * peak);
    w.col(k) = root_n * u.col(k) / denom;
  }
  return w;
}

struct WeightsDiagnostics {
  double sigma_r_beta = 0.0;  // smallest singular value of N^{-1} W_beta' W_beta
  double sigma_r_f = 0.0;     // smallest singular value of T^{-1} W_F' W_F
  double row_norm_beta = 0.0;
  double row_norm_f = 0.0;
  Warnings warnings;
};

inline WeightsDiagnostics validate_weights(const DiversifiedWeights& w, Index n, Index t) {
  if (w.W_beta.rows() != n || w.W_F.rows() != t || w.W_beta.cols() != w.R || w.W_F.cols() != w.R)
    throw ValidationError("weights: shapes do not match the panel (expected " + std::to_string(n) + "x" +
                          std::to_string(w.R) + " and " + std::to_string(t) + "x" + std::to_string(w.R) + ")");
  WeightsDiagnostics d;
  Eigen::SelfAdjointEigenSolver<Matrix> eb(w.W_beta.transpose() * w.W_beta / static_cast<double>(n));
  Eigen::SelfAdjointEigenSolver<Matrix> ef(w.W_F.transpose() * w.W_F / static_cast<double>(t));
  d.sigma_r_beta = std::max(0.0, eb.eigenvalues().minCoeff());
  d.sigma_r_f = std::max(0.0, ef.eigenvalues().minCoeff());
  d.row_norm_beta = w.W_beta.rowwise().norm().maxCoeff();
  d.row_norm_f = w.W_F.rowwise().norm().maxCoeff();
  if (d.sigma_r_beta < 1e-6)
    d.warnings.push_back("W_beta Gram is nearly singular (sigma_R = " + std::to_string(d.sigma_r_beta) + ")");
  if (d.sigma_r_f < 1e-6)
    d.warnings.push_back("W_F Gram is nearly singular (sigma_R = " + std::to_string(d.sigma_r_f) + ")");
  return d;
}

}  // namespace lrinfer
