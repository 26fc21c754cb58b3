#pragma once

//
// Weighted nuclear-norm penalized estimation and the merged initial
// estimator: a full-sample fit, a group-restricted fit, and the merge that
// makes most of the initial estimator independent of the noise entering the
// inference sums.
//
// The solver minimizes
//   (1/2) sum_{(j,s) included} p_j^{-1} (Y_js - X_js M_js)^2 + lambda ||M||_*
// by monotone accelerated proximal gradient descent: constant step 1/L from
// the exact curvature bound, singular-value soft-thresholding as the prox,
// and a restart to a plain descent step whenever acceleration would increase
// the objective, so the recorded objective trace is non-increasing.
//

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lrinfer/linalg.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/types.hpp"

namespace lrinfer {

struct NuclearConfig {
  std::optional<double> lambda;  // empty = resolve via auto_lambda
  int max_iters = 2000;
  double tol = 1e-7;           // relative objective change
  double lambda_const = 2.0;   // c in the auto rule
  double lambda_min = 1e-12;   // floor when the pilot noise scale degenerates

  void validate() const {
    if (lambda && *lambda <= 0.0) throw ValidationError("nuclear: lambda must be positive");
    if (max_iters < 1) throw ValidationError("nuclear: max_iters must be positive");
    if (tol <= 0.0 || tol >= 1.0) throw ValidationError("nuclear: tol must be in (0, 1)");
    if (lambda_const <= 0.0) throw ValidationError("nuclear: lambda_const must be positive");
  }
};

using CellPredicate = std::function<bool(Index, Index)>;

inline Matrix materialize_mask(Index n, Index t, const CellPredicate& include) {
  Matrix mask(n, t);
  for (Index s = 0; s < t; ++s)
    for (Index i = 0; i < n; ++i) mask(i, s) = include(i, s) ? 1.0 : 0.0;
  return mask;
}

struct NuclearFit {
  Matrix M;
  int iters = 0;
  std::vector<double> objective_trace;  // objective at every accepted iterate, starting from M = 0
  bool converged = false;
  double final_rel_change = 0.0;
  Warnings warnings;
};

namespace nuclear_detail {

inline double smooth_objective(const Matrix& m, const Matrix& y, const Matrix& x, const Matrix& mask,
                               const Vector& pinv) {
  double acc = 0.0;
  for (Index j = 0; j < y.rows(); ++j) {
    double row = 0.0;
    for (Index s = 0; s < y.cols(); ++s) {
      const double r = mask(j, s) * (y(j, s) - x(j, s) * m(j, s));
      row += r * r;
    }
    acc += pinv(j) * row;
  }
  return 0.5 * acc;
}

// Gradient of the smooth part: -p_j^{-1} X_js (Y_js - X_js M_js) on included
// cells, zero elsewhere.
inline Matrix smooth_gradient(const Matrix& m, const Matrix& y, const Matrix& x, const Matrix& mask,
                              const Vector& pinv) {
  Matrix g = (x.cwiseProduct(m) - y).cwiseProduct(x).cwiseProduct(mask);
  g.array().colwise() *= pinv.array();
  return g;
}

}  // namespace nuclear_detail

// One weighted nuclear-norm fit over the cells selected by `include`.
// cfg.lambda must be resolved to a number. Non-convergence within max_iters
// returns the last iterate with a warning; it is not an error.
inline NuclearFit fit_weighted_nuclear(const ObservedPanel& panel, const HeterogeneityWeights& hw,
                                       const CellPredicate& include, const NuclearConfig& cfg) {
  cfg.validate();
  if (!cfg.lambda) throw ValidationError("nuclear: lambda not resolved; use auto_lambda or set a number");
  const double lambda = *cfg.lambda;
  const Index n = panel.n();
  const Index t = panel.t();
  const Matrix mask = materialize_mask(n, t, include);
  const Vector pinv = hw.p_hat.array().inverse();

  const double max_x2 = panel.X.cwiseProduct(panel.X).cwiseProduct(mask).maxCoeff();
  const double lip = pinv.maxCoeff() * max_x2;
  if (lip <= 0.0) throw SolverError("nuclear: degenerate problem, X is zero on every included cell");

  const double tau = lambda / lip;
  NuclearFit fit;
  Matrix m = Matrix::Zero(n, t);
  Matrix z = m;
  double theta = 1.0;
  double obj = nuclear_detail::smooth_objective(m, panel.Y, panel.X, mask, pinv);  // ||0||_* = 0
  fit.objective_trace.push_back(obj);

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    double nn = 0.0;
    Matrix g = nuclear_detail::smooth_gradient(z, panel.Y, panel.X, mask, pinv);
    Matrix m_next = svt(z - g / lip, tau, &nn);
    double obj_next = nuclear_detail::smooth_objective(m_next, panel.Y, panel.X, mask, pinv) + lambda * nn;

    if (obj_next > obj) {
      // restart: plain descent step from the last accepted iterate
      g = nuclear_detail::smooth_gradient(m, panel.Y, panel.X, mask, pinv);
      m_next = svt(m - g / lip, tau, &nn);
      obj_next = nuclear_detail::smooth_objective(m_next, panel.Y, panel.X, mask, pinv) + lambda * nn;
      theta = 1.0;
      if (obj_next > obj) {  // fp stagnation at the optimum
        fit.objective_trace.push_back(obj);
        fit.iters = iter;
        fit.converged = true;
        fit.final_rel_change = 0.0;
        fit.M = std::move(m);
        return fit;
      }
    }

    const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    z = m_next + ((theta - 1.0) / theta_next) * (m_next - m);
    const double rel = (obj - obj_next) / std::max(std::abs(obj), 1e-300);
    m = std::move(m_next);
    obj = obj_next;
    theta = theta_next;
    fit.objective_trace.push_back(obj);
    fit.iters = iter;
    fit.final_rel_change = rel;
    if (rel < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    fit.warnings.push_back("nuclear solver did not converge within " + std::to_string(cfg.max_iters) +
                           " iterations; final relative objective change " +
                           std::to_string(fit.final_rel_change));
  fit.M = std::move(m);
  return fit;
}

// Data-driven tuning parameter:
//   lambda = c * sigma_pilot * (sqrt(N) + sqrt(T)) * max_j p_j^{-1/2},
// with sigma_pilot the sample standard deviation of Y over cells with
// X != 0. The pilot conflates signal and noise, which only makes the
// penalty conservative.
inline double auto_lambda(const ObservedPanel& panel, const HeterogeneityWeights& hw, const NuclearConfig& cfg,
                          Warnings* warnings = nullptr) {
  cfg.validate();
  double sum = 0.0, count = 0.0;
  for (Index s = 0; s < panel.t(); ++s)
    for (Index i = 0; i < panel.n(); ++i)
      if (panel.X(i, s) != 0.0) {
        sum += panel.Y(i, s);
        count += 1.0;
      }
  if (count < 2.0) throw ValidationError("auto_lambda: fewer than 2 cells with X != 0");
  const double mean = sum / count;
  double ss = 0.0;
  for (Index s = 0; s < panel.t(); ++s)
    for (Index i = 0; i < panel.n(); ++i)
      if (panel.X(i, s) != 0.0) {
        const double d = panel.Y(i, s) - mean;
        ss += d * d;
      }
  const double sigma_pilot = std::sqrt(ss / (count - 1.0));
  const double scale = std::sqrt(static_cast<double>(panel.n())) + std::sqrt(static_cast<double>(panel.t()));
  const double pfac = hw.p_hat.array().inverse().sqrt().maxCoeff();
  double lambda = cfg.lambda_const * sigma_pilot * scale * pfac;
  if (lambda < cfg.lambda_min) {
    append_warning(warnings, "auto_lambda: degenerate pilot scale, raising lambda to " +
                                 std::to_string(cfg.lambda_min));
    lambda = cfg.lambda_min;
  }
  return lambda;
}

struct InitEstimate {
  Matrix M_full;
  Matrix M_rest;  // zero on the group's excluded rows/columns
  Matrix M_init;
  double lambda_used = 0.0;
  std::pair<int, int> solver_iters{0, 0};  // (full, restricted)
  std::vector<double> objective_trace;       // full-sample fit
  std::vector<double> objective_trace_rest;  // restricted fit
  Warnings warnings;
};

namespace nuclear_detail {

inline void check_restricted_shape(const Matrix& mask, Index r_weights) {
  Index rows_with_cells = 0, cols_with_cells = 0;
  for (Index i = 0; i < mask.rows(); ++i)
    if (mask.row(i).sum() > 0.0) ++rows_with_cells;
  for (Index s = 0; s < mask.cols(); ++s)
    if (mask.col(s).sum() > 0.0) ++cols_with_cells;
  if (rows_with_cells < r_weights + 1 || cols_with_cells < r_weights + 1)
    throw ValidationError("group too large: the restricted sample keeps only " + std::to_string(rows_with_cells) +
                          " rows and " + std::to_string(cols_with_cells) + " columns with data, but at least R+1 = " +
                          std::to_string(r_weights + 1) + " of each are needed");
}

}  // namespace nuclear_detail

// Step 1 of the estimation procedure: full-sample fit, restricted fit on the
// cells outside the group, and the merge
//   M_init = M_rest on the restricted region, M_full elsewhere.
// Serial groups exclude only the group's rows, cross-sectional groups only
// the columns. Both fits share the same lambda and the full-sample p-hat so
// the two estimates merge on a common scale.
inline InitEstimate build_init(const ObservedPanel& panel, const HeterogeneityWeights& hw, const GroupSpec& group,
                               const NuclearConfig& cfg, Index r_weights = 1) {
  cfg.validate();
  const Index n = panel.n();
  const Index t = panel.t();
  group.validate(n, t);

  InitEstimate init;
  NuclearConfig resolved = cfg;
  if (!resolved.lambda) resolved.lambda = auto_lambda(panel, hw, cfg, &init.warnings);
  init.lambda_used = *resolved.lambda;

  std::vector<char> in_rows(static_cast<std::size_t>(n), 0), in_cols(static_cast<std::size_t>(t), 0);
  for (Index i : group.rows) in_rows[static_cast<std::size_t>(i)] = 1;
  for (Index s : group.cols) in_cols[static_cast<std::size_t>(s)] = 1;

  const bool drop_rows = group.kind != GroupKind::CrossSectional;
  const bool drop_cols = group.kind != GroupKind::Serial;
  auto restricted = [&](Index i, Index s) {
    if (drop_rows && in_rows[static_cast<std::size_t>(i)]) return false;
    if (drop_cols && in_cols[static_cast<std::size_t>(s)]) return false;
    return true;
  };
  nuclear_detail::check_restricted_shape(materialize_mask(n, t, restricted), r_weights);

  NuclearFit full = fit_weighted_nuclear(panel, hw, [](Index, Index) { return true; }, resolved);
  NuclearFit rest = fit_weighted_nuclear(panel, hw, restricted, resolved);
  for (auto& w : full.warnings) init.warnings.push_back("full fit: " + w);
  for (auto& w : rest.warnings) init.warnings.push_back("restricted fit: " + w);

  init.M_full = std::move(full.M);
  init.M_rest = std::move(rest.M);
  for (Index s = 0; s < t; ++s)
    for (Index i = 0; i < n; ++i)
      if (!restricted(i, s)) init.M_rest(i, s) = 0.0;

  init.M_init = init.M_full;
  for (Index s = 0; s < t; ++s)
    for (Index i = 0; i < n; ++i)
      if (restricted(i, s)) init.M_init(i, s) = init.M_rest(i, s);

  init.solver_iters = {full.iters, rest.iters};
  init.objective_trace = std::move(full.objective_trace);
  init.objective_trace_rest = std::move(rest.objective_trace);
  return init;
}

struct KktResidual {
  double orth_sv_over_lambda = 0.0;   // sigma_max of the gradient off the solution's subspaces, / lambda
  double rank_part_over_lambda = 0.0; // max |U'GV + lambda I| on the solution's subspaces, / lambda
  Index rank = 0;
};

// Standard nuclear-norm optimality check at M: the smooth gradient G must
// satisfy U'GV = -lambda I on the solution's singular subspaces and
// sigma_max((I - UU') G (I - VV')) <= lambda. Rank is read off the singular
// values above 1e-6 * sigma_1.
inline KktResidual kkt_residual(const Matrix& m, const ObservedPanel& panel, const HeterogeneityWeights& hw,
                                const CellPredicate& include, double lambda) {
  const Matrix mask = materialize_mask(panel.n(), panel.t(), include);
  const Vector pinv = hw.p_hat.array().inverse();
  const Matrix g = nuclear_detail::smooth_gradient(m, panel.Y, panel.X, mask, pinv);

  KktResidual out;
  ThinSVD svd = thin_svd(m);
  const double smax = svd.s.size() > 0 ? svd.s(0) : 0.0;
  out.rank = numerical_rank(svd.s, 1e-6 * smax);
  Matrix g_perp = g;
  if (out.rank > 0) {
    const Matrix u = svd.U.leftCols(out.rank);
    const Matrix v = svd.V.leftCols(out.rank);
    const Matrix core = u.transpose() * g * v;
    out.rank_part_over_lambda =
        (core + lambda * Matrix::Identity(out.rank, out.rank)).cwiseAbs().maxCoeff() / lambda;
    g_perp = g - u * (u.transpose() * g);
    g_perp = g_perp - (g_perp * v) * v.transpose();
  }
  ThinSVD perp = thin_svd(g_perp, 1);
  out.orth_sv_over_lambda = (perp.s.size() > 0 ? perp.s(0) : 0.0) / lambda;
  return out;
}

}  // namespace lrinfer
