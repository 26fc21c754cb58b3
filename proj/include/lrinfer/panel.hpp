#pragma once

//
// Data model for observed panels (Y, X), group specifications, the
// heterogeneity weights Pi-hat / Psi-hat, and advisory diagnostics.
//

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lrinfer/csv.hpp"
#include "lrinfer/linalg.hpp"
#include "lrinfer/types.hpp"

namespace lrinfer {

enum class PanelMode { GeneralRegressor, BinaryMask };

inline const char* to_string(PanelMode m) {
  return m == PanelMode::GeneralRegressor ? "general-regressor" : "binary-mask";
}

// The observed pair (Y, X). In binary-mask mode X is a 0/1 observation mask
// and Y is stored as 0 at unobserved cells, so Y = X o Y always holds and
// the model arithmetic Y = X o M + E is direct. Immutable after make().
struct ObservedPanel {
  Matrix Y;
  Matrix X;
  PanelMode mode = PanelMode::GeneralRegressor;

  Index n() const { return Y.rows(); }
  Index t() const { return Y.cols(); }

  static ObservedPanel make(Matrix y, Matrix x, PanelMode mode, double x_bound = 1e6) {
    if (y.rows() != x.rows() || y.cols() != x.cols())
      throw ValidationError("panel: Y is " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                            " but X is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
    if (y.rows() < 2 || y.cols() < 2) throw ValidationError("panel: need N >= 2 and T >= 2");
    if (!y.allFinite()) throw ValidationError("panel: non-finite entry in Y");
    if (!x.allFinite()) throw ValidationError("panel: non-finite entry in X");
    if (x.cwiseAbs().maxCoeff() > x_bound)
      throw ValidationError("panel: |X| exceeds the configured bound " + std::to_string(x_bound));
    if (mode == PanelMode::BinaryMask) {
      for (Index i = 0; i < x.rows(); ++i)
        for (Index t = 0; t < x.cols(); ++t) {
          const double v = x(i, t);
          if (v != 0.0 && v != 1.0)
            throw ValidationError("panel: binary-mask mode but X(" + std::to_string(i + 1) + "," +
                                  std::to_string(t + 1) + ") = " + std::to_string(v));
          if (v == 0.0 && y(i, t) != 0.0)
            throw ValidationError("panel: Y(" + std::to_string(i + 1) + "," + std::to_string(t + 1) +
                                  ") = " + std::to_string(y(i, t)) + " at an unobserved cell (X = 0)");
        }
    }
    ObservedPanel p;
    p.Y = std::move(y);
    p.X = std::move(x);
    p.mode = mode;
    return p;
  }
};

enum class GroupKind { Block, Serial, CrossSectional };

inline const char* to_string(GroupKind k) {
  switch (k) {
    case GroupKind::Block: return "block";
    case GroupKind::Serial: return "serial";
    default: return "cross-sectional";
  }
}

// An index set G = I x T over which averages are taken. Indices are stored
// 0-based and strictly increasing; the external CSV/JSON interfaces are
// 1-based. Serial groups span all columns, cross-sectional groups all rows.
struct GroupSpec {
  GroupKind kind = GroupKind::Block;
  std::vector<Index> rows;
  std::vector<Index> cols;

  Index size() const { return static_cast<Index>(rows.size() * cols.size()); }

  static GroupSpec block(std::vector<Index> rows, std::vector<Index> cols) {
    return GroupSpec{GroupKind::Block, std::move(rows), std::move(cols)};
  }
  static GroupSpec serial(std::vector<Index> rows, Index t_total) {
    GroupSpec g{GroupKind::Serial, std::move(rows), {}};
    g.cols.resize(static_cast<std::size_t>(t_total));
    for (Index t = 0; t < t_total; ++t) g.cols[static_cast<std::size_t>(t)] = t;
    return g;
  }
  static GroupSpec cross_sectional(std::vector<Index> cols, Index n_total) {
    GroupSpec g{GroupKind::CrossSectional, {}, std::move(cols)};
    g.rows.resize(static_cast<std::size_t>(n_total));
    for (Index i = 0; i < n_total; ++i) g.rows[static_cast<std::size_t>(i)] = i;
    return g;
  }

  void validate(Index n, Index t) const {
    auto check_axis = [](const std::vector<Index>& idx, Index bound, const char* name) {
      if (idx.empty()) throw ValidationError(std::string("group: empty ") + name + " index set");
      Index prev = -1;
      for (Index v : idx) {
        if (v < 0 || v >= bound)
          throw ValidationError(std::string("group: ") + name + " index " + std::to_string(v + 1) +
                                " out of range 1.." + std::to_string(bound));
        if (v <= prev) throw ValidationError(std::string("group: ") + name + " indices must be strictly increasing");
        prev = v;
      }
    };
    check_axis(rows, n, "row");
    check_axis(cols, t, "column");
    const bool rows_full = static_cast<Index>(rows.size()) == n;
    const bool cols_full = static_cast<Index>(cols.size()) == t;
    switch (kind) {
      case GroupKind::Block:
        if (rows_full || cols_full)
          throw ValidationError("group: block rows and columns must be proper subsets");
        break;
      case GroupKind::Serial:
        if (rows_full) throw ValidationError("group: serial rows must be a proper subset");
        if (!cols_full) throw ValidationError("group: serial group must span all columns");
        break;
      case GroupKind::CrossSectional:
        if (cols_full) throw ValidationError("group: cross-sectional columns must be a proper subset");
        if (!rows_full) throw ValidationError("group: cross-sectional group must span all rows");
        break;
    }
  }
};

// Pi-hat and Psi-hat: p_i = T^{-1} sum_t X_it^2 and
// Psi_t = N^{-1} sum_j X_jt^2 / p_j^2.
struct HeterogeneityWeights {
  Vector p_hat;    // length N
  Vector psi_hat;  // length T
};

inline HeterogeneityWeights compute_heterogeneity(const ObservedPanel& panel, double p_floor = 1e-8) {
  const Index n = panel.n();
  const Index t = panel.t();
  HeterogeneityWeights hw;
  hw.p_hat = panel.X.array().square().rowwise().mean();
  for (Index i = 0; i < n; ++i) {
    if (hw.p_hat(i) <= p_floor)
      throw ValidationError("degenerate row " + std::to_string(i + 1) + ": p_hat = " +
                            std::to_string(hw.p_hat(i)) + " <= " + std::to_string(p_floor));
  }
  hw.psi_hat = Vector::Zero(t);
  const Vector pinv2 = hw.p_hat.array().square().inverse();
  for (Index s = 0; s < t; ++s) {
    double acc = 0.0;
    for (Index j = 0; j < n; ++j) acc += panel.X(j, s) * panel.X(j, s) * pinv2(j);
    hw.psi_hat(s) = acc / static_cast<double>(n);
  }
  return hw;
}

// Loads a panel from CSV. Binary-mask mode without an X file derives the
// mask from missingness of Y; general-regressor mode without an X file is
// the pure factor model X = 1.
inline ObservedPanel load_panel(const std::string& y_path, const std::optional<std::string>& x_path,
                                PanelMode mode, double x_bound = 1e6) {
  Matrix y = read_csv_matrix(y_path);
  Matrix x;
  if (x_path) {
    x = read_csv_matrix(*x_path);
    if (!x.allFinite()) throw ValidationError("panel: missing or NaN cells in X file " + *x_path);
    if (x.rows() != y.rows() || x.cols() != y.cols())
      throw ValidationError("panel: Y is " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                            " but X is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  } else if (mode == PanelMode::BinaryMask) {
    x = (y.array().isNaN()).select(Matrix::Zero(y.rows(), y.cols()), Matrix::Ones(y.rows(), y.cols()));
  } else {
    x = Matrix::Ones(y.rows(), y.cols());
  }

  for (Index i = 0; i < y.rows(); ++i)
    for (Index t = 0; t < y.cols(); ++t) {
      if (!std::isnan(y(i, t))) continue;
      if (mode == PanelMode::GeneralRegressor)
        throw ValidationError("panel: missing Y(" + std::to_string(i + 1) + "," + std::to_string(t + 1) +
                              ") not allowed in general-regressor mode");
      if (x(i, t) != 0.0)
        throw ValidationError("panel: Y(" + std::to_string(i + 1) + "," + std::to_string(t + 1) +
                              ") is missing but X marks the cell observed");
      y(i, t) = 0.0;
    }
  return ObservedPanel::make(std::move(y), std::move(x), mode, x_bound);
}

// Advisory report: never gates the pipeline.
struct DiagnosticsReport {
  double p_min = 0.0;
  double weight_row_norm_max = 0.0;
  double weight_gram_min_sv = 0.0;
  std::pair<double, double> incoherence_ratios{0.0, 0.0};
  Vector eigenvalue_ratios;  // sigma_j / sigma_{j+1} of M_init, when a fit is supplied
  Warnings warnings;
};

// Checkable parts of the assumptions: p_min, weight row norms and Gram
// spectra, block-shape heuristics (cluster size treated as 1), and the
// eigenvalue-ratio rank diagnostic on M_init when available. Everything here
// is advisory; the asymptotic conditions cannot be verified on one panel.
inline DiagnosticsReport diagnose(const ObservedPanel& panel, const Matrix& w_beta, const Matrix& w_f,
                                  const GroupSpec& group, const Matrix* m_init = nullptr) {
  const Index n = panel.n();
  const Index t = panel.t();
  if (w_beta.rows() != n || w_f.rows() != t || w_beta.cols() != w_f.cols())
    throw ValidationError("diagnose: weight shapes do not match the panel");
  group.validate(n, t);

  DiagnosticsReport rep;
  HeterogeneityWeights hw = compute_heterogeneity(panel);
  rep.p_min = hw.p_hat.minCoeff();

  rep.weight_row_norm_max = std::max(w_beta.rowwise().norm().maxCoeff(), w_f.rowwise().norm().maxCoeff());
  const Matrix gram_beta = w_beta.transpose() * w_beta / static_cast<double>(n);
  const Matrix gram_f = w_f.transpose() * w_f / static_cast<double>(t);
  Eigen::SelfAdjointEigenSolver<Matrix> eb(gram_beta), ef(gram_f);
  rep.weight_gram_min_sv = std::max(0.0, std::min(eb.eigenvalues().minCoeff(), ef.eigenvalues().minCoeff()));
  if (rep.weight_gram_min_sv < 1e-6)
    rep.warnings.push_back("weight Gram nearly singular (min singular value " +
                           std::to_string(rep.weight_gram_min_sv) + "); weights may not be diversified");

  // Block-shape heuristics with cluster size 1; asymptotic, advisory only.
  const double log_n = std::log(std::max<double>(n, 3));
  const double log_t = std::log(std::max<double>(t, 3));
  const auto i_sz = static_cast<double>(group.rows.size());
  const auto t_sz = static_cast<double>(group.cols.size());
  if (group.kind != GroupKind::CrossSectional &&
      std::max(i_sz * i_sz * std::pow(log_n, 3), i_sz * std::pow(log_n, 6)) >= static_cast<double>(n))
    rep.warnings.push_back("group row count " + std::to_string(group.rows.size()) +
                           " looks large relative to N (heuristic block-shape check, cluster size 1)");
  if (group.kind != GroupKind::Serial &&
      std::max(t_sz * t_sz * std::pow(log_t, 3), t_sz * std::pow(log_t, 6)) >= static_cast<double>(n))
    rep.warnings.push_back("group column count " + std::to_string(group.cols.size()) +
                           " looks large relative to N (heuristic block-shape check, cluster size 1)");

  if (m_init != nullptr) {
    ThinSVD svd = thin_svd(*m_init);
    const Index k = svd.s.size();
    if (k >= 2 && svd.s(0) > 0.0) {
      // ratios sigma_j / sigma_{j+1}, truncated where the spectrum hits the
      // numerical floor (ratios against rounding noise carry no rank signal)
      const double floor = 1e-10 * svd.s(0);
      Index usable = 0;
      while (usable + 1 < k && svd.s(usable + 1) > floor) ++usable;
      rep.eigenvalue_ratios.resize(usable);
      for (Index j = 0; j < usable; ++j) rep.eigenvalue_ratios(j) = svd.s(j) / svd.s(j + 1);
      const Index rank = numerical_rank(svd.s, 1e-8 * svd.s(0));
      if (rank > 0) {
        // beta-side and F-side incoherence ratios of the fitted low-rank part
        const Matrix bl = svd.U.leftCols(rank) * svd.s.head(rank).asDiagonal();
        const Matrix fr = svd.V.leftCols(rank) * svd.s.head(rank).asDiagonal();
        rep.incoherence_ratios.first = bl.rowwise().norm().maxCoeff() * std::sqrt(static_cast<double>(n)) / svd.s(0);
        rep.incoherence_ratios.second = fr.rowwise().norm().maxCoeff() * std::sqrt(static_cast<double>(t)) / svd.s(0);
      }
    }
  }
  return rep;
}

}  // namespace lrinfer
