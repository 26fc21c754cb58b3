#pragma once

//
// Data-generating processes matching the model assumptions and a Monte Carlo
// harness measuring bias, RMSE, variance calibration, and confidence-interval
// coverage. Replications use independent splitmix-derived seed streams and
// aggregate in replication order with compensated summation, so reports are
// bitwise identical for any thread count.
//

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lrinfer/inference.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/pipeline.hpp"
#include "lrinfer/rng.hpp"
#include "lrinfer/types.hpp"
#include "lrinfer/weights.hpp"

namespace lrinfer {
namespace sim {

enum class WeightScheme { OracleAugmented, Characteristics, ScaledSingularVectors };

inline const char* to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::OracleAugmented: return "oracle-augmented";
    case WeightScheme::Characteristics: return "characteristics";
    default: return "scaled-singular-vectors";
  }
}

struct DgpConfig {
  Index n = 150;
  Index t = 150;
  int r = 2;           // true rank
  double a_n = 1.0;    // factor strength: loadings are a_n * standard normals
  double sigma = 1.0;  // noise standard deviation
  Vector p;            // per-row observation probabilities; empty = all p_scalar
  double p_scalar = 0.8;
  PanelMode mode = PanelMode::BinaryMask;
  double x_lo = 0.5;  // general-regressor mode: X_it iid Uniform(x_lo, x_hi)
  double x_hi = 1.5;
  Index r_weights = 4;  // R, the weight rank
  WeightScheme scheme = WeightScheme::OracleAugmented;
  double gamma = 4.0;  // truncation constant for scaled singular vectors
  std::uint64_t seed = 1;

  Vector row_probs() const {
    if (p.size() == static_cast<Index>(0)) return Vector::Constant(n, p_scalar);
    return p;
  }

  void validate() const {
    if (n < 4 || t < 4) throw ValidationError("dgp: need N, T >= 4");
    if (r < 1) throw ValidationError("dgp: true rank must be >= 1");
    if (r_weights < r) throw ValidationError("dgp: R must be at least the true rank");
    if (r_weights > std::min(n, t) / 4) throw ValidationError("dgp: R must be at most min(N, T)/4");
    if (a_n <= 0.0) throw ValidationError("dgp: a_N must be positive");
    if (sigma < 0.0) throw ValidationError("dgp: sigma must be non-negative");
    if (p.size() != 0 && p.size() != n) throw ValidationError("dgp: p must have length N");
    const Vector probs = row_probs();
    for (Index i = 0; i < probs.size(); ++i)
      if (!(probs(i) > 0.0 && probs(i) <= 1.0)) throw ValidationError("dgp: p_i must lie in (0, 1]");
    if (mode == PanelMode::GeneralRegressor && !(x_hi > x_lo))
      throw ValidationError("dgp: need x_hi > x_lo in general-regressor mode");
  }
};

struct GeneratedPanel {
  ObservedPanel panel;
  Matrix truth;  // M* = beta F'
  Matrix beta;   // N x r
  Matrix F;      // T x r
  DiversifiedWeights weights;
  Warnings warnings;
};

namespace sim_detail {

inline Matrix scale_columns_to(const Matrix& m, double target_norm) {
  Matrix out = m;
  for (Index k = 0; k < out.cols(); ++k) {
    const double norm = out.col(k).norm();
    if (norm > 0.0) out.col(k) *= target_norm / norm;
  }
  return out;
}

// Weight construction consumes the stream after (beta, F) and before the
// mask and noise draws, so the weights are independent of E by construction.
inline DiversifiedWeights build_weights(const DgpConfig& cfg, const Matrix& beta, const Matrix& f, Rng& rng) {
  const Index extra = cfg.r_weights - cfg.r;
  switch (cfg.scheme) {
    case WeightScheme::OracleAugmented: {
      Matrix wb(cfg.n, cfg.r_weights), wf(cfg.t, cfg.r_weights);
      wb.leftCols(cfg.r) = beta;
      wf.leftCols(cfg.r) = f;
      if (extra > 0) {
        wb.rightCols(extra) = rng.normal_matrix(cfg.n, extra);
        wf.rightCols(extra) = rng.normal_matrix(cfg.t, extra);
      }
      DiversifiedWeights w = DiversifiedWeights::user_supplied(
          sim_detail::scale_columns_to(wb, std::sqrt(static_cast<double>(cfg.n))),
          sim_detail::scale_columns_to(wf, std::sqrt(static_cast<double>(cfg.t))));
      return w;
    }
    case WeightScheme::Characteristics: {
      // Characteristics = noisy copies of the true loadings/factors plus
      // uninformative columns, fed through the polynomial constructor.
      Matrix z(cfg.n, cfg.r_weights), ff(cfg.t, cfg.r_weights);
      z.leftCols(cfg.r) = beta + 0.5 * rng.normal_matrix(cfg.n, cfg.r);
      ff.leftCols(cfg.r) = f + 0.5 * rng.normal_matrix(cfg.t, cfg.r);
      if (extra > 0) {
        z.rightCols(extra) = rng.normal_matrix(cfg.n, extra);
        ff.rightCols(extra) = rng.normal_matrix(cfg.t, extra);
      }
      return from_characteristics(z, ff, 1, false);
    }
    default: {
      // Fresh subsample panels sharing one side of the factor structure.
      const Vector probs = cfg.row_probs();
      auto subsample = [&](const Matrix& shared_beta, const Matrix& shared_f, bool share_beta) {
        const Matrix other = share_beta ? rng.normal_matrix(cfg.t, cfg.r) : rng.normal_matrix(cfg.n, cfg.r);
        const Matrix m_star = share_beta ? Matrix(shared_beta * other.transpose())
                                         : Matrix(other * shared_f.transpose());
        Matrix x(cfg.n, cfg.t);
        for (Index s = 0; s < cfg.t; ++s)
          for (Index i = 0; i < cfg.n; ++i) x(i, s) = rng.bernoulli(probs(i)) ? 1.0 : 0.0;
        Matrix e = rng.normal_matrix(cfg.n, cfg.t, std::max(cfg.sigma, 1e-3));
        Matrix y = x.cwiseProduct(m_star + e);
        return std::pair<Matrix, Matrix>(std::move(y), std::move(x));
      };
      auto [yb, xb] = subsample(beta, f, true);
      Matrix wb = from_scaled_singular_vectors(yb, xb, cfg.r_weights, cfg.gamma, WeightSide::Beta);
      auto [yf, xf] = subsample(beta, f, false);
      Matrix wf = from_scaled_singular_vectors(yf, xf, cfg.r_weights, cfg.gamma, WeightSide::F);
      DiversifiedWeights w = DiversifiedWeights::user_supplied(std::move(wb), std::move(wf));
      w.provenance = WeightProvenance::ScaledSingularVectors;
      return w;
    }
  }
}

inline void incoherence_check(const Matrix& beta, Warnings& warnings) {
  ThinSVD svd = thin_svd(beta);
  const double smax = svd.s.size() > 0 ? svd.s(0) : 0.0;
  if (smax <= 0.0) return;
  const double bound = 5.0 * smax / std::sqrt(static_cast<double>(beta.rows()));
  const double row_norm = beta.rowwise().norm().maxCoeff();
  if (row_norm > bound)
    warnings.push_back("generated loadings look incoherent: max row norm " + std::to_string(row_norm) +
                       " exceeds 5 sigma_max/sqrt(N) = " + std::to_string(bound));
}

}  // namespace sim_detail

// Draw order: beta0, F, weight-scheme draws, X, E. Fully determined by
// cfg.seed.
inline GeneratedPanel generate(const DgpConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const Matrix beta = cfg.a_n * rng.normal_matrix(cfg.n, cfg.r);
  const Matrix f = rng.normal_matrix(cfg.t, cfg.r);
  GeneratedPanel out{ObservedPanel{}, beta * f.transpose(), beta, f, sim_detail::build_weights(cfg, beta, f, rng), {}};

  Matrix x(cfg.n, cfg.t);
  if (cfg.mode == PanelMode::BinaryMask) {
    const Vector probs = cfg.row_probs();
    for (Index s = 0; s < cfg.t; ++s)
      for (Index i = 0; i < cfg.n; ++i) x(i, s) = rng.bernoulli(probs(i)) ? 1.0 : 0.0;
  } else {
    for (Index s = 0; s < cfg.t; ++s)
      for (Index i = 0; i < cfg.n; ++i) x(i, s) = rng.uniform(cfg.x_lo, cfg.x_hi);
  }
  const Matrix e = rng.normal_matrix(cfg.n, cfg.t, cfg.sigma);

  Matrix y = cfg.mode == PanelMode::BinaryMask ? Matrix(x.cwiseProduct(out.truth + e))
                                               : Matrix(x.cwiseProduct(out.truth) + e);
  out.panel = ObservedPanel::make(std::move(y), std::move(x), cfg.mode);
  sim_detail::incoherence_check(beta, out.warnings);
  return out;
}

struct HtePair {
  GeneratedPanel arm1;  // treated
  GeneratedPanel arm0;  // control
  Matrix gamma;         // beta (F1 - F0)'
};

// Two-arm potential-outcome DGP: shared loadings and shared latent noise,
// F1 = F0 shifted in the first factor by effect_size, complementary
// Bernoulli(p_i) masks. Both arms carry the same weight matrices.
inline HtePair generate_hte(const DgpConfig& cfg, double effect_size) {
  cfg.validate();
  if (cfg.mode != PanelMode::BinaryMask)
    throw ValidationError("generate_hte: treatment DGP requires binary-mask mode");
  Rng rng(cfg.seed);

  const Matrix beta = cfg.a_n * rng.normal_matrix(cfg.n, cfg.r);
  const Matrix f0 = rng.normal_matrix(cfg.t, cfg.r);
  Matrix f1 = f0;
  f1.col(0).array() += effect_size;
  DiversifiedWeights w = sim_detail::build_weights(cfg, beta, f0, rng);

  const Vector probs = cfg.row_probs();
  Matrix d(cfg.n, cfg.t);
  for (Index s = 0; s < cfg.t; ++s)
    for (Index i = 0; i < cfg.n; ++i) d(i, s) = rng.bernoulli(probs(i)) ? 1.0 : 0.0;
  const Matrix e_star = rng.normal_matrix(cfg.n, cfg.t, cfg.sigma);

  const Matrix x0 = Matrix::Ones(cfg.n, cfg.t) - d;
  HtePair out{GeneratedPanel{ObservedPanel{}, beta * f1.transpose(), beta, f1, w, {}},
              GeneratedPanel{ObservedPanel{}, beta * f0.transpose(), beta, f0, w, {}},
              beta * (f1 - f0).transpose()};
  out.arm1.panel = ObservedPanel::make(d.cwiseProduct(out.arm1.truth + e_star), d, PanelMode::BinaryMask);
  out.arm0.panel = ObservedPanel::make(x0.cwiseProduct(out.arm0.truth + e_star), x0, PanelMode::BinaryMask);
  sim_detail::incoherence_check(beta, out.arm1.warnings);
  return out;
}

struct RepRecord {
  int rep = 0;
  bool ok = false;
  double estimate = 0.0;
  double truth = 0.0;
  double variance = 0.0;
  double std_error = 0.0;
  double z = 0.0;  // (estimate - truth) / se, the CLT quantity
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  bool covered = false;
  std::string error;
};

struct CoverageReport {
  int reps = 0;         // successful replications
  int failed_reps = 0;  // excluded replications
  double coverage = 0.0;
  double mean_bias = 0.0;
  double rmse = 0.0;
  double variance_ratio = 0.0;  // empirical error variance / median V-hat
  double mean_ci_width = 0.0;
  double rejection_rate_one_sided = 0.0;  // fraction with z_null > q(level), null = 0
  std::vector<RepRecord> per_rep;
};

struct ExperimentOptions {
  int reps = 500;
  double level = 0.95;
  bool ablate_b2 = false;
  bool force_sigma0 = false;
  NuclearConfig nuclear;
  int threads = 0;  // 0 = hardware concurrency
  bool hte = false;
  double effect_size = 0.0;
};

namespace sim_detail {

inline double kahan_sum(const std::vector<double>& xs) {
  double sum = 0.0, comp = 0.0;
  for (double x : xs) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum;
}

inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
    });
  for (auto& th : pool) th.join();
}

inline CoverageReport aggregate(std::vector<RepRecord> records, double level) {
  CoverageReport rep;
  std::vector<double> errors, widths, variances;
  int covered = 0, rejected = 0;
  const double q_one_sided = normal_quantile(level);  // one-sided test of H0: mean <= 0
  for (const RepRecord& r : records) {
    if (!r.ok) {
      ++rep.failed_reps;
      continue;
    }
    ++rep.reps;
    errors.push_back(r.estimate - r.truth);
    widths.push_back(r.ci_upper - r.ci_lower);
    variances.push_back(r.variance);
    if (r.covered) ++covered;
    if (r.std_error > 0.0 && r.estimate / r.std_error > q_one_sided) ++rejected;
  }
  rep.per_rep = std::move(records);
  if (rep.reps == 0) return rep;

  const double n = static_cast<double>(rep.reps);
  rep.coverage = static_cast<double>(covered) / n;
  rep.rejection_rate_one_sided = static_cast<double>(rejected) / n;
  rep.mean_bias = kahan_sum(errors) / n;
  std::vector<double> sq(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) sq[i] = errors[i] * errors[i];
  rep.rmse = std::sqrt(kahan_sum(sq) / n);
  rep.mean_ci_width = kahan_sum(widths) / n;

  double err_var = 0.0;
  if (rep.reps > 1) {
    std::vector<double> dev2(errors.size());
    for (std::size_t i = 0; i < errors.size(); ++i) {
      const double d = errors[i] - rep.mean_bias;
      dev2[i] = d * d;
    }
    err_var = kahan_sum(dev2) / (n - 1.0);
  }
  std::vector<double> vs = variances;
  std::nth_element(vs.begin(), vs.begin() + static_cast<std::ptrdiff_t>(vs.size() / 2), vs.end());
  const double median_v = vs[vs.size() / 2];
  rep.variance_ratio = median_v > 0.0 ? err_var / median_v : 0.0;
  return rep;
}

}  // namespace sim_detail

// Runs generate -> run_pipeline -> infer for each replication and tallies
// coverage of the true group average. `ablate_variants` evaluates several
// ablation settings on the same fitted replications (the flag only switches
// whether B2 is subtracted at the end, so the fits are shared); the reports
// are identical to separate runs with the same seed.
inline std::vector<CoverageReport> coverage_experiment_multi(const DgpConfig& cfg, const GroupSpec& group,
                                                             const ExperimentOptions& opts,
                                                             const std::vector<bool>& ablate_variants) {
  cfg.validate();
  if (opts.reps < 1) throw ValidationError("coverage_experiment: need at least one replication");
  if (ablate_variants.empty()) throw ValidationError("coverage_experiment: no ablation variants requested");
  const std::size_t variants = ablate_variants.size();
  std::vector<std::vector<RepRecord>> records(variants,
                                              std::vector<RepRecord>(static_cast<std::size_t>(opts.reps)));

  sim_detail::parallel_for(opts.reps, opts.threads, [&](int rep_index) {
    DgpConfig rep_cfg = cfg;
    rep_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep_index));
    for (std::size_t k = 0; k < variants; ++k) records[k][static_cast<std::size_t>(rep_index)].rep = rep_index;
    try {
      PipelineOptions pl;
      pl.nuclear = opts.nuclear;
      pl.force_sigma0 = opts.force_sigma0;
      pl.ablate_b2 = false;

      auto fill = [&](std::size_t variant, const InferenceResult& res, double truth) {
        RepRecord& rec = records[variant][static_cast<std::size_t>(rep_index)];
        rec.ok = true;
        rec.estimate = res.estimate;
        rec.truth = truth;
        rec.variance = res.variance;
        rec.std_error = res.std_error;
        rec.z = res.std_error > 0.0 ? (res.estimate - truth) / res.std_error
                                    : (res.estimate == truth ? 0.0 : std::numeric_limits<double>::infinity());
        rec.ci_lower = res.ci_lower;
        rec.ci_upper = res.ci_upper;
        rec.covered = res.ci_lower <= truth && truth <= res.ci_upper;
      };

      if (!opts.hte) {
        GeneratedPanel gp = generate(rep_cfg);
        const double truth = group_average(gp.truth, group);
        const HeterogeneityWeights hw = compute_heterogeneity(gp.panel);
        FitResult fit = run_pipeline(gp.panel, gp.weights, group, pl);
        for (std::size_t k = 0; k < variants; ++k) {
          FitResult variant_fit = fit;
          variant_fit.ablation_no_b2 = ablate_variants[k];
          variant_fit.M_hat = ablate_variants[k] ? fit.M_proj : Matrix(fit.M_proj - fit.B2);
          fill(k, infer(variant_fit, gp.panel, hw, gp.weights, group, opts.level), truth);
        }
      } else {
        HtePair pair = generate_hte(rep_cfg, opts.effect_size);
        const double truth = group_average(pair.gamma, group);
        const HeterogeneityWeights hw1 = compute_heterogeneity(pair.arm1.panel);
        const HeterogeneityWeights hw0 = compute_heterogeneity(pair.arm0.panel);
        FitResult fit1 = run_pipeline(pair.arm1.panel, pair.arm1.weights, group, pl);
        FitResult fit0 = run_pipeline(pair.arm0.panel, pair.arm0.weights, group, pl);
        for (std::size_t k = 0; k < variants; ++k) {
          FitResult v1 = fit1, v0 = fit0;
          v1.ablation_no_b2 = v0.ablation_no_b2 = ablate_variants[k];
          v1.M_hat = ablate_variants[k] ? fit1.M_proj : Matrix(fit1.M_proj - fit1.B2);
          v0.M_hat = ablate_variants[k] ? fit0.M_proj : Matrix(fit0.M_proj - fit0.B2);
          fill(k,
               hte_infer(v1, v0, pair.arm1.panel, pair.arm0.panel, hw1, hw0, pair.arm1.weights, group,
                         opts.level),
               truth);
        }
      }
    } catch (const std::exception& ex) {
      for (std::size_t k = 0; k < variants; ++k) {
        RepRecord& rec = records[k][static_cast<std::size_t>(rep_index)];
        rec.ok = false;
        rec.error = ex.what();
      }
    }
  });

  std::vector<CoverageReport> reports;
  reports.reserve(variants);
  for (std::size_t k = 0; k < variants; ++k)
    reports.push_back(sim_detail::aggregate(std::move(records[k]), opts.level));
  return reports;
}

inline CoverageReport coverage_experiment(const DgpConfig& cfg, const GroupSpec& group,
                                          const ExperimentOptions& opts) {
  return coverage_experiment_multi(cfg, group, opts, {opts.ablate_b2}).front();
}

}  // namespace sim
}  // namespace lrinfer
