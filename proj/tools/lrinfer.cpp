//
// lrinfer: rank-misspecification-robust inference for low-rank panel models.
//
// Subcommands: fit, infer, hte, simulate, diagnose. All reports are JSON;
// exit codes are 0 (success), 2 (validation error), 3 (solver failure).
//

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lrinfer/csv.hpp"
#include "lrinfer/inference.hpp"
#include "lrinfer/json_io.hpp"
#include "lrinfer/nuclear.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/pipeline.hpp"
#include "lrinfer/sim.hpp"
#include "lrinfer/weights.hpp"

namespace {

using namespace lrinfer;

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel g_log_level = LogLevel::Warn;

void init_log_level() {
  const char* env = std::getenv("LRINFER_LOG");
  if (env == nullptr) return;
  const std::string v(env);
  if (v == "error") g_log_level = LogLevel::Error;
  else if (v == "warn") g_log_level = LogLevel::Warn;
  else if (v == "info") g_log_level = LogLevel::Info;
  else if (v == "debug") g_log_level = LogLevel::Debug;
}

void log_msg(LogLevel lvl, const std::string& msg) {
  if (lvl > g_log_level) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

struct DataOptions {
  std::string y_path;
  std::string x_path;
  std::string mode = "binary";
};

struct WeightOptions {
  std::string weights_beta;
  std::string weights_f;
  std::string chars_beta;
  std::string chars_f;
  int degree = 1;
  bool constant = false;
};

struct SolveOptions {
  std::string lambda = "auto";
  int max_iters = 2000;
  double tol = 1e-7;
  double lambda_const = 2.0;
  bool ablate_b2 = false;
  bool force_sigma0 = false;
};

PanelMode parse_mode(const std::string& mode) {
  if (mode == "binary" || mode == "binary-mask") return PanelMode::BinaryMask;
  if (mode == "general" || mode == "general-regressor") return PanelMode::GeneralRegressor;
  throw ValidationError("unknown --mode '" + mode + "' (expected binary or general)");
}

ObservedPanel load_data(const DataOptions& d) {
  std::optional<std::string> x;
  if (!d.x_path.empty()) x = d.x_path;
  return load_panel(d.y_path, x, parse_mode(d.mode));
}

DiversifiedWeights load_weights(const WeightOptions& w, Index n, Index t) {
  const bool user = !w.weights_beta.empty() || !w.weights_f.empty();
  const bool chars = !w.chars_beta.empty() || !w.chars_f.empty();
  if (user && chars)
    throw ValidationError("give either --weights-beta/--weights-f or --chars-beta/--chars-f, not both");
  if (user) {
    if (w.weights_beta.empty() || w.weights_f.empty())
      throw ValidationError("user-supplied weights need both --weights-beta and --weights-f");
    Matrix wb = read_csv_matrix(w.weights_beta);
    Matrix wf = read_csv_matrix(w.weights_f);
    auto out = DiversifiedWeights::user_supplied(std::move(wb), std::move(wf));
    validate_weights(out, n, t);
    return out;
  }
  if (!chars) throw ValidationError("missing weights: --weights-beta/--weights-f or --chars-beta/--chars-f");
  if (w.chars_beta.empty() || w.chars_f.empty())
    throw ValidationError("characteristic weights need both --chars-beta and --chars-f");
  Matrix z = read_csv_matrix(w.chars_beta);
  Matrix ff = read_csv_matrix(w.chars_f);
  auto out = from_characteristics(z, ff, w.degree, w.constant);
  validate_weights(out, n, t);
  return out;
}

// --group accepts an inline spec, a JSON literal, or a path to a JSON file
GroupSpec resolve_group(const std::string& spec, Index n, Index t) {
  if (!spec.empty() && spec.front() != '{' && std::filesystem::exists(spec)) {
    std::ifstream in(spec);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_group(content, n, t);
  }
  return parse_group(spec, n, t);
}

NuclearConfig make_nuclear_config(const SolveOptions& s) {
  NuclearConfig cfg;
  cfg.max_iters = s.max_iters;
  cfg.tol = s.tol;
  cfg.lambda_const = s.lambda_const;
  if (s.lambda != "auto") {
    try {
      cfg.lambda = std::stod(s.lambda);
    } catch (const std::exception&) {
      throw ValidationError("--lambda must be a number or 'auto', got '" + s.lambda + "'");
    }
  }
  cfg.validate();
  return cfg;
}

void emit(const Json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw ValidationError("cannot open output file " + out_path);
  out << j.dump(2) << "\n";
  log_msg(LogLevel::Info, "wrote " + out_path);
}

Json run_fit_report(const ObservedPanel& panel, const DiversifiedWeights& w, const GroupSpec& group,
                    const PipelineOptions& opts, const std::string& dump_dir, FitResult* fit_out = nullptr) {
  FitResult fit = run_pipeline(panel, w, group, opts);
  Json j = fit_summary_to_json(fit);
  if (!dump_dir.empty()) {
    std::filesystem::create_directories(dump_dir);
    Json dumps;
    auto dump = [&](const char* name, const Matrix& m) {
      const std::string path = (std::filesystem::path(dump_dir) / (std::string(name) + ".csv")).string();
      write_csv_matrix(path, m);
      dumps[name] = path;
    };
    dump("m_init", fit.M_init);
    dump("m_naive", fit.M_naive);
    dump("m_proj", fit.M_proj);
    dump("b1", fit.B1);
    dump("b2", fit.B2);
    dump("m_hat", fit.M_hat);
    j["dumps"] = dumps;
  }
  if (fit_out != nullptr) *fit_out = std::move(fit);
  return j;
}

int cmd_fit(const DataOptions& data, const WeightOptions& wopts, const std::string& group_spec,
            const SolveOptions& solve, const std::string& out_path, const std::string& dump_dir) {
  ObservedPanel panel = load_data(data);
  DiversifiedWeights w = load_weights(wopts, panel.n(), panel.t());
  GroupSpec group = resolve_group(group_spec, panel.n(), panel.t());
  PipelineOptions opts{make_nuclear_config(solve), solve.ablate_b2, solve.force_sigma0};
  Json j;
  j["fit"] = run_fit_report(panel, w, group, opts, dump_dir);
  emit(j, out_path);
  return 0;
}

int cmd_infer(const DataOptions& data, const WeightOptions& wopts, const std::string& group_spec,
              const SolveOptions& solve, double level, double null_value, bool one_sided,
              const std::string& out_path) {
  ObservedPanel panel = load_data(data);
  DiversifiedWeights w = load_weights(wopts, panel.n(), panel.t());
  GroupSpec group = resolve_group(group_spec, panel.n(), panel.t());
  PipelineOptions opts{make_nuclear_config(solve), solve.ablate_b2, solve.force_sigma0};

  FitResult fit;
  Json fit_json = run_fit_report(panel, w, group, opts, "", &fit);
  HeterogeneityWeights hw = compute_heterogeneity(panel);
  InferenceResult res = infer(fit, panel, hw, w, group, level, null_value);
  if (one_sided) res.flags.push_back("one-sided test requested: report p_one_sided");

  Json j;
  j["inference"] = inference_to_json(res);
  j["fit"] = fit_json;
  j["diagnostics"] = diagnostics_to_json(diagnose(panel, w.W_beta, w.W_F, group, &fit.M_init));
  emit(j, out_path);
  return 0;
}

int cmd_hte(const DataOptions& arm1, const DataOptions& arm0, const std::string& y_single,
            const std::string& treat_path, const WeightOptions& wopts, const std::string& group_spec,
            const SolveOptions& solve, double level, double null_value, bool one_sided,
            const std::string& out_path) {
  ObservedPanel p1, p0;
  const bool single = !y_single.empty();
  const bool two_file = !arm1.y_path.empty() || !arm0.y_path.empty();
  if (single == two_file)
    throw ValidationError("hte needs either --y with --treat, or --y1/--x1 and --y0/--x0");
  if (single) {
    if (treat_path.empty()) throw ValidationError("hte with a single --y needs --treat (the treatment mask)");
    Matrix y = read_csv_matrix(y_single);
    if (!y.allFinite()) throw ValidationError("hte: --y must be fully observed (one realized outcome per cell)");
    Matrix d = read_csv_matrix(treat_path);
    if (d.rows() != y.rows() || d.cols() != y.cols())
      throw ValidationError("hte: treatment mask shape does not match --y");
    Matrix x0 = Matrix::Ones(d.rows(), d.cols()) - d;
    p1 = ObservedPanel::make(d.cwiseProduct(y), d, PanelMode::BinaryMask);
    p0 = ObservedPanel::make(x0.cwiseProduct(y), x0, PanelMode::BinaryMask);
  } else {
    DataOptions a1 = arm1, a0 = arm0;
    a1.mode = a0.mode = "binary";
    p1 = load_data(a1);
    p0 = load_data(a0);
  }

  DiversifiedWeights w = load_weights(wopts, p1.n(), p1.t());
  GroupSpec group = resolve_group(group_spec, p1.n(), p1.t());
  PipelineOptions opts{make_nuclear_config(solve), solve.ablate_b2, solve.force_sigma0};

  FitResult fit1, fit0;
  Json fit1_json = run_fit_report(p1, w, group, opts, "", &fit1);
  Json fit0_json = run_fit_report(p0, w, group, opts, "", &fit0);
  HeterogeneityWeights hw1 = compute_heterogeneity(p1);
  HeterogeneityWeights hw0 = compute_heterogeneity(p0);
  InferenceResult res = hte_infer(fit1, fit0, p1, p0, hw1, hw0, w, group, level, null_value);
  if (one_sided) res.flags.push_back("one-sided test requested: report p_one_sided");

  Json j;
  j["hte"] = inference_to_json(res);
  j["fit_treated"] = fit1_json;
  j["fit_control"] = fit0_json;
  emit(j, out_path);
  return 0;
}

struct SimulateOptions {
  Index n = 150, t = 150;
  int r = 2;
  Index r_weights = 4;
  double sigma = 1.0;
  double p = 0.8;
  double a_n = 1.0;
  std::string mode = "binary";
  std::string scheme = "oracle-augmented";
  double gamma = 4.0;
  int reps = 500;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 0;
  bool hte = false;
  double effect_size = 0.0;
};

int cmd_simulate(const SimulateOptions& s, const std::string& group_spec, const SolveOptions& solve,
                 const std::string& out_path, const std::string& z_csv, const std::string& rep_csv) {
  sim::DgpConfig cfg;
  cfg.n = s.n;
  cfg.t = s.t;
  cfg.r = s.r;
  cfg.r_weights = s.r_weights;
  cfg.sigma = s.sigma;
  cfg.p_scalar = s.p;
  cfg.a_n = s.a_n;
  cfg.mode = parse_mode(s.mode);
  cfg.gamma = s.gamma;
  cfg.seed = s.seed;
  if (s.scheme == "oracle-augmented") cfg.scheme = sim::WeightScheme::OracleAugmented;
  else if (s.scheme == "characteristics") cfg.scheme = sim::WeightScheme::Characteristics;
  else if (s.scheme == "scaled-singular-vectors") cfg.scheme = sim::WeightScheme::ScaledSingularVectors;
  else throw ValidationError("unknown --scheme '" + s.scheme + "'");

  GroupSpec group = resolve_group(group_spec, cfg.n, cfg.t);
  sim::ExperimentOptions opts;
  opts.reps = s.reps;
  opts.level = s.level;
  opts.ablate_b2 = solve.ablate_b2;
  opts.force_sigma0 = solve.force_sigma0;
  opts.nuclear = make_nuclear_config(solve);
  opts.threads = s.threads;
  opts.hte = s.hte;
  opts.effect_size = s.effect_size;

  sim::CoverageReport report = sim::coverage_experiment(cfg, group, opts);

  if (!z_csv.empty()) {
    std::ofstream z(z_csv);
    if (!z) throw ValidationError("cannot open " + z_csv);
    z << "z\n";
    z.precision(17);
    for (const auto& rec : report.per_rep)
      if (rec.ok) z << rec.z << "\n";
  }
  if (!rep_csv.empty()) {
    std::ofstream f(rep_csv);
    if (!f) throw ValidationError("cannot open " + rep_csv);
    f << "rep,ok,estimate,truth,se,z,ci_lower,ci_upper,covered\n";
    f.precision(17);
    for (const auto& rec : report.per_rep)
      f << rec.rep << ',' << (rec.ok ? 1 : 0) << ',' << rec.estimate << ',' << rec.truth << ','
        << rec.std_error << ',' << rec.z << ',' << rec.ci_lower << ',' << rec.ci_upper << ','
        << (rec.covered ? 1 : 0) << "\n";
  }

  Json j = coverage_to_json(report);
  Json meta;
  meta["N"] = cfg.n;
  meta["T"] = cfg.t;
  meta["r"] = cfg.r;
  meta["R"] = cfg.r_weights;
  meta["sigma"] = cfg.sigma;
  meta["p"] = s.p;
  meta["a_n"] = cfg.a_n;
  meta["scheme"] = sim::to_string(cfg.scheme);
  meta["seed"] = cfg.seed;
  meta["level"] = opts.level;
  meta["ablate_b2"] = opts.ablate_b2;
  meta["hte"] = opts.hte;
  meta["effect_size"] = opts.effect_size;
  meta["group"] = group_to_json(group);
  j["config"] = meta;
  emit(j, out_path);
  return 0;
}

int cmd_diagnose(const DataOptions& data, const WeightOptions& wopts, const std::string& group_spec,
                 const SolveOptions& solve, bool with_fit, const std::string& out_path) {
  ObservedPanel panel = load_data(data);
  DiversifiedWeights w = load_weights(wopts, panel.n(), panel.t());
  GroupSpec group = resolve_group(group_spec, panel.n(), panel.t());

  Json j;
  if (with_fit) {
    HeterogeneityWeights hw = compute_heterogeneity(panel);
    InitEstimate init = build_init(panel, hw, group, make_nuclear_config(solve), w.R);
    j["diagnostics"] = diagnostics_to_json(diagnose(panel, w.W_beta, w.W_F, group, &init.M_init));
    j["lambda"] = init.lambda_used;
  } else {
    j["diagnostics"] = diagnostics_to_json(diagnose(panel, w.W_beta, w.W_F, group, nullptr));
  }
  WeightsDiagnostics wd = validate_weights(w, panel.n(), panel.t());
  Json jw;
  jw["sigma_R_beta"] = json_safe(wd.sigma_r_beta);
  jw["sigma_R_f"] = json_safe(wd.sigma_r_f);
  jw["row_norm_beta"] = json_safe(wd.row_norm_beta);
  jw["row_norm_f"] = json_safe(wd.row_norm_f);
  jw["warnings"] = wd.warnings;
  j["weights"] = jw;
  emit(j, out_path);
  return 0;
}

void add_data_options(CLI::App* cmd, DataOptions& d, bool required_y = true) {
  auto* y = cmd->add_option("--y", d.y_path, "outcome matrix CSV (N x T)");
  if (required_y) y->required();
  cmd->add_option("--x", d.x_path, "regressor/mask matrix CSV (optional)");
  cmd->add_option("--mode", d.mode, "binary or general (default binary)");
}

void add_weight_options(CLI::App* cmd, WeightOptions& w) {
  cmd->add_option("--weights-beta", w.weights_beta, "W_beta CSV (N x R), user-supplied");
  cmd->add_option("--weights-f", w.weights_f, "W_F CSV (T x R), user-supplied");
  cmd->add_option("--chars-beta", w.chars_beta, "row characteristics CSV (N x d)");
  cmd->add_option("--chars-f", w.chars_f, "column characteristics CSV (T x d)");
  cmd->add_option("--degree", w.degree, "polynomial degree for characteristics (default 1)");
  cmd->add_flag("--constant", w.constant, "include an all-ones weight column");
}

void add_solve_options(CLI::App* cmd, SolveOptions& s) {
  cmd->add_option("--lambda", s.lambda, "nuclear penalty: a number or 'auto' (default auto)");
  cmd->add_option("--max-iters", s.max_iters, "solver iteration cap (default 2000)");
  cmd->add_option("--tol", s.tol, "solver relative objective tolerance (default 1e-7)");
  cmd->add_option("--lambda-const", s.lambda_const, "constant c in the auto lambda rule (default 2)");
  cmd->add_flag("--ablate-B2", s.ablate_b2, "skip the second debias (M_hat = M_proj)");
  cmd->add_flag("--force-sigma0", s.force_sigma0, "pin the noise variance estimate to zero");
}

}  // namespace

int main(int argc, char** argv) {
  init_log_level();
  CLI::App app{"lrinfer: rank-robust inference for low-rank panel models"};
  app.require_subcommand(1);

  DataOptions data;
  WeightOptions wopts;
  SolveOptions solve;
  std::string group_spec, out_path, dump_dir, z_csv, rep_csv;
  double level = 0.95, null_value = 0.0;
  bool one_sided = false, with_fit = false;

  auto* fit = app.add_subcommand("fit", "run the estimation pipeline and report the fit");
  add_data_options(fit, data);
  add_weight_options(fit, wopts);
  add_solve_options(fit, solve);
  fit->add_option("--group", group_spec, "group spec (JSON or e.g. block:1-5x10-20)")->required();
  fit->add_option("--out", out_path, "output JSON path (default stdout)");
  fit->add_option("--dump-dir", dump_dir, "directory for matrix CSV dumps");

  auto* infer_cmd = app.add_subcommand("infer", "group-average estimate with a CLT confidence interval");
  add_data_options(infer_cmd, data);
  add_weight_options(infer_cmd, wopts);
  add_solve_options(infer_cmd, solve);
  infer_cmd->add_option("--group", group_spec, "group spec (JSON or e.g. block:1-5x10-20)")->required();
  infer_cmd->add_option("--level", level, "confidence level in (0.5, 1), default 0.95");
  infer_cmd->add_option("--null", null_value, "null value for the z statistic (default 0)");
  infer_cmd->add_flag("--one-sided", one_sided, "one-sided test of H0: average <= null");
  infer_cmd->add_option("--out", out_path, "output JSON path (default stdout)");

  DataOptions arm1, arm0;
  std::string y_single, treat_path;
  auto* hte = app.add_subcommand("hte", "two-arm group average treatment effect");
  hte->add_option("--y", y_single, "realized outcome CSV; arms derived from --treat");
  hte->add_option("--treat", treat_path, "treatment indicator CSV (0/1)");
  hte->add_option("--y1", arm1.y_path, "treated-arm outcome CSV");
  hte->add_option("--x1", arm1.x_path, "treated-arm mask CSV");
  hte->add_option("--y0", arm0.y_path, "control-arm outcome CSV");
  hte->add_option("--x0", arm0.x_path, "control-arm mask CSV");
  add_weight_options(hte, wopts);
  add_solve_options(hte, solve);
  hte->add_option("--group", group_spec, "group spec (JSON or e.g. block:1-5x10-20)")->required();
  hte->add_option("--level", level, "confidence level in (0.5, 1), default 0.95");
  hte->add_option("--null", null_value, "null value for the z statistic (default 0)");
  hte->add_flag("--one-sided", one_sided, "one-sided test of H0: effect <= null");
  hte->add_option("--out", out_path, "output JSON path (default stdout)");

  SimulateOptions sopt;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo coverage experiment");
  simulate->add_option("--N", sopt.n, "rows (default 150)");
  simulate->add_option("--T", sopt.t, "columns (default 150)");
  simulate->add_option("--r", sopt.r, "true rank (default 2)");
  simulate->add_option("--R", sopt.r_weights, "weight rank (default 4)");
  simulate->add_option("--sigma", sopt.sigma, "noise sd (default 1)");
  simulate->add_option("--p", sopt.p, "observation probability (default 0.8)");
  simulate->add_option("--a-n", sopt.a_n, "factor strength multiplier (default 1)");
  simulate->add_option("--dgp-mode", sopt.mode, "binary or general (default binary)");
  simulate->add_option("--scheme", sopt.scheme,
                       "weights: oracle-augmented | characteristics | scaled-singular-vectors");
  simulate->add_option("--gamma", sopt.gamma, "truncation constant for scaled singular vectors");
  simulate->add_option("--reps", sopt.reps, "replications (default 500)");
  simulate->add_option("--level", sopt.level, "confidence level (default 0.95)");
  simulate->add_option("--seed", sopt.seed, "run seed (default 1)");
  simulate->add_option("--threads", sopt.threads, "parallel replication cap (default all cores)");
  simulate->add_flag("--hte", sopt.hte, "two-arm treatment-effect experiment");
  simulate->add_option("--effect-size", sopt.effect_size, "first-factor shift between arms");
  add_solve_options(simulate, solve);
  simulate->add_option("--group", group_spec, "group spec (JSON or e.g. block:1-5x10-20)")->required();
  simulate->add_option("--out", out_path, "output JSON path (default stdout)");
  simulate->add_option("--zcsv", z_csv, "write per-rep z statistics CSV (QQ inspection)");
  simulate->add_option("--rep-csv", rep_csv, "write the full per-rep table CSV");

  auto* diagnose_cmd = app.add_subcommand("diagnose", "assumption diagnostics (advisory)");
  add_data_options(diagnose_cmd, data);
  add_weight_options(diagnose_cmd, wopts);
  add_solve_options(diagnose_cmd, solve);
  diagnose_cmd->add_option("--group", group_spec, "group spec (JSON or e.g. block:1-5x10-20)")->required();
  diagnose_cmd->add_flag("--with-fit", with_fit, "also fit the initial estimator for rank diagnostics");
  diagnose_cmd->add_option("--out", out_path, "output JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (fit->parsed()) return cmd_fit(data, wopts, group_spec, solve, out_path, dump_dir);
    if (infer_cmd->parsed())
      return cmd_infer(data, wopts, group_spec, solve, level, null_value, one_sided, out_path);
    if (hte->parsed())
      return cmd_hte(arm1, arm0, y_single, treat_path, wopts, group_spec, solve, level, null_value, one_sided,
                     out_path);
    if (simulate->parsed()) return cmd_simulate(sopt, group_spec, solve, out_path, z_csv, rep_csv);
    if (diagnose_cmd->parsed()) return cmd_diagnose(data, wopts, group_spec, solve, with_fit, out_path);
  } catch (const ValidationError& e) {
    log_msg(LogLevel::Error, e.what());
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const SolverError& e) {
    log_msg(LogLevel::Error, e.what());
    std::cerr << "solver error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
