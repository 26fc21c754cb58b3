#pragma once

//
// JSON serialization of results and parsing of group specifications. Groups
// are 1-based in all external formats:
//   JSON:   {"kind": "block", "rows": [1,2,5], "cols": [10,11]}
//   inline: "block:1-5x10-20", "serial:1-3,7", "cs:4-9"
//

#include <json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lrinfer/inference.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/pipeline.hpp"
#include "lrinfer/sim.hpp"
#include "lrinfer/types.hpp"
#include "lrinfer/weights.hpp"

namespace lrinfer {

using Json = nlohmann::ordered_json;

// JSON has no inf; clamp to the largest finite double and flag separately.
inline double json_safe(double x) {
  if (std::isnan(x)) return 0.0;
  if (std::isinf(x)) return x > 0 ? std::numeric_limits<double>::max() : std::numeric_limits<double>::lowest();
  return x;
}

inline Json group_to_json(const GroupSpec& g) {
  Json j;
  j["kind"] = to_string(g.kind);
  Json rows = Json::array(), cols = Json::array();
  for (Index i : g.rows) rows.push_back(i + 1);
  for (Index t : g.cols) cols.push_back(t + 1);
  j["rows"] = rows;
  j["cols"] = cols;
  return j;
}

namespace json_detail {

inline std::vector<Index> indices_from_json(const Json& arr, const char* name) {
  if (!arr.is_array()) throw ValidationError(std::string("group: ") + name + " must be an array of 1-based indices");
  std::vector<Index> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw ValidationError(std::string("group: ") + name + " entries must be integers");
    out.push_back(v.get<Index>() - 1);
  }
  return out;
}

inline GroupKind kind_from_string(const std::string& s) {
  if (s == "block") return GroupKind::Block;
  if (s == "serial") return GroupKind::Serial;
  if (s == "cross-sectional" || s == "cs") return GroupKind::CrossSectional;
  throw ValidationError("group: unknown kind '" + s + "' (expected block, serial, or cross-sectional)");
}

// "1-5,8,11-12" -> {0..4, 7, 10, 11}
inline std::vector<Index> indices_from_ranges(const std::string& spec) {
  std::vector<Index> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    const std::string tok = spec.substr(pos, comma - pos);
    if (tok.empty()) throw ValidationError("group: empty index token in '" + spec + "'");
    const std::size_t dash = tok.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(static_cast<Index>(std::stoll(tok)) - 1);
      } else {
        const Index lo = static_cast<Index>(std::stoll(tok.substr(0, dash)));
        const Index hi = static_cast<Index>(std::stoll(tok.substr(dash + 1)));
        if (hi < lo) throw ValidationError("group: descending range '" + tok + "'");
        for (Index v = lo; v <= hi; ++v) out.push_back(v - 1);
      }
    } catch (const std::invalid_argument&) {
      throw ValidationError("group: cannot parse index token '" + tok + "'");
    } catch (const std::out_of_range&) {
      throw ValidationError("group: index token out of range '" + tok + "'");
    }
    pos = comma + 1;
    if (comma == spec.size()) break;
  }
  return out;
}

}  // namespace json_detail

inline GroupSpec group_from_json(const Json& j, Index n, Index t) {
  if (!j.is_object() || !j.contains("kind"))
    throw ValidationError("group: JSON spec must be an object with a \"kind\" field");
  const GroupKind kind = json_detail::kind_from_string(j.at("kind").get<std::string>());
  GroupSpec g;
  switch (kind) {
    case GroupKind::Block:
      if (!j.contains("rows") || !j.contains("cols"))
        throw ValidationError("group: block spec needs \"rows\" and \"cols\"");
      g = GroupSpec::block(json_detail::indices_from_json(j.at("rows"), "rows"),
                           json_detail::indices_from_json(j.at("cols"), "cols"));
      break;
    case GroupKind::Serial:
      if (!j.contains("rows")) throw ValidationError("group: serial spec needs \"rows\"");
      g = GroupSpec::serial(json_detail::indices_from_json(j.at("rows"), "rows"), t);
      break;
    case GroupKind::CrossSectional:
      if (!j.contains("cols")) throw ValidationError("group: cross-sectional spec needs \"cols\"");
      g = GroupSpec::cross_sectional(json_detail::indices_from_json(j.at("cols"), "cols"), n);
      break;
  }
  g.validate(n, t);
  return g;
}

// Accepts either a JSON object (string starting with '{') or the inline
// form "<kind>:<rows>x<cols>" / "serial:<rows>" / "cs:<cols>".
inline GroupSpec parse_group(const std::string& spec, Index n, Index t) {
  if (!spec.empty() && spec.front() == '{') return group_from_json(Json::parse(spec), n, t);
  const std::size_t colon = spec.find(':');
  if (colon == std::string::npos)
    throw ValidationError("group: expected '<kind>:<indices>' or a JSON object, got '" + spec + "'");
  const GroupKind kind = json_detail::kind_from_string(spec.substr(0, colon));
  const std::string rest = spec.substr(colon + 1);
  GroupSpec g;
  switch (kind) {
    case GroupKind::Block: {
      const std::size_t cross = rest.find('x');
      if (cross == std::string::npos)
        throw ValidationError("group: block spec needs '<rows>x<cols>', got '" + rest + "'");
      g = GroupSpec::block(json_detail::indices_from_ranges(rest.substr(0, cross)),
                           json_detail::indices_from_ranges(rest.substr(cross + 1)));
      break;
    }
    case GroupKind::Serial:
      g = GroupSpec::serial(json_detail::indices_from_ranges(rest), t);
      break;
    case GroupKind::CrossSectional:
      g = GroupSpec::cross_sectional(json_detail::indices_from_ranges(rest), n);
      break;
  }
  g.validate(n, t);
  return g;
}

inline Json inference_to_json(const InferenceResult& r) {
  Json j;
  j["estimate"] = json_safe(r.estimate);
  j["variance"] = json_safe(r.variance);
  j["se"] = json_safe(r.std_error);
  j["z"] = json_safe(r.z_stat);
  j["p_one_sided"] = json_safe(r.p_one_sided);
  j["p_two_sided"] = json_safe(r.p_two_sided);
  j["ci"] = Json::array({json_safe(r.ci_lower), json_safe(r.ci_upper)});
  j["level"] = r.level;
  j["null_value"] = r.null_value;
  j["group"] = group_to_json(r.group);
  j["flags"] = r.flags;
  return j;
}

inline Json fit_summary_to_json(const FitResult& fit) {
  Json j;
  j["sigma2_tilde"] = json_safe(fit.sigma2_tilde);
  j["lambda"] = json_safe(fit.lambda_used);
  j["solver_iters"] = Json::array({fit.solver_iters.first, fit.solver_iters.second});
  j["rank_m_init"] = numerical_rank(fit.M_init);
  j["rank_m_proj"] = numerical_rank(fit.M_proj);
  j["rank_m_hat"] = numerical_rank(fit.M_hat);
  j["R"] = fit.beta_tilde.cols();
  j["N"] = fit.M_init.rows();
  j["T"] = fit.M_init.cols();
  j["ablate_b2"] = fit.ablation_no_b2;
  j["warnings"] = fit.warnings;
  return j;
}

inline Json diagnostics_to_json(const DiagnosticsReport& d) {
  Json j;
  j["p_min"] = json_safe(d.p_min);
  j["weight_row_norm_max"] = json_safe(d.weight_row_norm_max);
  j["weight_gram_min_sv"] = json_safe(d.weight_gram_min_sv);
  j["incoherence_ratios"] = Json::array({json_safe(d.incoherence_ratios.first), json_safe(d.incoherence_ratios.second)});
  Json ratios = Json::array();
  for (Index i = 0; i < d.eigenvalue_ratios.size(); ++i) ratios.push_back(json_safe(d.eigenvalue_ratios(i)));
  j["eigenvalue_ratios"] = ratios;
  j["warnings"] = d.warnings;
  return j;
}

inline Json coverage_to_json(const sim::CoverageReport& r, bool include_per_rep = false) {
  Json j;
  j["reps"] = r.reps;
  j["failed_reps"] = r.failed_reps;
  j["coverage"] = json_safe(r.coverage);
  j["mean_bias"] = json_safe(r.mean_bias);
  j["rmse"] = json_safe(r.rmse);
  j["variance_ratio"] = json_safe(r.variance_ratio);
  j["mean_ci_width"] = json_safe(r.mean_ci_width);
  j["rejection_rate_one_sided"] = json_safe(r.rejection_rate_one_sided);
  if (include_per_rep) {
    Json rows = Json::array();
    for (const auto& rec : r.per_rep) {
      Json row;
      row["rep"] = rec.rep;
      row["ok"] = rec.ok;
      row["estimate"] = json_safe(rec.estimate);
      row["truth"] = json_safe(rec.truth);
      row["se"] = json_safe(rec.std_error);
      row["z"] = json_safe(rec.z);
      row["ci"] = Json::array({json_safe(rec.ci_lower), json_safe(rec.ci_upper)});
      row["covered"] = rec.covered;
      if (!rec.ok) row["error"] = rec.error;
      rows.push_back(row);
    }
    j["per_rep"] = rows;
  }
  return j;
}

}  // namespace lrinfer
