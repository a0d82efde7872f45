#pragma once

// JSON encoding of every report type. Non-finite reals are written as the
// strings "inf", "-inf" and "nan" so that reports round-trip exactly.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stratalloc/errors.hpp"
#include "stratalloc/estimators.hpp"
#include "stratalloc/matcalc.hpp"
#include "stratalloc/simulator.hpp"
#include "stratalloc/solvers.hpp"

namespace stratalloc {

using nlohmann::json;

namespace detail {

inline json real_to_json(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

inline double real_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ParseError("expected a real number in report JSON, got " + j.dump());
}

inline json reals_to_json(const Vector& v) {
  json out = json::array();
  for (double x : v) out.push_back(real_to_json(x));
  return out;
}

inline Vector reals_from_json(const json& j) {
  Vector v;
  for (const auto& e : j) v.push_back(real_from_json(e));
  return v;
}

inline json matrix_json(const Matrix& m) {
  json out = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(real_to_json(m(i, c)));
    out.push_back(std::move(row));
  }
  return out;
}

inline Matrix matrix_from(const json& j) {
  std::vector<Vector> rows;
  for (const auto& r : j) rows.push_back(reals_from_json(r));
  if (rows.empty()) return Matrix();
  return Matrix::from_rows(rows);
}

}  // namespace detail

inline void to_json(json& j, const Allocation& a) { j = a.n; }
inline void from_json(const json& j, Allocation& a) { a.n = j.get<std::vector<std::int64_t>>(); }

inline void to_json(json& j, const ConstraintReport& c) {
  j = json{{"name", c.name},
           {"lhs", detail::real_to_json(c.lhs)},
           {"bound", detail::real_to_json(c.bound)},
           {"value", detail::real_to_json(c.value)},
           {"satisfied", c.satisfied}};
}

inline void from_json(const json& j, ConstraintReport& c) {
  c.name = j.at("name").get<std::string>();
  c.lhs = detail::real_from_json(j.at("lhs"));
  c.bound = detail::real_from_json(j.at("bound"));
  c.value = detail::real_from_json(j.at("value"));
  c.satisfied = j.at("satisfied").get<bool>();
}

inline SolveStatus solve_status_from_string(const std::string& s) {
  if (s == "optimal") return SolveStatus::optimal;
  if (s == "infeasible") return SolveStatus::infeasible;
  if (s == "node_limit") return SolveStatus::node_limit;
  throw ParseError("unknown solve status '" + s + "'");
}

inline void to_json(json& j, const SolveReport& r) {
  j = json{{"status", to_string(r.status)},
           {"allocation", r.allocation},
           {"objective_cost", detail::real_to_json(r.objective_cost)},
           {"constraint_values", r.constraint_values},
           {"feasible", r.feasible},
           {"nodes_explored", r.nodes_explored},
           {"relaxation_bound", detail::real_to_json(r.relaxation_bound)},
           {"bound_certified", r.bound_certified},
           {"wall_time_seconds", detail::real_to_json(r.wall_time_seconds)},
           {"message", r.message}};
}

inline void from_json(const json& j, SolveReport& r) {
  r.status = solve_status_from_string(j.at("status").get<std::string>());
  r.allocation = j.at("allocation").get<Allocation>();
  r.objective_cost = detail::real_from_json(j.at("objective_cost"));
  r.constraint_values = j.at("constraint_values").get<std::vector<ConstraintReport>>();
  r.feasible = j.at("feasible").get<bool>();
  r.nodes_explored = j.at("nodes_explored").get<std::int64_t>();
  r.relaxation_bound = detail::real_from_json(j.at("relaxation_bound"));
  r.bound_certified = j.at("bound_certified").get<bool>();
  r.wall_time_seconds = detail::real_from_json(j.at("wall_time_seconds"));
  r.message = j.at("message").get<std::string>();
}

inline void to_json(json& j, const MomentReport& r) {
  json pilots = json::array();
  for (const auto& p : r.pilot_sizes) pilots.push_back(p ? json(*p) : json(nullptr));
  j = json{{"allocation", r.allocation},
           {"pilot_sizes", pilots},
           {"cov_hat", detail::matrix_json(r.cov_hat)},
           {"mean_vech", detail::reals_to_json(r.mean_vech.values())},
           {"cov_vech", r.cov_vech ? detail::matrix_json(*r.cov_vech) : json(nullptr)},
           {"trace_mean", detail::real_to_json(r.trace_mean)},
           {"trace_var", r.trace_var ? detail::real_to_json(*r.trace_var) : json(nullptr)}};
}

inline void from_json(const json& j, MomentReport& r) {
  r.allocation = j.at("allocation").get<Allocation>();
  r.pilot_sizes.clear();
  for (const auto& p : j.at("pilot_sizes"))
    r.pilot_sizes.push_back(p.is_null() ? std::nullopt : std::optional<std::int64_t>(p.get<std::int64_t>()));
  r.cov_hat = detail::matrix_from(j.at("cov_hat"));
  r.mean_vech = VechVector(detail::reals_from_json(j.at("mean_vech")));
  r.cov_vech = j.at("cov_vech").is_null() ? std::nullopt : std::optional<Matrix>(detail::matrix_from(j.at("cov_vech")));
  r.trace_mean = detail::real_from_json(j.at("trace_mean"));
  r.trace_var = j.at("trace_var").is_null() ? std::nullopt : std::optional<double>(detail::real_from_json(j.at("trace_var")));
}

inline void to_json(json& j, const ComponentCheck& c) {
  using detail::real_to_json;
  j = json{{"name", c.name},
           {"empirical_mean", real_to_json(c.empirical_mean)},
           {"predicted_mean", real_to_json(c.predicted_mean)},
           {"mean_standard_error", real_to_json(c.mean_standard_error)},
           {"mean_z", real_to_json(c.mean_z)},
           {"empirical_variance", real_to_json(c.empirical_variance)},
           {"predicted_variance", real_to_json(c.predicted_variance)},
           {"variance_relative_error", real_to_json(c.variance_relative_error)},
           {"skewness", real_to_json(c.skewness)},
           {"excess_kurtosis", real_to_json(c.excess_kurtosis)},
           {"max_cdf_gap", real_to_json(c.max_cdf_gap)}};
}

inline void from_json(const json& j, ComponentCheck& c) {
  using detail::real_from_json;
  c.name = j.at("name").get<std::string>();
  c.empirical_mean = real_from_json(j.at("empirical_mean"));
  c.predicted_mean = real_from_json(j.at("predicted_mean"));
  c.mean_standard_error = real_from_json(j.at("mean_standard_error"));
  c.mean_z = real_from_json(j.at("mean_z"));
  c.empirical_variance = real_from_json(j.at("empirical_variance"));
  c.predicted_variance = real_from_json(j.at("predicted_variance"));
  c.variance_relative_error = real_from_json(j.at("variance_relative_error"));
  c.skewness = real_from_json(j.at("skewness"));
  c.excess_kurtosis = real_from_json(j.at("excess_kurtosis"));
  c.max_cdf_gap = real_from_json(j.at("max_cdf_gap"));
}

inline void to_json(json& j, const MomentCheck& m) {
  j = json{{"components", m.components},
           {"empirical_covariance", detail::matrix_json(m.empirical_covariance)},
           {"predicted_covariance", detail::matrix_json(m.predicted_covariance)},
           {"max_abs_mean_z", detail::real_to_json(m.max_abs_mean_z)},
           {"max_covariance_relative_error", detail::real_to_json(m.max_covariance_relative_error)}};
}

inline void from_json(const json& j, MomentCheck& m) {
  m.components = j.at("components").get<std::vector<ComponentCheck>>();
  m.empirical_covariance = detail::matrix_from(j.at("empirical_covariance"));
  m.predicted_covariance = detail::matrix_from(j.at("predicted_covariance"));
  m.max_abs_mean_z = detail::real_from_json(j.at("max_abs_mean_z"));
  m.max_covariance_relative_error = detail::real_from_json(j.at("max_covariance_relative_error"));
}

inline void to_json(json& j, const NormalityReport& r) {
  j = json{{"replications", r.replications},
           {"seed", r.seed},
           {"allocation", r.allocation},
           {"cov_hat", r.cov_hat},
           {"strata", r.strata},
           {"shc_epsilon", detail::reals_to_json(r.shc_epsilon)},
           {"degenerate", r.degenerate},
           {"message", r.message}};
}

inline void from_json(const json& j, NormalityReport& r) {
  r.replications = j.at("replications").get<std::int64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.allocation = j.at("allocation").get<Allocation>();
  r.cov_hat = j.at("cov_hat").get<MomentCheck>();
  r.strata = j.at("strata").get<std::vector<MomentCheck>>();
  r.shc_epsilon = detail::reals_from_json(j.at("shc_epsilon"));
  r.degenerate = j.at("degenerate").get<bool>();
  r.message = j.at("message").get<std::string>();
}

inline void to_json(json& j, const CoverageReport& r) {
  using detail::real_to_json;
  j = json{{"replications", r.replications},
           {"seed", r.seed},
           {"functional", to_string(r.functional)},
           {"tau", real_to_json(r.tau)},
           {"hits", r.hits},
           {"empirical_probability", real_to_json(r.empirical_probability)},
           {"nominal_p0", real_to_json(r.nominal_p0)},
           {"wilson_low", real_to_json(r.wilson_low)},
           {"wilson_high", real_to_json(r.wilson_high)},
           {"functional_stats", r.functional_stats},
           {"normality_stats", r.normality_stats}};
}

inline void from_json(const json& j, CoverageReport& r) {
  using detail::real_from_json;
  r.replications = j.at("replications").get<std::int64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.functional = functional_from_string(j.at("functional").get<std::string>());
  r.tau = real_from_json(j.at("tau"));
  r.hits = j.at("hits").get<std::int64_t>();
  r.empirical_probability = real_from_json(j.at("empirical_probability"));
  r.nominal_p0 = real_from_json(j.at("nominal_p0"));
  r.wilson_low = real_from_json(j.at("wilson_low"));
  r.wilson_high = real_from_json(j.at("wilson_high"));
  r.functional_stats = j.at("functional_stats").get<ComponentCheck>();
  r.normality_stats = j.at("normality_stats").get<std::vector<ComponentCheck>>();
}

}  // namespace stratalloc
