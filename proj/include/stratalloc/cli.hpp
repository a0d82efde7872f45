#pragma once

// Command-line front end: solve, check, moments and simulate.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stratalloc/errors.hpp"
#include "stratalloc/estimators.hpp"
#include "stratalloc/report_json.hpp"
#include "stratalloc/simulator.hpp"
#include "stratalloc/solvers.hpp"
#include "stratalloc/strata_model.hpp"

namespace stratalloc::cli {

enum class Command { solve, check, moments, simulate };
enum class OutputFormat { table, json };

inline constexpr int exit_ok = 0;
inline constexpr int exit_input_error = 1;
inline constexpr int exit_infeasible = 2;

/// Environment variable naming the directory searched for relative --input paths.
inline constexpr const char* data_dir_env = "STRATALLOC_DATA_DIR";

struct RunConfig {
  Command command = Command::solve;
  std::string input;
  std::optional<InputFormat> format;
  std::string formulation = "per-variable";
  std::optional<Vector> v0;
  std::optional<double> tau;
  std::optional<double> p0;
  std::optional<std::int64_t> total_n;
  std::optional<std::vector<std::int64_t>> alloc;
  std::uint64_t seed = 20240601;
  std::int64_t replications = 1000;
  OutputFormat output = OutputFormat::table;
};

/// "6,inf" -> {6, +inf}. Accepts inf / infinity in any case.
inline Vector parse_real_list(const std::string& text, const std::string& flag) {
  Vector out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string t;
    for (char c : item)
      if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (t == "inf" || t == "+inf" || t == "infinity") {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (t.empty() || used != t.size()) throw ValidationError(flag + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(flag + ": empty list");
  return out;
}

inline std::vector<std::int64_t> parse_integer_list(const std::string& text, const std::string& flag) {
  std::vector<std::int64_t> out;
  for (double v : parse_real_list(text, flag)) {
    if (!std::isfinite(v) || v != std::floor(v)) throw ValidationError(flag + ": entries must be integers");
    out.push_back(static_cast<std::int64_t>(v));
  }
  return out;
}

struct ParsedArgs {
  std::optional<RunConfig> config;  // empty when help was printed or flags were rejected
  int exit_code = exit_ok;
};

/// Flags over environment over defaults. Help and flag errors are printed
/// here; bad values throw ValidationError.
inline ParsedArgs parse_args(int argc, const char* const* argv, std::ostream& out = std::cout,
                             std::ostream& err = std::cerr) {
  CLI::App app{"Optimum sample allocation for multivariate stratified random sampling"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string v0_text, alloc_text, format_text, output_text = "table";
  std::optional<double> tau, p0;
  std::optional<std::int64_t> total_n;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> reps;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--input", cfg.input, "Survey file (.csv or .json)")->required();
    sub->add_option("--format", format_text, "Input format: csv or json (default: from extension)")
        ->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--output", output_text, "table or json")->check(CLI::IsMember({"table", "json"}));
  };
  auto add_problem = [&](CLI::App* sub) {
    sub->add_option("--formulation", cfg.formulation, "per-variable, prekopa, trace, trace-det or det")
        ->check(CLI::IsMember({"per-variable", "prekopa", "trace", "trace-det", "det"}));
    sub->add_option("--v0", v0_text, "Per-characteristic variance bounds, e.g. 6,inf");
    sub->add_option("--tau", tau, "Bound for the trace or determinant functional");
    sub->add_option("--p0", p0, "Required probability for chance constraints");
    sub->add_option("--total-n", total_n, "Require sum of n_h equal to this value");
  };

  auto* solve = app.add_subcommand("solve", "Find the cost-minimal allocation");
  add_common(solve);
  add_problem(solve);
  auto* check = app.add_subcommand("check", "Evaluate the constraints at a given allocation");
  add_common(check);
  add_problem(check);
  check->add_option("--alloc", alloc_text, "Comma-separated n_1..n_H")->required();
  auto* moments = app.add_subcommand("moments", "Estimator moments at a given allocation");
  add_common(moments);
  moments->add_option("--alloc", alloc_text, "Comma-separated n_1..n_H")->required();
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo coverage on a Gaussian population built from the input");
  add_common(simulate);
  simulate->add_option("--formulation", cfg.formulation, "Functional: trace or det")
      ->check(CLI::IsMember({"trace", "det"}));
  simulate->add_option("--alloc", alloc_text, "Comma-separated n_1..n_H")->required();
  simulate->add_option("--tau", tau, "Bound on the functional")->required();
  simulate->add_option("--seed", seed, "Random seed");
  simulate->add_option("--replications", reps, "Number of Monte Carlo replications");

  if (argc < 1) throw ValidationError("missing program name");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return {std::nullopt, code == 0 ? exit_ok : exit_input_error};
  }

  if (solve->parsed()) cfg.command = Command::solve;
  if (check->parsed()) cfg.command = Command::check;
  if (moments->parsed()) cfg.command = Command::moments;
  if (simulate->parsed()) {
    cfg.command = Command::simulate;
    if (cfg.formulation != "det") cfg.formulation = "trace";
  }
  if (!format_text.empty()) cfg.format = format_text == "csv" ? InputFormat::csv : InputFormat::json;
  cfg.output = output_text == "json" ? OutputFormat::json : OutputFormat::table;
  if (!v0_text.empty()) cfg.v0 = parse_real_list(v0_text, "--v0");
  if (!alloc_text.empty()) cfg.alloc = parse_integer_list(alloc_text, "--alloc");
  cfg.tau = tau;
  cfg.p0 = p0;
  cfg.total_n = total_n;
  if (seed) cfg.seed = *seed;
  if (reps) {
    if (*reps < 1) throw ValidationError("--replications must be positive");
    cfg.replications = *reps;
  }
  return {cfg, exit_ok};
}

/// --input as given if it exists, else relative to $STRATALLOC_DATA_DIR.
inline std::filesystem::path resolve_input(const std::string& input) {
  std::filesystem::path p(input);
  if (std::filesystem::exists(p) || p.is_absolute()) return p;
  if (const char* dir = std::getenv(data_dir_env)) {
    const auto alt = std::filesystem::path(dir) / p;
    if (std::filesystem::exists(alt)) return alt;
  }
  return p;
}

/// Problem spec for the formulation flags; the chance formulations default
/// p0 to 0.5 when it is not given.
inline ProblemSpec make_spec(const RunConfig& cfg, const SurveyFrame& frame) {
  ProblemSpec spec;
  spec.formulation = formulation_from_string(cfg.formulation);
  if (spec.uses_v0()) {
    if (!cfg.v0) throw ValidationError("--formulation " + cfg.formulation + " needs --v0");
    spec.v0 = *cfg.v0;
  } else {
    if (!cfg.tau) throw ValidationError("--formulation " + cfg.formulation + " needs --tau");
    spec.tau = *cfg.tau;
  }
  if (spec.uses_p0()) spec.p0 = cfg.p0.value_or(0.5);
  spec.total_n = cfg.total_n;
  spec.validate(frame);
  return spec;
}

namespace detail {

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

inline void print_row(std::ostream& out, const SurveyFrame& frame, const Allocation& alloc, double cost) {
  const Matrix c = cov_hat_stratified(alloc, frame);
  out << std::left;
  for (std::size_t h = 0; h < alloc.size(); ++h) out << std::setw(8) << ("n_" + std::to_string(h + 1));
  for (const auto& l : frame.labels()) out << std::setw(14) << ("Var(" + l + ")");
  out << "cost\n";
  for (std::size_t h = 0; h < alloc.size(); ++h) out << std::setw(8) << alloc[h];
  for (std::size_t j = 0; j < frame.g(); ++j) out << std::setw(14) << fmt(c(j, j));
  out << fmt(cost) << "\n";
}

inline void print_constraints(std::ostream& out, const std::vector<ConstraintReport>& cons) {
  for (const auto& c : cons)
    out << "  " << std::setw(16) << c.name << " value " << std::setw(12) << fmt(c.lhs) << " bound " << std::setw(12)
        << fmt(c.bound) << " slack " << std::setw(12) << fmt(-c.value) << (c.satisfied ? " ok" : " VIOLATED") << "\n";
}

inline Vector variances(const SurveyFrame& frame, const Allocation& alloc) {
  const Matrix c = cov_hat_stratified(alloc, frame);
  Vector v(frame.g());
  for (std::size_t j = 0; j < frame.g(); ++j) v[j] = c(j, j);
  return v;
}

inline std::vector<RawStratumData> gaussian_population(const SurveyFrame& frame, std::uint64_t seed) {
  SyntheticPopulationSpec spec;
  spec.seed = seed;
  for (const auto& s : frame.strata())
    spec.strata.push_back({s.population_size, GaussianLaw{Vector(frame.g(), 0.0), s.covariance}});
  return generate_population(spec);
}

}  // namespace detail

/// Executes one command; returns the process exit status.
inline int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const auto path = resolve_input(cfg.input);
    const SurveyFrame frame = cfg.format ? load_survey(path, *cfg.format) : load_survey(path);
    const bool as_json = cfg.output == OutputFormat::json;

    switch (cfg.command) {
      case Command::solve: {
        const ProblemSpec spec = make_spec(cfg, frame);
        const SolveReport r = solve(spec, frame);
        if (as_json) {
          json j{{"command", "solve"}, {"formulation", to_string(spec.formulation)}, {"report", r}};
          j["variances"] = r.feasible ? stratalloc::detail::reals_to_json(detail::variances(frame, r.allocation)) : json(nullptr);
          out << j.dump(2) << "\n";
        } else {
          out << "formulation " << to_string(spec.formulation) << ", status " << to_string(r.status) << "\n";
          if (r.feasible) {
            detail::print_row(out, frame, r.allocation, r.objective_cost);
            detail::print_constraints(out, r.constraint_values);
          }
          out << "nodes " << r.nodes_explored << ", relaxation bound " << detail::fmt(r.relaxation_bound) << ", "
              << detail::fmt(r.wall_time_seconds) << " s\n";
          if (!r.feasible) out << r.message << "\n";
        }
        if (r.status == SolveStatus::infeasible) return exit_infeasible;
        if (!r.feasible) {
          err << "error: " << r.message << "\n";
          return exit_input_error;
        }
        return exit_ok;
      }
      case Command::check: {
        const ProblemSpec spec = make_spec(cfg, frame);
        const Allocation alloc{*cfg.alloc};
        const SolveReport r = check_allocation(alloc, spec, frame);
        if (as_json) {
          json j{{"command", "check"}, {"formulation", to_string(spec.formulation)}, {"report", r}};
          j["variances"] = stratalloc::detail::reals_to_json(detail::variances(frame, alloc));
          out << j.dump(2) << "\n";
        } else {
          out << "formulation " << to_string(spec.formulation) << ", " << (r.feasible ? "feasible" : "infeasible")
              << "\n";
          detail::print_row(out, frame, alloc, r.objective_cost);
          detail::print_constraints(out, r.constraint_values);
        }
        return r.feasible ? exit_ok : exit_infeasible;
      }
      case Command::moments: {
        const Allocation alloc{*cfg.alloc};
        const MomentReport r = moment_report(alloc, frame);
        if (as_json) {
          out << json{{"command", "moments"}, {"report", r}}.dump(2) << "\n";
        } else {
          detail::print_row(out, frame, alloc, allocation_cost(alloc, frame));
          out << "Cov-hat\n";
          for (std::size_t i = 0; i < r.cov_hat.rows(); ++i) {
            out << " ";
            for (std::size_t j = 0; j < r.cov_hat.cols(); ++j) out << " " << std::setw(14) << detail::fmt(r.cov_hat(i, j));
            out << "\n";
          }
          out << "E(vech Cov-hat)";
          for (double v : r.mean_vech.values()) out << " " << detail::fmt(v);
          out << "\ntrace mean " << detail::fmt(r.trace_mean);
          if (r.trace_var) out << ", trace variance " << detail::fmt(*r.trace_var);
          out << "\n";
          if (r.cov_vech) {
            out << "Cov(vech Cov-hat)\n";
            for (std::size_t i = 0; i < r.cov_vech->rows(); ++i) {
              out << " ";
              for (std::size_t j = 0; j < r.cov_vech->cols(); ++j)
                out << " " << std::setw(14) << detail::fmt((*r.cov_vech)(i, j));
              out << "\n";
            }
          }
          out << "pilot n_h";
          for (const auto& p : r.pilot_sizes) out << " " << (p ? std::to_string(*p) : std::string("-"));
          out << "\n";
        }
        return exit_ok;
      }
      case Command::simulate: {
        const Allocation alloc{*cfg.alloc};
        validate_allocation(alloc, frame);
        const auto population = detail::gaussian_population(frame, cfg.seed);
        const CoverageReport r = validate_coverage(population, alloc, *cfg.tau, functional_from_string(cfg.formulation),
                                                   cfg.replications, cfg.seed);
        if (as_json) {
          out << json{{"command", "simulate"}, {"report", r}}.dump(2) << "\n";
        } else {
          out << "functional " << to_string(r.functional) << ", tau " << detail::fmt(r.tau) << ", replications "
              << r.replications << ", seed " << r.seed << "\n";
          out << "empirical P(f <= tau) " << detail::fmt(r.empirical_probability) << "  (95% Wilson "
              << detail::fmt(r.wilson_low) << " .. " << detail::fmt(r.wilson_high) << ")\n";
          out << "nominal p0 " << detail::fmt(r.nominal_p0) << "\n";
          out << std::left << std::setw(16) << "component" << std::setw(14) << "mean" << std::setw(14) << "predicted"
              << std::setw(12) << "skewness" << std::setw(12) << "ex.kurt" << "max cdf gap\n";
          auto line = [&](const ComponentCheck& c) {
            out << std::setw(16) << c.name << std::setw(14) << detail::fmt(c.empirical_mean) << std::setw(14)
                << detail::fmt(c.predicted_mean) << std::setw(12) << detail::fmt(c.skewness) << std::setw(12)
                << detail::fmt(c.excess_kurtosis) << detail::fmt(c.max_cdf_gap) << "\n";
          };
          line(r.functional_stats);
          for (const auto& c : r.normality_stats) line(c);
        }
        return exit_ok;
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_input_error;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return exit_input_error;
  }
  return exit_input_error;
}

/// argv entry point shared by the tool and the tests.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  ParsedArgs parsed;
  try {
    parsed = parse_args(argc, argv, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_input_error;
  }
  if (!parsed.config) return parsed.exit_code;
  return run(*parsed.config, out, err);
}

}  // namespace stratalloc::cli
