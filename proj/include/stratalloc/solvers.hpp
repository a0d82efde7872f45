#pragma once

// Cost-minimal integer allocation under the deterministic and chance-constrained
// precision requirements. Each formulation is reduced to a small set of
// constraint functions g_i(n) <= 0 that are smooth in a continuous n; the
// integer problem is solved by best-bound branch and bound over a log-barrier
// relaxation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "stratalloc/distributions.hpp"
#include "stratalloc/errors.hpp"
#include "stratalloc/estimators.hpp"
#include "stratalloc/matcalc.hpp"
#include "stratalloc/strata_model.hpp"

namespace stratalloc {

enum class Formulation {
  per_variable_deterministic,  // Var-hat_j <= v0_j
  prekopa_chance,              // P(Var-hat_j <= v0_j) >= p0, per characteristic
  trace_deterministic,         // tr Cov-hat <= tau
  trace_chance,                // P(tr Cov-hat <= tau) >= p0
  det_chance,                  // P(|Cov-hat| <= tau |N|^{1/4}) >= p0, G = 2
};

inline const char* to_string(Formulation f) {
  switch (f) {
    case Formulation::per_variable_deterministic: return "per-variable";
    case Formulation::prekopa_chance: return "prekopa";
    case Formulation::trace_deterministic: return "trace-det";
    case Formulation::trace_chance: return "trace";
    case Formulation::det_chance: return "det";
  }
  return "?";
}

inline Formulation formulation_from_string(const std::string& s) {
  if (s == "per-variable" || s == "per_variable" || s == "per_variable_deterministic")
    return Formulation::per_variable_deterministic;
  if (s == "prekopa" || s == "prekopa_chance") return Formulation::prekopa_chance;
  if (s == "trace-det" || s == "trace_deterministic") return Formulation::trace_deterministic;
  if (s == "trace" || s == "trace_chance") return Formulation::trace_chance;
  if (s == "det" || s == "det_chance") return Formulation::det_chance;
  throw ValidationError("unknown formulation '" + s + "' (expected per-variable, prekopa, trace-det, trace or det)");
}

struct ProblemSpec {
  Formulation formulation = Formulation::per_variable_deterministic;
  Vector v0;  // per characteristic; +inf disables that characteristic
  double tau = std::numeric_limits<double>::quiet_NaN();
  double p0 = std::numeric_limits<double>::quiet_NaN();
  std::optional<std::int64_t> total_n;

  bool uses_v0() const {
    return formulation == Formulation::per_variable_deterministic || formulation == Formulation::prekopa_chance;
  }
  bool uses_tau() const { return !uses_v0(); }
  bool uses_p0() const {
    return formulation == Formulation::prekopa_chance || formulation == Formulation::trace_chance ||
           formulation == Formulation::det_chance;
  }

  void validate(const SurveyFrame& frame) const {
    if (uses_v0()) {
      if (v0.size() != frame.g())
        throw ValidationError("v0 needs " + std::to_string(frame.g()) + " components, got " + std::to_string(v0.size()));
      for (std::size_t j = 0; j < v0.size(); ++j)
        if (!(v0[j] > 0.0)) throw ValidationError("v0 component " + std::to_string(j + 1) + " must be positive");
    } else if (!(tau > 0.0)) {
      throw ValidationError("tau must be a positive number");
    }
    if (uses_p0() && !(p0 > 0.0 && p0 < 1.0)) throw ValidationError("p0 must lie strictly between 0 and 1");
    if (formulation == Formulation::det_chance && frame.g() != 2)
      throw ValidationError("the determinant formulation is only defined for G = 2");
    if (total_n) {
      std::int64_t lo = 0, hi = 0;
      for (const auto& s : frame.strata()) {
        lo += 2;
        hi += s.population_size;
      }
      if (*total_n < lo || *total_n > hi)
        throw ValidationError("total-n " + std::to_string(*total_n) + " outside the attainable range [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }
};

// ---------------------------------------------------------------------------
// Constraint functions on integer allocations (public, estimator based)
// ---------------------------------------------------------------------------

/// Var-hat(ybar_ST^j) - v0_j per characteristic (<= 0 satisfied).
inline Vector constraint_per_variable(const Allocation& alloc, const SurveyFrame& frame, const Vector& v0) {
  const Matrix c = cov_hat_stratified(alloc, frame);
  if (v0.size() != frame.g()) throw ValidationError("v0 size differs from G");
  Vector out(frame.g());
  for (std::size_t j = 0; j < frame.g(); ++j) out[j] = c(j, j) - v0[j];
  return out;
}

/// E(Var-hat_j) + e_{p0} sqrt(Var(Var-hat_j)) - v0_j per characteristic, with
/// the per-characteristic moments taken from the diagonal of E / Cov of vech.
inline Vector constraint_prekopa(const Allocation& alloc, const SurveyFrame& frame, const Vector& v0, double p0) {
  const double e = normal_quantile(p0);
  const VechVector mean = vech_mean(alloc, frame);
  std::optional<Matrix> cov;
  if (e != 0.0) cov = vech_cov(alloc, frame);
  Vector out(frame.g());
  for (std::size_t j = 0; j < frame.g(); ++j) {
    const std::size_t jj = VechVector::index(frame.g(), j, j);
    double v = mean[jj];
    if (cov) v += e * std::sqrt(std::max(0.0, (*cov)(jj, jj)));
    out[j] = v - v0[j];
  }
  return out;
}

/// tr Cov-hat - tau.
inline double constraint_trace_deterministic(const Allocation& alloc, const SurveyFrame& frame, double tau) {
  return trace(cov_hat_stratified(alloc, frame)) - tau;
}

/// E-hat(tr) + e_{p0} sqrt(Var-hat(tr)) - tau. At p0 = 0.5 the variance term
/// vanishes and no fourth moments are needed.
inline double constraint_trace_chance(const Allocation& alloc, const SurveyFrame& frame, double tau, double p0) {
  const double e = normal_quantile(p0);
  if (e == 0.0) return trace_moments(alloc, frame, TraceMomentsMode::mean_only).trace_mean - tau;
  const auto tm = trace_moments(alloc, frame, TraceMomentsMode::full);
  return tm.trace_mean + e * std::sqrt(std::max(0.0, *tm.trace_var)) - tau;
}

/// N = sum_h w_h^2 n_h/(n_h-1)^2 (m4vec_h - vec s_h vec' s_h), G^2 x G^2.
inline Matrix det_chance_matrix(const Allocation& alloc, const SurveyFrame& frame) {
  validate_allocation(alloc, frame);
  const std::size_t g2 = frame.g() * frame.g();
  Matrix out(g2, g2);
  for (std::size_t h = 0; h < frame.num_strata(); ++h) {
    const auto& s = frame.stratum(h);
    if (!s.fourth_moment_vec)
      throw MissingMomentError("determinant formulation needs m4_vec but stratum " + std::to_string(h + 1) +
                               " has none");
    const double nh = static_cast<double>(alloc[h]);
    const double w = weight(h, alloc, frame);
    const Vector vs = vec(s.covariance);
    out += (w * w * nh / ((nh - 1.0) * (nh - 1.0))) * (*s.fourth_moment_vec - outer(vs, vs));
  }
  return out;
}

/// r_{p0} - tau |det N|^{1/4} (<= 0 satisfied). N built from pilot vec
/// moments repeats the (1,2)/(2,1) row, so |N| is zero up to rounding unless
/// m4_vec is supplied in a nonsingular form.
inline double constraint_det_chance(const Allocation& alloc, const SurveyFrame& frame, double tau, double p0) {
  if (frame.g() != 2) throw ValidationError("the determinant formulation is only defined for G = 2");
  const double d = std::abs(det(det_chance_matrix(alloc, frame)));
  return det_law_quantile(p0) - tau * std::pow(d, 0.25);
}

// ---------------------------------------------------------------------------
// Continuous constraint models used by the relaxation
// ---------------------------------------------------------------------------

namespace detail {

// Value with first and second derivative along one coordinate.
struct Jet {
  double v = 0.0, d = 0.0, dd = 0.0;
};
inline Jet operator+(Jet a, Jet b) { return {a.v + b.v, a.d + b.d, a.dd + b.dd}; }
inline Jet operator-(Jet a, Jet b) { return {a.v - b.v, a.d - b.d, a.dd - b.dd}; }
inline Jet operator-(double a, Jet b) { return {a - b.v, -b.d, -b.dd}; }
inline Jet operator-(Jet a, double b) { return {a.v - b, a.d, a.dd}; }
inline Jet operator*(double s, Jet a) { return {s * a.v, s * a.d, s * a.dd}; }
inline Jet operator*(Jet a, Jet b) { return {a.v * b.v, a.d * b.v + a.v * b.d, a.dd * b.v + 2.0 * a.d * b.d + a.v * b.dd}; }
inline Jet reciprocal(Jet b) {
  const double inv = 1.0 / b.v;
  return {inv, -b.d * inv * inv, -b.dd * inv * inv + 2.0 * b.d * b.d * inv * inv * inv};
}
inline Jet operator/(Jet a, Jet b) { return a * reciprocal(b); }

// Per-stratum building blocks as functions of a real sample size n.
struct StratumTerms {
  Jet weight;       // W (N_h - n) / (N n)
  Jet mean_factor;  // weight * n/(n-1)
  Jet var_factor;   // weight^2 * n/(n-1)^2
};

inline StratumTerms stratum_terms(double relative_size, double population_total, double stratum_size, double n) {
  const Jet x{n, 1.0, 0.0};
  const Jet w = (relative_size / population_total) * ((stratum_size - x) / x);
  const Jet xm1 = x - 1.0;
  return {w, w * x / xm1, w * w * x / (xm1 * xm1)};
}

}  // namespace detail

/// g(n) = sum_h [a_h weight_h + b_h mean_factor_h] + e sqrt(sum_h c_h var_factor_h) - threshold
/// Covers every formulation except the determinant one. Convex and
/// nonincreasing in each n_h whenever a, b, c >= 0 and e >= 0.
class SeparableConstraint {
 public:
  std::string name;
  double threshold = 0.0;
  double quantile = 0.0;  // e_{p0}
  Vector weight_coef, mean_coef, var_coef;

  SeparableConstraint(std::string name_, const SurveyFrame& frame, double threshold_, double quantile_)
      : name(std::move(name_)),
        threshold(threshold_),
        quantile(quantile_),
        weight_coef(frame.num_strata(), 0.0),
        mean_coef(frame.num_strata(), 0.0),
        var_coef(frame.num_strata(), 0.0),
        relative_size_(frame.num_strata()),
        stratum_size_(frame.num_strata()),
        total_(static_cast<double>(frame.population_total())) {
    for (std::size_t h = 0; h < frame.num_strata(); ++h) {
      relative_size_[h] = frame.relative_size(h);
      stratum_size_[h] = static_cast<double>(frame.stratum(h).population_size);
    }
  }

  bool convex() const {
    if (quantile < 0.0) return false;
    for (std::size_t h = 0; h < weight_coef.size(); ++h)
      if (weight_coef[h] < 0.0 || mean_coef[h] < 0.0 || var_coef[h] < 0.0) return false;
    return true;
  }

  /// The quantity compared against the threshold (Var-hat, E + e sd, trace...).
  double lhs(std::span<const double> n) const { return value(n) + threshold; }

  double value(std::span<const double> n) const {
    double a = 0.0, b = 0.0;
    for (std::size_t h = 0; h < n.size(); ++h) {
      const auto t = detail::stratum_terms(relative_size_[h], total_, stratum_size_[h], n[h]);
      a += weight_coef[h] * t.weight.v + mean_coef[h] * t.mean_factor.v;
      b += var_coef[h] * t.var_factor.v;
    }
    return a + (quantile != 0.0 ? quantile * std::sqrt(std::max(0.0, b)) : 0.0) - threshold;
  }

  /// Value, gradient and Hessian restricted to the coordinates in `free`.
  double derivatives(std::span<const double> n, const std::vector<std::size_t>& free, Vector& grad, Matrix& hess) const {
    const std::size_t f = free.size();
    grad.assign(f, 0.0);
    hess = Matrix(f, f);
    double a = 0.0, b = 0.0;
    Vector bd(f, 0.0), bdd(f, 0.0);
    std::size_t k = 0;
    for (std::size_t h = 0; h < n.size(); ++h) {
      const auto t = detail::stratum_terms(relative_size_[h], total_, stratum_size_[h], n[h]);
      a += weight_coef[h] * t.weight.v + mean_coef[h] * t.mean_factor.v;
      b += var_coef[h] * t.var_factor.v;
      if (k < f && free[k] == h) {
        grad[k] = weight_coef[h] * t.weight.d + mean_coef[h] * t.mean_factor.d;
        hess(k, k) = weight_coef[h] * t.weight.dd + mean_coef[h] * t.mean_factor.dd;
        bd[k] = var_coef[h] * t.var_factor.d;
        bdd[k] = var_coef[h] * t.var_factor.dd;
        ++k;
      }
    }
    double val = a - threshold;
    if (quantile != 0.0 && b > 0.0) {
      const double sb = std::sqrt(b);
      val += quantile * sb;
      for (std::size_t i = 0; i < f; ++i) {
        grad[i] += quantile * bd[i] / (2.0 * sb);
        hess(i, i) += quantile * bdd[i] / (2.0 * sb);
        for (std::size_t j = 0; j < f; ++j) hess(i, j) -= quantile * bd[i] * bd[j] / (4.0 * b * sb);
      }
    }
    return val;
  }

  double scale() const { return std::max(1.0, std::abs(threshold)); }

 private:
  Vector relative_size_, stratum_size_;
  double total_;
};

/// r_{p0} - tau |det N(n)|^{1/4}, G = 2.
class DeterminantConstraint {
 public:
  DeterminantConstraint(const SurveyFrame& frame, double tau, double p0)
      : tau_(tau), quantile_(det_law_quantile(p0)), total_(static_cast<double>(frame.population_total())) {
    if (frame.g() != 2) throw ValidationError("the determinant formulation is only defined for G = 2");
    monotone_ = true;
    for (std::size_t h = 0; h < frame.num_strata(); ++h) {
      const auto& s = frame.stratum(h);
      if (!s.fourth_moment_vec)
        throw MissingMomentError("determinant formulation needs m4_vec but stratum " + std::to_string(h + 1) +
                                 " has none");
      const Vector vs = vec(s.covariance);
      centered_.push_back(*s.fourth_moment_vec - outer(vs, vs));
      relative_size_.push_back(frame.relative_size(h));
      stratum_size_.push_back(static_cast<double>(s.population_size));
      if (!is_positive_semidefinite(centered_.back(), 1e-10)) monotone_ = false;
    }
    // A singular sum means det N vanishes identically and only rounding is left.
    Matrix sum(4, 4);
    for (const auto& c : centered_) sum += c;
    if (!is_positive_definite(sum)) monotone_ = false;
  }

  double value(std::span<const double> n) const {
    Matrix acc(4, 4);
    for (std::size_t h = 0; h < n.size(); ++h) {
      const auto t = detail::stratum_terms(relative_size_[h], total_, stratum_size_[h], n[h]);
      acc += t.var_factor.v * centered_[h];
    }
    return quantile_ - tau_ * std::pow(std::abs(det(acc)), 0.25);
  }

  /// All summands PSD: N shrinks in the Loewner order as any n_h grows, so
  /// the constraint value is nondecreasing in every n_h.
  bool nondecreasing() const { return monotone_; }
  double scale() const { return std::max(1.0, std::abs(quantile_)); }
  double lhs(std::span<const double> n) const { return value(n) - quantile_; }
  double quantile() const { return quantile_; }

 private:
  double tau_, quantile_, total_;
  std::vector<Matrix> centered_;
  Vector relative_size_, stratum_size_;
  bool monotone_ = false;
};

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ConstraintReport {
  std::string name;
  double lhs = 0.0;    // quantity being bounded
  double bound = 0.0;  // right-hand side
  double value = 0.0;  // lhs - bound, <= 0 when satisfied
  bool satisfied = false;
};

enum class SolveStatus { optimal, infeasible, node_limit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::node_limit: return "node_limit";
  }
  return "?";
}

struct SolveReport {
  SolveStatus status = SolveStatus::infeasible;
  Allocation allocation;
  double objective_cost = std::numeric_limits<double>::quiet_NaN();
  std::vector<ConstraintReport> constraint_values;
  bool feasible = false;
  std::int64_t nodes_explored = 0;
  double relaxation_bound = std::numeric_limits<double>::quiet_NaN();
  bool bound_certified = false;
  double wall_time_seconds = 0.0;
  std::string message;
};

struct SolveOptions {
  std::int64_t node_limit = 2'000'000;
  double integer_tolerance = 1e-6;
  double feasibility_tolerance = 1e-7;
  // Prune with the common cost step when all c_h share one (e.g. 0.5).
  bool use_cost_granularity = true;
};

inline double allocation_cost(const Allocation& alloc, const SurveyFrame& frame) {
  double cost = frame.fixed_cost();
  for (std::size_t h = 0; h < alloc.size(); ++h) cost += frame.stratum(h).unit_cost * static_cast<double>(alloc[h]);
  return cost;
}

namespace detail {

// Constraint set of one problem instance.
struct ConstraintSet {
  std::vector<SeparableConstraint> separable;
  std::optional<DeterminantConstraint> determinant;
  double tolerance = 1e-7;

  bool convex() const {
    if (determinant) return false;
    for (const auto& c : separable)
      if (!c.convex()) return false;
    return true;
  }

  bool feasible(std::span<const double> n) const {
    for (const auto& c : separable)
      if (!(c.value(n) <= tolerance * c.scale())) return false;
    if (determinant && !(determinant->value(n) <= tolerance * determinant->scale())) return false;
    return true;
  }

  std::vector<ConstraintReport> report(std::span<const double> n) const {
    std::vector<ConstraintReport> out;
    for (const auto& c : separable) {
      const double v = c.value(n);
      out.push_back({c.name, v + c.threshold, c.threshold, v, v <= tolerance * c.scale()});
    }
    if (determinant) {
      const double v = determinant->value(n);
      // tau |N|^{1/4} >= r_{p0}
      out.push_back({"det", determinant->quantile() - v, determinant->quantile(), v,
                     v <= tolerance * determinant->scale()});
    }
    return out;
  }
};

inline ConstraintSet build_constraints(const ProblemSpec& spec, const SurveyFrame& frame) {
  spec.validate(frame);
  ConstraintSet set;
  const std::size_t g = frame.g();
  const std::size_t H = frame.num_strata();
  const auto& labels = frame.labels();
  auto m4_diag = [&](std::size_t h, std::size_t j) {
    const auto& s = frame.stratum(h);
    if (!s.fourth_moment_vech)
      throw MissingMomentError(std::string(to_string(spec.formulation)) +
                               " with p0 != 0.5 needs fourth moments (m4_vech) but stratum " + std::to_string(h + 1) +
                               " has none");
    const std::size_t jj = VechVector::index(g, j, j);
    return (*s.fourth_moment_vech)(jj, jj);
  };

  switch (spec.formulation) {
    case Formulation::per_variable_deterministic:
      for (std::size_t j = 0; j < g; ++j) {
        if (std::isinf(spec.v0[j])) continue;
        SeparableConstraint c("var_" + labels[j], frame, spec.v0[j], 0.0);
        for (std::size_t h = 0; h < H; ++h) c.weight_coef[h] = frame.stratum(h).covariance(j, j);
        set.separable.push_back(std::move(c));
      }
      break;
    case Formulation::prekopa_chance: {
      const double e = normal_quantile(spec.p0);
      for (std::size_t j = 0; j < g; ++j) {
        if (std::isinf(spec.v0[j])) continue;
        SeparableConstraint c("prekopa_" + labels[j], frame, spec.v0[j], e);
        for (std::size_t h = 0; h < H; ++h) {
          const double s2 = frame.stratum(h).covariance(j, j);
          c.mean_coef[h] = s2;
          if (e != 0.0) c.var_coef[h] = m4_diag(h, j) - s2 * s2;
        }
        set.separable.push_back(std::move(c));
      }
      break;
    }
    case Formulation::trace_deterministic: {
      SeparableConstraint c("trace", frame, spec.tau, 0.0);
      for (std::size_t h = 0; h < H; ++h) c.weight_coef[h] = trace(frame.stratum(h).covariance);
      set.separable.push_back(std::move(c));
      break;
    }
    case Formulation::trace_chance: {
      const double e = normal_quantile(spec.p0);
      SeparableConstraint c("trace_chance", frame, spec.tau, e);
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t j = 0; j < g; ++j) {
          const double s2 = frame.stratum(h).covariance(j, j);
          c.mean_coef[h] += s2;
          if (e != 0.0) c.var_coef[h] += m4_diag(h, j) - s2 * s2;
        }
      }
      set.separable.push_back(std::move(c));
      break;
    }
    case Formulation::det_chance:
      set.determinant.emplace(frame, spec.tau, spec.p0);
      break;
  }
  return set;
}

// Cheapest point of the box [lo, hi] with optional sum(n) == total. Integral
// when the bounds and total are integral.
inline std::optional<Vector> cheapest_box_point(const Vector& cost, const Vector& lo, const Vector& hi,
                                                std::optional<double> total) {
  Vector x = lo;
  if (!total) {
    for (std::size_t h = 0; h < x.size(); ++h)
      if (cost[h] < 0.0) x[h] = hi[h];
    return x;
  }
  double remaining = *total - std::accumulate(lo.begin(), lo.end(), 0.0);
  const double room = std::accumulate(hi.begin(), hi.end(), 0.0) - std::accumulate(lo.begin(), lo.end(), 0.0);
  if (remaining < -1e-9 || remaining > room + 1e-9) return std::nullopt;
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return cost[a] < cost[b]; });
  for (auto h : order) {
    const double add = std::min(remaining, hi[h] - lo[h]);
    x[h] += add;
    remaining -= add;
    if (remaining <= 0.0) break;
  }
  return x;
}

enum class RelaxStatus { optimal, infeasible, degenerate };

struct RelaxResult {
  RelaxStatus status = RelaxStatus::infeasible;
  Vector x;
  double bound = 0.0;
};

// Log-barrier interior point method for
//   min c'x  s.t.  g_i(x) <= tol_i,  lo <= x <= hi,  [sum x == total]
// with convex g_i. Returns a lower bound valid up to the centering accuracy.
class BarrierRelaxation {
 public:
  BarrierRelaxation(const std::vector<SeparableConstraint>& constraints, Vector cost, double tolerance)
      : cons_(constraints), cost_(std::move(cost)), tol_(tolerance) {}

  RelaxResult solve(const Vector& lo, const Vector& hi, std::optional<double> total) const {
    const std::size_t H = lo.size();
    free_.clear();
    for (std::size_t h = 0; h < H; ++h)
      if (hi[h] > lo[h]) free_.push_back(h);
    lo_ = lo;
    hi_ = hi;
    has_total_ = total.has_value();
    if (has_total_) {
      double fixed = 0.0, lo_free = 0.0, hi_free = 0.0;
      for (std::size_t h = 0; h < H; ++h) {
        if (hi[h] > lo[h]) {
          lo_free += lo[h];
          hi_free += hi[h];
        } else {
          fixed += lo[h];
        }
      }
      const double target = *total - fixed;
      if (target < lo_free - 1e-9 || target > hi_free + 1e-9) return {RelaxStatus::infeasible, {}, 0.0};
      // Sum pinned at a face of the box: the point is unique.
      if (target <= lo_free + 1e-9) return single_point(lo);
      if (target >= hi_free - 1e-9) return single_point(hi);
    }
    if (free_.empty()) return single_point(lo);

    // Strictly interior start.
    Vector x(H);
    double theta = 0.5;
    if (has_total_) {
      double fixed = 0.0, lo_free = 0.0, hi_free = 0.0;
      for (std::size_t h = 0; h < H; ++h) {
        if (hi[h] > lo[h]) {
          lo_free += lo[h];
          hi_free += hi[h];
        } else {
          fixed += lo[h];
        }
      }
      theta = (*total - fixed - lo_free) / (hi_free - lo_free);
    }
    for (std::size_t h = 0; h < H; ++h) x[h] = lo[h] + theta * (hi[h] - lo[h]);

    if (!strictly_feasible(x)) {
      if (!has_total_) {
        // Constraints are nonincreasing: push towards the upper corner first.
        for (double t : {0.9, 0.99, 0.999, 0.9999}) {
          for (std::size_t h = 0; h < H; ++h) x[h] = lo[h] + t * (hi[h] - lo[h]);
          if (strictly_feasible(x)) break;
        }
        if (!strictly_feasible(x)) {
          if (!feasible_at(hi)) return {RelaxStatus::infeasible, {}, 0.0};
        }
      }
      if (!strictly_feasible(x)) {
        const double s = phase_one(x);
        if (s > 1e-9) return {RelaxStatus::infeasible, {}, 0.0};
        if (s > -1e-12 || !strictly_feasible(x)) return {RelaxStatus::degenerate, x, 0.0};
      }
    }
    return phase_two(x);
  }

 private:
  RelaxResult single_point(const Vector& x) const {
    if (!feasible_at(x)) return {RelaxStatus::infeasible, {}, 0.0};
    return {RelaxStatus::optimal, x, dot(cost_, x)};
  }

  static double dot(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  bool feasible_at(const Vector& x) const {
    for (const auto& c : cons_)
      if (!(c.value(x) <= tol_ * c.scale())) return false;
    return true;
  }

  bool in_box(const Vector& x) const {
    for (auto h : free_)
      if (!(x[h] > lo_[h] && x[h] < hi_[h])) return false;
    return true;
  }

  bool strictly_feasible(const Vector& x) const {
    if (!in_box(x)) return false;
    for (const auto& c : cons_)
      if (!(c.value(x) - tol_ * c.scale() < 0.0)) return false;
    return true;
  }

  // Newton direction for the barrier function with objective weight t on
  // c'x (and weight t_s on the phase-one slack when s_phase is set).
  struct Step {
    Vector dx;
    double ds = 0.0;
    double decrement = 0.0;
    bool ok = false;
  };

  // Barrier value; +inf outside the domain. With `slack` set the constraints
  // are g_i/scale_i - s < 0 and the objective is t*s.
  double barrier_value(const Vector& x, double t, const double* slack) const {
    if (!in_box(x)) return std::numeric_limits<double>::infinity();
    double f = 0.0;
    if (slack) {
      f = t * (*slack);
    } else {
      f = t * dot(cost_, x);
    }
    for (const auto& c : cons_) {
      double gv = c.value(x) - tol_ * c.scale();
      if (slack) gv = gv / c.scale() - *slack;
      if (!(gv < 0.0)) return std::numeric_limits<double>::infinity();
      f -= std::log(-gv);
    }
    for (auto h : free_) f -= std::log(x[h] - lo_[h]) + std::log(hi_[h] - x[h]);
    return f;
  }

  Step newton_step(const Vector& x, double t, const double* slack) const {
    const std::size_t f = free_.size();
    const std::size_t nv = f + (slack ? 1 : 0);
    Vector grad(nv, 0.0);
    Matrix hess(nv, nv);
    if (slack) {
      grad[f] = t;
    } else {
      for (std::size_t k = 0; k < f; ++k) grad[k] = t * cost_[free_[k]];
    }
    Vector cg;
    Matrix ch;
    for (const auto& c : cons_) {
      double gv = c.derivatives(x, free_, cg, ch) - tol_ * c.scale();
      if (slack) {
        const double inv = 1.0 / c.scale();
        for (auto& v : cg) v *= inv;
        ch *= inv;
        gv = gv * inv - *slack;
      }
      // gradient of -log(-g(x, s)); in phase one dg/ds = -1
      Vector full(nv, 0.0);
      for (std::size_t k = 0; k < f; ++k) full[k] = cg[k];
      if (slack) full[f] = -1.0;
      const double inv_neg = 1.0 / (-gv);
      for (std::size_t i = 0; i < nv; ++i) grad[i] += full[i] * inv_neg;
      for (std::size_t i = 0; i < nv; ++i)
        for (std::size_t j = 0; j < nv; ++j) hess(i, j) += full[i] * full[j] * inv_neg * inv_neg;
      for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < f; ++j) hess(i, j) += ch(i, j) * inv_neg;
    }
    for (std::size_t k = 0; k < f; ++k) {
      const auto h = free_[k];
      const double a = x[h] - lo_[h], b = hi_[h] - x[h];
      grad[k] += -1.0 / a + 1.0 / b;
      hess(k, k) += 1.0 / (a * a) + 1.0 / (b * b);
    }

    Step st;
    Vector sol;
    try {
      if (has_total_) {
        Matrix kkt(nv + 1, nv + 1);
        Vector rhs(nv + 1, 0.0);
        for (std::size_t i = 0; i < nv; ++i) {
          for (std::size_t j = 0; j < nv; ++j) kkt(i, j) = hess(i, j);
          rhs[i] = -grad[i];
        }
        for (std::size_t k = 0; k < f; ++k) kkt(k, nv) = kkt(nv, k) = 1.0;
        sol = solve_linear(kkt, rhs);
        sol.resize(nv);
      } else {
        Vector rhs(nv);
        for (std::size_t i = 0; i < nv; ++i) rhs[i] = -grad[i];
        sol = solve_linear(hess, rhs);
      }
    } catch (const NumericalError&) {
      return st;
    }
    double dec = 0.0;
    for (std::size_t i = 0; i < nv; ++i) dec -= grad[i] * sol[i];
    st.dx.assign(x.size(), 0.0);
    for (std::size_t k = 0; k < f; ++k) st.dx[free_[k]] = sol[k];
    if (slack) st.ds = sol[f];
    st.decrement = dec;
    st.ok = std::isfinite(dec);
    return st;
  }

  // Damped Newton centering; returns false if it could not make progress.
  bool center(Vector& x, double t, double* slack, int max_iter = 100) const {
    for (int it = 0; it < max_iter; ++it) {
      const Step st = newton_step(x, t, slack);
      if (!st.ok) return false;
      if (st.decrement / 2.0 <= 1e-11) return true;
      const double f0 = barrier_value(x, t, slack);
      double alpha = 1.0;
      Vector xn(x.size());
      double sn = 0.0;
      bool moved = false;
      for (int ls = 0; ls < 80; ++ls) {
        for (std::size_t i = 0; i < x.size(); ++i) xn[i] = x[i] + alpha * st.dx[i];
        if (slack) sn = *slack + alpha * st.ds;
        const double f1 = barrier_value(xn, t, slack ? &sn : nullptr);
        if (f1 <= f0 - 0.25 * alpha * st.decrement) {
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) return st.decrement / 2.0 <= 1e-7;
      x = xn;
      if (slack) *slack = sn;
    }
    return true;
  }

  // Minimises the largest scaled violation; returns it (negative = strictly
  // feasible x found).
  double phase_one(Vector& x) const {
    double s = -std::numeric_limits<double>::infinity();
    for (const auto& c : cons_) s = std::max(s, (c.value(x) - tol_ * c.scale()) / c.scale());
    s += std::max(1.0, std::abs(s));
    double t = 1.0;
    const double m = static_cast<double>(cons_.size() + 2 * free_.size());
    for (int outer = 0; outer < 60; ++outer) {
      if (!center(x, t, &s)) break;
      double worst = -std::numeric_limits<double>::infinity();
      for (const auto& c : cons_) worst = std::max(worst, (c.value(x) - tol_ * c.scale()) / c.scale());
      if (worst < -1e-10) return worst;
      if (m / t < 1e-12) return worst;
      t *= 10.0;
    }
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& c : cons_) worst = std::max(worst, (c.value(x) - tol_ * c.scale()) / c.scale());
    return worst;
  }

  RelaxResult phase_two(Vector x) const {
    const double m = static_cast<double>(cons_.size() + 2 * free_.size());
    const auto box = cheapest_box_point(cost_, lo_, hi_,
                                        has_total_ ? std::optional<double>(std::accumulate(x.begin(), x.end(), 0.0))
                                                   : std::nullopt);
    const double trivial = box ? dot(cost_, *box) : 0.0;
    double t = m / std::max(1e-9, dot(cost_, x) - trivial);
    for (int outer = 0; outer < 80; ++outer) {
      if (!center(x, t, nullptr)) break;
      const double obj = dot(cost_, x);
      if (m / t <= 1e-10 * std::max(1.0, std::abs(obj))) break;
      t *= 20.0;
    }
    const double obj = dot(cost_, x);
    const double gap = m / t;
    RelaxResult r;
    r.status = RelaxStatus::optimal;
    r.x = x;
    // The barrier bound is exact only at the central point; keep a margin.
    r.bound = std::max(trivial, obj - gap - 1e-9 * std::max(1.0, std::abs(obj)));
    return r;
  }

  const std::vector<SeparableConstraint>& cons_;
  Vector cost_;
  double tol_;
  mutable std::vector<std::size_t> free_;
  mutable Vector lo_, hi_;
  mutable bool has_total_ = false;
};

// Largest step q such that every cost is an integer multiple of q (q = 1/k,
// k <= 1000), or 0 when there is none.
inline double cost_granularity(const Vector& cost) {
  for (int k = 1; k <= 1000; ++k) {
    bool ok = true;
    for (double c : cost) {
      const double scaled = c * k;
      if (std::abs(scaled - std::round(scaled)) > 1e-9 * std::max(1.0, std::abs(scaled))) {
        ok = false;
        break;
      }
    }
    if (ok) {
      // gcd of the integer costs refines the step further
      long long g = 0;
      for (double c : cost) g = std::gcd(g, std::llabs(std::llround(c * k)));
      return g > 0 ? static_cast<double>(g) / k : 0.0;
    }
  }
  return 0.0;
}

struct Node {
  Vector lo, hi;
  double bound = 0.0;
  Vector x;
  RelaxStatus status = RelaxStatus::optimal;
  std::int64_t id = 0;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.id > b.id;
  }
};

}  // namespace detail

/// Evaluates every constraint of `spec` at `alloc` without solving.
inline SolveReport check_allocation(const Allocation& alloc, const ProblemSpec& spec, const SurveyFrame& frame,
                                    const SolveOptions& options = {}) {
  validate_allocation(alloc, frame);
  auto set = detail::build_constraints(spec, frame);
  set.tolerance = options.feasibility_tolerance;
  if (spec.total_n && alloc.total() != *spec.total_n)
    throw ValidationError("allocation sums to " + std::to_string(alloc.total()) + " but total-n is " +
                          std::to_string(*spec.total_n));
  Vector x(alloc.n.begin(), alloc.n.end());
  SolveReport r;
  r.allocation = alloc;
  r.objective_cost = allocation_cost(alloc, frame);
  r.constraint_values = set.report(x);
  r.feasible = std::all_of(r.constraint_values.begin(), r.constraint_values.end(),
                           [](const auto& c) { return c.satisfied; });
  r.status = r.feasible ? SolveStatus::optimal : SolveStatus::infeasible;
  r.message = r.feasible ? "allocation satisfies every constraint" : "allocation violates at least one constraint";
  return r;
}

/// Exhaustive scan of the integer box; exact optimum, lexicographically
/// first among ties. Requires prod(N_h - 1) <= 1e6.
inline SolveReport enumerate_oracle(const ProblemSpec& spec, const SurveyFrame& frame,
                                    const SolveOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  auto set = detail::build_constraints(spec, frame);
  set.tolerance = options.feasibility_tolerance;
  const std::size_t H = frame.num_strata();
  double points = 1.0;
  for (const auto& s : frame.strata()) points *= static_cast<double>(s.population_size - 1);
  if (points > 1e6) throw ValidationError("enumeration oracle: box has more than 1e6 integer points");

  Vector x(H, 2.0);
  Vector cost(H);
  for (std::size_t h = 0; h < H; ++h) cost[h] = frame.stratum(h).unit_cost;
  SolveReport r;
  double best = std::numeric_limits<double>::infinity();
  Vector best_x;
  while (true) {
    ++r.nodes_explored;
    bool sum_ok = true;
    if (spec.total_n) sum_ok = std::llround(std::accumulate(x.begin(), x.end(), 0.0)) == *spec.total_n;
    if (sum_ok) {
      double c = frame.fixed_cost();
      for (std::size_t h = 0; h < H; ++h) c += cost[h] * x[h];
      if (c < best && set.feasible(x)) {
        best = c;
        best_x = x;
      }
    }
    std::size_t h = H;
    while (h-- > 0) {
      if (x[h] < static_cast<double>(frame.stratum(h).population_size)) {
        x[h] += 1.0;
        break;
      }
      x[h] = 2.0;
    }
    if (h == static_cast<std::size_t>(-1)) break;
  }
  if (!best_x.empty()) {
    r.allocation.n.assign(best_x.begin(), best_x.end());
    for (std::size_t i = 0; i < H; ++i) r.allocation.n[i] = std::llround(best_x[i]);
    r.objective_cost = allocation_cost(r.allocation, frame);
    r.constraint_values = set.report(best_x);
    r.feasible = true;
    r.status = SolveStatus::optimal;
    r.relaxation_bound = r.objective_cost;
    r.bound_certified = true;
    r.message = "exhaustive enumeration";
  } else {
    r.status = SolveStatus::infeasible;
    r.message = "no integer point satisfies the constraints (exhaustive enumeration)";
  }
  r.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Minimises c'n + c0 over integers 2 <= n_h <= N_h [, sum n = total_n]
/// subject to the formulation's constraints, by best-bound branch and bound.
inline SolveReport solve(const ProblemSpec& spec, const SurveyFrame& frame, const SolveOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  auto set = detail::build_constraints(spec, frame);
  set.tolerance = options.feasibility_tolerance;
  const std::size_t H = frame.num_strata();
  Vector cost(H), lo(H, 2.0), hi(H);
  for (std::size_t h = 0; h < H; ++h) {
    cost[h] = frame.stratum(h).unit_cost;
    hi[h] = static_cast<double>(frame.stratum(h).population_size);
  }
  const std::optional<double> total =
      spec.total_n ? std::optional<double>(static_cast<double>(*spec.total_n)) : std::nullopt;
  const bool convex = set.convex();
  const detail::BarrierRelaxation barrier(set.separable, cost, options.feasibility_tolerance);

  // Sensitivity for branching ties: W_h^2 max_j s_hjj / n_h^2.
  Vector sensitivity_base(H);
  for (std::size_t h = 0; h < H; ++h) {
    double smax = 0.0;
    for (std::size_t j = 0; j < frame.g(); ++j) smax = std::max(smax, frame.stratum(h).covariance(j, j));
    sensitivity_base[h] = frame.relative_size(h) * frame.relative_size(h) * smax;
  }

  auto dot = [&](const Vector& x) {
    double s = 0.0;
    for (std::size_t h = 0; h < H; ++h) s += cost[h] * x[h];
    return s;
  };
  auto sum_ok = [&](const Vector& x) {
    return !total || std::llround(std::accumulate(x.begin(), x.end(), 0.0)) == std::llround(*total);
  };

  // Node relaxation: barrier for convex problems, cheapest box point otherwise.
  auto relax = [&](detail::Node& node) -> bool {
    if (convex) {
      const auto rr = barrier.solve(node.lo, node.hi, total);
      node.status = rr.status;
      if (rr.status == detail::RelaxStatus::infeasible) return false;
      if (rr.status == detail::RelaxStatus::degenerate) {
        const auto box = detail::cheapest_box_point(cost, node.lo, node.hi, total);
        if (!box) return false;
        node.bound = dot(*box);
        node.x = rr.x;
        return true;
      }
      node.bound = rr.bound;
      node.x = rr.x;
      return true;
    }
    const auto box = detail::cheapest_box_point(cost, node.lo, node.hi, total);
    if (!box) return false;
    if (set.determinant && set.determinant->nondecreasing() && set.separable.empty() && !total) {
      // nondecreasing constraint: the lower corner is the most favourable point
      if (!set.feasible(node.lo)) return false;
    }
    node.status = detail::RelaxStatus::degenerate;
    node.bound = dot(*box);
    node.x = *box;
    return true;
  };

  SolveReport report;
  double incumbent = std::numeric_limits<double>::infinity();
  Vector incumbent_x;
  const double step = options.use_cost_granularity ? detail::cost_granularity(cost) : 0.0;

  auto improve_locally = [&](Vector x, const Vector& nlo, const Vector& nhi) {
    // drop single units, then swap one unit towards a cheaper stratum
    bool changed = true;
    while (changed) {
      changed = false;
      if (!total) {
        for (std::size_t h = 0; h < H; ++h) {
          while (x[h] - 1.0 >= nlo[h]) {
            x[h] -= 1.0;
            if (set.feasible(x)) {
              changed = true;
            } else {
              x[h] += 1.0;
              break;
            }
          }
        }
      }
      for (std::size_t h = 0; h < H && !changed; ++h) {
        if (x[h] - 1.0 < nlo[h]) continue;
        for (std::size_t k = 0; k < H && !changed; ++k) {
          if (k == h || cost[k] >= cost[h] || x[k] + 1.0 > nhi[k]) continue;
          x[h] -= 1.0;
          x[k] += 1.0;
          if (set.feasible(x)) {
            changed = true;
          } else {
            x[h] += 1.0;
            x[k] -= 1.0;
          }
        }
      }
    }
    return x;
  };

  auto offer = [&](const Vector& x) {
    if (!sum_ok(x) || !set.feasible(x)) return;
    const double c = dot(x);
    if (c < incumbent - 1e-12 * std::max(1.0, std::abs(c))) {
      incumbent = c;
      incumbent_x = x;
    }
  };

  auto round_heuristic = [&](const detail::Node& node) {
    Vector x(H);
    if (!total) {
      for (std::size_t h = 0; h < H; ++h)
        x[h] = std::clamp(std::ceil(node.x[h] - options.integer_tolerance), node.lo[h], node.hi[h]);
    } else {
      // floor, then hand out the remaining units by largest fractional part
      double rest = *total;
      std::vector<std::pair<double, std::size_t>> frac;
      for (std::size_t h = 0; h < H; ++h) {
        x[h] = std::clamp(std::floor(node.x[h] + options.integer_tolerance), node.lo[h], node.hi[h]);
        rest -= x[h];
        frac.push_back({node.x[h] - x[h], h});
      }
      std::stable_sort(frac.begin(), frac.end(), [](auto a, auto b) { return a.first > b.first; });
      for (auto& [f, h] : frac) {
        if (rest <= 0.0) break;
        const double add = std::min(rest, node.hi[h] - x[h]);
        x[h] += add;
        rest -= add;
      }
      if (rest != 0.0) return;
    }
    if (!set.feasible(x)) return;
    offer(improve_locally(x, node.lo, node.hi));
  };

  auto prunable = [&](double bound) {
    if (!std::isfinite(incumbent)) return false;
    const double slack = 1e-9 * std::max(1.0, std::abs(incumbent));
    if (step > 0.0) return bound > incumbent - step + slack;
    return bound >= incumbent - slack;
  };

  std::priority_queue<detail::Node, std::vector<detail::Node>, detail::NodeOrder> open;
  std::int64_t next_id = 0;
  detail::Node root{lo, hi, 0.0, {}, detail::RelaxStatus::optimal, next_id++};
  if (!relax(root)) {
    report.status = SolveStatus::infeasible;
    report.feasible = false;
    report.bound_certified = convex;
    report.nodes_explored = 1;
    report.message = convex ? "continuous relaxation is infeasible" : "no feasible point in the box";
    report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  }
  report.relaxation_bound = root.bound + frame.fixed_cost();
  if (root.status == detail::RelaxStatus::optimal) round_heuristic(root);
  open.push(std::move(root));

  std::int64_t nodes = 0;
  bool hit_limit = false;
  while (!open.empty()) {
    detail::Node node = open.top();
    open.pop();
    if (prunable(node.bound)) continue;
    if (++nodes > options.node_limit) {
      hit_limit = true;
      // best-first order: the open node with the smallest bound bounds everything left
      report.relaxation_bound = std::max(report.relaxation_bound, node.bound + frame.fixed_cost());
      break;
    }

    // Pick the branching variable.
    std::optional<std::size_t> branch;
    double branch_at = 0.0;
    double best_score = -1.0, best_sens = -1.0;
    for (std::size_t h = 0; h < H; ++h) {
      if (node.hi[h] <= node.lo[h]) continue;
      const double xv = node.x[h];
      const double frac = xv - std::floor(xv);
      if (frac <= options.integer_tolerance || frac >= 1.0 - options.integer_tolerance) continue;
      const double score = 0.5 - std::abs(frac - 0.5);
      const double sens = sensitivity_base[h] / (xv * xv);
      if (score > best_score + 1e-9 || (std::abs(score - best_score) <= 1e-9 && sens > best_sens)) {
        best_score = score;
        best_sens = sens;
        branch = h;
        branch_at = std::floor(xv);
      }
    }

    if (!branch) {
      // Integral relaxation point.
      Vector xi(H);
      for (std::size_t h = 0; h < H; ++h) xi[h] = std::round(node.x[h]);
      offer(xi);
      if (node.status == detail::RelaxStatus::optimal && sum_ok(xi) && set.feasible(xi)) continue;
      // Bound not attained (degenerate or nonconvex node): split the widest range.
      double width = 0.0;
      for (std::size_t h = 0; h < H; ++h)
        if (node.hi[h] - node.lo[h] > width) {
          width = node.hi[h] - node.lo[h];
          branch = h;
        }
      if (!branch) continue;  // single point, already offered
      branch_at = std::floor(0.5 * (node.lo[*branch] + node.hi[*branch]));
    }

    const std::size_t b = *branch;
    for (int side = 0; side < 2; ++side) {
      detail::Node child{node.lo, node.hi, 0.0, {}, detail::RelaxStatus::optimal, next_id++};
      if (side == 0) {
        child.hi[b] = branch_at;
      } else {
        child.lo[b] = branch_at + 1.0;
      }
      if (child.lo[b] > child.hi[b]) continue;
      if (!relax(child)) continue;
      if (prunable(child.bound)) continue;
      if (child.status == detail::RelaxStatus::optimal && (nodes % 16 == 0 || !std::isfinite(incumbent)))
        round_heuristic(child);
      open.push(std::move(child));
    }
  }

  report.nodes_explored = nodes;
  report.bound_certified = convex && !hit_limit;
  if (!incumbent_x.empty()) {
    report.allocation.n.resize(H);
    for (std::size_t h = 0; h < H; ++h) report.allocation.n[h] = std::llround(incumbent_x[h]);
    report.objective_cost = allocation_cost(report.allocation, frame);
    report.constraint_values = set.report(incumbent_x);
    report.feasible = true;
    report.status = hit_limit ? SolveStatus::node_limit : SolveStatus::optimal;
    report.message = hit_limit ? "node limit reached; best allocation found so far" : "optimal";
    report.relaxation_bound = std::min(report.relaxation_bound, report.objective_cost);
  } else {
    report.status = hit_limit ? SolveStatus::node_limit : SolveStatus::infeasible;
    report.feasible = false;
    report.message = hit_limit ? "node limit reached without a feasible allocation"
                               : "branch and bound exhausted: no integer allocation is feasible";
  }
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace stratalloc
