#pragma once

// Stratified-mean covariance estimator and the asymptotic moments of its
// half-vectorisation, evaluated with whatever plug-in statistics the frame
// carries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stratalloc/errors.hpp"
#include "stratalloc/matcalc.hpp"
#include "stratalloc/strata_model.hpp"

namespace stratalloc {

/// Sample size per stratum (the decision variables).
struct Allocation {
  std::vector<std::int64_t> n;

  std::size_t size() const noexcept { return n.size(); }
  std::int64_t operator[](std::size_t h) const { return n[h]; }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : n) t += v;
    return t;
  }
  friend bool operator==(const Allocation&, const Allocation&) = default;
};

/// Census allocation n_h = N_h.
inline Allocation census_allocation(const SurveyFrame& frame) {
  Allocation a;
  for (const auto& s : frame.strata()) a.n.push_back(s.population_size);
  return a;
}

/// Enforces 2 <= n_h <= N_h and H matching the frame.
inline void validate_allocation(const Allocation& alloc, const SurveyFrame& frame) {
  if (alloc.size() != frame.num_strata())
    throw ValidationError("allocation has " + std::to_string(alloc.size()) + " entries but the frame has " +
                          std::to_string(frame.num_strata()) + " strata");
  for (std::size_t h = 0; h < alloc.size(); ++h) {
    const auto nh = alloc[h];
    const auto Nh = frame.stratum(h).population_size;
    if (nh < 2 || nh > Nh)
      throw ValidationError("stratum " + std::to_string(h + 1) + ": n_h = " + std::to_string(nh) +
                            " outside [2, N_h = " + std::to_string(Nh) + "]");
  }
}

/// W_h^2/n_h - W_h/N, written as W_h (N_h - n_h) / (N n_h) so that it is
/// exactly zero at n_h = N_h and never negative for n_h <= N_h.
inline double stratum_weight(double relative_size, double population_total, double stratum_size, double n) {
  return relative_size * (stratum_size - n) / (population_total * n);
}

inline double weight(std::size_t h, const Allocation& alloc, const SurveyFrame& frame) {
  if (h >= frame.num_strata() || h >= alloc.size()) throw std::out_of_range("stratum index out of range");
  const auto nh = alloc[h];
  const auto Nh = frame.stratum(h).population_size;
  if (nh < 1 || nh > Nh)
    throw ValidationError("stratum " + std::to_string(h + 1) + ": n_h outside [1, N_h]");
  const double w = stratum_weight(frame.relative_size(h), static_cast<double>(frame.population_total()),
                                  static_cast<double>(Nh), static_cast<double>(nh));
  if (w < 0.0) throw NumericalError("negative stratum weight");
  return w;
}

/// sum_h (W_h^2/n_h - W_h/N) s_h. Diagonal j is Var-hat of the stratified mean.
inline Matrix cov_hat_stratified(const Allocation& alloc, const SurveyFrame& frame) {
  validate_allocation(alloc, frame);
  Matrix out(frame.g(), frame.g());
  for (std::size_t h = 0; h < frame.num_strata(); ++h)
    out += weight(h, alloc, frame) * frame.stratum(h).covariance;
  return out;
}

/// E(vech Cov-hat) = sum_h w_h n_h/(n_h - 1) vech s_h.
inline VechVector vech_mean(const Allocation& alloc, const SurveyFrame& frame) {
  validate_allocation(alloc, frame);
  Vector acc(VechVector::length_for_side(frame.g()), 0.0);
  for (std::size_t h = 0; h < frame.num_strata(); ++h) {
    const double nh = static_cast<double>(alloc[h]);
    const double f = weight(h, alloc, frame) * nh / (nh - 1.0);
    const Vector vs = vech(frame.stratum(h).covariance).values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += f * vs[k];
  }
  return VechVector(std::move(acc));
}

namespace detail {

inline void require_m4_vech(const SurveyFrame& frame, const char* what) {
  for (std::size_t h = 0; h < frame.num_strata(); ++h)
    if (!frame.stratum(h).fourth_moment_vech)
      throw MissingMomentError(std::string(what) + " needs fourth moments (m4_vech) but stratum " +
                               std::to_string(h + 1) + " has none");
}

}  // namespace detail

/// Cov(vech Cov-hat) = sum_h w_h^2 n_h/(n_h - 1)^2 (m4_h - vech s_h vech' s_h).
inline Matrix vech_cov(const Allocation& alloc, const SurveyFrame& frame) {
  validate_allocation(alloc, frame);
  detail::require_m4_vech(frame, "Cov(vech Cov-hat)");
  const std::size_t k = VechVector::length_for_side(frame.g());
  Matrix out(k, k);
  for (std::size_t h = 0; h < frame.num_strata(); ++h) {
    const auto& s = frame.stratum(h);
    const double nh = static_cast<double>(alloc[h]);
    const double w = weight(h, alloc, frame);
    const Vector vs = vech(s.covariance).values();
    out += (w * w * nh / ((nh - 1.0) * (nh - 1.0))) * (*s.fourth_moment_vech - outer(vs, vs));
  }
  return out;
}

struct TraceMoments {
  double trace_mean = 0.0;
  std::optional<double> trace_var;  // absent in mean-only mode
};

enum class TraceMomentsMode { full, mean_only };

/// Mean and variance of tr Cov-hat as sums over characteristics of the
/// per-characteristic (diagonal) terms.
inline TraceMoments trace_moments(const Allocation& alloc, const SurveyFrame& frame,
                                  TraceMomentsMode mode = TraceMomentsMode::full) {
  validate_allocation(alloc, frame);
  if (mode == TraceMomentsMode::full) detail::require_m4_vech(frame, "Var(tr Cov-hat)");
  const std::size_t g = frame.g();
  TraceMoments out;
  double var = 0.0;
  for (std::size_t h = 0; h < frame.num_strata(); ++h) {
    const auto& s = frame.stratum(h);
    const double nh = static_cast<double>(alloc[h]);
    const double w = weight(h, alloc, frame);
    for (std::size_t j = 0; j < g; ++j) {
      const double s2 = s.covariance(j, j);
      out.trace_mean += w * nh / (nh - 1.0) * s2;
      if (mode == TraceMomentsMode::full) {
        const std::size_t jj = VechVector::index(g, j, j);
        const double m4 = (*s.fourth_moment_vech)(jj, jj);
        var += w * w * nh / ((nh - 1.0) * (nh - 1.0)) * (m4 - s2 * s2);
      }
    }
  }
  if (mode == TraceMomentsMode::full) out.trace_var = var;
  return out;
}

struct MomentReport {
  Allocation allocation;                 // decision sample sizes
  std::vector<std::optional<std::int64_t>> pilot_sizes;  // fixed pilot sizes behind m4
  Matrix cov_hat;
  VechVector mean_vech;
  std::optional<Matrix> cov_vech;
  double trace_mean = 0.0;
  std::optional<double> trace_var;
};

/// All estimator outputs for one allocation. Fourth-moment terms are filled
/// only when every stratum carries m4_vech.
inline MomentReport moment_report(const Allocation& alloc, const SurveyFrame& frame) {
  MomentReport r;
  r.allocation = alloc;
  r.cov_hat = cov_hat_stratified(alloc, frame);
  r.mean_vech = vech_mean(alloc, frame);
  const bool full = frame.has_fourth_moments_vech();
  if (full) r.cov_vech = vech_cov(alloc, frame);
  const auto tm = trace_moments(alloc, frame, full ? TraceMomentsMode::full : TraceMomentsMode::mean_only);
  r.trace_mean = tm.trace_mean;
  r.trace_var = tm.trace_var;
  for (const auto& s : frame.strata()) r.pilot_sizes.push_back(s.pilot_sample_size);
  return r;
}

/// Finite-population value of the Hajek-type ratio
///   max over n-subsets of sum [(y_i - Ybar)^2 - S^2]^2  /  N [m4 - (S^2)^2]
/// per stratum and characteristic. The max of a sum of fixed nonnegative
/// terms over n-subsets is the sum of the n largest terms.
struct HajekReport {
  Matrix ratio;                  // H x G
  std::vector<std::vector<bool>> degenerate;  // m4 == (S^2)^2
  Vector worst;                  // per characteristic, max over strata
};

inline double hajek_ratio(std::span<const double> values, std::int64_t n, bool* degenerate = nullptr) {
  const std::size_t N = values.size();
  if (n < 1 || static_cast<std::size_t>(n) > N) throw ValidationError("Hajek diagnostic: sample size outside [1, N]");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(N);
  double s2 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d2 = (v - mean) * (v - mean);
    s2 += d2;
    m4 += d2 * d2;
  }
  s2 /= static_cast<double>(N);
  m4 /= static_cast<double>(N);
  const double denom = static_cast<double>(N) * (m4 - s2 * s2);
  if (!(denom > 1e-12 * static_cast<double>(N) * m4) || m4 == 0.0) {
    if (degenerate) *degenerate = true;
    return std::numeric_limits<double>::infinity();
  }
  if (degenerate) *degenerate = false;
  std::vector<double> terms(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double e = (values[i] - mean) * (values[i] - mean) - s2;
    terms[i] = e * e;
  }
  std::nth_element(terms.begin(), terms.begin() + (n - 1), terms.end(), std::greater<>());
  double num = 0.0;
  for (std::int64_t i = 0; i < n; ++i) num += terms[static_cast<std::size_t>(i)];
  return num / denom;
}

inline HajekReport hajek_diagnostic(const std::vector<RawStratumData>& population,
                                    const std::vector<std::int64_t>& sample_sizes) {
  if (population.empty()) throw ValidationError("Hajek diagnostic: empty population");
  if (population.size() != sample_sizes.size())
    throw ValidationError("Hajek diagnostic: one sample size per stratum required");
  const std::size_t g = population.front().g();
  HajekReport r{Matrix(population.size(), g), std::vector<std::vector<bool>>(population.size(), std::vector<bool>(g)),
                Vector(g, 0.0)};
  Vector column;
  for (std::size_t h = 0; h < population.size(); ++h) {
    const Matrix& y = population[h].observations;
    if (y.cols() != g) throw ValidationError("Hajek diagnostic: strata differ in G");
    column.resize(y.rows());
    for (std::size_t j = 0; j < g; ++j) {
      for (std::size_t i = 0; i < y.rows(); ++i) column[i] = y(i, j);
      bool deg = false;
      r.ratio(h, j) = hajek_ratio(column, sample_sizes[h], &deg);
      r.degenerate[h][j] = deg;
      r.worst[j] = std::max(r.worst[j], r.ratio(h, j));
    }
  }
  return r;
}

}  // namespace stratalloc
