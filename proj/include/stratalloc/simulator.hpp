#pragma once

// Synthetic finite populations and Monte Carlo checks of the normal
// approximation for vech Cov-hat and of chance-constraint coverage.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <tuple>
#include <type_traits>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "stratalloc/distributions.hpp"
#include "stratalloc/errors.hpp"
#include "stratalloc/estimators.hpp"
#include "stratalloc/matcalc.hpp"
#include "stratalloc/solvers.hpp"
#include "stratalloc/strata_model.hpp"

namespace stratalloc {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). One
/// instance is a stream: key = seed, counter high words = stream id.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(0xD2511F53u) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(0xCD9E8D57u) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

  Philox4x32(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_lo_(static_cast<std::uint32_t>(stream)),
        stream_hi_(static_cast<std::uint32_t>(stream >> 32)) {}

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      buf_ = block({static_cast<std::uint32_t>(index_), static_cast<std::uint32_t>(index_ >> 32), stream_lo_, stream_hi_},
                   key_);
      ++index_;
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Standard normal by Box-Muller; the second variate is kept.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, m), unbiased by rejection.
  std::uint64_t below(std::uint64_t m) {
    if (m == 0) throw ValidationError("below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % m;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % m;
  }

 private:
  Key key_;
  std::uint32_t stream_lo_, stream_hi_;
  std::uint64_t index_ = 0;
  Counter buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stream id for (purpose, replication, stratum); independent of thread layout.
inline std::uint64_t substream(std::uint64_t purpose, std::uint64_t replication, std::uint64_t stratum) {
  return (purpose << 60) ^ (replication << 20) ^ stratum;
}

// ---------------------------------------------------------------------------
// Population generation
// ---------------------------------------------------------------------------

struct GaussianLaw {
  Vector mean;
  Matrix covariance;
};

/// exp of a Gaussian with the given log-scale mean and covariance, componentwise.
struct LogNormalLaw {
  Vector log_mean;
  Matrix log_covariance;
};

/// Finite-support law; each value is a G-vector. Populations get the exact
/// proportions (largest remainders), in random order.
struct DiscreteLaw {
  std::vector<Vector> values;
  Vector weights;
};

using StratumLaw = std::variant<GaussianLaw, LogNormalLaw, DiscreteLaw>;

struct StratumGenerator {
  std::int64_t size = 0;
  StratumLaw law;
};

inline std::size_t law_dimension(const StratumLaw& law) {
  return std::visit(
      [](const auto& l) -> std::size_t {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, GaussianLaw>) return l.mean.size();
        if constexpr (std::is_same_v<T, LogNormalLaw>) return l.log_mean.size();
        if constexpr (std::is_same_v<T, DiscreteLaw>) return l.values.empty() ? 0 : l.values.front().size();
      },
      law);
}

struct SyntheticPopulationSpec {
  std::vector<StratumGenerator> strata;
  std::uint64_t seed = 0;

  std::size_t g() const { return strata.empty() ? 0 : law_dimension(strata.front().law); }

  void validate() const {
    if (strata.empty()) throw ValidationError("synthetic population needs at least one stratum");
    const std::size_t dim = g();
    if (dim == 0) throw ValidationError("synthetic population: G must be positive");
    for (std::size_t h = 0; h < strata.size(); ++h) {
      const std::string where = "synthetic stratum " + std::to_string(h + 1);
      if (strata[h].size < 4) throw ValidationError(where + ": N_h must be at least 4");
      if (law_dimension(strata[h].law) != dim) throw ValidationError(where + ": dimension differs from stratum 1");
      std::visit(
          [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, DiscreteLaw>) {
              if (l.values.size() != l.weights.size() || l.values.empty())
                throw ValidationError(where + ": one weight per support point required");
              double total = 0.0;
              for (std::size_t k = 0; k < l.values.size(); ++k) {
                if (l.values[k].size() != dim) throw ValidationError(where + ": support point of wrong dimension");
                if (!(l.weights[k] >= 0.0)) throw ValidationError(where + ": negative weight");
                total += l.weights[k];
              }
              if (!(total > 0.0)) throw ValidationError(where + ": weights sum to zero");
            } else {
              const Matrix& c = [&]() -> const Matrix& {
                if constexpr (std::is_same_v<T, GaussianLaw>) return l.covariance;
                else return l.log_covariance;
              }();
              if (c.rows() != dim || c.cols() != dim) throw ValidationError(where + ": covariance must be G x G");
              if (!c.is_symmetric() || !cholesky(c).ok)
                throw ValidationError(where + ": covariance must be symmetric positive definite");
            }
          },
          strata[h].law);
    }
  }
};

namespace detail {

inline Matrix draw_gaussian(std::int64_t n, const Vector& mean, const Matrix& cov, Philox4x32& rng) {
  const std::size_t g = mean.size();
  const Matrix l = cholesky(cov).lower;
  Matrix y(static_cast<std::size_t>(n), g);
  Vector z(g);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (auto& v : z) v = rng.normal();
    for (std::size_t a = 0; a < g; ++a) {
      double acc = mean[a];
      for (std::size_t b = 0; b <= a; ++b) acc += l(a, b) * z[b];
      y(i, a) = acc;
    }
  }
  return y;
}

inline Matrix draw_discrete(std::int64_t n, const DiscreteLaw& law, Philox4x32& rng) {
  const double total = std::accumulate(law.weights.begin(), law.weights.end(), 0.0);
  const std::size_t k = law.values.size();
  std::vector<std::int64_t> count(k);
  std::vector<std::pair<double, std::size_t>> rem;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(n) * law.weights[i] / total;
    count[i] = static_cast<std::int64_t>(std::floor(exact));
    assigned += count[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++count[rem[i % k].second];
  std::vector<std::size_t> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < k; ++i) labels.insert(labels.end(), static_cast<std::size_t>(count[i]), i);
  for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
  const std::size_t g = law.values.front().size();
  Matrix y(labels.size(), g);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < g; ++j) y(i, j) = law.values[labels[i]][j];
  return y;
}

}  // namespace detail

/// One N_h x G data matrix per stratum; a pure function of the spec and seed.
inline std::vector<RawStratumData> generate_population(const SyntheticPopulationSpec& spec) {
  spec.validate();
  std::vector<RawStratumData> out;
  for (std::size_t h = 0; h < spec.strata.size(); ++h) {
    Philox4x32 rng(spec.seed, substream(1, 0, h));
    const auto& gen = spec.strata[h];
    Matrix y = std::visit(
        [&](const auto& l) -> Matrix {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, GaussianLaw>) {
            return detail::draw_gaussian(gen.size, l.mean, l.covariance, rng);
          } else if constexpr (std::is_same_v<T, LogNormalLaw>) {
            Matrix m = detail::draw_gaussian(gen.size, l.log_mean, l.log_covariance, rng);
            for (std::size_t i = 0; i < m.rows(); ++i)
              for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = std::exp(m(i, j));
            return m;
          } else {
            return detail::draw_discrete(gen.size, l, rng);
          }
        },
        gen.law);
    out.push_back({std::move(y)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Uniform n-subset of {0..N-1} by Floyd's algorithm, returned sorted.
inline std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, Philox4x32& rng) {
  if (n > population) throw ValidationError("cannot draw " + std::to_string(n) + " of " + std::to_string(population));
  std::vector<std::size_t> out;
  out.reserve(n);
  if (n == population) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(2 * n);
  for (std::size_t j = population - n; j < population; ++j) {
    const std::size_t t = static_cast<std::size_t>(rng.below(j + 1));
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

inline void check_sample_sizes(const std::vector<RawStratumData>& population, const Allocation& alloc) {
  if (alloc.size() != population.size())
    throw ValidationError("allocation has " + std::to_string(alloc.size()) + " entries but the population has " +
                          std::to_string(population.size()) + " strata");
  for (std::size_t h = 0; h < alloc.size(); ++h) {
    if (alloc[h] < 2)
      throw ValidationError("stratum " + std::to_string(h + 1) + ": n_h = " + std::to_string(alloc[h]) +
                            " (at least 2 required)");
    if (static_cast<std::size_t>(alloc[h]) > population[h].rows())
      throw ValidationError("stratum " + std::to_string(h + 1) + ": n_h = " + std::to_string(alloc[h]) +
                            " exceeds N_h = " + std::to_string(population[h].rows()));
  }
}

}  // namespace detail

/// SRSWOR of alloc[h] units in every stratum. `replication` selects an
/// independent substream so that replication r is reproducible on its own.
inline std::vector<RawStratumData> draw_stratified_sample(const std::vector<RawStratumData>& population,
                                                          const Allocation& alloc, std::uint64_t seed,
                                                          std::uint64_t replication = 0) {
  detail::check_sample_sizes(population, alloc);
  std::vector<RawStratumData> out;
  for (std::size_t h = 0; h < population.size(); ++h) {
    Philox4x32 rng(seed, substream(2, replication, h));
    const auto idx = sample_indices(population[h].rows(), static_cast<std::size_t>(alloc[h]), rng);
    const Matrix& y = population[h].observations;
    Matrix s(idx.size(), y.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) s(i, j) = y(idx[i], j);
    out.push_back({std::move(s)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo validation
// ---------------------------------------------------------------------------

/// Exact population moments (divisor N_h, as in S_h and M_h^4) packed as a
/// frame so the estimator formulas can be evaluated at the truth.
inline SurveyFrame true_moment_frame(const std::vector<RawStratumData>& population) {
  std::vector<StratumSummary> strata;
  for (const auto& p : population)
    strata.push_back(summarize(p, static_cast<std::int64_t>(p.rows()), 1.0, CovarianceDivisor::population));
  return SurveyFrame(std::move(strata));
}

/// Best epsilon in Lemma 1's condition certified by the eigenvalue bound
/// lambda' A lambda >= mu_min(D^-1/2 A D^-1/2) sum_a lambda_a^2 A_aa, with
/// A = M^4 - vech S vech' S and D = diag(A). 0 when A has a zero diagonal.
inline double shc_epsilon(const Matrix& centered_m4) {
  const std::size_t k = centered_m4.rows();
  Matrix c(k, k);
  for (std::size_t i = 0; i < k; ++i)
    if (!(centered_m4(i, i) > 0.0)) return 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      c(i, j) = centered_m4(i, j) / std::sqrt(centered_m4(i, i) * centered_m4(j, j));
  return std::max(0.0, symmetric_eigenvalues(c).front());
}

inline Vector shc_epsilon(const SurveyFrame& frame) {
  Vector out;
  for (const auto& s : frame.strata()) {
    if (!s.fourth_moment_vech) throw MissingMomentError("shc_epsilon needs m4_vech");
    const Vector vs = vech(s.covariance).values();
    out.push_back(shc_epsilon(*s.fourth_moment_vech - outer(vs, vs)));
  }
  return out;
}

/// Summary of one scalar Monte Carlo output against a predicted mean/variance.
struct ComponentCheck {
  std::string name;
  double empirical_mean = 0.0;
  double predicted_mean = 0.0;
  double mean_standard_error = 0.0;
  double mean_z = 0.0;  // (empirical - predicted) / standard error; 0 when both spreads vanish
  double empirical_variance = 0.0;
  double predicted_variance = 0.0;
  double variance_relative_error = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double max_cdf_gap = 0.0;  // sup |F_emp - Phi| against the fitted normal
};

struct MomentCheck {
  std::vector<ComponentCheck> components;
  Matrix empirical_covariance;
  Matrix predicted_covariance;
  double max_abs_mean_z = 0.0;
  // |emp_ab - pred_ab| / sqrt(pred_aa pred_bb), max over entries
  double max_covariance_relative_error = 0.0;
};

struct NormalityReport {
  std::int64_t replications = 0;
  std::uint64_t seed = 0;
  Allocation allocation;
  MomentCheck cov_hat;              // vech Cov-hat vs the stratified mean/covariance formulas
  std::vector<MomentCheck> strata;  // vech s_h vs n/(n-1) vech S_h and n/(n-1)^2 (M4 - vech S vech' S)
  Vector shc_epsilon;
  bool degenerate = false;
  std::string message;
};

enum class Functional { trace, det };

inline const char* to_string(Functional f) { return f == Functional::trace ? "trace" : "det"; }

inline Functional functional_from_string(const std::string& s) {
  if (s == "trace") return Functional::trace;
  if (s == "det") return Functional::det;
  throw ValidationError("unknown functional '" + s + "' (expected trace or det)");
}

struct CoverageReport {
  std::int64_t replications = 0;
  std::uint64_t seed = 0;
  Functional functional = Functional::trace;
  double tau = 0.0;
  std::int64_t hits = 0;
  double empirical_probability = 0.0;
  double nominal_p0 = 0.0;  // probability the deterministic equivalent assigns to f <= tau
  double wilson_low = 0.0, wilson_high = 0.0;
  ComponentCheck functional_stats;
  std::vector<ComponentCheck> normality_stats;  // per component of vech Cov-hat
};

/// 95% Wilson score interval.
inline std::pair<double, double> wilson_interval(std::int64_t hits, std::int64_t trials, double z = 1.959963984540054) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(hits) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  const double lo = hits == 0 ? 0.0 : std::max(0.0, centre - half);
  const double hi = hits == trials ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

namespace detail {

// Neumaier-compensated sum.
inline double compensated_sum(std::span<const double> v) {
  double sum = 0.0, comp = 0.0;
  for (double x : v) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + comp;
}

inline ComponentCheck describe(std::string name, std::vector<double> values, double predicted_mean,
                               double predicted_variance) {
  ComponentCheck c;
  c.name = std::move(name);
  const double n = static_cast<double>(values.size());
  c.empirical_mean = compensated_sum(values) / n;
  std::vector<double> d2(values.size()), d3(values.size()), d4(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - c.empirical_mean;
    d2[i] = d * d;
    d3[i] = d2[i] * d;
    d4[i] = d2[i] * d2[i];
  }
  const double m2 = compensated_sum(d2) / n;
  c.empirical_variance = m2 * n / (n - 1.0);
  c.predicted_mean = predicted_mean;
  c.predicted_variance = predicted_variance;
  c.mean_standard_error = std::sqrt(c.empirical_variance / n);
  const double diff = c.empirical_mean - predicted_mean;
  if (c.mean_standard_error > 0.0) {
    c.mean_z = diff / c.mean_standard_error;
  } else {
    c.mean_z = std::abs(diff) <= 1e-12 * std::max(1.0, std::abs(predicted_mean)) ? 0.0
                                                                                   : std::numeric_limits<double>::infinity();
  }
  if (predicted_variance > 0.0) {
    c.variance_relative_error = std::abs(c.empirical_variance - predicted_variance) / predicted_variance;
  } else {
    c.variance_relative_error = c.empirical_variance == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  if (m2 > 0.0) {
    c.skewness = compensated_sum(d3) / n / std::pow(m2, 1.5);
    c.excess_kurtosis = compensated_sum(d4) / n / (m2 * m2) - 3.0;
    std::sort(values.begin(), values.end());
    const double sd = std::sqrt(m2);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double f = normal_cdf((values[i] - c.empirical_mean) / sd);
      c.max_cdf_gap = std::max({c.max_cdf_gap, std::abs(static_cast<double>(i + 1) / n - f),
                                std::abs(f - static_cast<double>(i) / n)});
    }
  }
  return c;
}

inline MomentCheck compare(const std::vector<std::vector<double>>& draws, const Vector& predicted_mean,
                           const Matrix& predicted_cov, const std::vector<std::string>& names) {
  const std::size_t k = predicted_mean.size();
  const std::size_t reps = draws.size();
  MomentCheck m;
  m.empirical_covariance = Matrix(k, k);
  m.predicted_covariance = predicted_cov;
  Vector means(k);
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<double> col(reps);
    for (std::size_t r = 0; r < reps; ++r) col[r] = draws[r][a];
    m.components.push_back(describe(names[a], std::move(col), predicted_mean[a], predicted_cov(a, a)));
    means[a] = m.components.back().empirical_mean;
    m.max_abs_mean_z = std::max(m.max_abs_mean_z, std::abs(m.components.back().mean_z));
  }
  std::vector<double> prod(reps);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      for (std::size_t r = 0; r < reps; ++r) prod[r] = (draws[r][a] - means[a]) * (draws[r][b] - means[b]);
      const double c = compensated_sum(prod) / static_cast<double>(reps - 1);
      m.empirical_covariance(a, b) = m.empirical_covariance(b, a) = c;
      const double scale = std::sqrt(predicted_cov(a, a) * predicted_cov(b, b));
      double err;
      if (scale > 0.0) err = std::abs(c - predicted_cov(a, b)) / scale;
      else err = std::abs(c - predicted_cov(a, b)) <= 1e-300 ? 0.0 : std::numeric_limits<double>::infinity();
      m.max_covariance_relative_error = std::max(m.max_covariance_relative_error, err);
    }
  }
  return m;
}

inline std::vector<std::string> vech_names(const std::string& prefix, std::size_t g) {
  std::vector<std::string> names(VechVector::length_for_side(g));
  for (std::size_t j = 0; j < g; ++j)
    for (std::size_t i = j; i < g; ++i)
      names[VechVector::index(g, i, j)] = prefix + "[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]";
  return names;
}

// vech of the (n-1)-divisor covariance of the rows of y.
inline Vector vech_sample_covariance(const Matrix& y) {
  const Vector mean = column_means(y);
  return vech(central_moments(y, mean, static_cast<double>(y.rows() - 1)).first).values();
}

struct Replicates {
  std::vector<std::vector<double>> cov_hat;                // [r][component]
  std::vector<std::vector<std::vector<double>>> strata;    // [h][r][component]
};

inline Replicates replicate(const std::vector<RawStratumData>& population, const Allocation& alloc,
                            std::int64_t replications, std::uint64_t seed) {
  const std::size_t H = population.size();
  const std::size_t g = population.front().g();
  const std::size_t k = VechVector::length_for_side(g);
  double total = 0.0;
  for (const auto& p : population) total += static_cast<double>(p.rows());
  Vector w(H);
  for (std::size_t h = 0; h < H; ++h) {
    const double nh = static_cast<double>(population[h].rows());
    w[h] = stratum_weight(nh / total, total, nh, static_cast<double>(alloc[h]));
  }
  Replicates out;
  out.cov_hat.assign(static_cast<std::size_t>(replications), std::vector<double>(k, 0.0));
  out.strata.assign(H, std::vector<std::vector<double>>(static_cast<std::size_t>(replications)));
  for (std::int64_t r = 0; r < replications; ++r) {
    const auto sample = draw_stratified_sample(population, alloc, seed, static_cast<std::uint64_t>(r));
    auto& acc = out.cov_hat[static_cast<std::size_t>(r)];
    for (std::size_t h = 0; h < H; ++h) {
      Vector vs = vech_sample_covariance(sample[h].observations);
      for (std::size_t a = 0; a < k; ++a) acc[a] += w[h] * vs[a];
      out.strata[h][static_cast<std::size_t>(r)] = std::move(vs);
    }
  }
  return out;
}

}  // namespace detail

/// Repeatedly samples the population and compares the empirical law of
/// vech Cov-hat (and of each vech s_h) with the asymptotic formulas
/// evaluated at the true population moments.
inline NormalityReport validate_normality(const std::vector<RawStratumData>& population, const Allocation& alloc,
                                          std::int64_t replications, std::uint64_t seed) {
  if (replications < 1000) throw ValidationError("validate_normality needs at least 1000 replications");
  if (population.empty()) throw ValidationError("empty population");
  detail::check_sample_sizes(population, alloc);
  const SurveyFrame truth = true_moment_frame(population);
  const std::size_t g = truth.g();

  NormalityReport rep;
  rep.replications = replications;
  rep.seed = seed;
  rep.allocation = alloc;
  for (std::size_t h = 0; h < truth.num_strata(); ++h)
    for (std::size_t j = 0; j < g; ++j)
      if (!(truth.stratum(h).covariance(j, j) > 0.0)) {
        rep.degenerate = true;
        rep.message += "stratum " + std::to_string(h + 1) + " has zero variance in characteristic " +
                       std::to_string(j + 1) + "; ";
      }
  rep.shc_epsilon = shc_epsilon(truth);

  const auto draws = detail::replicate(population, alloc, replications, seed);
  rep.cov_hat = detail::compare(draws.cov_hat, vech_mean(alloc, truth).values(), vech_cov(alloc, truth),
                                detail::vech_names("cov_hat", g));
  for (std::size_t h = 0; h < truth.num_strata(); ++h) {
    const auto& s = truth.stratum(h);
    const double n = static_cast<double>(alloc[h]);
    Vector mean = vech(s.covariance).values();
    for (double& v : mean) v *= n / (n - 1.0);
    const Vector vs = vech(s.covariance).values();
    Matrix cov = *s.fourth_moment_vech - outer(vs, vs);
    cov *= n / ((n - 1.0) * (n - 1.0));
    rep.strata.push_back(detail::compare(draws.strata[h], mean, cov, detail::vech_names("s" + std::to_string(h + 1), g)));
  }
  if (rep.message.empty()) rep.message = "ok";
  return rep;
}

/// Empirical P(f(Cov-hat) <= tau) over independent stratified samples.
inline CoverageReport validate_coverage(const std::vector<RawStratumData>& population, const Allocation& alloc,
                                        double tau, Functional functional, std::int64_t replications,
                                        std::uint64_t seed) {
  if (replications < 1) throw ValidationError("validate_coverage needs at least one replication");
  if (population.empty()) throw ValidationError("empty population");
  detail::check_sample_sizes(population, alloc);
  const SurveyFrame truth = true_moment_frame(population);
  const std::size_t g = truth.g();
  if (functional == Functional::det && g != 2) throw ValidationError("the determinant functional needs G = 2");

  CoverageReport rep;
  rep.replications = replications;
  rep.seed = seed;
  rep.functional = functional;
  rep.tau = tau;

  const auto draws = detail::replicate(population, alloc, replications, seed);
  std::vector<double> f(static_cast<std::size_t>(replications));
  for (std::size_t r = 0; r < f.size(); ++r) {
    const Matrix c = vech_inverse(VechVector(draws.cov_hat[r]));
    f[r] = functional == Functional::trace ? trace(c) : det(c);
    if (f[r] <= tau) ++rep.hits;
  }
  rep.empirical_probability = static_cast<double>(rep.hits) / static_cast<double>(replications);
  std::tie(rep.wilson_low, rep.wilson_high) = wilson_interval(rep.hits, replications);

  double predicted_mean = 0.0, predicted_var = 0.0;
  if (functional == Functional::trace) {
    const auto tm = trace_moments(alloc, truth, TraceMomentsMode::full);
    predicted_mean = tm.trace_mean;
    predicted_var = *tm.trace_var;
    if (predicted_var > 0.0) {
      rep.nominal_p0 = normal_cdf((tau - predicted_mean) / std::sqrt(predicted_var));
    } else {
      rep.nominal_p0 = tau >= predicted_mean ? 1.0 : 0.0;
    }
  } else {
    const double dn = std::abs(det(det_chance_matrix(alloc, truth)));
    rep.nominal_p0 = std::isinf(tau) ? (tau > 0 ? 1.0 : 0.0) : det_law_cdf(tau * std::pow(dn, 0.25));
    predicted_mean = std::numeric_limits<double>::quiet_NaN();
    predicted_var = std::numeric_limits<double>::quiet_NaN();
  }
  rep.functional_stats = detail::describe(to_string(functional), f, predicted_mean, predicted_var);

  const auto names = detail::vech_names("cov_hat", g);
  const Vector mean = vech_mean(alloc, truth).values();
  const Matrix cov = vech_cov(alloc, truth);
  for (std::size_t a = 0; a < mean.size(); ++a) {
    std::vector<double> col(f.size());
    for (std::size_t r = 0; r < f.size(); ++r) col[r] = draws.cov_hat[r][a];
    rep.normality_stats.push_back(detail::describe(names[a], std::move(col), mean[a], cov(a, a)));
  }
  return rep;
}

}  // namespace stratalloc
