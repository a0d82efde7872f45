#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "stratalloc/simulator.hpp"

using namespace stratalloc;

namespace {

SyntheticPopulationSpec gaussian_spec(std::vector<std::int64_t> sizes, std::uint64_t seed) {
  SyntheticPopulationSpec spec;
  spec.seed = seed;
  double scale = 1.0;
  for (auto n : sizes) {
    spec.strata.push_back({n, GaussianLaw{{10.0, 5.0}, Matrix{{4.0 * scale, 1.0}, {1.0, 2.0}}}});
    scale += 1.0;
  }
  return spec;
}

}  // namespace

TEST(Philox, KnownAnswers) {
  // Random123 kat_vectors for philox4x32_10
  const auto a = Philox4x32::block({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(a, (Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  const auto b = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(b, (Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, StreamsAndUniforms) {
  Philox4x32 x(7, 0), y(7, 0), z(7, 1);
  bool all_same = true;
  for (int i = 0; i < 100; ++i) {
    const auto u = x.next_u64();
    EXPECT_EQ(u, y.next_u64());
    all_same = all_same && u == z.next_u64();
  }
  EXPECT_FALSE(all_same);
  Philox4x32 r(1, 2);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / 100000));
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
  EXPECT_NE(substream(1, 0, 0), substream(2, 0, 0));
  EXPECT_NE(substream(2, 1, 0), substream(2, 0, 1));
}

TEST(Population, DiscreteLawHasExactProportions) {
  SyntheticPopulationSpec spec;
  spec.seed = 3;
  spec.strata.push_back({10, DiscreteLaw{{{0.0}, {1.0}}, {0.5, 0.5}}});
  const auto pop = generate_population(spec);
  ASSERT_EQ(pop.size(), 1u);
  int ones = 0;
  for (std::size_t i = 0; i < 10; ++i) ones += pop[0].observations(i, 0) == 1.0;
  EXPECT_EQ(ones, 5);
}

TEST(Population, DeterministicAndValidated) {
  const auto a = generate_population(gaussian_spec({50, 60}, 9));
  const auto b = generate_population(gaussian_spec({50, 60}, 9));
  const auto c = generate_population(gaussian_spec({50, 60}, 10));
  EXPECT_EQ(a[1].observations, b[1].observations);
  EXPECT_NE(a[1].observations, c[1].observations);

  EXPECT_THROW(generate_population(gaussian_spec({3}, 1)), ValidationError);
  SyntheticPopulationSpec bad;
  bad.strata.push_back({10, GaussianLaw{{0.0, 0.0}, Matrix{{1.0, 2.0}, {2.0, 1.0}}}});
  EXPECT_THROW(generate_population(bad), ValidationError);
  EXPECT_THROW(generate_population(SyntheticPopulationSpec{}), ValidationError);
}

TEST(Population, GaussianMomentsMatchLaw) {
  const auto pop = generate_population(gaussian_spec({100000}, 5));
  const SurveyFrame truth = true_moment_frame(pop);
  const Matrix want{{4.0, 1.0}, {1.0, 2.0}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_NEAR(truth.stratum(0).covariance(i, j), want(i, j), 0.03 * std::sqrt(want(i, i) * want(j, j)));
  // Gaussian fourth moment: E d1^4 = 3 s11^2
  EXPECT_NEAR((*truth.stratum(0).fourth_moment_vech)(0, 0), 48.0, 0.05 * 48.0);
}

TEST(Population, LogNormalIsPositive) {
  SyntheticPopulationSpec spec;
  spec.strata.push_back({1000, LogNormalLaw{{0.0}, Matrix{{0.25}}}});
  const auto pop = generate_population(spec);
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_GT(pop[0].observations(i, 0), 0.0);
}

TEST(Sampling, CensusAndInvalidSizes) {
  const auto pop = generate_population(gaussian_spec({20, 30}, 1));
  const auto s = draw_stratified_sample(pop, Allocation{{20, 30}}, 4);
  EXPECT_EQ(s[0].observations, pop[0].observations);
  EXPECT_EQ(s[1].observations, pop[1].observations);
  EXPECT_THROW(draw_stratified_sample(pop, Allocation{{1, 30}}, 4), ValidationError);
  EXPECT_THROW(draw_stratified_sample(pop, Allocation{{21, 30}}, 4), ValidationError);
  EXPECT_THROW(draw_stratified_sample(pop, Allocation{{5}}, 4), ValidationError);
  // same seed and replication: same sample; another replication differs
  EXPECT_EQ(draw_stratified_sample(pop, Allocation{{5, 6}}, 4, 2)[1].observations,
            draw_stratified_sample(pop, Allocation{{5, 6}}, 4, 2)[1].observations);
  EXPECT_NE(draw_stratified_sample(pop, Allocation{{5, 6}}, 4, 2)[1].observations,
            draw_stratified_sample(pop, Allocation{{5, 6}}, 4, 3)[1].observations);
}

TEST(Sampling, SubsetsAreUniform) {
  Philox4x32 rng(11, 0);
  std::map<std::vector<std::size_t>, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto idx = sample_indices(4, 2, rng);
    ASSERT_EQ(idx.size(), 2u);
    ASSERT_LT(idx[0], idx[1]);
    ++counts[idx];
  }
  EXPECT_EQ(counts.size(), 6u);
  for (const auto& [k, c] : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 1.0 / 6.0, 0.01);
  // inclusion probability n/N for a larger case
  std::vector<int> hits(10, 0);
  for (int i = 0; i < 20000; ++i)
    for (auto j : sample_indices(10, 3, rng)) ++hits[j];
  for (int h : hits) EXPECT_NEAR(h / 20000.0, 0.3, 0.02);
}

TEST(Epsilon, EigenvalueBound) {
  EXPECT_NEAR(shc_epsilon(Matrix::identity(3)), 1.0, 1e-12);
  EXPECT_NEAR(shc_epsilon(Matrix{{4.0, 0.0}, {0.0, 9.0}}), 1.0, 1e-12);
  EXPECT_NEAR(shc_epsilon(Matrix{{1.0, 0.6}, {0.6, 1.0}}), 0.4, 1e-12);
  EXPECT_NEAR(shc_epsilon(Matrix{{4.0, -1.2}, {-1.2, 1.0}}), 0.4, 1e-12);
  EXPECT_EQ(shc_epsilon(Matrix{{1.0, 1.0}, {1.0, 1.0}}), 0.0);
  EXPECT_EQ(shc_epsilon(Matrix{{0.0, 0.0}, {0.0, 1.0}}), 0.0);
  // the bound holds for random lambda
  const Matrix a{{2.0, 0.5, 0.1}, {0.5, 1.0, -0.3}, {0.1, -0.3, 3.0}};
  const double eps = shc_epsilon(a);
  Philox4x32 rng(2, 0);
  for (int t = 0; t < 200; ++t) {
    Vector l{rng.normal(), rng.normal(), rng.normal()};
    double quad = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      worst = std::max(worst, l[i] * l[i] * a(i, i));
      for (std::size_t j = 0; j < 3; ++j) quad += l[i] * a(i, j) * l[j];
    }
    EXPECT_GE(quad, eps * worst - 1e-12);
  }
}

TEST(Wilson, KnownIntervals) {
  auto [lo, hi] = wilson_interval(5, 10);
  EXPECT_NEAR(lo, 0.2365931, 1e-6);
  EXPECT_NEAR(hi, 0.7634069, 1e-6);
  std::tie(lo, hi) = wilson_interval(0, 10);
  EXPECT_EQ(lo, 0.0);
  EXPECT_NEAR(hi, 3.841459 / 13.841459, 1e-6);
  std::tie(lo, hi) = wilson_interval(10, 10);
  EXPECT_EQ(hi, 1.0);
}

TEST(Normality, CensusHasNoSpread) {
  const auto pop = generate_population(gaussian_spec({30, 40}, 2));
  const NormalityReport r = validate_normality(pop, Allocation{{30, 40}}, 1000, 1);
  for (const auto& c : r.cov_hat.components) {
    EXPECT_EQ(c.predicted_mean, 0.0);
    EXPECT_NEAR(c.empirical_mean, 0.0, 1e-15);
    EXPECT_EQ(c.predicted_variance, 0.0);
    EXPECT_EQ(c.mean_z, 0.0);
  }
  EXPECT_THROW(validate_normality(pop, Allocation{{30, 40}}, 999, 1), ValidationError);
}

TEST(Normality, MomentsAgainstExactAndAsymptoticOracles) {
  const auto pop = generate_population(gaussian_spec({60, 20000}, 8));
  const Allocation alloc{{12, 200}};
  const NormalityReport r = validate_normality(pop, alloc, 4000, 17);
  const SurveyFrame truth = true_moment_frame(pop);
  EXPECT_FALSE(r.degenerate);
  ASSERT_EQ(r.strata.size(), 2u);
  for (std::size_t h = 0; h < 2; ++h) {
    const double N = static_cast<double>(pop[h].rows()), n = static_cast<double>(alloc[h]);
    const Vector S = vech(truth.stratum(h).covariance).values();
    for (std::size_t a = 0; a < S.size(); ++a) {
      const auto& c = r.strata[h].components[a];
      // the formula being checked: n/(n-1) S
      EXPECT_NEAR(c.predicted_mean, n / (n - 1.0) * S[a], 1e-12 * std::abs(S[a]) + 1e-15);
      // exact SRSWOR expectation of the (n-1)-divisor covariance: N/(N-1) S
      EXPECT_LT(std::abs(c.empirical_mean - N / (N - 1.0) * S[a]), 4.0 * c.mean_standard_error) << h << a;
    }
  }
  // large stratum dominates: asymptotic covariance of vech Cov-hat within 10%
  EXPECT_LT(r.strata[1].max_covariance_relative_error, 0.10);
  for (const auto& c : r.strata[1].components) EXPECT_LT(c.max_cdf_gap, 0.05);
  EXPECT_EQ(r.shc_epsilon.size(), 2u);
  for (double e : r.shc_epsilon) EXPECT_GT(e, 0.0);
}

TEST(Normality, Reproducible) {
  const auto pop = generate_population(gaussian_spec({100, 100}, 4));
  const auto a = validate_normality(pop, Allocation{{10, 10}}, 1000, 5);
  const auto b = validate_normality(pop, Allocation{{10, 10}}, 1000, 5);
  EXPECT_EQ(a.cov_hat.empirical_covariance, b.cov_hat.empirical_covariance);
}

TEST(Coverage, LimitsMonotonicityAndReproducibility) {
  const auto pop = generate_population(gaussian_spec({200, 300}, 6));
  const Allocation alloc{{20, 30}};
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(validate_coverage(pop, alloc, inf, Functional::trace, 500, 1).empirical_probability, 1.0);
  EXPECT_EQ(validate_coverage(pop, alloc, -1.0, Functional::trace, 500, 1).empirical_probability, 0.0);
  std::int64_t prev = -1;
  for (double tau : {0.01, 0.03, 0.05, 0.08, 0.12, 0.5}) {
    const auto r = validate_coverage(pop, alloc, tau, Functional::trace, 500, 1);
    EXPECT_GE(r.hits, prev);
    EXPECT_LE(r.wilson_low, r.empirical_probability);
    EXPECT_GE(r.wilson_high, r.empirical_probability);
    prev = r.hits;
  }
  const auto x = validate_coverage(pop, alloc, 0.05, Functional::det, 300, 9);
  const auto y = validate_coverage(pop, alloc, 0.05, Functional::det, 300, 9);
  EXPECT_EQ(x.hits, y.hits);
  EXPECT_EQ(x.functional_stats.empirical_mean, y.functional_stats.empirical_mean);
  EXPECT_THROW(validate_coverage(pop, alloc, 1.0, Functional::trace, 0, 1), ValidationError);
}

TEST(Coverage, TraceNominalProbability) {
  const auto pop = generate_population(gaussian_spec({500, 500}, 12));
  const Allocation alloc{{50, 50}};
  const SurveyFrame truth = true_moment_frame(pop);
  const auto tm = trace_moments(alloc, truth);
  const double tau = tm.trace_mean + 0.5 * std::sqrt(*tm.trace_var);
  const auto r = validate_coverage(pop, alloc, tau, Functional::trace, 200, 3);
  EXPECT_NEAR(r.nominal_p0, normal_cdf(0.5), 1e-12);
  EXPECT_NEAR(r.functional_stats.predicted_mean, tm.trace_mean, 1e-15);
}
