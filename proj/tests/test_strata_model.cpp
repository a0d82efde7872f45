#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "stratalloc/strata_model.hpp"

using namespace stratalloc;

namespace {

const std::string humboldt_path = STRATALLOC_DATA_DIR "/humboldt.csv";

Matrix synthetic_rows(std::size_t n, std::size_t g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gam(2.0, 1.5);
  Matrix y(n, g);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g; ++j) y(i, j) = gam(rng) + 0.3 * j * y(i, 0);
  return y;
}

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << contents;
  return p;
}

}  // namespace

TEST(Csv, HumboldtTable) {
  const SurveyFrame f = load_survey(humboldt_path);
  EXPECT_EQ(f.num_strata(), 9u);
  EXPECT_EQ(f.g(), 2u);
  EXPECT_EQ(f.labels(), (std::vector<std::string>{"BA", "Vol"}));
  EXPECT_EQ(f.population_total(), 11131 + 65857 + 106936 + 72872 + 78260 + 51401 + 24050 + 46113 + 102985);
  EXPECT_DOUBLE_EQ(f.stratum(0).covariance(0, 0), 1557.0);
  EXPECT_DOUBLE_EQ(f.stratum(0).covariance(1, 0), 28980.0);
  EXPECT_DOUBLE_EQ(f.stratum(0).covariance(0, 1), 28980.0);
  EXPECT_DOUBLE_EQ(f.stratum(8).unit_cost, 3.5);
  EXPECT_FALSE(f.has_fourth_moments_vech());
  double wsum = 0.0;
  for (std::size_t h = 0; h < f.num_strata(); ++h) wsum += f.relative_size(h);
  EXPECT_NEAR(wsum, 1.0, 1e-15);
}

TEST(Csv, Errors) {
  EXPECT_THROW(parse_survey_csv(""), ParseError);
  EXPECT_THROW(parse_survey_csv("stratum,N,cost,var_a\n"), ParseError);  // H = 0
  EXPECT_THROW(parse_survey_csv("stratum,cost,var_a\n1,2,3\n"), ParseError);
  EXPECT_THROW(parse_survey_csv("stratum,N,cost,var_a\n1,10,abc,3\n"), ParseError);
  EXPECT_THROW(parse_survey_csv("stratum,N,cost,var_a\n1,10,2\n"), ParseError);
  EXPECT_THROW(parse_survey_csv("stratum,N,cost,var_a,bogus\n1,10,2,3,4\n"), ParseError);
  EXPECT_THROW(parse_survey_csv("stratum,N,cost,var_a,cov_2_1\n1,10,2,3,4\n"), ParseError);
  EXPECT_THROW(parse_survey_csv("stratum,N,cost,var_a\n1,1,2,3\n"), ValidationError);
  // |cov| > sqrt(var1 var2): not PSD
  EXPECT_THROW(parse_survey_csv("stratum,N,cost,var_a,var_b,cov_1_2\n1,10,2,1,1,5\n"), ValidationError);
  try {
    parse_survey_csv("stratum,N,cost,var_a\n1,10,2,3\n2,10,x,3\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("cost"), std::string::npos);
  }
}

TEST(Json, RoundTripWithMoments) {
  const Matrix y = synthetic_rows(40, 2, 1);
  StratumSummary a = summarize(RawStratumData{y}, 500, 2.5);
  StratumSummary b = summarize(RawStratumData{synthetic_rows(30, 2, 2)}, 300, 1.0);
  b.fourth_moment_vec.reset();
  const SurveyFrame f(std::vector<StratumSummary>{a, b}, 10.0, {"x", "z"});
  const SurveyFrame g = parse_survey_json(frame_to_json(f).dump());
  EXPECT_EQ(g.num_strata(), 2u);
  EXPECT_EQ(g.labels(), f.labels());
  EXPECT_DOUBLE_EQ(g.fixed_cost(), 10.0);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(g.stratum(h).covariance, f.stratum(h).covariance);
    EXPECT_EQ(g.stratum(h).fourth_moment_vech, f.stratum(h).fourth_moment_vech);
    EXPECT_EQ(g.stratum(h).fourth_moment_vec.has_value(), f.stratum(h).fourth_moment_vec.has_value());
    EXPECT_EQ(g.stratum(h).pilot_sample_size, f.stratum(h).pilot_sample_size);
  }
}

TEST(Json, Errors) {
  EXPECT_THROW(parse_survey_json("{"), ParseError);
  EXPECT_THROW(parse_survey_json("[]"), ParseError);
  EXPECT_THROW(parse_survey_json(R"({"strata": []})"), ParseError);
  EXPECT_THROW(parse_survey_json(R"({"strata": [{"cost": 1, "covariance": [[1]]}]})"), ParseError);
  EXPECT_THROW(parse_survey_json(R"({"g": 2, "strata": [{"n_population": 5, "cost": 1, "covariance": [[1]]}]})"),
               ValidationError);
  EXPECT_THROW(parse_survey_json(R"({"strata": [{"n_population": 5, "cost": 1, "covariance": [[1, 0], [0]]}]})"),
               ParseError);
  // m4_vech - vech s vech' s must be PSD: m4 = 0.5 < s^2 = 1
  EXPECT_THROW(
      parse_survey_json(R"({"strata": [{"n_population": 5, "cost": 1, "covariance": [[1]], "m4_vech": [[0.5]]}]})"),
      ValidationError);
}

TEST(Summarize, MatchesDirectMomentLoops) {
  const std::size_t n = 25, g = 3;
  const Matrix y = synthetic_rows(n, g, 3);
  const StratumSummary s = summarize(RawStratumData{y}, 1000, 1.0);
  EXPECT_EQ(s.pilot_sample_size, std::optional<std::int64_t>(25));

  Vector mean(g, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g; ++j) mean[j] += y(i, j) / n;
  auto d = [&](std::size_t i, std::size_t j) { return y(i, j) - mean[j]; };

  for (std::size_t a = 0; a < g; ++a)
    for (std::size_t b = 0; b < g; ++b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += d(i, a) * d(i, b);
      EXPECT_NEAR(s.covariance(a, b), acc / (n - 1), 1e-12 * std::abs(acc));
    }

  // vech form: D+ (dd' kron dd') D+' = vech(dd') vech(dd')'
  std::vector<std::pair<std::size_t, std::size_t>> pos;
  for (std::size_t j = 0; j < g; ++j)
    for (std::size_t i = j; i < g; ++i) pos.push_back({i, j});
  for (std::size_t r = 0; r < pos.size(); ++r)
    for (std::size_t c = 0; c < pos.size(); ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += d(i, pos[r].first) * d(i, pos[r].second) * d(i, pos[c].first) * d(i, pos[c].second);
      EXPECT_NEAR((*s.fourth_moment_vech)(r, c), acc / n, 1e-10 * std::max(1.0, std::abs(acc / n)));
    }
  for (std::size_t a = 0; a < g; ++a)
    for (std::size_t p = 0; p < g; ++p)
      for (std::size_t b = 0; b < g; ++b)
        for (std::size_t q = 0; q < g; ++q) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += d(i, a) * d(i, b) * d(i, p) * d(i, q);
          EXPECT_NEAR((*s.fourth_moment_vec)(a * g + p, b * g + q), acc / n, 1e-10 * std::max(1.0, acc / n));
        }
}

TEST(Summarize, PopulationDivisor) {
  const Matrix y = synthetic_rows(10, 2, 4);
  const auto smp = summarize(RawStratumData{y}, 100, 1.0, CovarianceDivisor::sample);
  const auto pop = summarize(RawStratumData{y}, 100, 1.0, CovarianceDivisor::population);
  EXPECT_NEAR(pop.covariance(0, 1), smp.covariance(0, 1) * 9.0 / 10.0, 1e-12);
  EXPECT_THROW(summarize(RawStratumData{Matrix(1, 2)}, 10, 1.0), ValidationError);
}

TEST(Frame, Validation) {
  StratumSummary s;
  s.population_size = 10;
  s.unit_cost = 1.0;
  s.covariance = Matrix{{1.0}};
  EXPECT_THROW(SurveyFrame(std::vector<StratumSummary>{}), ValidationError);
  StratumSummary t = s;
  t.covariance = Matrix{{1, 0}, {0, 1}};
  EXPECT_THROW(SurveyFrame(std::vector<StratumSummary>{s, t}), ValidationError);
  StratumSummary u = s;
  u.unit_cost = -1.0;
  EXPECT_THROW(SurveyFrame(std::vector<StratumSummary>{u}), ValidationError);
  EXPECT_THROW(SurveyFrame(std::vector<StratumSummary>{s}, 0.0, {"a", "b"}), ValidationError);
  EXPECT_NO_THROW(SurveyFrame(std::vector<StratumSummary>{s, s}));
}

TEST(Files, FormatDetectionAndLoading) {
  EXPECT_EQ(format_from_extension("x.CSV"), InputFormat::csv);
  EXPECT_EQ(format_from_extension("a/b.json"), InputFormat::json);
  EXPECT_THROW(format_from_extension("a.txt"), ParseError);
  EXPECT_THROW(load_survey("/nonexistent/frame.csv"), Error);

  const SurveyFrame f = load_survey(humboldt_path);
  const auto p = std::filesystem::temp_directory_path() / "stratalloc_frame_test.json";
  save_survey_json(f, p);
  const SurveyFrame g = load_survey(p);
  EXPECT_EQ(g.population_total(), f.population_total());
  EXPECT_EQ(g.stratum(4).covariance, f.stratum(4).covariance);

  const auto q = temp_file("stratalloc_frame_test.dat", "stratum,N,cost,var_a\n1,10,2,3\n");
  EXPECT_EQ(load_survey(q, InputFormat::csv).num_strata(), 1u);
}
