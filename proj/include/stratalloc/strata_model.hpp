#pragma once

// Stratified population data model: per-stratum summaries (covariance plus
// optional fourth-moment arrays from a pilot sample), the survey frame that
// groups them, and CSV / JSON ingestion.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stratalloc/errors.hpp"
#include "stratalloc/matcalc.hpp"

namespace stratalloc {

struct StratumSummary {
  std::int64_t population_size = 0;  // N_h
  double unit_cost = 0.0;            // c_h
  Matrix covariance;                 // G x G
  std::optional<Matrix> fourth_moment_vech;  // k x k, k = G(G+1)/2
  std::optional<Matrix> fourth_moment_vec;   // G^2 x G^2
  std::optional<std::int64_t> pilot_sample_size;

  std::size_t g() const noexcept { return covariance.rows(); }

  /// Throws ValidationError describing the first broken invariant.
  /// `where` prefixes the message (e.g. "stratum 3").
  void validate(const std::string& where) const {
    auto fail = [&](const std::string& what) { throw ValidationError(where + ": " + what); };
    if (population_size < 2) fail("population size N_h must be >= 2 (got " + std::to_string(population_size) + ")");
    if (!(unit_cost >= 0.0) || !std::isfinite(unit_cost)) fail("unit cost must be a finite nonnegative number");
    if (covariance.empty() || !covariance.square()) fail("covariance must be a non-empty square matrix");
    for (double x : covariance.entries())
      if (!std::isfinite(x)) fail("covariance has non-finite entries");
    if (!covariance.is_symmetric()) fail("covariance is not symmetric");
    if (!is_positive_semidefinite(covariance)) fail("covariance is not positive semidefinite");
    if (pilot_sample_size && *pilot_sample_size < 2) fail("pilot sample size must be >= 2");

    const std::size_t gg = g();
    const std::size_t k = VechVector::length_for_side(gg);
    if (fourth_moment_vech) {
      const Matrix& m4 = *fourth_moment_vech;
      if (m4.rows() != k || m4.cols() != k)
        fail("m4_vech must be " + std::to_string(k) + "x" + std::to_string(k));
      if (!m4.is_symmetric()) fail("m4_vech is not symmetric");
      if (!is_positive_semidefinite(m4, 1e-8)) fail("m4_vech is not positive semidefinite");
      // With a pilot covariance on divisor n - 1 and m4 on divisor n, only
      // m4 - ((n-1)/n)^2 vech(s) vech(s)' is guaranteed PSD.
      const double shrink = pilot_sample_size ? std::pow((*pilot_sample_size - 1.0) / *pilot_sample_size, 2) : 1.0;
      const Vector vs = vech(covariance).values();
      if (!is_positive_semidefinite(m4 - shrink * outer(vs, vs), 1e-8))
        fail("m4_vech - vech(s) vech(s)' is not positive semidefinite");
    }
    if (fourth_moment_vec) {
      const Matrix& m4 = *fourth_moment_vec;
      if (m4.rows() != gg * gg || m4.cols() != gg * gg)
        fail("m4_vec must be " + std::to_string(gg * gg) + "x" + std::to_string(gg * gg));
      if (!m4.is_symmetric()) fail("m4_vec is not symmetric");
    }
  }
};

class SurveyFrame {
 public:
  SurveyFrame() = default;

  SurveyFrame(std::vector<StratumSummary> strata, double fixed_cost = 0.0,
              std::vector<std::string> labels = {})
      : strata_(std::move(strata)), fixed_cost_(fixed_cost), labels_(std::move(labels)) {
    if (strata_.empty()) throw ValidationError("survey frame has no strata (H = 0)");
    g_ = strata_.front().g();
    for (std::size_t h = 0; h < strata_.size(); ++h) {
      const std::string where = "stratum " + std::to_string(h + 1);
      strata_[h].validate(where);
      if (strata_[h].g() != g_)
        throw ValidationError(where + ": has G = " + std::to_string(strata_[h].g()) +
                              " but stratum 1 has G = " + std::to_string(g_));
      total_ += strata_[h].population_size;
    }
    if (!(fixed_cost_ >= 0.0) || !std::isfinite(fixed_cost_))
      throw ValidationError("fixed cost c0 must be a finite nonnegative number");
    if (labels_.empty())
      for (std::size_t j = 0; j < g_; ++j) labels_.push_back("y" + std::to_string(j + 1));
    if (labels_.size() != g_) throw ValidationError("number of labels differs from G");
  }

  std::size_t num_strata() const noexcept { return strata_.size(); }
  std::size_t g() const noexcept { return g_; }
  double fixed_cost() const noexcept { return fixed_cost_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<StratumSummary>& strata() const noexcept { return strata_; }
  const StratumSummary& stratum(std::size_t h) const { return strata_.at(h); }

  /// N = sum of N_h.
  std::int64_t population_total() const noexcept { return total_; }

  /// W_h = N_h / N.
  double relative_size(std::size_t h) const {
    return static_cast<double>(stratum(h).population_size) / static_cast<double>(total_);
  }

  bool has_fourth_moments_vech() const {
    for (const auto& s : strata_)
      if (!s.fourth_moment_vech) return false;
    return true;
  }
  bool has_fourth_moments_vec() const {
    for (const auto& s : strata_)
      if (!s.fourth_moment_vec) return false;
    return true;
  }

 private:
  std::vector<StratumSummary> strata_;
  std::size_t g_ = 0;
  double fixed_cost_ = 0.0;
  std::vector<std::string> labels_;
  std::int64_t total_ = 0;
};

/// n_h x G observations for one stratum (a sample, or a whole population).
struct RawStratumData {
  Matrix observations;

  std::size_t rows() const noexcept { return observations.rows(); }
  std::size_t g() const noexcept { return observations.cols(); }
};

enum class CovarianceDivisor { sample, population };

namespace detail {

inline Vector column_means(const Matrix& y) {
  Vector mean(y.cols(), 0.0);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) mean[j] += y(i, j);
  for (double& m : mean) m /= static_cast<double>(y.rows());
  return mean;
}

}  // namespace detail

/// Covariance about `center` with the given divisor, plus the vec-form fourth
/// moment (1/n) sum (d d') kron (d d') also about `center`.
inline std::pair<Matrix, Matrix> central_moments(const Matrix& y, std::span<const double> center,
                                                 double cov_divisor) {
  const std::size_t g = y.cols();
  const std::size_t n = y.rows();
  Matrix cov(g, g);
  Matrix m4(g * g, g * g);
  Vector d(g);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < g; ++j) d[j] = y(i, j) - center[j];
    for (std::size_t a = 0; a < g; ++a)
      for (std::size_t b = 0; b < g; ++b) cov(a, b) += d[a] * d[b];
    // (dd') kron (dd'), entry (a*g+p, b*g+q) = d_a d_b d_p d_q
    for (std::size_t a = 0; a < g; ++a)
      for (std::size_t b = 0; b < g; ++b)
        for (std::size_t p = 0; p < g; ++p)
          for (std::size_t q = 0; q < g; ++q) m4(a * g + p, b * g + q) += d[a] * d[b] * d[p] * d[q];
  }
  cov *= 1.0 / cov_divisor;
  m4 *= 1.0 / static_cast<double>(n);
  return {cov, m4};
}

/// Pilot-sample statistics for one stratum: covariance (divisor n-1 or n),
/// fourth-moment arrays in vech and vec form (divisor n), pilot size = rows.
inline StratumSummary summarize(const RawStratumData& raw, std::int64_t population_size, double unit_cost,
                                CovarianceDivisor divisor = CovarianceDivisor::sample) {
  const std::size_t n = raw.rows();
  if (n < 2) throw ValidationError("summarize needs at least 2 observations, got " + std::to_string(n));
  const Vector mean = detail::column_means(raw.observations);
  const double div = divisor == CovarianceDivisor::sample ? static_cast<double>(n - 1) : static_cast<double>(n);
  auto [cov, m4vec] = central_moments(raw.observations, mean, div);
  const Matrix dp = duplication_pinv(raw.g());

  StratumSummary s;
  s.population_size = population_size;
  s.unit_cost = unit_cost;
  s.covariance = std::move(cov);
  s.fourth_moment_vech = dp * m4vec * dp.transpose();
  s.fourth_moment_vec = std::move(m4vec);
  s.pilot_sample_size = static_cast<std::int64_t>(n);
  return s;
}

enum class InputFormat { csv, json };

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_number(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ParseError(where + ": '" + text + "' is not a number");
  }
  if (used != text.size()) throw ParseError(where + ": '" + text + "' is not a number");
  return v;
}

inline std::int64_t parse_integer(const std::string& text, const std::string& where) {
  const double v = parse_number(text, where);
  if (v != std::floor(v) || std::abs(v) > 9.0e15) throw ParseError(where + ": '" + text + "' is not an integer");
  return static_cast<std::int64_t>(v);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// CSV summary table:
///   stratum,N,cost,var_<label1>,...,var_<labelG>,cov_<i>_<j>,...
/// cov columns are 1-based with i < j; missing pairs default to 0.
inline SurveyFrame parse_survey_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line))
    if (!detail::trim(line).empty()) {
      header = detail::split_csv_line(line);
      break;
    }
  if (header.empty()) throw ParseError("CSV: empty file");

  int col_n = -1, col_cost = -1;
  std::vector<int> var_cols;
  std::vector<std::string> labels;
  struct CovCol {
    int col;
    std::size_t i, j;
  };
  std::vector<CovCol> cov_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "N") {
      col_n = static_cast<int>(c);
    } else if (h == "cost") {
      col_cost = static_cast<int>(c);
    } else if (h.rfind("var_", 0) == 0) {
      var_cols.push_back(static_cast<int>(c));
      labels.push_back(h.substr(4));
    } else if (h.rfind("cov_", 0) == 0) {
      const auto rest = h.substr(4);
      const auto us = rest.find('_');
      if (us == std::string::npos) throw ParseError("CSV: malformed covariance column '" + h + "'");
      const auto i = detail::parse_integer(rest.substr(0, us), "CSV header '" + h + "'");
      const auto j = detail::parse_integer(rest.substr(us + 1), "CSV header '" + h + "'");
      if (i < 1 || j < 1 || i >= j) throw ParseError("CSV: covariance column '" + h + "' needs 1 <= i < j");
      cov_cols.push_back({static_cast<int>(c), static_cast<std::size_t>(i - 1), static_cast<std::size_t>(j - 1)});
    } else if (h != "stratum") {
      throw ParseError("CSV: unknown column '" + h + "'");
    }
  }
  if (col_n < 0) throw ParseError("CSV: missing column 'N'");
  if (col_cost < 0) throw ParseError("CSV: missing column 'cost'");
  if (var_cols.empty()) throw ParseError("CSV: no var_<label> columns");
  const std::size_t g = var_cols.size();
  for (const auto& cc : cov_cols)
    if (cc.j >= g) throw ParseError("CSV: covariance column refers to characteristic beyond G");

  std::vector<StratumSummary> strata;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    const std::string where = "CSV line " + std::to_string(line_no);
    if (fields.size() != header.size())
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    StratumSummary s;
    s.population_size = detail::parse_integer(fields[col_n], where + " column N");
    s.unit_cost = detail::parse_number(fields[col_cost], where + " column cost");
    s.covariance = Matrix(g, g);
    for (std::size_t j = 0; j < g; ++j)
      s.covariance(j, j) = detail::parse_number(fields[var_cols[j]], where + " column " + header[var_cols[j]]);
    for (const auto& cc : cov_cols) {
      const double v = detail::parse_number(fields[cc.col], where + " column " + header[cc.col]);
      s.covariance(cc.i, cc.j) = v;
      s.covariance(cc.j, cc.i) = v;
    }
    strata.push_back(std::move(s));
  }
  if (strata.empty()) throw ParseError("CSV: no strata rows");
  return SurveyFrame(std::move(strata), 0.0, std::move(labels));
}

namespace detail {

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ParseError(where + ": expected a non-empty array of rows");
  std::vector<Vector> rows;
  for (const auto& r : j) {
    if (!r.is_array()) throw ParseError(where + ": expected an array of rows");
    Vector row;
    for (const auto& x : r) {
      if (!x.is_number()) throw ParseError(where + ": non-numeric entry");
      row.push_back(x.get<double>());
    }
    rows.push_back(std::move(row));
  }
  try {
    return Matrix::from_rows(rows);
  } catch (const DimensionError&) {
    throw ParseError(where + ": rows have different lengths");
  }
}

}  // namespace detail

inline nlohmann::json matrix_to_json(const Matrix& m) { return m.to_rows(); }

/// JSON frame: { "g", "fixed_cost", "labels"?, "strata": [ { "n_population",
/// "cost", "covariance", "m4_vech" | null, "m4_vec" | null, "pilot_n" } ] }
inline SurveyFrame parse_survey_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("JSON: top level must be an object");
  if (!doc.contains("strata") || !doc["strata"].is_array()) throw ParseError("JSON: missing 'strata' array");
  if (doc["strata"].empty()) throw ParseError("JSON: 'strata' is empty (H = 0)");
  std::optional<std::size_t> g;
  if (doc.contains("g")) {
    if (!doc["g"].is_number_integer() || doc["g"].get<long long>() < 1) throw ParseError("JSON: 'g' must be a positive integer");
    g = doc["g"].get<std::size_t>();
  }
  const double fixed_cost = doc.value("fixed_cost", 0.0);
  std::vector<std::string> labels;
  if (doc.contains("labels") && !doc["labels"].is_null()) labels = doc["labels"].get<std::vector<std::string>>();

  std::vector<StratumSummary> strata;
  std::size_t h = 0;
  for (const auto& js : doc["strata"]) {
    ++h;
    const std::string where = "JSON stratum " + std::to_string(h);
    if (!js.is_object()) throw ParseError(where + ": expected an object");
    StratumSummary s;
    if (!js.contains("n_population") || !js["n_population"].is_number())
      throw ParseError(where + ": missing numeric 'n_population'");
    const double np = js["n_population"].get<double>();
    if (np != std::floor(np)) throw ParseError(where + ": 'n_population' must be an integer");
    s.population_size = static_cast<std::int64_t>(np);
    if (!js.contains("cost") || !js["cost"].is_number()) throw ParseError(where + ": missing numeric 'cost'");
    s.unit_cost = js["cost"].get<double>();
    if (!js.contains("covariance")) throw ParseError(where + ": missing 'covariance'");
    s.covariance = detail::matrix_from_json(js["covariance"], where + " covariance");
    if (js.contains("m4_vech") && !js["m4_vech"].is_null())
      s.fourth_moment_vech = detail::matrix_from_json(js["m4_vech"], where + " m4_vech");
    if (js.contains("m4_vec") && !js["m4_vec"].is_null())
      s.fourth_moment_vec = detail::matrix_from_json(js["m4_vec"], where + " m4_vec");
    if (js.contains("pilot_n") && !js["pilot_n"].is_null()) {
      if (!js["pilot_n"].is_number_integer()) throw ParseError(where + ": 'pilot_n' must be an integer");
      s.pilot_sample_size = js["pilot_n"].get<std::int64_t>();
    }
    if (g && s.g() != *g)
      throw ValidationError(where + ": covariance is " + std::to_string(s.g()) + "x" + std::to_string(s.g()) +
                            " but g = " + std::to_string(*g));
    strata.push_back(std::move(s));
  }
  return SurveyFrame(std::move(strata), fixed_cost, std::move(labels));
}

inline nlohmann::json frame_to_json(const SurveyFrame& frame) {
  nlohmann::json doc;
  doc["g"] = frame.g();
  doc["fixed_cost"] = frame.fixed_cost();
  doc["labels"] = frame.labels();
  doc["strata"] = nlohmann::json::array();
  for (const auto& s : frame.strata()) {
    nlohmann::json js;
    js["n_population"] = s.population_size;
    js["cost"] = s.unit_cost;
    js["covariance"] = matrix_to_json(s.covariance);
    js["m4_vech"] = s.fourth_moment_vech ? matrix_to_json(*s.fourth_moment_vech) : nlohmann::json(nullptr);
    js["m4_vec"] = s.fourth_moment_vec ? matrix_to_json(*s.fourth_moment_vec) : nlohmann::json(nullptr);
    js["pilot_n"] = s.pilot_sample_size ? nlohmann::json(*s.pilot_sample_size) : nlohmann::json(nullptr);
    doc["strata"].push_back(std::move(js));
  }
  return doc;
}

inline InputFormat format_from_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".json") return InputFormat::json;
  if (ext == ".csv") return InputFormat::csv;
  throw ParseError("cannot infer format of '" + path.string() + "'; pass csv or json explicitly");
}

inline SurveyFrame load_survey(const std::filesystem::path& path, InputFormat format) {
  const std::string text = detail::read_file(path);
  return format == InputFormat::csv ? parse_survey_csv(text) : parse_survey_json(text);
}

inline SurveyFrame load_survey(const std::filesystem::path& path) {
  return load_survey(path, format_from_extension(path));
}

inline void save_survey_json(const SurveyFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << frame_to_json(frame).dump(2) << '\n';
}

}  // namespace stratalloc
