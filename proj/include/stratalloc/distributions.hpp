#pragma once

// Scalar laws used by the deterministic equivalents: the standard normal and
// the law of the determinant of a standardised 2x2 symmetric Gaussian matrix.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "stratalloc/errors.hpp"

namespace stratalloc {

inline double erf(double x) { return std::erf(x); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Inverse of normal_cdf on (0, 1). Acklam's rational approximation
/// (relative error ~1e-9) followed by one Halley step.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericalError("normal_quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement; the residual uses the tail that keeps precision.
  const double e = (x < 0.0 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x));
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
inline double integrate_adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                                         int max_depth = 50) {
  struct Impl {
    const std::function<double(double)>& f;
    double step(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) const {
      const double m = 0.5 * (a + b);
      const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double delta = left + right - whole;
      if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
      return step(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  } impl{f};
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return impl.step(a, b, fa, fm, fb, whole, tol, max_depth);
}

// Law of Z = det of [[a, b], [b, c]] with a, c ~ N(0, 1), b ~ N(0, 1/2)
// independent. Density (1/sqrt2) e^z erfc(sqrt(2z)) for z >= 0 and
// (1/sqrt2) e^z for z < 0, so P(Z < 0) = 1/sqrt2.

inline double det_law_pdf(double z) {
  if (std::isnan(z)) return z;
  if (z < 0.0) return std::exp(z) / std::numbers::sqrt2;
  return std::exp(z) * std::erfc(std::sqrt(2.0 * z)) / std::numbers::sqrt2;
}

/// Closed form: e^z/sqrt2 for z < 0, e^z erfc(sqrt(2z))/sqrt2 + erf(sqrt z) for z >= 0.
inline double det_law_cdf(double z) {
  if (std::isnan(z)) return z;
  if (z < 0.0) return std::exp(z) / std::numbers::sqrt2;
  if (z > 700.0) return 1.0;
  return std::exp(z) * std::erfc(std::sqrt(2.0 * z)) / std::numbers::sqrt2 + std::erf(std::sqrt(z));
}

/// r with det_law_cdf(r) = p.
inline double det_law_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericalError("det_law_quantile: p must lie in (0, 1)");
  constexpr double mass_below_zero = 1.0 / std::numbers::sqrt2;
  if (p <= mass_below_zero) return std::log(p * std::numbers::sqrt2);
  double lo = 0.0, hi = 1.0;
  while (det_law_cdf(hi) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e4) throw NumericalError("det_law_quantile: failed to bracket");
  }
  // safeguarded Newton
  double z = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = det_law_cdf(z) - p;
    if (f > 0.0) hi = z; else lo = z;
    const double dens = det_law_pdf(z);
    double next = dens > 0.0 ? z - f / dens : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) <= 1e-15 * std::max(1.0, std::abs(z))) return next;
    z = next;
  }
  return z;
}

}  // namespace stratalloc
