#pragma once

// Small dense matrix kernel: vec/vech, Kronecker products, commutation and
// duplication matrices, determinants. Sizes here are tiny (G <= 16), so
// everything is plain row-major storage and O(n^3) loops.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stratalloc/errors.hpp"

namespace stratalloc {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw DimensionError("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) throw DimensionError("ragged matrix rows");
      std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + i * m.cols_);
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix column(std::span<const double> v) {
    Matrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.data_.begin());
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> entries() const noexcept { return data_; }
  std::span<double> entries() noexcept { return data_; }

  std::vector<Vector> to_rows() const {
    std::vector<Vector> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      out[i].assign(data_.begin() + i * cols_, data_.begin() + (i + 1) * cols_);
    return out;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  /// max |a_ij - a_ji|; +inf for non-square input.
  double asymmetry() const {
    if (!square()) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = i + 1; j < cols_; ++j)
        worst = std::max(worst, std::abs((*this)(i, j) - (*this)(j, i)));
    return worst;
  }

  double max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

  /// Symmetric within 1e-9 relative to the largest entry.
  bool is_symmetric(double rel_tol = 1e-9) const {
    return square() && asymmetry() <= rel_tol * std::max(1.0, max_abs());
  }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols_ != b.rows_) throw DimensionError("matrix product: inner dimensions differ");
    Matrix c(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
      }
    return c;
  }

  friend Vector operator*(const Matrix& a, std::span<const double> v) {
    if (a.cols_ != v.size()) throw DimensionError("matrix-vector product: size mismatch");
    Vector out(a.rows_, 0.0);
    for (std::size_t i = 0; i < a.rows_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < a.cols_; ++j) acc += a(i, j) * v[j];
      out[i] = acc;
    }
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Matrix& m) {
    for (std::size_t i = 0; i < m.rows_; ++i) {
      os << (i == 0 ? "[[" : " [");
      for (std::size_t j = 0; j < m.cols_; ++j) os << (j ? ", " : "") << m(i, j);
      os << (i + 1 == m.rows_ ? "]]" : "]\n");
    }
    return os;
  }

 private:
  void check_same_shape(const Matrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionError("matrix shapes differ");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Distinct elements of a symmetric g x g matrix, lower triangle, column-major.
class VechVector {
 public:
  VechVector() = default;
  explicit VechVector(Vector values) : values_(std::move(values)) {
    g_ = side_for_length(values_.size());
  }

  static constexpr std::size_t length_for_side(std::size_t g) noexcept { return g * (g + 1) / 2; }

  /// Inverse of length_for_side; throws when len is not triangular.
  static std::size_t side_for_length(std::size_t len) {
    std::size_t g = 0;
    while (length_for_side(g) < len) ++g;
    if (length_for_side(g) != len || g == 0)
      throw DimensionError("vech length " + std::to_string(len) + " is not of the form g(g+1)/2");
    return g;
  }

  /// Position of element (i, j), i >= j, in the vech ordering.
  static std::size_t index(std::size_t g, std::size_t i, std::size_t j) noexcept {
    if (i < j) std::swap(i, j);
    return j * g - (j * (j - 1)) / 2 + (i - j);
  }

  std::size_t g() const noexcept { return g_; }
  std::size_t size() const noexcept { return values_.size(); }
  const Vector& values() const& noexcept { return values_; }
  Vector values() && noexcept { return std::move(values_); }
  double operator[](std::size_t k) const { return values_[k]; }
  double at(std::size_t i, std::size_t j) const { return values_[index(g_, i, j)]; }

  friend bool operator==(const VechVector&, const VechVector&) = default;

 private:
  std::size_t g_ = 0;
  Vector values_;
};

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q)
          out(i * b.rows() + p, j * b.cols() + q) = aij * b(p, q);
    }
  return out;
}

/// Column stacking.
inline Vector vec(const Matrix& c) {
  Vector out;
  out.reserve(c.rows() * c.cols());
  for (std::size_t j = 0; j < c.cols(); ++j)
    for (std::size_t i = 0; i < c.rows(); ++i) out.push_back(c(i, j));
  return out;
}

inline Matrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) throw DimensionError("unvec: length mismatch");
  Matrix m(rows, cols);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t i = 0; i < rows; ++i) m(i, j) = v[j * rows + i];
  return m;
}

inline VechVector vech(const Matrix& b) {
  if (!b.square()) throw DimensionError("vech requires a square matrix");
  Vector out;
  out.reserve(VechVector::length_for_side(b.rows()));
  for (std::size_t j = 0; j < b.cols(); ++j)
    for (std::size_t i = j; i < b.rows(); ++i) out.push_back(b(i, j));
  return VechVector(std::move(out));
}

inline Matrix vech_inverse(const VechVector& v) {
  const std::size_t g = v.g();
  Matrix m(g, g);
  std::size_t k = 0;
  for (std::size_t j = 0; j < g; ++j)
    for (std::size_t i = j; i < g; ++i) {
      m(i, j) = v[k];
      m(j, i) = v[k];
      ++k;
    }
  return m;
}

/// K_mn: K_mn vec(C) = vec(C') for every m x n matrix C.
inline Matrix commutation_matrix(std::size_t m, std::size_t n) {
  Matrix k(m * n, m * n);
  // vec(C)[j*m + i] = C(i,j) ; vec(C')[i*n + j] = C(i,j)
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) k(i * n + j, j * m + i) = 1.0;
  return k;
}

/// D_n: D_n vech(B) = vec(B) for symmetric B.
inline Matrix duplication_matrix(std::size_t n) {
  Matrix d(n * n, VechVector::length_for_side(n));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) d(j * n + i, VechVector::index(n, i, j)) = 1.0;
  return d;
}

/// Dense LU with partial pivoting. Holds the factors of a square matrix.
class LuDecomposition {
 public:
  explicit LuDecomposition(Matrix a) : lu_(std::move(a)), perm_(lu_.rows()) {
    if (!lu_.square()) throw DimensionError("LU requires a square matrix");
    const std::size_t n = lu_.rows();
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t piv = k;
      for (std::size_t i = k + 1; i < n; ++i)
        if (std::abs(lu_(i, k)) > std::abs(lu_(piv, k))) piv = i;
      if (piv != k) {
        for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(piv, j));
        std::swap(perm_[k], perm_[piv]);
        sign_ = -sign_;
      }
      const double pivot = lu_(k, k);
      if (pivot == 0.0) {
        singular_ = true;
        continue;
      }
      for (std::size_t i = k + 1; i < n; ++i) {
        const double f = lu_(i, k) / pivot;
        lu_(i, k) = f;
        for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= f * lu_(k, j);
      }
    }
  }

  bool singular() const noexcept { return singular_; }

  double determinant() const {
    double d = sign_;
    for (std::size_t i = 0; i < lu_.rows(); ++i) d *= lu_(i, i);
    return d;
  }

  Vector solve(std::span<const double> b) const {
    const std::size_t n = lu_.rows();
    if (b.size() != n) throw DimensionError("LU solve: size mismatch");
    if (singular_) throw NumericalError("LU solve: matrix is singular");
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = b[perm_[i]];
      for (std::size_t j = 0; j < i; ++j) acc -= lu_(i, j) * x[j];
      x[i] = acc;
    }
    for (std::size_t i = n; i-- > 0;) {
      double acc = x[i];
      for (std::size_t j = i + 1; j < n; ++j) acc -= lu_(i, j) * x[j];
      x[i] = acc / lu_(i, i);
    }
    return x;
  }

  Matrix solve(const Matrix& b) const {
    Matrix x(b.rows(), b.cols());
    Vector col(b.rows());
    for (std::size_t j = 0; j < b.cols(); ++j) {
      for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
      const Vector sol = solve(col);
      for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = sol[i];
    }
    return x;
  }

 private:
  Matrix lu_;
  std::vector<std::size_t> perm_;
  double sign_ = 1.0;
  bool singular_ = false;
};

inline Vector solve_linear(const Matrix& a, std::span<const double> b) {
  return LuDecomposition(a).solve(b);
}

inline Matrix inverse(const Matrix& a) { return LuDecomposition(a).solve(Matrix::identity(a.rows())); }

namespace detail {

inline double det_expand(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n == 1) return a(0, 0);
  if (n == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  if (n == 3)
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  // cofactor expansion along the first row
  double d = 0.0;
  Matrix minor(n - 1, n - 1);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t j = 0, mj = 0; j < n; ++j)
        if (j != c) minor(i - 1, mj++) = a(i, j);
    d += ((c % 2) ? -1.0 : 1.0) * a(0, c) * det_expand(minor);
  }
  return d;
}

}  // namespace detail

/// Direct expansion for n <= 4, LU with partial pivoting above.
inline double det(const Matrix& a) {
  if (!a.square()) throw DimensionError("det requires a square matrix");
  if (a.rows() == 0) return 1.0;
  if (a.rows() <= 4) return detail::det_expand(a);
  return LuDecomposition(a).determinant();
}

inline double trace(const Matrix& a) {
  if (!a.square()) throw DimensionError("trace requires a square matrix");
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

/// Lower Cholesky factor; empty optional-like result signalled by `ok`.
struct CholeskyResult {
  Matrix lower;
  bool ok = false;
};

inline CholeskyResult cholesky(const Matrix& a) {
  if (!a.square()) throw DimensionError("cholesky requires a square matrix");
  const std::size_t n = a.rows();
  CholeskyResult r{Matrix(n, n), true};
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= r.lower(j, k) * r.lower(j, k);
    if (!(diag > 0.0)) {
      r.ok = false;
      return r;
    }
    r.lower(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= r.lower(i, k) * r.lower(j, k);
      r.lower(i, j) = s / r.lower(j, j);
    }
  }
  return r;
}

/// Positive definite iff every leading principal minor is positive, which is
/// exactly when the Cholesky recursion never meets a non-positive pivot.
inline bool is_positive_definite(const Matrix& a) {
  if (!a.square()) throw DimensionError("positive-definiteness requires a square matrix");
  if (!a.is_symmetric()) throw DimensionError("positive-definiteness test requires a symmetric matrix");
  return cholesky(a).ok;
}

/// PSD check by Cholesky of a + eps*scale*I.
inline bool is_positive_semidefinite(const Matrix& a, double rel_tol = 1e-9) {
  if (!a.is_symmetric()) return false;
  const double shift = rel_tol * std::max(1.0, a.max_abs());
  Matrix b = a;
  for (std::size_t i = 0; i < b.rows(); ++i) b(i, i) += shift;
  return cholesky(b).ok;
}

/// D_n^+ = (D'D)^{-1} D'. D'D is diagonal (1 on diagonal positions, 2 elsewhere).
inline Matrix duplication_pinv(std::size_t n) {
  const Matrix d = duplication_matrix(n);
  const Matrix dt = d.transpose();
  return inverse(dt * d) * dt;
}

inline Matrix outer(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
  return m;
}

/// Eigenvalues of a symmetric matrix, ascending (cyclic Jacobi).
inline Vector symmetric_eigenvalues(const Matrix& a) {
  if (!a.square()) throw DimensionError("eigenvalues require a square matrix");
  Matrix m = a;
  const std::size_t n = m.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    if (off <= 1e-30 * std::max(1.0, m.max_abs() * m.max_abs())) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (m(p, q) == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
      }
    }
  }
  Vector ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

}  // namespace stratalloc
