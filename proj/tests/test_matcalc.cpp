#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "stratalloc/matcalc.hpp"

using namespace stratalloc;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

Matrix random_symmetric(std::size_t g, std::mt19937_64& rng) {
  Matrix a = random_matrix(g, g, rng);
  return 0.5 * (a + a.transpose());
}

Matrix random_spd(std::size_t g, std::mt19937_64& rng) {
  Matrix a = random_matrix(g, g, rng);
  Matrix s = a * a.transpose();
  for (std::size_t i = 0; i < g; ++i) s(i, i) += 0.5;
  return s;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Leibniz formula, independent of LU and cofactor code.
double det_leibniz(const Matrix& a) {
  const std::size_t n = a.rows();
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  double total = 0.0;
  do {
    int inversions = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (p[i] > p[j]) ++inversions;
    double prod = inversions % 2 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) prod *= a(i, p[i]);
    total += prod;
  } while (std::next_permutation(p.begin(), p.end()));
  return total;
}

}  // namespace

TEST(Matrix, ShapeAndArithmetic) {
  Matrix a{{1, 2}, {3, 4}};
  Matrix b{{0, 1}, {1, 0}};
  EXPECT_EQ(a.rows(), 2u);
  EXPECT_EQ((a * b), (Matrix{{2, 1}, {4, 3}}));
  EXPECT_EQ((a + b), (Matrix{{1, 3}, {4, 4}}));
  EXPECT_EQ(a.transpose(), (Matrix{{1, 3}, {2, 4}}));
  EXPECT_THROW(a * Matrix(3, 3), DimensionError);
  EXPECT_THROW(a + Matrix(2, 3), DimensionError);
  EXPECT_DOUBLE_EQ(trace(a), 5.0);
}

TEST(Kron, KnownProductAndMixedProductRule) {
  Matrix a{{1, 2}, {3, 4}};
  Matrix k = kron(a, Matrix::identity(2));
  EXPECT_EQ(k, (Matrix{{1, 0, 2, 0}, {0, 1, 0, 2}, {3, 0, 4, 0}, {0, 3, 0, 4}}));

  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    Matrix A = random_matrix(2, 3, rng), B = random_matrix(3, 2, rng);
    Matrix C = random_matrix(3, 2, rng), D = random_matrix(2, 3, rng);
    Matrix lhs = kron(A, B) * kron(C, D);
    Matrix rhs = kron(A * C, B * D);
    EXPECT_LT((lhs - rhs).max_abs(), 1e-12);
  }
}

TEST(Vech, LayoutIsLowerTriangleColumnMajor) {
  Matrix b{{11, 21, 31}, {21, 22, 32}, {31, 32, 33}};
  const VechVector v = vech(b);
  EXPECT_EQ(v.values(), (Vector{11, 21, 31, 22, 32, 33}));
  EXPECT_EQ(vech_inverse(v), b);
  EXPECT_DOUBLE_EQ(v.at(2, 1), 32.0);
  EXPECT_DOUBLE_EQ(v.at(1, 2), 32.0);
  EXPECT_THROW(vech(Matrix(2, 3)), DimensionError);
  EXPECT_THROW(VechVector::side_for_length(4), DimensionError);
}

TEST(Vech, IndexMatchesEnumeration) {
  for (std::size_t g = 1; g <= 6; ++g) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < g; ++j)
      for (std::size_t i = j; i < g; ++i) EXPECT_EQ(VechVector::index(g, i, j), k++);
    EXPECT_EQ(k, VechVector::length_for_side(g));
    EXPECT_EQ(VechVector::side_for_length(k), g);
  }
}

TEST(Vec, RoundTrip) {
  Matrix c{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(vec(c), (Vector{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(unvec(vec(c), 2, 3), c);
}

TEST(Duplication, IdentitiesOverRandomMatrices) {
  std::mt19937_64 rng(7);
  for (std::size_t g = 1; g <= 4; ++g) {
    const Matrix d = duplication_matrix(g);
    const Matrix dp = duplication_pinv(g);
    EXPECT_LT((dp * d - Matrix::identity(VechVector::length_for_side(g))).max_abs(), 1e-12);
    for (int t = 0; t < 100; ++t) {
      const Matrix b = random_symmetric(g, rng);
      EXPECT_LT(max_abs_diff(d * vech(b).values(), vec(b)), 1e-10);
      EXPECT_LT(max_abs_diff(dp * vec(b), vech(b).values()), 1e-10);
    }
  }
}

TEST(Duplication, PseudoInverseSatisfiesPenroseConditions) {
  for (std::size_t g = 1; g <= 4; ++g) {
    const Matrix d = duplication_matrix(g);
    const Matrix p = duplication_pinv(g);
    EXPECT_LT((d * p * d - d).max_abs(), 1e-12);
    EXPECT_LT((p * d * p - p).max_abs(), 1e-12);
    EXPECT_LT(((d * p).transpose() - d * p).max_abs(), 1e-12);
    EXPECT_LT(((p * d).transpose() - p * d).max_abs(), 1e-12);
  }
}

TEST(Commutation, TransposesVec) {
  std::mt19937_64 rng(11);
  for (std::size_t m = 1; m <= 4; ++m) {
    for (std::size_t n = 1; n <= 4; ++n) {
      const Matrix k = commutation_matrix(m, n);
      EXPECT_EQ(k * commutation_matrix(n, m), Matrix::identity(m * n));
      for (int t = 0; t < 100; ++t) {
        const Matrix c = random_matrix(m, n, rng);
        EXPECT_LT(max_abs_diff(k * vec(c), vec(c.transpose())), 1e-10);
      }
    }
  }
}

TEST(Determinant, KnownValues) {
  EXPECT_DOUBLE_EQ(det(Matrix{{3}}), 3.0);
  EXPECT_DOUBLE_EQ(det(Matrix{{1, 2}, {3, 4}}), -2.0);
  EXPECT_DOUBLE_EQ(det(Matrix{{2, 0, 1}, {1, 3, 2}, {1, 1, 2}}), 6.0);
  EXPECT_DOUBLE_EQ(det(Matrix{{1, 2}, {2, 4}}), 0.0);
  EXPECT_THROW(det(Matrix(2, 3)), DimensionError);
}

TEST(Determinant, AgreesWithLeibnizAndIsMultiplicative) {
  std::mt19937_64 rng(3);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (int t = 0; t < 20; ++t) {
      const Matrix a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
      const double ref = det_leibniz(a);
      EXPECT_NEAR(det(a), ref, 1e-10 * std::max(1.0, std::abs(ref)));
      EXPECT_NEAR(LuDecomposition(a).determinant(), ref, 1e-10 * std::max(1.0, std::abs(ref)));
      const double dab = det(a * b);
      EXPECT_NEAR(dab, det(a) * det(b), 1e-9 * std::max(1.0, std::abs(dab)));
    }
  }
}

TEST(Solve, ResidualAndInverse) {
  std::mt19937_64 rng(5);
  for (std::size_t n = 1; n <= 8; ++n) {
    const Matrix a = random_spd(n, rng);
    Vector b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<double>(i) - 1.5;
    const Vector x = solve_linear(a, b);
    EXPECT_LT(max_abs_diff(a * x, b), 1e-10);
    EXPECT_LT((a * inverse(a) - Matrix::identity(n)).max_abs(), 1e-10);
  }
  EXPECT_THROW(solve_linear(Matrix{{1, 2}, {2, 4}}, Vector{1, 1}), NumericalError);
}

TEST(Cholesky, FactorReproducesMatrix) {
  std::mt19937_64 rng(9);
  for (std::size_t n = 1; n <= 6; ++n) {
    const Matrix a = random_spd(n, rng);
    const auto c = cholesky(a);
    ASSERT_TRUE(c.ok);
    EXPECT_LT((c.lower * c.lower.transpose() - a).max_abs(), 1e-10 * a.max_abs());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) EXPECT_EQ(c.lower(i, j), 0.0);
  }
}

TEST(Definiteness, Classification) {
  EXPECT_TRUE(is_positive_definite(Matrix{{2, 1}, {1, 2}}));
  EXPECT_FALSE(is_positive_definite(Matrix{{1, 2}, {2, 1}}));
  EXPECT_FALSE(is_positive_definite(Matrix{{1, 1}, {1, 1}}));
  EXPECT_TRUE(is_positive_semidefinite(Matrix{{1, 1}, {1, 1}}));
  EXPECT_FALSE(is_positive_semidefinite(Matrix{{1, 2}, {2, 1}}));
  EXPECT_TRUE(is_positive_semidefinite(outer(Vector{1, 2, 3}, Vector{1, 2, 3})));
  EXPECT_THROW(is_positive_definite(Matrix(2, 3)), DimensionError);
  EXPECT_THROW(is_positive_definite(Matrix{{1, 2}, {0, 1}}), DimensionError);
}

TEST(Eigenvalues, TraceDeterminantAndClosedForm) {
  const Vector ev = symmetric_eigenvalues(Matrix{{2, 1}, {1, 2}});
  EXPECT_NEAR(ev[0], 1.0, 1e-12);
  EXPECT_NEAR(ev[1], 3.0, 1e-12);
  std::mt19937_64 rng(13);
  for (std::size_t n = 1; n <= 6; ++n) {
    const Matrix a = random_symmetric(n, rng);
    const Vector e = symmetric_eigenvalues(a);
    EXPECT_TRUE(std::is_sorted(e.begin(), e.end()));
    EXPECT_NEAR(std::accumulate(e.begin(), e.end(), 0.0), trace(a), 1e-10);
    double prod = 1.0;
    for (double v : e) prod *= v;
    EXPECT_NEAR(prod, det(a), 1e-9);
  }
}

TEST(Outer, Entries) {
  EXPECT_EQ(outer(Vector{1, 2}, Vector{3, 4, 5}), (Matrix{{3, 4, 5}, {6, 8, 10}}));
}
