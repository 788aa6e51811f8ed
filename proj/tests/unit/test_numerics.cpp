#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "metacon/errors.hpp"
#include "metacon/numerics.hpp"
#include "test_util.hpp"

using namespace metacon;
using metacon::testutil::random_matrix;

TEST(Softmax, SymmetricPair) {
  const Vector p = softmax(Vector{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, FiveZerosIsUniform) {
  for (double v : softmax(Vector(5, 0.0))) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Softmax, OneZeroMatchesHighPrecisionValue) {
  // e / (e + 1) to 21 digits.
  const Vector p = softmax(Vector{1.0, 0.0});
  EXPECT_NEAR(p[0], 0.731058578630004879251, 1e-15);
  EXPECT_NEAR(p[1], 0.268941421369995120749, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  RngStream rng(7);
  for (int t = 0; t < 50; ++t) {
    Vector z = draw_gaussian(rng, 6, 0.0, 5.0);
    const Vector p = softmax(z);
    for (double& v : z) v += 123.25;
    const Vector q = softmax(z);
    EXPECT_LE(testutil::max_abs_diff(p, q), 1e-12);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GT(v, 0.0);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Vector p = softmax(Vector{1000.0, 999.0});
  EXPECT_NEAR(p[0], 0.731058578630004879251, 1e-15);
}

TEST(Softmax, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(softmax(Vector{}), ContractViolation);
  EXPECT_THROW(softmax(Vector{0.0, std::nan("")}), NumericError);
  EXPECT_THROW(softmax(Vector{0.0, INFINITY}), NumericError);
}

TEST(SymmetricEig, IdentityHasUnitEigenvalues) {
  const auto e = symmetric_eig(Matrix::identity(2));
  EXPECT_DOUBLE_EQ(e.values[0], 1.0);
  EXPECT_DOUBLE_EQ(e.values[1], 1.0);
}

TEST(SymmetricEig, AllOnesTopEigenvectorIsDiagonal) {
  const auto e = symmetric_eig(Matrix(2, 2, 1.0));
  EXPECT_NEAR(e.values[0], 2.0, 1e-12);
  EXPECT_NEAR(e.values[1], 0.0, 1e-12);
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(e.vectors(0, 0)), s, 1e-12);
  EXPECT_NEAR(std::abs(e.vectors(1, 0)), s, 1e-12);
  EXPECT_GT(e.vectors(0, 0) * e.vectors(1, 0), 0.0);
}

TEST(SymmetricEig, RandomReconstructionOrthonormalityAndTrace) {
  RngStream rng(11);
  for (std::size_t n : {1u, 2u, 5u, 9u, 24u}) {
    const Matrix a = random_matrix(rng, n, n);
    const Matrix m = a + a.transposed();
    const auto e = symmetric_eig(m);
    for (std::size_t i = 1; i < n; ++i) EXPECT_GE(e.values[i - 1], e.values[i]);

    Matrix lambda(n, n);
    for (std::size_t i = 0; i < n; ++i) lambda(i, i) = e.values[i];
    const Matrix recon = e.vectors * lambda * e.vectors.transposed();
    EXPECT_LE(testutil::max_abs_diff(recon.data(), m.data()), 1e-8);

    const Matrix gram = e.vectors.transposed() * e.vectors;
    EXPECT_LE(testutil::max_abs_diff(gram.data(), Matrix::identity(n).data()), 1e-8);

    for (std::size_t i = 0; i < n; ++i) {
      const Vector v = e.vectors.column(i);
      const Vector mv = matvec(m, v);
      EXPECT_LE(testutil::max_abs_diff(mv, scaled(v, e.values[i])), 1e-8);
    }
    double trace = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      trace += m(i, i);
      sum += e.values[i];
    }
    EXPECT_NEAR(trace, sum, 1e-8);
  }
}

TEST(SymmetricEig, RejectsNonSquareAndAsymmetric) {
  EXPECT_THROW(symmetric_eig(Matrix(2, 3)), ContractViolation);
  Matrix m = Matrix::identity(3);
  m(0, 1) = 1e-6;
  EXPECT_THROW(symmetric_eig(m), ContractViolation);
  m(1, 0) = 1e-6 + 1e-12;
  EXPECT_NO_THROW(symmetric_eig(m));
}

TEST(CosineSimilarity, Examples) {
  const Vector v{0.3, -2.0, 4.0};
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity(Vector{1, 1}, Vector{1, 0}), 0.70710678118654752440, 1e-15);
}

TEST(CosineSimilarity, ScaleInvariantAndBounded) {
  RngStream rng(3);
  for (int t = 0; t < 100; ++t) {
    const Vector a = draw_gaussian(rng, 7, 0.0, 1.0);
    const Vector b = draw_gaussian(rng, 7, 0.0, 1.0);
    const double c = cosine_similarity(a, b);
    EXPECT_NEAR(cosine_similarity(scaled(a, 3.5), scaled(b, 0.01)), c, 1e-12);
    EXPECT_LE(std::abs(c), 1.0);
  }
}

TEST(CosineSimilarity, ZeroNormIsDegenerate) {
  EXPECT_THROW(cosine_similarity(Vector{0, 0}, Vector{1, 0}), DegenerateInput);
  EXPECT_THROW(cosine_similarity(Vector{1, 0}, Vector{0, 0}), DegenerateInput);
}

TEST(DrawGaussian, ZeroStddevIsMean) {
  RngStream rng(1);
  EXPECT_EQ(draw_gaussian(rng, 2, 3.0, 0.0), (Vector{3.0, 3.0}));
}

TEST(DrawGaussian, DeterministicPerSeedAndCounter) {
  RngStream a(42, 17), b(42, 17);
  EXPECT_EQ(draw_gaussian(a, 64, 0.0, 1.0), draw_gaussian(b, 64, 0.0, 1.0));
  EXPECT_EQ(a.counter(), b.counter());
  EXPECT_GT(a.counter(), 17u);
}

TEST(DrawGaussian, MomentsOverManyDraws) {
  RngStream rng(2024);
  const Vector x = draw_gaussian(rng, 100000, 0.0, 1.0);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (x.size() - 1));
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sd, 1.0, 0.02);
}

TEST(DrawGaussian, NegativeStddevRejected) {
  RngStream rng(1);
  EXPECT_THROW(draw_gaussian(rng, 3, 0.0, -1.0), ContractViolation);
}

TEST(RngStream, SeedZeroMatchesReferenceSplitMix64) {
  // Published SplitMix64 outputs for state 0.
  RngStream a(0);
  EXPECT_EQ(a.next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(a.next_u64(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(a.next_u64(), 0x06C45D188009454FULL);
  RngStream b(0, 1);
  EXPECT_EQ(b.next_u64(), 0x6E789E6AA1B965F4ULL);
}

TEST(RngStream, SplitStreamsDifferAndDoNotAdvanceParent) {
  RngStream parent(5);
  const auto before = parent;
  RngStream c1 = parent.split(1), c2 = parent.split(2), c1b = parent.split(1);
  EXPECT_EQ(parent, before);
  EXPECT_EQ(c1.next_u64(), c1b.next_u64());
  RngStream d1 = parent.split(1), d2 = parent.split(2);
  EXPECT_NE(d1.next_u64(), d2.next_u64());
  EXPECT_NE(c2.next_u64(), parent.next_u64());
}

TEST(RngStream, UniformInRangeAndIndexUnbiased) {
  RngStream rng(9);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++counts[rng.uniform_index(7)];
  }
  // Chi-square with 6 degrees of freedom; 16.81 is the 0.99 quantile.
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  EXPECT_LT(chi2, 16.81);
  EXPECT_THROW(rng.uniform_index(0), ContractViolation);
}

TEST(RandomPermutation, IsPermutation) {
  RngStream rng(4);
  for (std::size_t n : {0u, 1u, 5u, 33u}) {
    auto p = random_permutation(rng, n);
    std::set<std::size_t> s(p.begin(), p.end());
    EXPECT_EQ(s.size(), n);
    if (n) EXPECT_EQ(*s.rbegin(), n - 1);
  }
}

TEST(Matrix, ArithmeticAndShapes) {
  Matrix a(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Matrix at = a.transposed();
  EXPECT_EQ(at.rows(), 3u);
  EXPECT_EQ(at(2, 1), 6.0);
  const Matrix p = a * at;
  EXPECT_EQ(p(0, 0), 14.0);
  EXPECT_EQ(p(0, 1), 32.0);
  EXPECT_EQ(p(1, 1), 77.0);
  EXPECT_EQ(matvec(a, Vector{1, 0, -1}), (Vector{-2, -2}));
  EXPECT_EQ(matvec_transposed(a, Vector{1, 1}), (Vector{5, 7, 9}));
  EXPECT_THROW(a * a, ContractViolation);
  EXPECT_THROW(dot(Vector{1}, Vector{1, 2}), ContractViolation);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ContractViolation);
  const Matrix o = outer(Vector{1, 2}, Vector{3, 4, 5});
  EXPECT_EQ(o(1, 2), 10.0);
  EXPECT_NEAR(frobenius_norm(Matrix::identity(4)), 2.0, 1e-15);
}
