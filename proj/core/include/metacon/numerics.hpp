#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace metacon {

/// Dense real vector. All library arithmetic is 64-bit.
using Vector = std::vector<double>;

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Vector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transposed() const;
  void fill(double value);

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double scale);

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(const Matrix& a, const Matrix& b);

// Vector helpers. Length mismatches throw ContractViolation.
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double max_abs(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector add(std::span<const double> a, std::span<const double> b);
Vector subtract(std::span<const double> a, std::span<const double> b);
Vector scaled(std::span<const double> a, double s);
bool all_finite(std::span<const double> a);

Vector matvec(const Matrix& m, std::span<const double> x);
Vector matvec_transposed(const Matrix& m, std::span<const double> x);
Matrix outer(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Matrix& m);

/// Numerically stable softmax (max-subtracted). Throws ContractViolation on
/// empty or non-finite input.
Vector softmax(std::span<const double> logits);

/// Eigen-pairs of a symmetric matrix, eigenvalues sorted descending and
/// eigenvectors stored as the matching columns of `vectors`.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};

/// Cyclic Jacobi eigensolver for small symmetric matrices.
/// Throws ContractViolation for non-square input or asymmetry above 1e-10.
SymmetricEigen symmetric_eig(const Matrix& m);

/// a.b / (|a||b|). Throws DegenerateInput on a zero-norm argument.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Counter-based random stream. Draw i of a stream is a pure function of
/// (seed, i), so sequences are identical across runs and platforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double gaussian() noexcept;

  /// Independent child stream keyed by `stream_id`. Does not advance this stream.
  RngStream split(std::uint64_t stream_id) const noexcept;

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// n i.i.d. normal draws. Throws ContractViolation for negative stddev.
Vector draw_gaussian(RngStream& rng, std::size_t n, double mean, double stddev);

/// Uniformly random permutation of 0..n-1 (Fisher-Yates).
std::vector<std::size_t> random_permutation(RngStream& rng, std::size_t n);

}  // namespace metacon
