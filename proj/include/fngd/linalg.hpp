#pragma once

// Dense row-major matrices and vectors of doubles plus the handful of
// operations the optimizer needs. Products run as OpenMP kernels whose
// results are bitwise identical to the serial reference in serial.hpp
// for any thread count.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fngd {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the Cholesky factorization when a pivot is not strictly positive.
class NotSpdError : public std::runtime_error {
 public:
  NotSpdError(std::size_t pivot, double value);
  std::size_t pivot() const { return pivot_; }
  double value() const { return value_; }

 private:
  std::size_t pivot_;
  double value_;
};

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vector(std::initializer_list<double> values);
  /// Takes ownership of user data; rejects NaN and Inf.
  static Vector from(std::vector<double> values);

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }
  const std::vector<double>& values() const { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Row-by-row literal, e.g. {{1, 2}, {3, 4}}. Rejects ragged rows and
  /// non-finite entries.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);
  /// Wraps row-major storage; rejects a length mismatch and non-finite entries.
  static Matrix from(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vector col(std::size_t c) const;
  void set_col(std::size_t c, const Vector& v);

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  /// "RxC", used in error messages.
  std::string shape() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Products. matmul_tn is aᵀb and matmul_nt is abᵀ; neither forms the transpose
// of its left operand.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, const Vector& x);
Vector matvec_t(const Matrix& a, const Vector& x);
Matrix transpose(const Matrix& a);

/// Column-wise Kronecker product: column m of the result is a[:,m] ⊗ b[:,m],
/// so row p·b.rows()+q holds a(p,m)·b(q,m).
Matrix khatri_rao(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Multiplies column m of `a` by w[m].
Matrix scale_columns(const Matrix& a, const Vector& w);

/// Lower-triangular Cholesky factor, no pivoting. Throws NotSpdError.
Matrix cholesky(const Matrix& a);
Vector cholesky_solve(const Matrix& lower, const Vector& b);
Vector solve_spd(const Matrix& a, const Vector& b);

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
Vector sym_eigvals(const Matrix& a);

struct SymEigen {
  Vector values;   // ascending
  Matrix vectors;  // column k pairs with values[k]
};
SymEigen sym_eig(const Matrix& a);

double frobenius_norm(const Matrix& a);
double dot(const Vector& x, const Vector& y);
double norm2(const Vector& x);
double max_abs(std::span<const double> x);
double max_abs_diff(std::span<const double> x, std::span<const double> y);
bool all_finite(std::span<const double> x);

// In-place helpers.
void axpy(double alpha, const Matrix& x, Matrix& y);
void axpy(double alpha, const Vector& x, Vector& y);
void scale(Matrix& a, double s);
void scale(Vector& v, double s);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Vector operator+(const Vector& a, const Vector& b);
Vector operator-(const Vector& a, const Vector& b);
Vector operator*(double s, const Vector& v);

}  // namespace fngd
