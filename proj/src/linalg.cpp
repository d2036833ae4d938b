#include "fngd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fngd {

namespace {

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelWork = 1u << 15;

void require_finite(std::span<const double> values, const char* what) {
  if (!all_finite(values)) throw NonFiniteError(std::string(what) + ": non-finite entry");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

// c(i,:) += a(i,k) * b(k,:) for k ascending. Every kernel funnels into this
// loop nest so that entry (i,j) always sums its terms in k order.
void gemm_rows(const double* a, std::size_t a_stride, const double* b, std::size_t inner,
               std::size_t cols, double* c, std::size_t rows) {
#pragma omp parallel for schedule(static) if (rows * inner * cols > kParallelWork)
  for (std::size_t i = 0; i < rows; ++i) {
    double* ci = c + i * cols;
    const double* ai = a + i * a_stride;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = ai[k];
      const double* bk = b + k * cols;
      for (std::size_t j = 0; j < cols; ++j) ci[j] += aik * bk[j];
    }
  }
}

}  // namespace

NotSpdError::NotSpdError(std::size_t pivot, double value)
    : std::runtime_error("matrix is not SPD: pivot " + std::to_string(pivot) + " is " +
                         std::to_string(value)),
      pivot_(pivot),
      value_(value) {}

Vector::Vector(std::initializer_list<double> values) : data_(values) {
  require_finite(data_, "Vector");
}

Vector Vector::from(std::vector<double> values) {
  require_finite(values, "Vector");
  Vector v;
  v.data_ = std::move(values);
  return v;
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged row literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  require_finite(data_, "Matrix");
}

Matrix Matrix::from(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols)
    throw DimensionError("Matrix: " + std::to_string(values.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  require_finite(values, "Matrix");
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(values);
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Vector Matrix::col(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

void Matrix::set_col(std::size_t c, const Vector& v) {
  if (v.size() != rows_) throw DimensionError("set_col: length " + std::to_string(v.size()) +
                                              " for " + shape());
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

std::string Matrix::shape() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + a.shape() + " times " + b.shape());
  Matrix c(a.rows(), b.cols());
  gemm_rows(a.data(), a.cols(), b.data(), a.cols(), b.cols(), c.data(), a.rows());
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: row counts differ, " + a.shape() + " and " + b.shape());
  const std::size_t n = a.cols(), inner = a.rows(), p = b.cols();
  Matrix c(n, p);
#pragma omp parallel for schedule(static) if (n * inner * p > kParallelWork)
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * p;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aki = a(k, i);
      const double* bk = b.data() + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: column counts differ, " + a.shape() + " and " + b.shape());
  const Matrix bt = transpose(b);
  Matrix c(a.rows(), b.rows());
  gemm_rows(a.data(), a.cols(), bt.data(), a.cols(), bt.cols(), c.data(), a.rows());
  return c;
}

Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols() != x.size())
    throw DimensionError("matvec: " + a.shape() + " times vector of length " +
                         std::to_string(x.size()));
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

Vector matvec_t(const Matrix& a, const Vector& x) {
  if (a.rows() != x.size())
    throw DimensionError("matvec_t: transpose of " + a.shape() + " times vector of length " +
                         std::to_string(x.size()));
  Vector y(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * x[i];
  return y;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("khatri_rao: column counts differ, " + a.shape() + " and " + b.shape());
  const std::size_t m = a.cols(), q = b.rows();
  Matrix c(a.rows() * q, m);
#pragma omp parallel for schedule(static) if (a.rows() * q * m > kParallelWork)
  for (std::size_t p = 0; p < a.rows(); ++p) {
    for (std::size_t r = 0; r < q; ++r) {
      double* out = c.data() + (p * q + r) * m;
      for (std::size_t j = 0; j < m; ++j) out[j] = a(p, j) * b(r, j);
    }
  }
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c(a.rows(), a.cols());
  const std::size_t n = a.size();
#pragma omp parallel for schedule(static) if (n > kParallelWork)
  for (std::size_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

Matrix scale_columns(const Matrix& a, const Vector& w) {
  if (a.cols() != w.size())
    throw DimensionError("scale_columns: " + a.shape() + " with " + std::to_string(w.size()) +
                         " weights");
  Matrix c(a.rows(), a.cols());
#pragma omp parallel for schedule(static) if (a.size() > kParallelWork)
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) * w[j];
  return c;
}

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("cholesky: non-square " + a.shape());
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) throw NotSpdError(j, d);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Vector cholesky_solve(const Matrix& lower, const Vector& b) {
  const std::size_t n = lower.rows();
  if (b.size() != n)
    throw DimensionError("cholesky_solve: factor " + lower.shape() + ", rhs length " +
                         std::to_string(b.size()));
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * y[k];
    y[i] = s / lower(i, i);
  }
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * x[k];
    x[ii] = s / lower(ii, ii);
  }
  return x;
}

Vector solve_spd(const Matrix& a, const Vector& b) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw DimensionError("solve_spd: " + a.shape() + " with rhs length " +
                         std::to_string(b.size()));
  return cholesky_solve(cholesky(a), b);
}

SymEigen sym_eig(const Matrix& input) {
  if (input.rows() != input.cols()) throw DimensionError("sym_eig: non-square " + input.shape());
  const std::size_t n = input.rows();
  const double tol = 1e-12 * std::max(1.0, max_abs(input.span()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(input(i, j) - input(j, i)) > tol)
        throw std::invalid_argument("sym_eig: matrix is not symmetric at (" + std::to_string(i) +
                                    "," + std::to_string(j) + ")");

  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));
  Matrix v = Matrix::identity(n);
  const double total = frobenius_norm(a);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off == 0.0 || std::sqrt(off) <= 1e-15 * total) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  SymEigen out{Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

Vector sym_eigvals(const Matrix& a) { return sym_eig(a).values; }

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double x : a.span()) s += x * x;
  return std::sqrt(s);
}

double dot(const Vector& x, const Vector& y) {
  if (x.size() != y.size())
    throw DimensionError("dot: lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm2(const Vector& x) { return std::sqrt(dot(x, x)); }

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw DimensionError("max_abs_diff: lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] += alpha * x.data()[i];
}

void axpy(double alpha, const Vector& x, Vector& y) {
  if (x.size() != y.size())
    throw DimensionError("axpy: lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(Matrix& a, double s) {
  for (double& x : a.span()) x *= s;
}

void scale(Vector& v, double s) {
  for (double& x : v) x *= s;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  Matrix c = a;
  axpy(1.0, b, c);
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  Matrix c = a;
  axpy(-1.0, b, c);
  return c;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  scale(c, s);
  return c;
}

Vector operator+(const Vector& a, const Vector& b) {
  Vector c = a;
  axpy(1.0, b, c);
  return c;
}

Vector operator-(const Vector& a, const Vector& b) {
  Vector c = a;
  axpy(-1.0, b, c);
  return c;
}

Vector operator*(double s, const Vector& v) {
  Vector c = v;
  scale(c, s);
  return c;
}

}  // namespace fngd
