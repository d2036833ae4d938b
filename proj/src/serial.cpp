#include "fngd/serial.hpp"

namespace fngd::serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + a.shape() + " times " + b.shape());
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: row counts differ, " + a.shape() + " and " + b.shape());
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: column counts differ, " + a.shape() + " and " + b.shape());
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  return c;
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("khatri_rao: column counts differ, " + a.shape() + " and " + b.shape());
  Matrix c(a.rows() * b.rows(), a.cols());
  for (std::size_t m = 0; m < a.cols(); ++m)
    for (std::size_t p = 0; p < a.rows(); ++p)
      for (std::size_t q = 0; q < b.rows(); ++q) c(p * b.rows() + q, m) = a(p, m) * b(q, m);
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("hadamard: shape mismatch " + a.shape() + " vs " + b.shape());
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) * b(i, j);
  return c;
}

Matrix scale_columns(const Matrix& a, const Vector& w) {
  if (a.cols() != w.size())
    throw DimensionError("scale_columns: " + a.shape() + " with " + std::to_string(w.size()) +
                         " weights");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) * w[j];
  return c;
}

}  // namespace fngd::serial
