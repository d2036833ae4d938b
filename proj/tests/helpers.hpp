#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "fngd/data.hpp"
#include "fngd/linalg.hpp"
#include "fngd/nn.hpp"

namespace fngd::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix a(rows, cols);
  for (double& v : a.span()) v = normal(rng);
  return a;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<double>(s);
    }
  return c;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// Column m of the result is kron(a[:,m], b[:,m]), built entry by entry.
inline Matrix naive_khatri_rao(const Matrix& a, const Matrix& b) {
  Matrix u(a.rows() * b.rows(), a.cols());
  for (std::size_t m = 0; m < a.cols(); ++m)
    for (std::size_t p = 0; p < a.rows(); ++p)
      for (std::size_t q = 0; q < b.rows(); ++q) u(p * b.rows() + q, m) = a(p, m) * b(q, m);
  return u;
}

/// Determinant by Gaussian elimination with partial pivoting.
inline double determinant(Matrix a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

/// Solves a·x = b by Gauss-Jordan elimination on the full matrix.
inline Vector gauss_solve(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
    std::swap(b[k], b[piv]);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == k) continue;
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a(i, i);
  return b;
}

inline double rel_err(std::span<const double> got, std::span<const double> want) {
  return max_abs_diff(got, want) / std::max(1e-300, max_abs(want));
}

/// Central difference of f around x[i], step 1e-6·(1 + |x_i|).
inline double central_difference(const std::function<double()>& f, double& x) {
  const double h = 1e-6 * (1.0 + std::abs(x));
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline Batch labelled_batch(Matrix inputs, Labels labels) {
  Batch b;
  b.inputs = std::move(inputs);
  b.labels = std::move(labels);
  return b;
}

inline Labels random_labels(std::size_t m, std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(k - 1));
  Labels y(m);
  for (auto& v : y) v = pick(rng);
  return y;
}

/// conv(1→2, K3, same, 5×5) relu → conv(2→2, K3, valid) relu → dense(18→3)
inline std::vector<LayerSpec> toy_conv_specs() {
  return {LayerSpec::conv(1, 2, 3, Padding::same, 5, 5, Activation::relu),
          LayerSpec::conv(2, 2, 3, Padding::valid, 5, 5, Activation::relu),
          LayerSpec::dense(18, 3)};
}

}  // namespace fngd::test
