#include "fngd/persample.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

namespace fngd {

namespace {

void check_capture(const LayerCapture& c, const char* op) {
  if (c.x.empty() || c.x.size() != c.z.size())
    throw DimensionError(std::string(op) + ": capture has " + std::to_string(c.x.size()) +
                         " input and " + std::to_string(c.z.size()) + " gradient patches");
  const std::size_t m = c.x.front().cols();
  for (std::size_t s = 0; s < c.x.size(); ++s) {
    if (c.x[s].cols() != m || c.z[s].cols() != m)
      throw DimensionError(std::string(op) + ": patch " + std::to_string(s) + " has shapes " +
                           c.x[s].shape() + " and " + c.z[s].shape() + ", batch size " +
                           std::to_string(m));
    if (c.x[s].rows() != c.x.front().rows() || c.z[s].rows() != c.z.front().rows())
      throw DimensionError(std::string(op) + ": ragged patch " + std::to_string(s));
  }
}

}  // namespace

Vector column_mean(const Matrix& gram) {
  Vector mean(gram.rows());
  const double inv_m = 1.0 / static_cast<double>(gram.cols());
  for (std::size_t i = 0; i < gram.rows(); ++i) {
    double s = 0.0;
    for (double v : gram.row(i)) s += v;
    mean[i] = s * inv_m;
  }
  return mean;
}

GramStats gram_dense(const LayerCapture& capture) {
  check_capture(capture, "gram_dense");
  if (capture.patches() != 1)
    throw DimensionError("gram_dense: capture has " + std::to_string(capture.patches()) +
                         " patches; use the explicit-U path");
  GramStats out;
  out.layer = capture.layer;
  out.gram = hadamard(matmul_tn(capture.z[0], capture.z[0]), matmul_tn(capture.x[0], capture.x[0]));
  out.mean_col = column_mean(out.gram);
  return out;
}

Matrix build_u_conv(const LayerCapture& capture, std::size_t max_bytes) {
  check_capture(capture, "build_u_conv");
  const std::size_t outputs = capture.outputs(), fan_in = capture.fan_in(), m = capture.batch_size();
  const std::size_t rows = outputs * fan_in;
  if (rows * m > max_bytes / sizeof(double))
    throw MemoryCapError("explicit U for layer " + std::to_string(capture.layer) + " needs " +
                         std::to_string(rows * m * sizeof(double)) + " bytes, cap is " +
                         std::to_string(max_bytes));
  Matrix u(rows, m);
#pragma omp parallel for schedule(static) if (rows * m * capture.patches() > (1u << 15))
  for (std::size_t o = 0; o < outputs; ++o) {
    for (std::size_t s = 0; s < capture.patches(); ++s) {
      const auto zo = capture.z[s].row(o);
      for (std::size_t p = 0; p < fan_in; ++p) {
        const auto xp = capture.x[s].row(p);
        double* dst = u.data() + (o * fan_in + p) * m;
        for (std::size_t j = 0; j < m; ++j) dst[j] += zo[j] * xp[j];
      }
    }
  }
  return u;
}

GramStats gram_conv(Matrix u, std::size_t layer) {
  GramStats out;
  out.layer = layer;
  out.gram = matmul_tn(u, u);
  out.mean_col = column_mean(out.gram);
  out.u = std::move(u);
  return out;
}

GramStats gram_stats(const LayerCapture& capture, std::size_t max_bytes) {
  if (capture.patches() == 1) return gram_dense(capture);
  return gram_conv(build_u_conv(capture, max_bytes), capture.layer);
}

Matrix per_sample_grad(const LayerCapture& capture, std::size_t m) {
  check_capture(capture, "per_sample_grad");
  if (m >= capture.batch_size())
    throw std::out_of_range("per_sample_grad: sample " + std::to_string(m) + " of " +
                            std::to_string(capture.batch_size()));
  Matrix g(capture.outputs(), capture.fan_in());
  for (std::size_t s = 0; s < capture.patches(); ++s)
    for (std::size_t o = 0; o < g.rows(); ++o) {
      const double zo = capture.z[s](o, m);
      for (std::size_t p = 0; p < g.cols(); ++p) g(o, p) += zo * capture.x[s](p, m);
    }
  return g;
}

Matrix per_sample_grad_dense(const LayerCapture& capture, std::size_t m) {
  if (capture.patches() != 1)
    throw DimensionError("per_sample_grad_dense: capture has " +
                         std::to_string(capture.patches()) + " patches");
  return per_sample_grad(capture, m);
}

void validate_gram(const GramStats& stats) {
  const Matrix& g = stats.gram;
  if (g.rows() != g.cols()) throw DimensionError("validate_gram: non-square " + g.shape());
  const double fro = frobenius_norm(g);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = i + 1; j < g.cols(); ++j)
      if (std::abs(g(i, j) - g(j, i)) > 1e-12 * std::max(1.0, fro))
        throw std::runtime_error("layer " + std::to_string(stats.layer) +
                                 ": Gram matrix is not symmetric");
  const Vector eig = sym_eigvals(g);
  if (eig.size() > 0 && eig[0] < -1e-10 * fro)
    throw std::runtime_error("layer " + std::to_string(stats.layer) +
                             ": Gram matrix has eigenvalue " + std::to_string(eig[0]) +
                             " (backward pass bug?)");
  const Vector expect = column_mean(g);
  if (stats.mean_col.size() != expect.size() ||
      max_abs_diff(stats.mean_col.span(), expect.span()) > 1e-12 * std::max(1.0, max_abs(expect.span())))
    throw std::runtime_error("layer " + std::to_string(stats.layer) +
                             ": column mean does not match (1/M)·G·1");
}

void write_gram_csv(const std::filesystem::path& path, const GramStats& stats) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < stats.gram.rows(); ++i) {
    for (std::size_t j = 0; j < stats.gram.cols(); ++j) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), stats.gram(i, j));
      if (j) out << ',';
      out.write(buf, end - buf);
    }
    out << '\n';
  }
}

}  // namespace fngd
