// Serial reference kernels against the OpenMP ones at the shapes of the
// 784-256-10 benchmark model with M = 128.

#include <benchmark/benchmark.h>

#include <random>

#include "fngd/linalg.hpp"
#include "fngd/persample.hpp"
#include "fngd/serial.hpp"

namespace {

using fngd::Matrix;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix a(rows, cols);
  for (double& v : a.span()) v = normal(rng);
  return a;
}

constexpr std::size_t kIn = 784, kHidden = 256, kBatch = 128;

// W·X, the first-layer forward product.
void BM_Matmul_Serial(benchmark::State& state) {
  const Matrix w = random_matrix(kHidden, kIn, 1), x = random_matrix(kIn, kBatch, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fngd::serial::matmul(w, x));
}
void BM_Matmul_Parallel(benchmark::State& state) {
  const Matrix w = random_matrix(kHidden, kIn, 1), x = random_matrix(kIn, kBatch, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fngd::matmul(w, x));
}

// XᵀX, the input half of the dense Gram.
void BM_MatmulTN_Serial(benchmark::State& state) {
  const Matrix x = random_matrix(kIn, kBatch, 3);
  for (auto _ : state) benchmark::DoNotOptimize(fngd::serial::matmul_tn(x, x));
}
void BM_MatmulTN_Parallel(benchmark::State& state) {
  const Matrix x = random_matrix(kIn, kBatch, 3);
  for (auto _ : state) benchmark::DoNotOptimize(fngd::matmul_tn(x, x));
}

// Z·Xᵀ, the weight gradient.
void BM_MatmulNT_Serial(benchmark::State& state) {
  const Matrix z = random_matrix(kHidden, kBatch, 4), x = random_matrix(kIn, kBatch, 5);
  for (auto _ : state) benchmark::DoNotOptimize(fngd::serial::matmul_nt(z, x));
}
void BM_MatmulNT_Parallel(benchmark::State& state) {
  const Matrix z = random_matrix(kHidden, kBatch, 4), x = random_matrix(kIn, kBatch, 5);
  for (auto _ : state) benchmark::DoNotOptimize(fngd::matmul_nt(z, x));
}

// (ZᵀZ)∘(XᵀX) for the first layer.
void BM_Gram_Serial(benchmark::State& state) {
  const Matrix z = random_matrix(kHidden, kBatch, 6), x = random_matrix(kIn, kBatch, 7);
  for (auto _ : state)
    benchmark::DoNotOptimize(fngd::serial::hadamard(fngd::serial::matmul_tn(z, z), fngd::serial::matmul_tn(x, x)));
}
void BM_Gram_Parallel(benchmark::State& state) {
  fngd::LayerCapture cap;
  cap.x.push_back(random_matrix(kIn, kBatch, 7));
  cap.z.push_back(random_matrix(kHidden, kBatch, 6));
  for (auto _ : state) benchmark::DoNotOptimize(fngd::gram_dense(cap));
}

BENCHMARK(BM_Matmul_Serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Matmul_Parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulTN_Serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulTN_Parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulNT_Serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulNT_Parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gram_Serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gram_Parallel)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
