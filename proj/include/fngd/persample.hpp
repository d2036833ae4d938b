#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "fngd/linalg.hpp"
#include "fngd/nn.hpp"

namespace fngd {

/// Sample-similarity statistics of one layer for one batch. `gram` is UᵀU,
/// where column m of U is the per-sample weight gradient of sample m, and
/// `mean_col` is (1/M)·G·𝟙, which equals Uᵀg for the batch-mean gradient g.
struct GramStats {
  std::size_t layer = 0;
  Matrix gram;
  Vector mean_col;
  std::optional<Matrix> u;  // kept only on the conv path
};

/// Byte budget for an explicit U (N_l × M doubles).
inline constexpr std::size_t kDefaultUByteCap = std::size_t{64} << 20;

class MemoryCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense capture: G = (ZᵀZ) ∘ (XᵀX) without forming U.
GramStats gram_dense(const LayerCapture& capture);

/// Explicit U for a patch capture: U = Σ_s z_s ⊙ x_s, shape (O·fan_in) × M.
/// Works for dense captures too (one patch). Throws MemoryCapError when U
/// would exceed `max_bytes`.
Matrix build_u_conv(const LayerCapture& capture, std::size_t max_bytes = kDefaultUByteCap);

/// G = UᵀU from an explicit U; the result keeps U.
GramStats gram_conv(Matrix u, std::size_t layer = 0);

/// Dense identity for single-patch captures, explicit U otherwise.
GramStats gram_stats(const LayerCapture& capture, std::size_t max_bytes = kDefaultUByteCap);

/// Per-sample weight gradient G^m = Σ_s z_s[:,m]·x_s[:,m]ᵀ (O × fan_in).
/// Diagnostic path; training never calls it.
Matrix per_sample_grad(const LayerCapture& capture, std::size_t m);
Matrix per_sample_grad_dense(const LayerCapture& capture, std::size_t m);

/// (1/M)·G·𝟙.
Vector column_mean(const Matrix& gram);

/// Throws std::runtime_error unless G is symmetric to 1e-12, has no
/// eigenvalue below −1e-10·‖G‖_F, and mean_col matches (1/M)·G·𝟙.
void validate_gram(const GramStats& stats);

/// Raw G as CSV, one row per line.
void write_gram_csv(const std::filesystem::path& path, const GramStats& stats);

}  // namespace fngd
