#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "fngd/linalg.hpp"

namespace fngd {

using Labels = std::vector<std::uint32_t>;

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, dimension_overflow, compression };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Image files (magic 0x00000803) decode to a (rows·cols)×n matrix scaled to
/// [0,1]; label files (magic 0x00000801) to n class indices. Gzip input is
/// detected by its 0x1F 0x8B prefix.
using IdxContents = std::variant<Matrix, Labels>;

IdxContents load_idx(const std::filesystem::path& path);
IdxContents parse_idx(std::span<const std::uint8_t> bytes);
Matrix load_idx_images(const std::filesystem::path& path);
Labels load_idx_labels(const std::filesystem::path& path);

/// Writes a uint8 IDX file; one dimension gives a label file, three an image
/// file. A ".gz" extension gzips the output.
void write_idx(const std::filesystem::path& path, std::span<const std::uint32_t> dims,
               std::span<const std::uint8_t> payload);

struct Batch {
  Matrix inputs;  // features × M
  Labels labels;  // classification targets
  Matrix values;  // regression targets, outputs × M
  std::size_t size() const { return inputs.cols(); }
  bool is_classification() const { return !labels.empty(); }
};

struct Dataset {
  Matrix inputs;  // features × n
  Labels labels;
  Matrix values;
  std::size_t num_classes = 0;  // zero for regression data

  std::size_t size() const { return inputs.cols(); }
  std::size_t features() const { return inputs.rows(); }
  bool is_classification() const { return num_classes > 0; }

  /// Throws std::invalid_argument when targets do not line up with inputs.
  void validate() const;
  Batch gather(std::span<const std::size_t> indices) const;
};

Dataset make_classification(Matrix inputs, Labels labels, std::size_t num_classes);
Dataset make_regression(Matrix inputs, Matrix values);

/// k Gaussian clusters around random unit-norm means. The noise scale is a
/// quarter of the closest pair of means, so every pair is at least 4σ apart.
/// Labels are balanced (n/k each, remainder spread over the first classes)
/// and sample order is shuffled.
Dataset synthetic_classification(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed);

/// First `n_first` samples and the remainder.
std::pair<Dataset, Dataset> split(const Dataset& data, std::size_t n_first);

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         std::size_t limit = 0);

/// Shuffled drop-last batching for one epoch.
struct BatchPlan {
  std::uint64_t epoch_seed = 0;
  std::size_t batch_size = 0;
  std::vector<std::size_t> order;  // permutation of 0..n-1
  bool drop_last = true;

  std::size_t num_batches() const { return batch_size == 0 ? 0 : order.size() / batch_size; }
  std::span<const std::size_t> batch(std::size_t i) const {
    return {order.data() + i * batch_size, batch_size};
  }
};

/// Seeded Fisher–Yates permutation of 0..n-1 (std::mt19937_64).
BatchPlan plan_batches(std::size_t n, std::size_t batch_size, std::uint64_t epoch_seed);
std::vector<std::vector<std::size_t>> batches(const Dataset& data, std::size_t batch_size,
                                              std::uint64_t epoch_seed);

inline std::uint64_t epoch_seed(std::uint64_t base_seed, std::size_t epoch) {
  return base_seed + epoch;
}

}  // namespace fngd
