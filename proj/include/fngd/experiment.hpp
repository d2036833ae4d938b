#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fngd/config.hpp"
#include "fngd/data.hpp"
#include "fngd/natural_gradient.hpp"

namespace fngd {

struct Datasets {
  Dataset train;
  Dataset test;
};

/// Synthetic or IDX data as configured. With squared-error loss the
/// datasets also carry one-hot targets.
Datasets load_data(const DataConfig& data, LossKind loss);

/// Mean loss and accuracy over a whole dataset, evaluated in chunks.
struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate(const Network& net, const Dataset& data, std::size_t chunk = 1024);

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string split;  // train | test
  double loss = 0.0;
  double accuracy = 0.0;  // NaN for regression
  std::string optimizer;
  double wall_ms = 0.0;
};

/// Versioned CSV: a `# fngd metrics v1` line, then
/// epoch,step,split,loss,accuracy,optimizer,wall_ms. Only wall_ms varies
/// between identical runs. Rows are flushed as they are written.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& out);
  void write(const MetricsRow& row);

  static constexpr const char* kHeader = "epoch,step,split,loss,accuracy,optimizer,wall_ms";

 private:
  std::ostream& out_;
};

struct TrainOptions {
  std::optional<std::filesystem::path> save_coeffs;
  std::optional<std::filesystem::path> load_coeffs;
  std::ostream* metrics = nullptr;  // CSV destination; none when null
  std::ostream* log = nullptr;      // human-readable progress
  bool evaluate_test = true;
};

struct TrainSummary {
  std::size_t epochs = 0;
  std::size_t steps = 0;
  double final_train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> epoch_ms;  // training time only, evaluation excluded
  std::optional<CoefficientTable> coefficients;
};

TrainSummary run_train(const TrainConfig& config, const Datasets& data, const TrainOptions& opts);
/// Loads data, writes metrics to <output dir>/<metrics>. FNGD_OUTPUT_DIR
/// overrides the output directory.
TrainSummary run_train(const TrainConfig& config, const TrainOptions& opts);

std::filesystem::path output_dir(const TrainConfig& config);

struct BenchRow {
  std::string optimizer;
  std::string phase;  // all | epoch_one | shared
  double median_epoch_ms = 0.0;
  double ratio_vs_sgd = 0.0;
};

/// Median per-epoch training time for each configured optimizer on the same
/// model, data and batches. FNGD is reported per phase, plus a shared-phase
/// row for the explicit per-sample-gradient path. Runs sequentially.
std::vector<BenchRow> run_bench(const TrainConfig& config, const Datasets& data,
                                std::ostream* log = nullptr);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

struct AblationRow {
  std::string variant;  // fngd | no_sharing | no_acceleration | no_damping
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double median_epoch_ms = 0.0;
  double relative_time = 0.0;  // vs full FNGD
};

/// Full FNGD against three variants that each drop one ingredient: sharing
/// (ngd_smw), the weighted-input product (explicit path), the Frobenius
/// damping rule (λ fixed at 0.3).
std::vector<AblationRow> run_ablate(const TrainConfig& config, const Datasets& data,
                                    std::ostream* log = nullptr);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace fngd
