#pragma once

// Run configuration. The file format is INI-style: `[section]` headers and
// `key = value` lines, `;` or `#` comments. See configs/ for examples and the
// README for every key.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fngd/nn.hpp"
#include "fngd/optim.hpp"

namespace fngd {

/// Names the offending field as `section.key`.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx
  std::size_t n = 2000;              // synthetic training samples
  std::size_t test_n = 500;
  std::size_t dim = 20;
  std::size_t classes = 2;
  std::uint64_t seed = 1;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t limit = 0;       // 0 keeps every training sample
  std::size_t test_limit = 0;  // idx only
};

struct ModelConfig {
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::cross_entropy;
  std::uint64_t init_seed = 1;
};

struct TrainSettings {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  std::string schedule = "step";  // step | constant
  std::vector<std::size_t> milestones;  // overrides the ⌈T/2⌉, ⌈3T/4⌉ default
};

struct OutputConfig {
  std::filesystem::path dir = ".";
  std::string metrics = "metrics.csv";
  std::string timing = "timing.csv";
  std::string ablation = "ablation.csv";
};

struct BenchSettings {
  std::size_t epochs = 4;
  std::vector<OptimizerKind> kinds{OptimizerKind::sgd, OptimizerKind::sgd_momentum,
                                   OptimizerKind::adamw, OptimizerKind::ngd_smw,
                                   OptimizerKind::fngd};
  std::map<OptimizerKind, double> lrs;  // per-kind learning rate overrides
};

struct TrainConfig {
  DataConfig data;
  ModelConfig model;
  OptimizerConfig optim;
  TrainSettings train;
  OutputConfig output;
  BenchSettings bench;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
  LrSchedule schedule() const;
};

/// `dense:IN:OUT[:flags]` or `conv:IN_CH:OUT_CH:K:same|valid:H:W[:flags]`,
/// comma separated. Flags: relu, none, nobias, plain (no preconditioning).
std::vector<LayerSpec> parse_layers(std::string_view text);

TrainConfig parse_config(std::istream& in);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace fngd
