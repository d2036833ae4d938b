#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "fngd/natural_gradient.hpp"
#include "fngd/nn.hpp"

namespace fngd {

/// w ← w − η·g
void sgd_step(std::span<double> w, std::span<const double> g, double lr);
/// v ← β·v + g; w ← w − η·v
void sgd_momentum_step(std::span<double> w, std::span<double> v, std::span<const double> g,
                       double lr, double beta);

struct AdamWParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled decay w ← w − η·γ·w, then the bias-corrected Adam step.
/// `t` is the 1-based step count.
void adamw_step(std::span<double> w, std::span<double> m, std::span<double> v,
                std::span<const double> g, std::size_t t, const AdamWParams& p);

enum class OptimizerKind { sgd, sgd_momentum, adamw, ngd_smw, fngd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.1;
  double momentum = 0.9;  // sgd_momentum only
  AdamWParams adamw;      // lr is taken from `lr`
  FngdOptions fngd;       // ngd_smw and fngd
};

class Optimizer {
 public:
  explicit Optimizer(double lr) : lr_(lr) {}
  virtual ~Optimizer() = default;

  virtual OptimizerKind kind() const = 0;
  virtual StepReport step(Network& net, const Batch& batch) = 0;
  /// Called after the last batch of every epoch.
  virtual void end_epoch() {}
  /// Short label for the current phase, e.g. "epoch_one" or "shared" for FNGD.
  virtual std::string_view phase() const { return to_string(kind()); }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 protected:
  double lr_;
};

class Sgd final : public Optimizer {
 public:
  using Optimizer::Optimizer;
  OptimizerKind kind() const override { return OptimizerKind::sgd; }
  StepReport step(Network& net, const Batch& batch) override;
};

class SgdMomentum final : public Optimizer {
 public:
  SgdMomentum(double lr, double beta);
  OptimizerKind kind() const override { return OptimizerKind::sgd_momentum; }
  StepReport step(Network& net, const Batch& batch) override;

 private:
  double beta_;
  std::vector<Matrix> vw_;
  std::vector<Vector> vb_;
};

class AdamW final : public Optimizer {
 public:
  explicit AdamW(const AdamWParams& params);
  OptimizerKind kind() const override { return OptimizerKind::adamw; }
  StepReport step(Network& net, const Batch& batch) override;

 private:
  AdamWParams params_;
  std::size_t t_ = 0;
  std::vector<Matrix> mw_, vw_;
  std::vector<Vector> mb_, vb_;
};

/// Coefficients recomputed on every batch; never shares.
class NgdSmw final : public Optimizer {
 public:
  NgdSmw(double lr, FngdOptions opts);
  OptimizerKind kind() const override { return OptimizerKind::ngd_smw; }
  StepReport step(Network& net, const Batch& batch) override;

 private:
  FngdOptions opts_;
  MomentumBuffers buffers_;
};

/// Per-batch coefficients until the first end_epoch(), shared ones after.
class Fngd final : public Optimizer {
 public:
  Fngd(double lr, FngdOptions opts);
  OptimizerKind kind() const override { return OptimizerKind::fngd; }
  StepReport step(Network& net, const Batch& batch) override;
  void end_epoch() override;
  std::string_view phase() const override;

  /// Skips the coefficient phase; the table must be finalized.
  void set_table(CoefficientTable table);
  const CoefficientTable& table() const { return table_; }
  bool sharing() const { return table_.finalized(); }

 private:
  FngdOptions opts_;
  MomentumBuffers buffers_;
  CoefficientTable table_;
  bool started_ = false;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config);

/// Base rate times `factor` for every milestone reached.
struct LrSchedule {
  double base = 0.1;
  std::size_t total_epochs = 1;
  std::vector<std::size_t> milestones;
  double factor = 0.1;

  /// Milestones at ⌈T/2⌉ and ⌈3T/4⌉, merged when they coincide.
  static LrSchedule standard(double base, std::size_t total_epochs);
  static LrSchedule constant(double base, std::size_t total_epochs);
  void validate() const;
};

double schedule_lr(const LrSchedule& sched, std::size_t epoch);

}  // namespace fngd
