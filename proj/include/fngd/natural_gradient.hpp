#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fngd/linalg.hpp"
#include "fngd/nn.hpp"
#include "fngd/persample.hpp"

namespace fngd {

inline constexpr double kLambdaFloor = 1e-12;

/// λ = α·‖G‖_F per layer, or a constant when `fixed_lambda` is set.
struct DampingRule {
  double alpha = 0.005;
  std::optional<double> fixed_lambda;
  double floor = kLambdaFloor;  // used when ‖G‖_F < 1e-30

  void validate() const;
};

double damping_lambda(const GramStats& stats, const DampingRule& rule);

/// c = (1/M)·(𝟙 − (λI + G/M)⁻¹·ḡ). The preconditioned gradient is (1/λ)·U·c.
Vector coefficients(const GramStats& stats, double lambda, std::size_t m);

/// Residual-weighted form: c = (1/M)·(r − (λI + G/M)⁻¹·(1/M)·G·r), so that
/// (1/λ)·U·c = (λI + UUᵀ/M)⁻¹·(1/M)·U·r. With r = 𝟙 this is `coefficients`.
Vector weighted_coefficients(const Matrix& gram, const Vector& r, double lambda);

/// Σ_s z_s·diag(c)·x_sᵀ, the matrix whose vec is U·c.
Matrix precondition(const LayerCapture& capture, const Vector& c);
Matrix precondition_dense(const LayerCapture& capture, const Vector& c);
Matrix precondition_conv(const LayerCapture& capture, const Vector& c);

/// Same result through per-sample gradients: accumulates c_m·G^m one sample
/// at a time. Used by the ablation; much slower on wide layers.
Matrix precondition_explicit_u(const LayerCapture& capture, const Vector& c);

/// Epoch-one accumulators and the shared coefficients derived from them.
/// Entries are indexed by layer; layers that are never accumulated stay
/// inactive and are skipped by save/load.
class CoefficientTable {
 public:
  struct Entry {
    bool active = false;
    Vector sum;
    double lambda_sum = 0.0;
    std::size_t batches = 0;
    Vector shared;
    double lambda_bar = 0.0;
  };

  CoefficientTable() = default;
  CoefficientTable(std::size_t layers, std::size_t batch_size);

  void accumulate(std::size_t layer, const Vector& v, double lambda);
  /// ṽ = sum/B and λ̄ = mean λ for every active layer. Idempotent guard: a
  /// second call throws.
  void finalize();

  bool finalized() const { return finalized_; }
  std::size_t layers() const { return entries_.size(); }
  std::size_t batch_size() const { return batch_size_; }
  bool active(std::size_t layer) const;
  const Entry& entry(std::size_t layer) const;
  const Vector& shared(std::size_t layer) const;
  double lambda_bar(std::size_t layer) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static CoefficientTable load(std::istream& in);
  static CoefficientTable load(const std::filesystem::path& path);

 private:
  const Entry& finalized_entry(std::size_t layer) const;

  std::vector<Entry> entries_;
  std::size_t batch_size_ = 0;
  bool finalized_ = false;
};

enum class PreconditionPath { weighted_input, explicit_u };

struct FngdOptions {
  DampingRule damping;
  PreconditionPath path = PreconditionPath::weighted_input;
  double momentum = 0.0;      // applied after preconditioning
  double weight_decay = 0.0;  // added to the preconditioned direction
  std::size_t u_byte_cap = kDefaultUByteCap;
};

/// Heavy-ball buffers shaped like the network's parameters, created lazily.
struct MomentumBuffers {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
};

struct StepReport {
  double loss = 0.0;
  double accuracy = 0.0;        // NaN for regression batches
  std::vector<double> lambdas;  // per layer; 0 for plain-gradient layers
};

/// A step that failed in one layer. Parameters are left untouched.
class StepError : public std::runtime_error {
 public:
  StepError(std::size_t layer, const std::string& what);
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

/// Fresh per-batch coefficients, w ← w − (η/λ_i)·U·v_i, then v_i and λ_i go
/// into `table`. Layers with precondition=false and all biases take η·grad.
StepReport epoch_one_step(Network& net, const Batch& batch, CoefficientTable& table, double lr,
                          const FngdOptions& opts, MomentumBuffers* buffers = nullptr);

/// w ← w − (η/λ̄)·Z·diag(ṽ)·Xᵀ with the finalized table. No Gram, no solve.
StepReport shared_step(Network& net, const Batch& batch, const CoefficientTable& table, double lr,
                       const FngdOptions& opts, MomentumBuffers* buffers = nullptr);

/// The no-sharing baseline: epoch_one_step without a table.
StepReport ngd_smw_step(Network& net, const Batch& batch, double lr, const FngdOptions& opts,
                        MomentumBuffers* buffers = nullptr);

}  // namespace fngd
