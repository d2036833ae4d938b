#pragma once

// A small feed-forward engine. The backward pass stops at the gradient of
// each layer's pre-activation output: for every weight layer it records the
// layer input X and the per-sample output gradient Z, which is all the
// optimizers need to form plain, per-sample or preconditioned weight
// gradients. Batch-mean weight gradients are never built here.

#include <cstdint>
#include <vector>

#include "fngd/data.hpp"
#include "fngd/linalg.hpp"

namespace fngd {

enum class LayerKind { dense, conv2d };
enum class Activation { none, relu };
enum class Padding { same, valid };
enum class LossKind { cross_entropy, squared_error };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in = 0;   // features (dense) or channels (conv)
  std::size_t out = 0;  // features (dense) or channels (conv)
  std::size_t kernel = 1;
  Padding padding = Padding::valid;
  std::size_t height = 1;  // conv input spatial size
  std::size_t width = 1;
  Activation activation = Activation::none;
  bool bias = true;
  bool precondition = true;  // weights take the second-order path

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act = Activation::none,
                         bool bias = true);
  static LayerSpec conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        Padding padding, std::size_t height, std::size_t width,
                        Activation act = Activation::none, bool bias = true);

  std::size_t pad() const;
  std::size_t out_height() const;
  std::size_t out_width() const;
  std::size_t patches() const { return out_height() * out_width(); }  // S; 1 for dense
  std::size_t fan_in() const;                                          // columns of W
  std::size_t input_size() const;
  std::size_t output_size() const;
  void validate() const;
};

struct Layer {
  LayerSpec spec;
  Matrix weight;  // out × fan_in
  Vector bias;    // empty when the layer has no bias
};

/// Per-layer record of one batch. For a dense layer x and z hold one matrix
/// each (fan_in × M and O × M). For a conv layer they hold S matrices, one per
/// output position. z is the gradient of the per-sample loss ℓ_m, not of the
/// batch mean, so the batch gradient is (1/M)·Σ_s z_s·x_sᵀ.
struct LayerCapture {
  std::size_t layer = 0;
  std::vector<Matrix> x;
  std::vector<Matrix> z;

  std::size_t batch_size() const { return x.empty() ? 0 : x.front().cols(); }
  std::size_t patches() const { return x.size(); }
  std::size_t fan_in() const { return x.empty() ? 0 : x.front().rows(); }
  std::size_t outputs() const { return z.empty() ? 0 : z.front().rows(); }
};

struct ForwardResult {
  Matrix predictions;
  std::vector<LayerCapture> captures;     // x filled, z empty
  std::vector<Matrix> pre_activations;    // kept for the ReLU masks
};

struct BackwardResult {
  std::vector<LayerCapture> captures;  // x and z filled
  std::vector<Vector> bias_grads;      // batch means; empty for bias-free layers
  double loss = 0.0;                   // mean of ℓ_m
};

class Network {
 public:
  Network(std::vector<LayerSpec> specs, LossKind loss, std::uint64_t init_seed);

  ForwardResult forward(const Matrix& inputs) const;
  BackwardResult backward(ForwardResult fwd, const Batch& batch) const;

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  LossKind loss() const { return loss_; }
  std::size_t input_size() const { return layers_.front().spec.input_size(); }
  std::size_t output_size() const { return layers_.back().spec.output_size(); }

 private:
  std::vector<Layer> layers_;
  LossKind loss_;
};

/// Per-sample losses ℓ_m: cross-entropy on logits, or ½‖f − y‖².
Vector per_sample_losses(LossKind kind, const Matrix& predictions, const Batch& batch);
double loss_value(LossKind kind, const Matrix& predictions, const Batch& batch);
/// ∂ℓ_m/∂f for every column: softmax − onehot, or f − y.
Matrix output_gradient(LossKind kind, const Matrix& predictions, const Batch& batch);
double accuracy(const Matrix& predictions, const Labels& labels);

/// Batch-mean weight gradient (1/M)·Σ_s z_s·x_sᵀ.
Matrix batch_weight_gradient(const LayerCapture& capture);

}  // namespace fngd
