#include "fngd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace fngd {

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in = in;
  s.out = out;
  s.activation = act;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          Padding padding, std::size_t height, std::size_t width, Activation act,
                          bool bias) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in = in_channels;
  s.out = out_channels;
  s.kernel = kernel;
  s.padding = padding;
  s.height = height;
  s.width = width;
  s.activation = act;
  s.bias = bias;
  return s;
}

std::size_t LayerSpec::pad() const {
  return kind == LayerKind::conv2d && padding == Padding::same ? (kernel - 1) / 2 : 0;
}

std::size_t LayerSpec::out_height() const {
  return kind == LayerKind::dense ? 1 : height + 2 * pad() - kernel + 1;
}

std::size_t LayerSpec::out_width() const {
  return kind == LayerKind::dense ? 1 : width + 2 * pad() - kernel + 1;
}

std::size_t LayerSpec::fan_in() const {
  return kind == LayerKind::dense ? in : in * kernel * kernel;
}

std::size_t LayerSpec::input_size() const {
  return kind == LayerKind::dense ? in : in * height * width;
}

std::size_t LayerSpec::output_size() const {
  return kind == LayerKind::dense ? out : out * patches();
}

void LayerSpec::validate() const {
  if (in == 0 || out == 0) throw std::invalid_argument("layer: dimensions must be positive");
  if (kind == LayerKind::conv2d) {
    if (kernel != 1 && kernel != 3 && kernel != 5)
      throw std::invalid_argument("conv layer: kernel must be 1, 3 or 5");
    if (height == 0 || width == 0) throw std::invalid_argument("conv layer: empty input image");
    if (padding == Padding::valid && (kernel > height || kernel > width))
      throw std::invalid_argument("conv layer: kernel larger than the input image");
  }
}

Network::Network(std::vector<LayerSpec> specs, LossKind loss, std::uint64_t init_seed)
    : loss_(loss) {
  if (specs.empty()) throw std::invalid_argument("network: no layers");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].validate();
    if (i == 0) continue;
    const LayerSpec& prev = specs[i - 1];
    const LayerSpec& cur = specs[i];
    bool ok = prev.output_size() == cur.input_size();
    if (ok && prev.kind == LayerKind::conv2d && cur.kind == LayerKind::conv2d)
      ok = prev.out == cur.in && prev.out_height() == cur.height && prev.out_width() == cur.width;
    if (!ok)
      throw std::invalid_argument("network: layer " + std::to_string(i - 1) + " produces " +
                                  std::to_string(prev.output_size()) + " values, layer " +
                                  std::to_string(i) + " expects " +
                                  std::to_string(cur.input_size()));
  }
  if (specs.back().activation != Activation::none)
    throw std::invalid_argument("network: the output layer must not have an activation");

  // He-normal weights, zero biases.
  std::mt19937_64 rng(init_seed);
  layers_.reserve(specs.size());
  for (const auto& spec : specs) {
    Layer layer{spec, Matrix(spec.out, spec.fan_in()), spec.bias ? Vector(spec.out) : Vector()};
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(spec.fan_in())));
    for (double& w : layer.weight.span()) w = normal(rng);
    layers_.push_back(std::move(layer));
  }
}

namespace {

// Patch matrix for output position s: row (c·K + kh)·K + kw, column m.
Matrix extract_patch(const LayerSpec& spec, const Matrix& input, std::size_t s) {
  const std::size_t k = spec.kernel, pad = spec.pad();
  const std::size_t oh = s / spec.out_width(), ow = s % spec.out_width();
  const std::size_t m = input.cols();
  Matrix patch(spec.fan_in(), m);
  for (std::size_t c = 0; c < spec.in; ++c)
    for (std::size_t kh = 0; kh < k; ++kh) {
      const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) - static_cast<std::ptrdiff_t>(pad);
      if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(spec.height)) continue;
      for (std::size_t kw = 0; kw < k; ++kw) {
        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kw) - static_cast<std::ptrdiff_t>(pad);
        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(spec.width)) continue;
        const auto src = input.row(c * spec.height * spec.width + static_cast<std::size_t>(ih) * spec.width +
                                   static_cast<std::size_t>(iw));
        std::copy(src.begin(), src.end(), patch.row((c * k + kh) * k + kw).begin());
      }
    }
  return patch;
}

// Adds a patch-shaped gradient back onto the input-shaped gradient.
void scatter_patch(const LayerSpec& spec, const Matrix& patch_grad, std::size_t s, Matrix& input_grad) {
  const std::size_t k = spec.kernel, pad = spec.pad();
  const std::size_t oh = s / spec.out_width(), ow = s % spec.out_width();
  for (std::size_t c = 0; c < spec.in; ++c)
    for (std::size_t kh = 0; kh < k; ++kh) {
      const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) - static_cast<std::ptrdiff_t>(pad);
      if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(spec.height)) continue;
      for (std::size_t kw = 0; kw < k; ++kw) {
        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kw) - static_cast<std::ptrdiff_t>(pad);
        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(spec.width)) continue;
        const auto src = patch_grad.row((c * k + kh) * k + kw);
        auto dst = input_grad.row(c * spec.height * spec.width + static_cast<std::size_t>(ih) * spec.width +
                                  static_cast<std::size_t>(iw));
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
      }
    }
}

void add_bias(Matrix& y, const Vector& b, std::size_t patches) {
  if (b.empty()) return;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double v = b[r / patches];
    for (double& x : y.row(r)) x += v;
  }
}

}  // namespace

ForwardResult Network::forward(const Matrix& inputs) const {
  if (inputs.rows() != input_size())
    throw DimensionError("forward: batch has " + std::to_string(inputs.rows()) +
                         " features, network expects " + std::to_string(input_size()));
  ForwardResult out;
  out.captures.resize(layers_.size());
  out.pre_activations.reserve(layers_.size());

  Matrix current = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const LayerSpec& spec = layer.spec;
    LayerCapture& cap = out.captures[l];
    cap.layer = l;
    Matrix y;
    if (spec.kind == LayerKind::dense) {
      y = matmul(layer.weight, current);
      cap.x.push_back(std::move(current));
    } else {
      const std::size_t s_count = spec.patches();
      y = Matrix(spec.out * s_count, current.cols());
      cap.x.reserve(s_count);
      for (std::size_t s = 0; s < s_count; ++s) {
        Matrix patch = extract_patch(spec, current, s);
        const Matrix ys = matmul(layer.weight, patch);
        for (std::size_t o = 0; o < spec.out; ++o) {
          const auto src = ys.row(o);
          std::copy(src.begin(), src.end(), y.row(o * s_count + s).begin());
        }
        cap.x.push_back(std::move(patch));
      }
    }
    add_bias(y, layer.bias, spec.patches());
    Matrix act = y;
    if (spec.activation == Activation::relu)
      for (double& v : act.span()) v = std::max(v, 0.0);
    out.pre_activations.push_back(std::move(y));
    current = std::move(act);
  }
  out.predictions = std::move(current);
  return out;
}

BackwardResult Network::backward(ForwardResult fwd, const Batch& batch) const {
  const std::size_t m = fwd.predictions.cols();
  if (batch.size() != m)
    throw DimensionError("backward: " + std::to_string(batch.size()) + " targets for a batch of " +
                         std::to_string(m));
  BackwardResult res;
  res.loss = loss_value(loss_, fwd.predictions, batch);
  res.bias_grads.resize(layers_.size());

  Matrix grad = output_gradient(loss_, fwd.predictions, batch);
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const LayerSpec& spec = layer.spec;
    LayerCapture& cap = fwd.captures[l];
    const std::size_t s_count = spec.patches();

    if (spec.kind == LayerKind::dense) {
      cap.z.push_back(grad);
    } else {
      cap.z.reserve(s_count);
      for (std::size_t s = 0; s < s_count; ++s) {
        Matrix zs(spec.out, m);
        for (std::size_t o = 0; o < spec.out; ++o) {
          const auto src = grad.row(o * s_count + s);
          std::copy(src.begin(), src.end(), zs.row(o).begin());
        }
        cap.z.push_back(std::move(zs));
      }
    }

    if (spec.bias) {
      Vector gb(spec.out);
      for (std::size_t r = 0; r < grad.rows(); ++r) {
        double s = 0.0;
        for (double v : grad.row(r)) s += v;
        gb[r / s_count] += s;
      }
      scale(gb, 1.0 / static_cast<double>(m));
      res.bias_grads[l] = std::move(gb);
    }

    if (l == 0) break;
    Matrix input_grad;
    if (spec.kind == LayerKind::dense) {
      input_grad = matmul_tn(layer.weight, grad);
    } else {
      input_grad = Matrix(spec.input_size(), m);
      for (std::size_t s = 0; s < s_count; ++s)
        scatter_patch(spec, matmul_tn(layer.weight, cap.z[s]), s, input_grad);
    }
    if (layers_[l - 1].spec.activation == Activation::relu) {
      const Matrix& pre = fwd.pre_activations[l - 1];
      for (std::size_t i = 0; i < input_grad.size(); ++i)
        if (!(pre.data()[i] > 0.0)) input_grad.data()[i] = 0.0;
    }
    grad = std::move(input_grad);
  }
  res.captures = std::move(fwd.captures);
  return res;
}

namespace {

void check_targets(LossKind kind, const Matrix& predictions, const Batch& batch) {
  if (batch.size() != predictions.cols())
    throw DimensionError("loss: " + std::to_string(batch.size()) + " targets for " +
                         std::to_string(predictions.cols()) + " predictions");
  if (kind == LossKind::cross_entropy) {
    if (!batch.is_classification()) throw std::invalid_argument("cross-entropy needs class labels");
    if (batch.labels.size() != predictions.cols())
      throw DimensionError("loss: " + std::to_string(batch.labels.size()) + " labels for " +
                           std::to_string(predictions.cols()) + " predictions");
    for (auto y : batch.labels)
      if (y >= predictions.rows())
        throw std::invalid_argument("loss: class index " + std::to_string(y) + " out of range for " +
                                    std::to_string(predictions.rows()) + " outputs");
  } else if (batch.values.rows() != predictions.rows() || batch.values.cols() != predictions.cols()) {
    throw DimensionError("squared error: targets " + batch.values.shape() + " vs predictions " +
                         predictions.shape());
  }
}

double column_max(const Matrix& a, std::size_t m) {
  double mx = a(0, m);
  for (std::size_t r = 1; r < a.rows(); ++r) mx = std::max(mx, a(r, m));
  return mx;
}

}  // namespace

Vector per_sample_losses(LossKind kind, const Matrix& predictions, const Batch& batch) {
  check_targets(kind, predictions, batch);
  const std::size_t m = predictions.cols();
  Vector out(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (kind == LossKind::cross_entropy) {
      const double mx = column_max(predictions, j);
      double sum = 0.0;
      for (std::size_t r = 0; r < predictions.rows(); ++r) sum += std::exp(predictions(r, j) - mx);
      out[j] = mx + std::log(sum) - predictions(batch.labels[j], j);
    } else {
      double s = 0.0;
      for (std::size_t r = 0; r < predictions.rows(); ++r) {
        const double d = predictions(r, j) - batch.values(r, j);
        s += d * d;
      }
      out[j] = 0.5 * s;
    }
  }
  return out;
}

double loss_value(LossKind kind, const Matrix& predictions, const Batch& batch) {
  const Vector losses = per_sample_losses(kind, predictions, batch);
  double s = 0.0;
  for (double v : losses) s += v;
  return losses.empty() ? 0.0 : s / static_cast<double>(losses.size());
}

Matrix output_gradient(LossKind kind, const Matrix& predictions, const Batch& batch) {
  check_targets(kind, predictions, batch);
  Matrix z(predictions.rows(), predictions.cols());
  for (std::size_t j = 0; j < predictions.cols(); ++j) {
    if (kind == LossKind::cross_entropy) {
      const double mx = column_max(predictions, j);
      double sum = 0.0;
      for (std::size_t r = 0; r < predictions.rows(); ++r) {
        z(r, j) = std::exp(predictions(r, j) - mx);
        sum += z(r, j);
      }
      for (std::size_t r = 0; r < predictions.rows(); ++r) z(r, j) /= sum;
      z(batch.labels[j], j) -= 1.0;
    } else {
      for (std::size_t r = 0; r < predictions.rows(); ++r)
        z(r, j) = predictions(r, j) - batch.values(r, j);
    }
  }
  return z;
}

double accuracy(const Matrix& predictions, const Labels& labels) {
  if (labels.size() != predictions.cols())
    throw DimensionError("accuracy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(predictions.cols()) + " predictions");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < predictions.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < predictions.rows(); ++r)
      if (predictions(r, j) > predictions(best, j)) best = r;
    hits += best == labels[j];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Matrix batch_weight_gradient(const LayerCapture& capture) {
  Matrix g = matmul_nt(capture.z.at(0), capture.x.at(0));
  for (std::size_t s = 1; s < capture.patches(); ++s) axpy(1.0, matmul_nt(capture.z[s], capture.x[s]), g);
  scale(g, 1.0 / static_cast<double>(capture.batch_size()));
  return g;
}

}  // namespace fngd
