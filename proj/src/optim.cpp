#include "fngd/optim.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace fngd {

namespace {

void check_same(std::size_t a, std::size_t b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": parameter has " + std::to_string(a) +
                         " entries, gradient has " + std::to_string(b));
}

struct Gradients {
  StepReport report;
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
};

Gradients plain_gradients(const Network& net, const Batch& batch) {
  ForwardResult fwd = net.forward(batch.inputs);
  Gradients out;
  out.report.accuracy = batch.is_classification() ? accuracy(fwd.predictions, batch.labels)
                                                  : std::numeric_limits<double>::quiet_NaN();
  BackwardResult back = net.backward(std::move(fwd), batch);
  out.report.loss = back.loss;
  out.report.lambdas.assign(net.size(), 0.0);
  for (const LayerCapture& cap : back.captures) out.weight.push_back(batch_weight_gradient(cap));
  out.bias = std::move(back.bias_grads);
  return out;
}

void zeros_like(const Network& net, std::vector<Matrix>& w, std::vector<Vector>& b) {
  if (w.size() == net.size()) return;
  w.clear();
  b.clear();
  for (const Layer& layer : net.layers()) {
    w.emplace_back(layer.weight.rows(), layer.weight.cols());
    b.emplace_back(layer.bias.size());
  }
}

}  // namespace

void sgd_step(std::span<double> w, std::span<const double> g, double lr) {
  check_same(w.size(), g.size(), "sgd_step");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
}

void sgd_momentum_step(std::span<double> w, std::span<double> v, std::span<const double> g,
                       double lr, double beta) {
  check_same(w.size(), g.size(), "sgd_momentum_step");
  check_same(v.size(), g.size(), "sgd_momentum_step");
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = beta * v[i] + g[i];
    w[i] -= lr * v[i];
  }
}

void adamw_step(std::span<double> w, std::span<double> m, std::span<double> v,
                std::span<const double> g, std::size_t t, const AdamWParams& p) {
  check_same(w.size(), g.size(), "adamw_step");
  check_same(m.size(), g.size(), "adamw_step");
  check_same(v.size(), g.size(), "adamw_step");
  if (t == 0) throw std::invalid_argument("adamw_step: step count starts at 1");
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] -= p.lr * p.weight_decay * w[i];
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
    w[i] -= p.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + p.eps);
  }
}

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::ngd_smw: return "ngd_smw";
    case OptimizerKind::fngd: return "fngd";
  }
  return "unknown";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  for (OptimizerKind k : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::adamw,
                          OptimizerKind::ngd_smw, OptimizerKind::fngd})
    if (name == to_string(k)) return k;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) +
                              "' (sgd, sgd_momentum, adamw, ngd_smw, fngd)");
}

StepReport Sgd::step(Network& net, const Batch& batch) {
  Gradients g = plain_gradients(net, batch);
  for (std::size_t l = 0; l < net.size(); ++l) {
    Layer& layer = net.layer(l);
    sgd_step(layer.weight.span(), g.weight[l].span(), lr_);
    if (layer.spec.bias) sgd_step(layer.bias.span(), g.bias[l].span(), lr_);
  }
  return g.report;
}

SgdMomentum::SgdMomentum(double lr, double beta) : Optimizer(lr), beta_(beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
}

StepReport SgdMomentum::step(Network& net, const Batch& batch) {
  Gradients g = plain_gradients(net, batch);
  zeros_like(net, vw_, vb_);
  for (std::size_t l = 0; l < net.size(); ++l) {
    Layer& layer = net.layer(l);
    sgd_momentum_step(layer.weight.span(), vw_[l].span(), g.weight[l].span(), lr_, beta_);
    if (layer.spec.bias)
      sgd_momentum_step(layer.bias.span(), vb_[l].span(), g.bias[l].span(), lr_, beta_);
  }
  return g.report;
}

AdamW::AdamW(const AdamWParams& params) : Optimizer(params.lr), params_(params) {
  if (!(params.beta1 >= 0.0 && params.beta1 < 1.0) || !(params.beta2 >= 0.0 && params.beta2 < 1.0))
    throw std::invalid_argument("AdamW betas must be in [0, 1)");
  if (!(params.eps > 0.0)) throw std::invalid_argument("AdamW eps must be positive");
  if (params.weight_decay < 0.0) throw std::invalid_argument("weight decay must be non-negative");
}

StepReport AdamW::step(Network& net, const Batch& batch) {
  Gradients g = plain_gradients(net, batch);
  zeros_like(net, mw_, mb_);
  zeros_like(net, vw_, vb_);
  AdamWParams p = params_;
  p.lr = lr_;
  ++t_;
  for (std::size_t l = 0; l < net.size(); ++l) {
    Layer& layer = net.layer(l);
    adamw_step(layer.weight.span(), mw_[l].span(), vw_[l].span(), g.weight[l].span(), t_, p);
    if (layer.spec.bias)
      adamw_step(layer.bias.span(), mb_[l].span(), vb_[l].span(), g.bias[l].span(), t_, p);
  }
  return g.report;
}

NgdSmw::NgdSmw(double lr, FngdOptions opts) : Optimizer(lr), opts_(std::move(opts)) {
  opts_.damping.validate();
}

StepReport NgdSmw::step(Network& net, const Batch& batch) {
  return ngd_smw_step(net, batch, lr_, opts_, &buffers_);
}

Fngd::Fngd(double lr, FngdOptions opts) : Optimizer(lr), opts_(std::move(opts)) {
  opts_.damping.validate();
}

StepReport Fngd::step(Network& net, const Batch& batch) {
  if (table_.finalized()) return shared_step(net, batch, table_, lr_, opts_, &buffers_);
  if (!started_) {
    if (batch.size() < 2)
      throw std::invalid_argument("FNGD needs a batch size of at least 2, got " +
                                  std::to_string(batch.size()));
    table_ = CoefficientTable(net.size(), batch.size());
    started_ = true;
  }
  return epoch_one_step(net, batch, table_, lr_, opts_, &buffers_);
}

void Fngd::end_epoch() {
  if (started_ && !table_.finalized()) table_.finalize();
}

std::string_view Fngd::phase() const { return table_.finalized() ? "shared" : "epoch_one"; }

void Fngd::set_table(CoefficientTable table) {
  if (!table.finalized()) throw std::invalid_argument("Fngd::set_table: table is not finalized");
  table_ = std::move(table);
  started_ = true;
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config) {
  if (!std::isfinite(config.lr) || config.lr <= 0.0)
    throw std::invalid_argument("learning rate must be positive");
  switch (config.kind) {
    case OptimizerKind::sgd: return std::make_unique<Sgd>(config.lr);
    case OptimizerKind::sgd_momentum: return std::make_unique<SgdMomentum>(config.lr, config.momentum);
    case OptimizerKind::adamw: {
      AdamWParams p = config.adamw;
      p.lr = config.lr;
      return std::make_unique<AdamW>(p);
    }
    case OptimizerKind::ngd_smw: return std::make_unique<NgdSmw>(config.lr, config.fngd);
    case OptimizerKind::fngd: return std::make_unique<Fngd>(config.lr, config.fngd);
  }
  throw std::invalid_argument("unknown optimizer kind");
}

LrSchedule LrSchedule::standard(double base, std::size_t total_epochs) {
  LrSchedule s;
  s.base = base;
  s.total_epochs = total_epochs;
  const auto half = static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(total_epochs)));
  const auto three_q = static_cast<std::size_t>(std::ceil(0.75 * static_cast<double>(total_epochs)));
  s.milestones.push_back(half);
  if (three_q != half) s.milestones.push_back(three_q);
  return s;
}

LrSchedule LrSchedule::constant(double base, std::size_t total_epochs) {
  LrSchedule s;
  s.base = base;
  s.total_epochs = total_epochs;
  return s;
}

void LrSchedule::validate() const {
  if (total_epochs == 0) throw std::invalid_argument("schedule needs at least one epoch");
  if (!(factor > 0.0)) throw std::invalid_argument("schedule decay factor must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw std::invalid_argument("schedule milestones must be strictly increasing");
}

double schedule_lr(const LrSchedule& sched, std::size_t epoch) {
  if (epoch >= sched.total_epochs)
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside a " +
                            std::to_string(sched.total_epochs) + "-epoch schedule");
  double lr = sched.base;
  for (std::size_t m : sched.milestones)
    if (epoch >= m) lr *= sched.factor;
  return lr;
}

}  // namespace fngd
