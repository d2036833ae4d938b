#include "fngd/natural_gradient.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>

namespace fngd {

namespace {

constexpr std::string_view kTableHeader = "# fngd coefficient table v1";

void check_coefficients(const LayerCapture& capture, const Vector& c, const char* op) {
  if (c.size() != capture.batch_size())
    throw DimensionError(std::string(op) + ": " + std::to_string(c.size()) +
                         " coefficients for a batch of " + std::to_string(capture.batch_size()));
  if (capture.x.empty() || capture.x.size() != capture.z.size())
    throw DimensionError(std::string(op) + ": malformed capture");
}

// (λI + G/M)⁻¹·rhs
Vector damped_solve(const Matrix& gram, const Vector& rhs, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("damping must be positive and finite, got " + std::to_string(lambda));
  if (gram.rows() != gram.cols() || gram.rows() != rhs.size())
    throw DimensionError("damped_solve: Gram " + gram.shape() + " with rhs of length " +
                         std::to_string(rhs.size()));
  const double inv_m = 1.0 / static_cast<double>(gram.rows());
  Matrix a = inv_m * gram;
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += lambda;
  return solve_spd(a, rhs);
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::runtime_error("coefficient table line " + std::to_string(line) + ": bad number '" +
                             std::string(s) + "'");
  return v;
}

std::size_t parse_size(std::string_view s, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::runtime_error("coefficient table line " + std::to_string(line) + ": bad count '" +
                             std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

void apply_direction(Matrix& param, Matrix dir, double lr, const FngdOptions& opts, Matrix* buf) {
  if (opts.weight_decay != 0.0) axpy(opts.weight_decay, param, dir);
  if (buf) {
    scale(*buf, opts.momentum);
    axpy(1.0, dir, *buf);
    axpy(-lr, *buf, param);
  } else {
    axpy(-lr, dir, param);
  }
}

void apply_direction(Vector& param, Vector dir, double lr, const FngdOptions& opts, Vector* buf) {
  if (opts.weight_decay != 0.0) axpy(opts.weight_decay, param, dir);
  if (buf) {
    scale(*buf, opts.momentum);
    axpy(1.0, dir, *buf);
    axpy(-lr, *buf, param);
  } else {
    axpy(-lr, dir, param);
  }
}

Matrix apply_path(const LayerCapture& capture, const Vector& c, PreconditionPath path) {
  return path == PreconditionPath::weighted_input ? precondition(capture, c)
                                                  : precondition_explicit_u(capture, c);
}

// Fresh coefficients when `shared` is null, table coefficients otherwise.
// Every direction is computed before any parameter moves, so a failing layer
// leaves the network as it was.
StepReport run_step(Network& net, const Batch& batch, double lr, const FngdOptions& opts,
                    MomentumBuffers* buffers, CoefficientTable* accumulate,
                    const CoefficientTable* shared) {
  opts.damping.validate();
  if (!std::isfinite(lr) || lr < 0.0)
    throw std::invalid_argument("learning rate must be finite and non-negative");
  if (shared && !shared->finalized())
    throw std::logic_error("shared_step: coefficient table is not finalized");

  ForwardResult fwd = net.forward(batch.inputs);
  StepReport report;
  report.accuracy = batch.is_classification() ? accuracy(fwd.predictions, batch.labels)
                                              : std::numeric_limits<double>::quiet_NaN();
  BackwardResult back = net.backward(std::move(fwd), batch);
  report.loss = back.loss;
  report.lambdas.assign(net.size(), 0.0);

  const std::size_t m = batch.size();
  std::vector<Matrix> dirs(net.size());
  std::vector<Vector> fresh(net.size());
  for (std::size_t l = 0; l < net.size(); ++l) {
    const LayerCapture& cap = back.captures[l];
    try {
      if (!net.layer(l).spec.precondition) {
        dirs[l] = batch_weight_gradient(cap);
      } else if (shared) {
        if (!shared->active(l))
          throw std::runtime_error("coefficient table has no entry for this layer");
        if (shared->batch_size() != m)
          throw DimensionError("coefficient table holds " + std::to_string(shared->batch_size()) +
                               " slots, batch has " + std::to_string(m));
        const double lambda = shared->lambda_bar(l);
        dirs[l] = apply_path(cap, shared->shared(l), opts.path);
        scale(dirs[l], 1.0 / lambda);
        report.lambdas[l] = lambda;
      } else {
        const GramStats stats = gram_stats(cap, opts.u_byte_cap);
        const double lambda = damping_lambda(stats, opts.damping);
        fresh[l] = coefficients(stats, lambda, m);
        dirs[l] = apply_path(cap, fresh[l], opts.path);
        scale(dirs[l], 1.0 / lambda);
        report.lambdas[l] = lambda;
      }
      if (!all_finite(dirs[l].span())) throw NonFiniteError("non-finite update direction");
    } catch (const std::exception& e) {
      throw StepError(l, e.what());
    }
  }

  if (accumulate)
    for (std::size_t l = 0; l < net.size(); ++l)
      if (net.layer(l).spec.precondition) accumulate->accumulate(l, fresh[l], report.lambdas[l]);

  const bool use_momentum = buffers && opts.momentum != 0.0;
  if (use_momentum && buffers->weight.size() != net.size()) {
    buffers->weight.clear();
    buffers->bias.clear();
    for (const Layer& layer : net.layers()) {
      buffers->weight.emplace_back(layer.weight.rows(), layer.weight.cols());
      buffers->bias.emplace_back(layer.bias.size());
    }
  }
  for (std::size_t l = 0; l < net.size(); ++l) {
    Layer& layer = net.layer(l);
    apply_direction(layer.weight, std::move(dirs[l]), lr, opts,
                    use_momentum ? &buffers->weight[l] : nullptr);
    if (layer.spec.bias)
      apply_direction(layer.bias, std::move(back.bias_grads[l]), lr, opts,
                      use_momentum ? &buffers->bias[l] : nullptr);
  }
  return report;
}

}  // namespace

void DampingRule::validate() const {
  if (fixed_lambda) {
    if (!(*fixed_lambda > 0.0) || !std::isfinite(*fixed_lambda))
      throw std::invalid_argument("fixed damping must be positive and finite");
  } else if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("damping alpha must be positive and finite, got " +
                                std::to_string(alpha));
  }
  if (!(floor > 0.0)) throw std::invalid_argument("damping floor must be positive");
}

double damping_lambda(const GramStats& stats, const DampingRule& rule) {
  if (rule.fixed_lambda) return *rule.fixed_lambda;
  const double fro = frobenius_norm(stats.gram);
  if (fro < 1e-30) return rule.floor;
  return rule.alpha * fro;
}

Vector coefficients(const GramStats& stats, double lambda, std::size_t m) {
  if (m == 0 || stats.gram.rows() != m || stats.mean_col.size() != m)
    throw DimensionError("coefficients: Gram " + stats.gram.shape() + " and mean of length " +
                         std::to_string(stats.mean_col.size()) + " for M=" + std::to_string(m));
  Vector c = damped_solve(stats.gram, stats.mean_col, lambda);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) c[i] = inv_m * (1.0 - c[i]);
  return c;
}

Vector weighted_coefficients(const Matrix& gram, const Vector& r, double lambda) {
  const std::size_t m = gram.rows();
  if (m == 0 || r.size() != m) throw DimensionError("weighted_coefficients: size mismatch");
  const double inv_m = 1.0 / static_cast<double>(m);
  Vector c = damped_solve(gram, inv_m * matvec(gram, r), lambda);
  for (std::size_t i = 0; i < m; ++i) c[i] = inv_m * (r[i] - c[i]);
  return c;
}

Matrix precondition(const LayerCapture& capture, const Vector& c) {
  check_coefficients(capture, c, "precondition");
  Matrix d = matmul_nt(capture.z[0], scale_columns(capture.x[0], c));
  for (std::size_t s = 1; s < capture.patches(); ++s)
    axpy(1.0, matmul_nt(capture.z[s], scale_columns(capture.x[s], c)), d);
  return d;
}

Matrix precondition_dense(const LayerCapture& capture, const Vector& c) {
  if (capture.patches() != 1)
    throw DimensionError("precondition_dense: capture has " + std::to_string(capture.patches()) +
                         " patches");
  return precondition(capture, c);
}

Matrix precondition_conv(const LayerCapture& capture, const Vector& c) {
  return precondition(capture, c);
}

Matrix precondition_explicit_u(const LayerCapture& capture, const Vector& c) {
  check_coefficients(capture, c, "precondition_explicit_u");
  const std::size_t outputs = capture.outputs(), fan_in = capture.fan_in();
  std::vector<Matrix> zt, xt;
  for (std::size_t s = 0; s < capture.patches(); ++s) {
    zt.push_back(transpose(capture.z[s]));
    xt.push_back(transpose(capture.x[s]));
  }
  Matrix d(outputs, fan_in);
  Matrix g(outputs, fan_in);
  for (std::size_t m = 0; m < c.size(); ++m) {
    std::fill(g.span().begin(), g.span().end(), 0.0);
    for (std::size_t s = 0; s < zt.size(); ++s) {
      const auto zm = zt[s].row(m);
      const auto xm = xt[s].row(m);
      for (std::size_t o = 0; o < outputs; ++o) {
        double* row = g.data() + o * fan_in;
        for (std::size_t p = 0; p < fan_in; ++p) row[p] += zm[o] * xm[p];
      }
    }
    axpy(c[m], g, d);
  }
  return d;
}

CoefficientTable::CoefficientTable(std::size_t layers, std::size_t batch_size)
    : entries_(layers), batch_size_(batch_size) {
  if (batch_size == 0) throw std::invalid_argument("coefficient table needs M > 0");
}

void CoefficientTable::accumulate(std::size_t layer, const Vector& v, double lambda) {
  if (finalized_) throw std::logic_error("coefficient table is already finalized");
  if (layer >= entries_.size())
    throw std::out_of_range("coefficient table: layer " + std::to_string(layer) + " of " +
                            std::to_string(entries_.size()));
  if (v.size() != batch_size_)
    throw DimensionError("coefficient table: " + std::to_string(v.size()) +
                         " coefficients, expected " + std::to_string(batch_size_));
  Entry& e = entries_[layer];
  if (!e.active) {
    e.active = true;
    e.sum = Vector(batch_size_);
  }
  axpy(1.0, v, e.sum);
  e.lambda_sum += lambda;
  ++e.batches;
}

void CoefficientTable::finalize() {
  if (finalized_) throw std::logic_error("coefficient table is already finalized");
  for (std::size_t l = 0; l < entries_.size(); ++l) {
    Entry& e = entries_[l];
    if (!e.active) continue;
    const double b = static_cast<double>(e.batches);
    e.shared = Vector(batch_size_);
    for (std::size_t i = 0; i < batch_size_; ++i) e.shared[i] = e.sum[i] / b;
    e.lambda_bar = e.lambda_sum / b;
    if (!(e.lambda_bar > 0.0))
      throw std::runtime_error("coefficient table: layer " + std::to_string(l) +
                               " has non-positive mean damping");
  }
  finalized_ = true;
}

bool CoefficientTable::active(std::size_t layer) const {
  return layer < entries_.size() && entries_[layer].active;
}

const CoefficientTable::Entry& CoefficientTable::entry(std::size_t layer) const {
  if (layer >= entries_.size())
    throw std::out_of_range("coefficient table: layer " + std::to_string(layer) + " of " +
                            std::to_string(entries_.size()));
  return entries_[layer];
}

const CoefficientTable::Entry& CoefficientTable::finalized_entry(std::size_t layer) const {
  if (!finalized_) throw std::logic_error("coefficient table is not finalized");
  const Entry& e = entry(layer);
  if (!e.active)
    throw std::out_of_range("coefficient table: layer " + std::to_string(layer) + " is inactive");
  return e;
}

const Vector& CoefficientTable::shared(std::size_t layer) const {
  return finalized_entry(layer).shared;
}

double CoefficientTable::lambda_bar(std::size_t layer) const {
  return finalized_entry(layer).lambda_bar;
}

void CoefficientTable::save(std::ostream& out) const {
  if (!finalized_) throw std::logic_error("only a finalized coefficient table can be saved");
  std::string text(kTableHeader);
  text += "\nlayers,";
  text += std::to_string(entries_.size());
  text += ",batch_size,";
  text += std::to_string(batch_size_);
  text += '\n';
  for (std::size_t l = 0; l < entries_.size(); ++l) {
    const Entry& e = entries_[l];
    if (!e.active) continue;
    text += std::to_string(l) + ',' + std::to_string(batch_size_) + ',' +
            std::to_string(e.batches) + ',';
    append_double(text, e.lambda_bar);
    for (double v : e.shared) {
      text += ',';
      append_double(text, v);
    }
    text += '\n';
  }
  out << text;
}

void CoefficientTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  save(out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CoefficientTable CoefficientTable::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTableHeader)
    throw std::runtime_error("not a coefficient table (missing '" + std::string(kTableHeader) + "')");
  if (!std::getline(in, line)) throw std::runtime_error("coefficient table: missing size line");
  const auto head = split_csv(line);
  if (head.size() != 4 || head[0] != "layers" || head[2] != "batch_size")
    throw std::runtime_error("coefficient table line 2: expected 'layers,N,batch_size,M'");
  CoefficientTable table(parse_size(head[1], 2), parse_size(head[3], 2));
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4 + table.batch_size_)
      throw std::runtime_error("coefficient table line " + std::to_string(lineno) + ": " +
                               std::to_string(f.size()) + " fields, expected " +
                               std::to_string(4 + table.batch_size_));
    const std::size_t layer = parse_size(f[0], lineno);
    if (layer >= table.entries_.size() || table.entries_[layer].active)
      throw std::runtime_error("coefficient table line " + std::to_string(lineno) +
                               ": bad or repeated layer " + std::to_string(layer));
    if (parse_size(f[1], lineno) != table.batch_size_)
      throw std::runtime_error("coefficient table line " + std::to_string(lineno) +
                               ": batch size disagrees with header");
    Entry& e = table.entries_[layer];
    e.active = true;
    e.batches = parse_size(f[2], lineno);
    e.lambda_bar = parse_double(f[3], lineno);
    if (!(e.lambda_bar > 0.0))
      throw std::runtime_error("coefficient table line " + std::to_string(lineno) +
                               ": damping must be positive");
    e.shared = Vector(table.batch_size_);
    for (std::size_t i = 0; i < table.batch_size_; ++i) e.shared[i] = parse_double(f[4 + i], lineno);
  }
  table.finalized_ = true;
  return table;
}

CoefficientTable CoefficientTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open coefficient table " + path.string());
  return load(in);
}

StepError::StepError(std::size_t layer, const std::string& what)
    : std::runtime_error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}

StepReport epoch_one_step(Network& net, const Batch& batch, CoefficientTable& table, double lr,
                          const FngdOptions& opts, MomentumBuffers* buffers) {
  return run_step(net, batch, lr, opts, buffers, &table, nullptr);
}

StepReport shared_step(Network& net, const Batch& batch, const CoefficientTable& table, double lr,
                       const FngdOptions& opts, MomentumBuffers* buffers) {
  return run_step(net, batch, lr, opts, buffers, nullptr, &table);
}

StepReport ngd_smw_step(Network& net, const Batch& batch, double lr, const FngdOptions& opts,
                        MomentumBuffers* buffers) {
  return run_step(net, batch, lr, opts, buffers, nullptr, nullptr);
}

}  // namespace fngd
