#include "fngd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <ostream>

namespace fngd {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string format_double(double v, const char* fmt = "%.17g") {
  if (std::isnan(v)) return {};
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void attach_onehot(Dataset& d) {
  d.values = Matrix(d.num_classes, d.size());
  for (std::size_t j = 0; j < d.size(); ++j) d.values(d.labels[j], j) = 1.0;
}

}  // namespace

Datasets load_data(const DataConfig& data, LossKind loss) {
  Datasets out;
  if (data.source == "synthetic") {
    auto [train, test] =
        split(synthetic_classification(data.n + data.test_n, data.dim, data.classes, data.seed), data.n);
    out.train = std::move(train);
    out.test = std::move(test);
  } else if (data.source == "idx") {
    if (data.test_images.empty()) {
      Dataset all = load_idx_dataset(data.train_images, data.train_labels, 0);
      if (data.test_n >= all.size())
        throw ConfigError("data.test_n", "holds out every IDX sample");
      const std::size_t n_train = all.size() - data.test_n;
      auto [train, test] = split(all, n_train);
      out.train = data.limit != 0 && data.limit < train.size() ? split(train, data.limit).first
                                                               : std::move(train);
      out.test = std::move(test);
    } else {
      out.train = load_idx_dataset(data.train_images, data.train_labels, data.limit);
      out.test = load_idx_dataset(data.test_images, data.test_labels, data.test_limit);
      const std::size_t k = std::max(out.train.num_classes, out.test.num_classes);
      out.train.num_classes = out.test.num_classes = k;
    }
  } else {
    throw ConfigError("data.source", "'" + data.source + "' is not synthetic or idx");
  }
  if (loss == LossKind::squared_error) {
    attach_onehot(out.train);
    attach_onehot(out.test);
  }
  return out;
}

Evaluation evaluate(const Network& net, const Dataset& data, std::size_t chunk) {
  Evaluation ev;
  if (data.size() == 0) return ev;
  double loss = 0.0, hits = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Batch batch = data.gather(idx);
    const Matrix pred = net.forward(batch.inputs).predictions;
    const double count = static_cast<double>(idx.size());
    loss += loss_value(net.loss(), pred, batch) * count;
    if (batch.is_classification()) hits += accuracy(pred, batch.labels) * count;
  }
  const double n = static_cast<double>(data.size());
  ev.loss = loss / n;
  ev.accuracy = data.is_classification() ? hits / n : std::numeric_limits<double>::quiet_NaN();
  return ev;
}

MetricsWriter::MetricsWriter(std::ostream& out) : out_(out) {
  out_ << "# fngd metrics v1 (wall_ms is timing and varies between runs)\n" << kHeader << '\n';
  out_.flush();
}

void MetricsWriter::write(const MetricsRow& row) {
  out_ << row.epoch << ',' << row.step << ',' << row.split << ',' << format_double(row.loss) << ','
       << format_double(row.accuracy) << ',' << row.optimizer << ','
       << format_double(row.wall_ms, "%.3f") << '\n';
  out_.flush();
}

std::filesystem::path output_dir(const TrainConfig& config) {
  if (const char* env = std::getenv("FNGD_OUTPUT_DIR"); env && *env) return env;
  return config.output.dir;
}

TrainSummary run_train(const TrainConfig& config, const Datasets& data, const TrainOptions& opts) {
  const LrSchedule sched = config.schedule();
  sched.validate();
  Network net(config.model.layers, config.model.loss, config.model.init_seed);
  if (net.input_size() != data.train.features())
    throw ConfigError("model.layers", "network takes " + std::to_string(net.input_size()) +
                                          " inputs, data has " +
                                          std::to_string(data.train.features()) + " features");
  if (data.train.is_classification() && net.output_size() < data.train.num_classes)
    throw ConfigError("model.layers", "network has " + std::to_string(net.output_size()) +
                                          " outputs for " + std::to_string(data.train.num_classes) +
                                          " classes");
  const std::size_t m = config.train.batch_size;
  if (m > data.train.size())
    throw ConfigError("train.batch_size", "exceeds the " + std::to_string(data.train.size()) +
                                              " training samples");

  std::unique_ptr<Optimizer> opt = make_optimizer(config.optim);
  auto* fngd = dynamic_cast<Fngd*>(opt.get());
  if (opts.load_coeffs) {
    if (!fngd) throw ConfigError("optim.kind", "--load-coeffs needs the fngd optimizer");
    CoefficientTable table = CoefficientTable::load(*opts.load_coeffs);
    if (table.layers() != net.size() || table.batch_size() != m)
      throw std::runtime_error("coefficient table is for " + std::to_string(table.layers()) +
                               " layers and M=" + std::to_string(table.batch_size()) +
                               ", run has " + std::to_string(net.size()) + " layers and M=" +
                               std::to_string(m));
    fngd->set_table(std::move(table));
  }

  std::optional<MetricsWriter> writer;
  if (opts.metrics) writer.emplace(*opts.metrics);
  const std::string name(to_string(config.optim.kind));

  TrainSummary summary;
  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    opt->set_lr(schedule_lr(sched, epoch));
    const std::string phase(opt->phase());
    const BatchPlan plan = plan_batches(data.train.size(), m, epoch_seed(config.train.seed, epoch));
    const auto epoch_start = Clock::now();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < plan.num_batches(); ++b) {
      const auto step_start = Clock::now();
      const Batch batch = data.train.gather(plan.batch(b));
      StepReport rep;
      try {
        rep = opt->step(net, batch);
      } catch (const StepError& e) {
        throw std::runtime_error("epoch " + std::to_string(epoch + 1) + ", step " +
                                 std::to_string(summary.steps + 1) + ": " + e.what());
      }
      ++summary.steps;
      if (!std::isfinite(rep.loss))
        throw std::runtime_error("epoch " + std::to_string(epoch + 1) + ", step " +
                                 std::to_string(summary.steps) + ": loss is not finite (lr " +
                                 format_double(opt->lr(), "%g") + " too large?)");
      loss_sum += rep.loss;
      if (writer)
        writer->write({epoch + 1, summary.steps, "train", rep.loss, rep.accuracy, name,
                       ms_since(step_start)});
    }
    opt->end_epoch();
    const double epoch_ms = ms_since(epoch_start);
    summary.epoch_ms.push_back(epoch_ms);
    summary.final_train_loss = loss_sum / static_cast<double>(plan.num_batches());
    ++summary.epochs;

    if (opts.evaluate_test) {
      const Evaluation ev = evaluate(net, data.test);
      summary.test_loss = ev.loss;
      summary.test_accuracy = ev.accuracy;
      if (writer) writer->write({epoch + 1, summary.steps, "test", ev.loss, ev.accuracy, name, epoch_ms});
      if (opts.log) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "epoch %zu/%zu  %-9s lr %-8g train loss %.4f  test loss %.4f  acc %.2f%%  %.0f ms\n",
                      epoch + 1, config.train.epochs, phase.c_str(), opt->lr(),
                      summary.final_train_loss, ev.loss, 100.0 * ev.accuracy, epoch_ms);
        *opts.log << line << std::flush;
      }
    }
  }

  if (fngd && fngd->sharing()) {
    summary.coefficients = fngd->table();
    if (opts.save_coeffs) fngd->table().save(*opts.save_coeffs);
  } else if (opts.save_coeffs) {
    throw ConfigError("optim.kind", "--save-coeffs needs the fngd optimizer");
  }
  return summary;
}

TrainSummary run_train(const TrainConfig& config, const TrainOptions& opts) {
  const Datasets data = load_data(config.data, config.model.loss);
  const auto dir = output_dir(config);
  std::filesystem::create_directories(dir);
  const auto path = dir / config.output.metrics;
  std::ofstream metrics(path);
  if (!metrics) throw std::runtime_error("cannot write " + path.string());
  TrainOptions o = opts;
  o.metrics = &metrics;
  return run_train(config, data, o);
}

std::vector<BenchRow> run_bench(const TrainConfig& config, const Datasets& data, std::ostream* log) {
  TrainConfig base = config;
  base.train.epochs = config.bench.epochs;
  base.train.schedule = "constant";
  base.train.milestones.clear();

  const auto timed = [&](TrainConfig cfg, const std::string& label) {
    if (log) *log << "bench: " << label << " (" << cfg.train.epochs << " epochs)\n" << std::flush;
    TrainOptions o;
    o.evaluate_test = false;
    return run_train(cfg, data, o).epoch_ms;
  };
  const auto with_kind = [&](OptimizerKind kind) {
    TrainConfig cfg = base;
    cfg.optim.kind = kind;
    if (auto it = config.bench.lrs.find(kind); it != config.bench.lrs.end()) cfg.optim.lr = it->second;
    return cfg;
  };

  // One untimed epoch so the reference run does not pay for first-touch
  // allocation and cold caches.
  TrainConfig warm = with_kind(OptimizerKind::sgd);
  warm.train.epochs = 1;
  timed(warm, "warm-up");

  std::vector<BenchRow> rows;
  const double sgd_ms = median(timed(with_kind(OptimizerKind::sgd), "sgd"));
  rows.push_back({"sgd", "all", sgd_ms, 1.0});
  for (OptimizerKind kind : config.bench.kinds) {
    if (kind == OptimizerKind::sgd) continue;
    const std::string name(to_string(kind));
    if (kind == OptimizerKind::fngd) {
      for (PreconditionPath path : {PreconditionPath::weighted_input, PreconditionPath::explicit_u}) {
        TrainConfig cfg = with_kind(kind);
        cfg.optim.fngd.path = path;
        const std::string label = path == PreconditionPath::weighted_input ? "fngd" : "fngd_explicit_u";
        const std::vector<double> ms = timed(cfg, label);
        if (path == PreconditionPath::weighted_input)
          rows.push_back({label, "epoch_one", ms.front(), ms.front() / sgd_ms});
        const double shared = median(std::vector<double>(ms.begin() + 1, ms.end()));
        rows.push_back({label, "shared", shared, shared / sgd_ms});
      }
    } else {
      const double ms = median(timed(with_kind(kind), name));
      rows.push_back({name, "all", ms, ms / sgd_ms});
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "# fngd timing v1 (all values are timings)\noptimizer,phase,median_epoch_ms,ratio_vs_sgd\n";
  for (const BenchRow& r : rows)
    out << r.optimizer << ',' << r.phase << ',' << format_double(r.median_epoch_ms, "%.3f") << ','
        << format_double(r.ratio_vs_sgd, "%.4f") << '\n';
}

std::vector<AblationRow> run_ablate(const TrainConfig& config, const Datasets& data, std::ostream* log) {
  TrainConfig base = config;
  base.optim.kind = OptimizerKind::fngd;
  struct Variant {
    const char* name;
    TrainConfig cfg;
  };
  std::vector<Variant> variants{{"fngd", base}, {"no_sharing", base}, {"no_acceleration", base},
                                {"no_damping", base}};
  variants[1].cfg.optim.kind = OptimizerKind::ngd_smw;
  variants[2].cfg.optim.fngd.path = PreconditionPath::explicit_u;
  variants[3].cfg.optim.fngd.damping.fixed_lambda = 0.3;

  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    if (log) *log << "ablate: " << v.name << '\n' << std::flush;
    AblationRow row;
    row.variant = v.name;
    try {
      const TrainSummary s = run_train(v.cfg, data, TrainOptions{});
      row.test_accuracy = s.test_accuracy;
      row.test_loss = s.test_loss;
      row.median_epoch_ms = median(s.epoch_ms);
    } catch (const std::runtime_error& e) {
      if (log) *log << "ablate: " << v.name << " failed: " << e.what() << '\n';
      row.test_accuracy = row.test_loss = row.median_epoch_ms =
          std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(row);
  }
  for (AblationRow& r : rows) r.relative_time = r.median_epoch_ms / rows.front().median_epoch_ms;
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "# fngd ablation v1 (median_epoch_ms and relative_time are timings)\n"
         "variant,test_accuracy,test_loss,median_epoch_ms,relative_time\n";
  for (const AblationRow& r : rows)
    out << r.variant << ',' << format_double(r.test_accuracy) << ',' << format_double(r.test_loss)
        << ',' << format_double(r.median_epoch_ms, "%.3f") << ','
        << format_double(r.relative_time, "%.4f") << '\n';
}

}  // namespace fngd
