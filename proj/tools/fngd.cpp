#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "fngd/config.hpp"
#include "fngd/experiment.hpp"
#include "fngd/theory.hpp"

namespace {

int cmd_train(const std::string& config_path, const std::string& save, const std::string& load,
              bool quiet) {
  const fngd::TrainConfig cfg = fngd::load_config(config_path);
  fngd::TrainOptions opts;
  if (!save.empty()) opts.save_coeffs = save;
  if (!load.empty()) opts.load_coeffs = load;
  opts.log = quiet ? nullptr : &std::cout;
  const fngd::TrainSummary s = fngd::run_train(cfg, opts);
  std::printf("%s: %zu epochs, %zu steps, final train loss %.6f, test loss %.6f, test accuracy %.2f%%\n",
              std::string(fngd::to_string(cfg.optim.kind)).c_str(), s.epochs, s.steps,
              s.final_train_loss, s.test_loss, 100.0 * s.test_accuracy);
  std::printf("metrics: %s\n", (fngd::output_dir(cfg) / cfg.output.metrics).string().c_str());
  if (!save.empty()) std::printf("coefficients: %s\n", save.c_str());
  return 0;
}

int cmd_verify(bool verbose, std::uint64_t seed) {
  const auto results = fngd::theory::run_all_checks(seed);
  std::size_t failed = 0;
  for (const auto& r : results) {
    failed += !r.pass;
    if (verbose)
      std::printf("%-38s %12.3e  <= %9.1e  %s\n", r.name.c_str(), r.measured, r.threshold,
                  r.pass ? "PASS" : "FAIL");
    else
      std::printf("%-38s %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL");
  }
  std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
  return failed ? 1 : 0;
}

std::ofstream open_output(const fngd::TrainConfig& cfg, const std::string& name) {
  const auto dir = fngd::output_dir(cfg);
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  std::printf("writing %s\n", (dir / name).string().c_str());
  return out;
}

int cmd_bench(const std::string& config_path) {
  const fngd::TrainConfig cfg = fngd::load_config(config_path);
  const fngd::Datasets data = fngd::load_data(cfg.data, cfg.model.loss);
  const auto rows = fngd::run_bench(cfg, data, &std::cout);
  std::ofstream out = open_output(cfg, cfg.output.timing);
  fngd::write_bench_csv(out, rows);
  fngd::write_bench_csv(std::cout, rows);
  return 0;
}

int cmd_ablate(const std::string& config_path) {
  const fngd::TrainConfig cfg = fngd::load_config(config_path);
  const fngd::Datasets data = fngd::load_data(cfg.data, cfg.model.loss);
  const auto rows = fngd::run_ablate(cfg, data, &std::cout);
  std::ofstream out = open_output(cfg, cfg.output.ablation);
  fngd::write_ablation_csv(out, rows);
  fngd::write_ablation_csv(std::cout, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Natural-gradient training with shared sample coefficients"};
  app.require_subcommand(1);

  std::string config, save, load;
  bool quiet = false, verbose = false;
  std::uint64_t seed = 20240601;

  auto* train = app.add_subcommand("train", "Train a model and write per-step metrics");
  train->add_option("--config", config, "Run configuration")->required()->check(CLI::ExistingFile);
  train->add_option("--save-coeffs", save, "Write the shared coefficient table (fngd only)");
  train->add_option("--load-coeffs", load, "Start from a saved coefficient table (fngd only)")
      ->check(CLI::ExistingFile);
  train->add_flag("-q,--quiet", quiet, "No per-epoch progress");

  auto* verify = app.add_subcommand("verify", "Run the identity and convergence checks");
  verify->add_flag("-v,--verbose", verbose, "Print measured values and thresholds");
  verify->add_option("--seed", seed, "Seed for the random instances");

  auto* bench = app.add_subcommand("bench", "Per-epoch timing of every optimizer");
  bench->add_option("--config", config, "Run configuration")->required()->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "FNGD against its ablated variants");
  ablate->add_option("--config", config, "Run configuration")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, save, load, quiet);
    if (*verify) return cmd_verify(verbose, seed);
    if (*bench) return cmd_bench(config);
    if (*ablate) return cmd_ablate(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fngd: %s\n", e.what());
    return 2;
  }
  return 0;
}
