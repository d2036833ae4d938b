// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Oracles live in helpers.hpp and below; none of them goes
// through the routine it checks.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "fngd/experiment.hpp"
#include "fngd/natural_gradient.hpp"
#include "fngd/optim.hpp"
#include "fngd/persample.hpp"
#include "fngd/theory.hpp"
#include "helpers.hpp"

namespace {

using namespace fngd;
using test::random_matrix;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

// (λI + UUᵀ/M)⁻¹·(U𝟙/M) by Gauss-Jordan on the N×N system.
Vector direct_solve(const Matrix& u, double lambda) {
  const std::size_t n = u.rows(), m = u.cols();
  Matrix a = test::naive_matmul(u, test::naive_transpose(u));
  for (double& v : a.span()) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += lambda;
  Vector g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (double v : u.row(i)) g[i] += v / static_cast<double>(m);
  return test::gauss_solve(a, g);
}

Outcome criterion1() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> pick_n(1, 200), pick_m(1, 32);
  std::uniform_real_distribution<double> pick_lambda(1e-3, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = pick_n(rng), m = pick_m(rng);
    const double lambda = pick_lambda(rng);
    const Matrix u = random_matrix(n, m, rng);
    const GramStats stats = gram_conv(u);
    Vector got = matvec(u, coefficients(stats, lambda, m));
    for (double& v : got) v /= lambda;
    worst = std::max(worst, test::rel_err(got.span(), direct_solve(u, lambda).span()));
  }
  return {worst <= 1e-9, fmt("max relative error %.2e over 100 instances (limit 1e-9)", worst)};
}

Outcome criterion2() {
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<std::size_t> pick(1, 24);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t i = pick(rng), o = pick(rng), m = pick(rng);
    LayerCapture cap;
    cap.x.push_back(random_matrix(i, m, rng));
    cap.z.push_back(random_matrix(o, m, rng));
    const Matrix u = test::naive_khatri_rao(cap.z[0], cap.x[0]);
    const Matrix want = test::naive_matmul(test::naive_transpose(u), u);
    worst = std::max(worst, test::rel_err(gram_dense(cap).gram.span(), want.span()));
  }
  return {worst <= 1e-12, fmt("max relative error %.2e over 100 captures (limit 1e-12)", worst)};
}

Outcome criterion3() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(300 + seed);
    Network net(test::toy_conv_specs(), LossKind::cross_entropy, seed);
    for (auto& layer : net.layers()) layer.bias = test::random_vector(layer.spec.out, rng);
    const std::size_t m = 3;
    const Batch batch = test::labelled_batch(random_matrix(25, m, rng), test::random_labels(m, 3, rng));
    const auto caps = net.backward(net.forward(batch.inputs), batch).captures;
    for (std::size_t l = 0; l < net.size(); ++l) {
      const bool dense = net.layer(l).spec.kind == LayerKind::dense;
      const Matrix u = dense ? Matrix() : build_u_conv(caps[l]);
      for (std::size_t s = 0; s < m; ++s) {
        Batch one = test::labelled_batch(Matrix(25, 1), {batch.labels[s]});
        one.inputs.set_col(0, batch.inputs.col(s));
        const auto loss = [&] { return loss_value(net.loss(), net.forward(one.inputs).predictions, one); };
        Vector got = dense ? Vector() : u.col(s);
        if (dense) {
          const Matrix g = per_sample_grad_dense(caps[l], s);
          got = Vector::from(std::vector<double>(g.span().begin(), g.span().end()));
        }
        Matrix& w = net.layer(l).weight;
        Vector fd(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) fd[i] = test::central_difference(loss, w.data()[i]);
        worst = std::max(worst, max_abs_diff(got.span(), fd.span()) / std::max(1e-8, max_abs(fd.span())));
      }
    }
  }
  return {worst <= 1e-5, fmt("max relative error %.2e, 3 layers x 5 seeds (limit 1e-5)", worst)};
}

Outcome criterion4() {
  std::mt19937_64 rng(104);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    // Dense capture against the explicit Khatri-Rao U.
    const std::size_t m = 2 + t % 7;
    LayerCapture cap;
    cap.x.push_back(random_matrix(3 + t % 5, m, rng));
    cap.z.push_back(random_matrix(2 + t % 3, m, rng));
    const Vector c = test::random_vector(m, rng);
    const Vector want = matvec(test::naive_khatri_rao(cap.z[0], cap.x[0]), c);
    worst = std::max(worst, test::rel_err(precondition_dense(cap, c).span(), want.span()));

    // Conv capture against a U assembled from per-patch Khatri-Rao terms.
    Network net(test::toy_conv_specs(), LossKind::cross_entropy, 400 + t);
    const Batch b = test::labelled_batch(random_matrix(25, m, rng), test::random_labels(m, 3, rng));
    const auto caps = net.backward(net.forward(b.inputs), b).captures;
    for (std::size_t l = 0; l < 2; ++l) {
      Matrix u = test::naive_khatri_rao(caps[l].z[0], caps[l].x[0]);
      for (std::size_t s = 1; s < caps[l].patches(); ++s)
        axpy(1.0, test::naive_khatri_rao(caps[l].z[s], caps[l].x[s]), u);
      const Vector cc = test::random_vector(m, rng);
      worst = std::max(worst, test::rel_err(precondition_conv(caps[l], cc).span(), matvec(u, cc).span()));
    }
  }
  return {worst <= 1e-12, fmt("max relative error %.2e, 50 dense + 100 conv cases (limit 1e-12)", worst)};
}

Outcome criterion5() {
  std::mt19937_64 rng(105);
  std::uniform_int_distribution<std::size_t> pick_n(2, 16);
  std::uniform_real_distribution<double> pick_log(-2, 1);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Matrix g = theory::random_spd(pick_n(rng), rng);
    const double lm = std::pow(10.0, pick_log(rng));
    worst = std::max({worst, theory::lemma1_check(g, lm), theory::lemma2_check(g, lm)});
  }
  // Diagonal case: both maps are diagonal, so their entries are the
  // eigenvalues; build them by hand and compare with the expected sets.
  const Matrix d{{2, 0}, {0, 5}};
  const Matrix inv{{1.0 / 4.0, 0}, {0, 1.0 / 7.0}};  // (G + 2I)⁻¹
  const Matrix map1 = test::naive_matmul(inv, d);
  const Matrix map2 = test::naive_matmul(d, Matrix::identity(2) - map1);
  const double diag_gap = std::max({std::abs(map1(0, 0) - 0.5), std::abs(map1(1, 1) - 5.0 / 7.0),
                                    std::abs(map2(0, 0) - 1.0), std::abs(map2(1, 1) - 10.0 / 7.0)});
  const double l1 = theory::lemma1_check(d, 2.0), l2 = theory::lemma2_check(d, 2.0);
  const bool diag = diag_gap <= 1e-15 && l1 <= 1e-15 && l2 <= 1e-15;
  return {worst <= 1e-9 && diag,
          fmt("max gap %.2e on 50 SPD matrices (limit 1e-9); diag(2,5) gaps %.1e, %.1e", worst, l1, l2)};
}

Outcome criterion6() {
  std::mt19937_64 rng(106);
  double worst_excess = -1.0, worst_cum = -1.0, worst_share = 0.0, worst_direct = 0.0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    const std::size_t layers = 4 + k % 3, m = 1 + k % 4;
    const std::size_t n_l = std::uniform_int_distribution<std::size_t>(m, 8)(rng);
    const theory::LinearProblem p = theory::LinearProblem::random(layers, m, n_l, 600 + k);
    const Vector ev = sym_eigvals(p.gram());
    const double eta = 0.5 * theory::eta_tilde(layers, ev[0], ev[ev.size() - 1]);
    const theory::HarnessResult r = theory::theorem1_harness(p, eta, 200);
    for (std::size_t s = 0; s < r.ratios.size(); ++s) {
      worst_excess = std::max(worst_excess, r.ratios[s] - (1.0 - eta));
      worst_cum = std::max(worst_cum, r.residual_sq[s + 1] / r.residual_sq[0] - std::pow(1.0 - eta, s + 1.0));
    }
    worst_share = std::max(worst_share, r.sharing_gap);
    worst_direct = std::max(worst_direct, r.direct_gap);
  }
  const bool pass = worst_excess <= 1e-10 && worst_cum <= 1e-12 && worst_share <= 1e-12 && worst_direct <= 1e-12;
  return {pass, fmt("max ratio-(1-eta) %.2e, max cumulative excess %.2e, sharing gap %.2e, direct-solve gap %.2e",
                    worst_excess, worst_cum, worst_share, worst_direct)};
}

TrainConfig criterion7_config(OptimizerKind kind, std::uint64_t seed) {
  TrainConfig c;
  c.data.n = 2000;
  c.data.test_n = 500;
  c.data.dim = 20;
  c.data.classes = 2;
  c.data.seed = seed;
  c.model.layers = {LayerSpec::dense(20, 32, Activation::relu), LayerSpec::dense(32, 2)};
  c.model.init_seed = seed;
  c.optim.kind = kind;
  c.optim.lr = kind == OptimizerKind::sgd_momentum ? 0.01 : 0.03;
  c.train.epochs = 15;
  c.train.batch_size = 64;
  c.train.seed = seed;
  c.validate();
  return c;
}

Outcome criterion7() {
  double acc[3] = {0, 0, 0};
  const OptimizerKind kinds[3] = {OptimizerKind::fngd, OptimizerKind::ngd_smw, OptimizerKind::sgd_momentum};
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    for (int k = 0; k < 3; ++k) {
      const TrainConfig c = criterion7_config(kinds[k], seed);
      acc[k] += 100.0 * run_train(c, load_data(c.data, c.model.loss), TrainOptions{}).test_accuracy / 3.0;
    }
  const bool pass = std::abs(acc[0] - acc[1]) <= 1.0 && std::abs(acc[0] - acc[2]) <= 1.5;
  return {pass, fmt("mean test accuracy fngd %.2f%%, ngd_smw %.2f%%, sgd_momentum %.2f%%", acc[0], acc[1], acc[2])};
}

Outcome criterion8() {
  TrainConfig c;
  c.data.n = 10000;
  c.data.test_n = 1000;
  c.data.dim = 784;
  c.data.classes = 10;
  c.data.seed = 7;
  c.model.layers = {LayerSpec::dense(784, 256, Activation::relu), LayerSpec::dense(256, 10)};
  c.optim.kind = OptimizerKind::fngd;
  c.optim.lr = 0.01;
  c.train.batch_size = 128;
  c.bench.epochs = 4;
  c.bench.kinds = {OptimizerKind::ngd_smw, OptimizerKind::fngd};
  c.bench.lrs[OptimizerKind::sgd] = 0.05;
  c.validate();
  const auto rows = run_bench(c, load_data(c.data, c.model.loss));
  double sgd = 0, ngd = 0, shared = 0, explicit_u = 0;
  for (const auto& r : rows) {
    if (r.optimizer == "sgd") sgd = r.median_epoch_ms;
    if (r.optimizer == "ngd_smw") ngd = r.median_epoch_ms;
    if (r.optimizer == "fngd" && r.phase == "shared") shared = r.median_epoch_ms;
    if (r.optimizer == "fngd_explicit_u" && r.phase == "shared") explicit_u = r.median_epoch_ms;
  }
  const double shared_vs_sgd = shared / sgd, ngd_vs_shared = ngd / shared;
  const bool pass = shared_vs_sgd <= 1.3 && ngd_vs_shared >= 1.5 && explicit_u > shared;
  return {pass, fmt("shared/sgd %.3f (<= 1.3), ngd_smw/shared %.3f (>= 1.5), explicit/weighted %.3f (> 1)",
                    shared_vs_sgd, ngd_vs_shared, explicit_u / shared)};
}

Outcome criterion9() {
  // Large damping: the FNGD trajectory against SGD at lr η/λ per step.
  std::mt19937_64 rng(109);
  FngdOptions opts;
  opts.damping.alpha = 1e12;
  Network a({LayerSpec::dense(6, 8, Activation::relu, false), LayerSpec::dense(8, 3, Activation::none, false)},
            LossKind::cross_entropy, 9);
  Network b = a;
  const Network start = a;
  // η/λ_i = 0.1/‖G_i‖_F, an ordinary step size.
  const double lr = 0.1 * opts.damping.alpha;
  Fngd fngd(lr, opts);
  for (int step = 0; step < 10; ++step) {
    const Batch batch = test::labelled_batch(random_matrix(6, 8, rng), test::random_labels(8, 3, rng));
    const auto back = b.backward(b.forward(batch.inputs), batch);
    const StepReport r = fngd.step(a, batch);
    for (std::size_t l = 0; l < 2; ++l) {
      const Matrix g = batch_weight_gradient(back.captures[l]);
      axpy(-lr / r.lambdas[l], g, b.layer(l).weight);
    }
    if (step == 4) fngd.end_epoch();
  }
  double traj = 0.0, moved = 0.0;
  for (std::size_t l = 0; l < 2; ++l) {
    Matrix delta_a = a.layer(l).weight - start.layer(l).weight;
    Matrix delta_b = b.layer(l).weight - start.layer(l).weight;
    traj = std::max(traj, test::rel_err(delta_a.span(), delta_b.span()));
    moved = std::max(moved, max_abs(delta_b.span()));
  }

  // One-hot coefficients select a single sample's gradient.
  Network conv(test::toy_conv_specs(), LossKind::cross_entropy, 10);
  const Batch batch = test::labelled_batch(random_matrix(25, 4, rng), test::random_labels(4, 3, rng));
  const auto caps = conv.backward(conv.forward(batch.inputs), batch).captures;
  double selector = 0.0;
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t m = 0; m < 4; ++m) {
      Vector onehot(4);
      onehot[m] = 1.0;
      selector = std::max(selector, max_abs_diff(precondition(caps[l], onehot).span(),
                                                 per_sample_grad(caps[l], m).span()));
    }

  // Zero gradients: predictions equal targets.
  Network lin({LayerSpec::dense(4, 3, Activation::relu), LayerSpec::dense(3, 2)}, LossKind::squared_error, 11);
  Batch zero;
  zero.inputs = random_matrix(4, 5, rng);
  zero.values = lin.forward(zero.inputs).predictions;
  const Network before = lin;
  CoefficientTable table(2, 5);
  epoch_one_step(lin, zero, table, 0.1, FngdOptions{});
  bool unchanged = true;
  for (std::size_t l = 0; l < 2; ++l) unchanged &= lin.layer(l).weight == before.layer(l).weight;

  const bool pass = traj <= 1e-6 && moved > 1e-3 && selector == 0.0 && unchanged;
  return {pass, fmt("trajectory gap %.2e relative to a %.2e displacement (limit 1e-6), selector gap %.1e, zero step ",
                    traj, moved, selector) +
                    (unchanged ? "exact" : "NONZERO")};
}

std::string read_without_wall_ms(const fs::path& p) {
  std::ifstream in(p);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') line = line.substr(0, line.rfind(','));
    out += line + '\n';
  }
  return out;
}

Outcome criterion10() {
  const fs::path dir = fs::temp_directory_path() / ("fngd_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path cfg = dir / "run.ini";
  std::ofstream(cfg) << "[data]\nn = 2000\ntest_n = 500\ndim = 20\nclasses = 2\nseed = 3\n"
                        "[model]\nlayers = dense:20:32:relu, dense:32:2\ninit_seed = 3\n"
                        "[optim]\nkind = fngd\nlr = 0.03\n"
                        "[train]\nepochs = 6\nbatch_size = 64\nseed = 3\n";
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path out = dir / ("run" + std::to_string(run));
    const std::string cmd = "FNGD_OUTPUT_DIR='" + out.string() + "' '" FNGD_CLI_PATH "' train -q --config '" +
                            cfg.string() + "' > /dev/null";
    const int status = std::system(cmd.c_str());
    if (status != 0 || !fs::exists(out / "metrics.csv"))
      return {false, "CLI run " + std::to_string(run) + " failed with status " + std::to_string(status)};
    csv[run] = read_without_wall_ms(out / "metrics.csv");
  }
  std::size_t rows = std::count(csv[0].begin(), csv[0].end(), '\n');
  fs::remove_all(dir);
  const bool pass = csv[0] == csv[1] && rows > 2;
  return {pass, std::to_string(rows) + " lines, " + (csv[0] == csv[1] ? "identical" : "DIFFERENT") +
                    " apart from wall_ms"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    double budget_s;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {{1, 10, criterion1}, {2, 5, criterion2},   {3, 60, criterion3},
                                {4, 10, criterion4}, {5, 10, criterion5},  {6, 30, criterion6},
                                {7, 180, criterion7}, {8, 300, criterion8}, {9, 10, criterion9},
                                {10, 120, criterion10}};
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %2d %s  %s; %.1f s (budget %.0f s%s)\n", c.id, pass ? "PASS" : "FAIL", o.detail.c_str(),
                secs, c.budget_s, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed ? 1 : 0;
}
