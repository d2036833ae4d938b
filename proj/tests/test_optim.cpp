#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fngd/optim.hpp"
#include "helpers.hpp"

namespace fngd {
namespace {

using test::random_matrix;

TEST(Sgd, Example) {
  std::vector<double> w = {1.0};
  const std::vector<double> g = {0.5};
  sgd_step(w, g, 0.1);
  EXPECT_DOUBLE_EQ(w[0], 0.95);
  std::vector<double> g2 = {0.5, 1.0};
  EXPECT_THROW(sgd_step(w, g2, 0.1), DimensionError);
}

TEST(SgdMomentum, Recurrence) {
  std::vector<double> w = {0.0}, v = {0.0};
  const std::vector<double> g = {1.0};
  sgd_momentum_step(w, v, g, 0.1, 0.9);
  EXPECT_EQ(v[0], 1.0);
  EXPECT_DOUBLE_EQ(w[0], -0.1);
  sgd_momentum_step(w, v, g, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(v[0], 1.9);
  EXPECT_DOUBLE_EQ(w[0], -0.1 - 0.19);
}

TEST(AdamW, DecayOnlyIsGeometric) {
  AdamWParams p;
  p.lr = 0.01;
  p.weight_decay = 0.5;
  std::vector<double> w = {2.0, -3.0}, m(2), v(2);
  const std::vector<double> g(2, 0.0);
  for (std::size_t t = 1; t <= 20; ++t) adamw_step(w, m, v, g, t, p);
  EXPECT_NEAR(w[0], 2.0 * std::pow(1 - 0.005, 20), 1e-15);
  EXPECT_NEAR(w[1], -3.0 * std::pow(1 - 0.005, 20), 1e-15);
  EXPECT_THROW(adamw_step(w, m, v, g, 0, p), std::invalid_argument);
}

TEST(AdamW, FirstStepMovesByLr) {
  AdamWParams p;
  p.lr = 0.01;
  std::vector<double> w = {1.0, 1.0}, m(2), v(2);
  const std::vector<double> g = {3.0, -0.2};
  adamw_step(w, m, v, g, 1, p);
  EXPECT_NEAR(w[0], 0.99, 1e-10);
  EXPECT_NEAR(w[1], 1.01, 1e-9);
}

TEST(AdamW, InvariantToGradientScale) {
  std::mt19937_64 rng(61);
  const std::size_t n = 50;
  AdamWParams p;
  std::vector<double> w1(n, 1.0), m1(n), v1(n), w2(n, 1.0), m2(n), v2(n);
  std::normal_distribution<double> normal;
  for (std::size_t t = 1; t <= 11; ++t) {
    std::vector<double> g(n), g2(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = normal(rng);
      g2[i] = 2.0 * g[i];
    }
    const std::vector<double> before = w1;
    adamw_step(w1, m1, v1, g, t, p);
    adamw_step(w2, m2, v2, g2, t, p);
    if (t == 11) {
      std::vector<double> d1(n), d2(n);
      for (std::size_t i = 0; i < n; ++i) {
        d1[i] = w1[i] - before[i];
        d2[i] = w2[i] - before[i];
      }
      EXPECT_LE(test::rel_err(d2, d1), 1e-6);
    }
  }
}

TEST(Kind, NamesRoundTrip) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::adamw, OptimizerKind::ngd_smw,
                 OptimizerKind::fngd})
    EXPECT_EQ(parse_optimizer_kind(to_string(k)), k);
  EXPECT_THROW(parse_optimizer_kind("kfac"), std::invalid_argument);
}

TEST(Schedule, Milestones) {
  const LrSchedule s = LrSchedule::standard(1.0, 100);
  EXPECT_EQ(schedule_lr(s, 0), 1.0);
  EXPECT_EQ(schedule_lr(s, 49), 1.0);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 50), 0.1);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 74), 0.1);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 75), 0.01);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 99), 0.01);
  EXPECT_THROW(schedule_lr(s, 100), std::out_of_range);
  EXPECT_EQ(LrSchedule::standard(1.0, 15).milestones, (std::vector<std::size_t>{8, 12}));
  EXPECT_EQ(LrSchedule::standard(1.0, 1).milestones.size(), 1u);
  EXPECT_EQ(schedule_lr(LrSchedule::constant(0.3, 10), 9), 0.3);
  LrSchedule bad = s;
  bad.milestones = {50, 50};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

Network bias_free_mlp(std::uint64_t seed) {
  return Network({LayerSpec::dense(6, 8, Activation::relu, false), LayerSpec::dense(8, 3, Activation::none, false)},
                 LossKind::cross_entropy, seed);
}

std::vector<Batch> random_batches(std::size_t count, std::size_t m, std::mt19937_64& rng) {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(test::labelled_batch(random_matrix(6, m, rng), test::random_labels(m, 3, rng)));
  return out;
}

TEST(LargeDamping, FngdTrajectoryMatchesSgd) {
  std::mt19937_64 rng(62);
  const auto batches = random_batches(10, 8, rng);
  const double lambda = 1e12;
  FngdOptions opts;
  opts.damping.fixed_lambda = lambda;
  Network a = bias_free_mlp(3), b = a;
  Fngd fngd(0.1 * lambda, opts);
  Sgd sgd(0.1);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    fngd.step(a, batches[i]);
    sgd.step(b, batches[i]);
    if (i == 4) fngd.end_epoch();
  }
  EXPECT_TRUE(fngd.sharing());
  for (std::size_t l = 0; l < 2; ++l) {
    const Matrix da = a.layer(l).weight - bias_free_mlp(3).layer(l).weight;
    const Matrix db = b.layer(l).weight - bias_free_mlp(3).layer(l).weight;
    EXPECT_GT(max_abs(db.span()), 1e-3);
    EXPECT_LE(test::rel_err(da.span(), db.span()), 1e-6);
  }
}

TEST(LargeDamping, ProportionalRuleMatchesSgdPerStep) {
  std::mt19937_64 rng(63);
  const auto batches = random_batches(10, 8, rng);
  FngdOptions opts;
  opts.damping.alpha = 1e12;
  Network a = bias_free_mlp(4), b = a;
  const Network start = a;
  const double lr = 0.1 * opts.damping.alpha;
  NgdSmw ngd(lr, opts);
  for (const auto& batch : batches) {
    const Network before = b;
    const StepReport r = ngd.step(a, batch);
    const auto back = before.backward(before.forward(batch.inputs), batch);
    for (std::size_t l = 0; l < 2; ++l)
      sgd_step(b.layer(l).weight.span(), batch_weight_gradient(back.captures[l]).span(), lr / r.lambdas[l]);
  }
  for (std::size_t l = 0; l < 2; ++l) {
    const Matrix da = a.layer(l).weight - start.layer(l).weight, db = b.layer(l).weight - start.layer(l).weight;
    EXPECT_GT(max_abs(db.span()), 1e-3);
    EXPECT_LE(test::rel_err(da.span(), db.span()), 1e-6);
  }
}

TEST(NgdSmw, EpochOneTrajectoryBitwiseEqualToFngd) {
  std::mt19937_64 rng(64);
  const auto batches = random_batches(12, 6, rng);
  Network a = bias_free_mlp(5), b = a;
  Fngd fngd(0.02, FngdOptions{});
  NgdSmw ngd(0.02, FngdOptions{});
  for (const auto& batch : batches) {
    fngd.step(a, batch);
    ngd.step(b, batch);
  }
  EXPECT_EQ(fngd.phase(), "epoch_one");
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a.layer(l).weight, b.layer(l).weight);
}

// For one linear output with squared loss, U = J·diag(r) where column m of J
// is sample m's input and r the residual. The damped empirical-Fisher step
// then makes the residual follow
//   r' = r − (η/M)·Jᵀ(λI + J·diag(r)²·Jᵀ/M)⁻¹·J·r,
// evaluated here by a dense N×N solve.
TEST(NgdSmw, LinearResidualRecursion) {
  std::mt19937_64 rng(65);
  const std::size_t n = 7, m = 5;
  const double lambda = 0.4, eta = 0.3;
  Network net({LayerSpec::dense(n, 1, Activation::none, false)}, LossKind::squared_error, 6);
  Batch batch;
  batch.inputs = random_matrix(n, m, rng);
  batch.values = random_matrix(1, m, rng);
  FngdOptions opts;
  opts.damping.fixed_lambda = lambda;
  const Matrix& j = batch.inputs;
  Vector r(m);
  for (std::size_t k = 0; k < m; ++k) r[k] = net.forward(j).predictions(0, k) - batch.values(0, k);
  for (int step = 0; step < 6; ++step) {
    Matrix a(n, n);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q) {
        double s = 0;
        for (std::size_t k = 0; k < m; ++k) s += j(p, k) * r[k] * r[k] * j(q, k);
        a(p, q) = s / m + (p == q ? lambda : 0.0);
      }
    Vector jr(n);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < m; ++k) jr[p] += j(p, k) * r[k];
    const Vector d = test::gauss_solve(a, jr);
    Vector predicted = r;
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t p = 0; p < n; ++p) predicted[k] -= eta / m * j(p, k) * d[p];

    ngd_smw_step(net, batch, eta, opts);
    const Matrix f = net.forward(j).predictions;
    for (std::size_t k = 0; k < m; ++k) r[k] = f(0, k) - batch.values(0, k);
    EXPECT_LE(max_abs_diff(r.span(), predicted.span()), 1e-10 * std::max(1.0, max_abs(predicted.span())));
  }
}

TEST(Optimizers, ClassicKindsReduceLoss) {
  std::mt19937_64 rng(66);
  const Dataset data = synthetic_classification(256, 6, 3, 9);
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::adamw, OptimizerKind::ngd_smw,
                    OptimizerKind::fngd}) {
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = kind == OptimizerKind::adamw ? 0.01 : kind == OptimizerKind::sgd ? 0.1 : 0.02;
    auto opt = make_optimizer(cfg);
    EXPECT_EQ(opt->kind(), kind);
    Network net({LayerSpec::dense(6, 16, Activation::relu), LayerSpec::dense(16, 3)}, LossKind::cross_entropy, 1);
    const auto all = data.gather(plan_batches(256, 256, 0).order);
    const double before = loss_value(net.loss(), net.forward(all.inputs).predictions, all);
    for (std::size_t e = 0; e < 5; ++e) {
      const BatchPlan plan = plan_batches(256, 32, e);
      for (std::size_t i = 0; i < plan.num_batches(); ++i) opt->step(net, data.gather(plan.batch(i)));
      opt->end_epoch();
    }
    const double after = loss_value(net.loss(), net.forward(all.inputs).predictions, all);
    EXPECT_LT(after, 0.5 * before) << to_string(kind);
  }
}

TEST(Fngd, Validation) {
  Fngd opt(0.1, FngdOptions{});
  Network net = bias_free_mlp(7);
  EXPECT_THROW(opt.step(net, test::labelled_batch(Matrix(6, 1), {0})), std::invalid_argument);
  EXPECT_THROW(opt.set_table(CoefficientTable(2, 4)), std::invalid_argument);
  OptimizerConfig cfg;
  cfg.lr = 0.0;
  EXPECT_THROW(make_optimizer(cfg), std::invalid_argument);
  EXPECT_THROW(SgdMomentum(0.1, 1.0), std::invalid_argument);
}

TEST(Fngd, LoadedTableSkipsEpochOne) {
  std::mt19937_64 rng(67);
  CoefficientTable t(2, 4);
  for (std::size_t l = 0; l < 2; ++l) t.accumulate(l, Vector(4, 0.25), 2.0);
  t.finalize();
  Fngd opt(0.1, FngdOptions{});
  opt.set_table(t);
  EXPECT_EQ(opt.phase(), "shared");
  Network a = bias_free_mlp(8), b = a;
  const Batch batch = test::labelled_batch(random_matrix(6, 4, rng), test::random_labels(4, 3, rng));
  const StepReport r = opt.step(a, batch);
  EXPECT_EQ(r.lambdas[0], 2.0);
  shared_step(b, batch, t, 0.1, FngdOptions{});
  EXPECT_EQ(a.layer(0).weight, b.layer(0).weight);
}

}  // namespace
}  // namespace fngd
