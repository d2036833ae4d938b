#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fngd/natural_gradient.hpp"
#include "fngd/theory.hpp"
#include "helpers.hpp"

namespace fngd {
namespace {

using namespace fngd::theory;

TEST(Smw, ZeroPerturbationIsScaledIdentity) {
  const Vector g{1.0, -2.0, 0.5};
  EXPECT_EQ(smw_identity_check(Matrix(3, 2), g, 0.25), 0.0);
  EXPECT_LE(smw_identity_check(Matrix(3, 2), g, 0.7), 4e-16);
}

TEST(Smw, IdentityTwoByTwo) {
  EXPECT_LE(smw_identity_check(Matrix::identity(2), Vector{1.0, 1.0}, 1.0), 1e-14);
}

TEST(Smw, RandomInstances) {
  EXPECT_LE(smw_identity_check(100, 16, 0.3, 1), 1e-9);
  EXPECT_LE(smw_identity_check(200, 32, 1e-3, 2), 1e-9);
}

TEST(Smw, CoefficientPathCatchesSignError) {
  std::mt19937_64 rng(71);
  const Matrix u = theory::random_matrix(30, 8, rng);
  EXPECT_LE(coefficient_path_check(u, 0.2), 1e-9);
  const CoefficientFn flipped = [](const GramStats& s, double lambda, std::size_t m) {
    // c = (1/M)(𝟙 + (λI + G/M)⁻¹ḡ): the subtraction replaced by an addition.
    const Vector good = coefficients(s, lambda, m);
    Vector bad(m);
    for (std::size_t i = 0; i < m; ++i) bad[i] = 2.0 / static_cast<double>(m) - good[i];
    return bad;
  };
  EXPECT_GT(coefficient_path_check(u, 0.2, flipped), 1e-3);
  std::size_t failures = 0;
  for (const auto& r : run_all_checks(20240601, flipped)) failures += !r.pass;
  EXPECT_GT(failures, 0u);
}

TEST(DampedProjectionSpectrum, DiagonalCase) {
  const Matrix g{{2, 0}, {0, 5}};
  EXPECT_LE(lemma1_check(g, 2.0), 1e-15);
  // Oracle: the map is diagonal, entries μ/(λM + μ).
  const Matrix map = test::naive_matmul(Matrix{{1.0 / 4.0, 0}, {0, 1.0 / 7.0}}, g);
  EXPECT_DOUBLE_EQ(map(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(map(1, 1), 5.0 / 7.0);
  EXPECT_EQ(lemma1_check(Matrix(3, 3), 1.0), 0.0);
}

TEST(DampedResidualSpectrum, DiagonalCaseAndLimit) {
  EXPECT_LE(lemma2_check(Matrix{{2, 0}, {0, 5}}, 2.0), 1e-15);
  std::mt19937_64 rng(72);
  const Matrix g = random_spd(6, rng, 0.5);
  EXPECT_LE(lemma2_check(g, 1e9), 1e-6 * sym_eigvals(g)[5]);
}

TEST(Lemmas, RandomSpd) {
  std::mt19937_64 rng(73);
  for (std::size_t n : {2u, 5u, 8u, 16u}) {
    const Matrix g = random_spd(n, rng);
    for (double lm : {1e-2, 1.0, 10.0}) {
      EXPECT_LE(lemma1_check(g, lm), 1e-9);
      EXPECT_LE(lemma2_check(g, lm), 1e-9);
      EXPECT_LE(lemma1_eigenvector_gap(g, lm), 1e-9);
      EXPECT_LE(lemma2_eigenvector_gap(g, lm), 1e-9 * std::max(1.0, frobenius_norm(g)));
    }
  }
}

TEST(EtaTilde, HandValue) {
  EXPECT_NEAR(4.0 - std::sqrt(8.0) - 1.0, 0.171573, 1e-6);
  const double denom = std::pow(4.0 * std::sqrt(0.5) + std::sqrt(8.0) / 2.0, 2);
  EXPECT_NEAR(eta_tilde(4, 1.0, 1.0), (4.0 - std::sqrt(8.0) - 1.0) / denom, 1e-16);
  EXPECT_NEAR(eta_tilde(4, 1.0, 1.0), 0.0095318, 1e-7);
  EXPECT_THROW(eta_tilde(3, 1.0, 1.0), std::domain_error);
}

TEST(EtaTilde, DecreasingInCondition) {
  for (std::size_t l : {4u, 5u, 10u}) {
    double prev = eta_tilde(l, 1.0, 1.0);
    for (double kappa = 1.25; kappa <= 1e4; kappa *= 1.25) {
      const double cur = eta_tilde(l, 1.0, kappa);
      EXPECT_LT(cur, prev);
      prev = cur;
    }
  }
}

TEST(Radius, Examples) {
  EXPECT_DOUBLE_EQ(assumption2_radius(4, 1.0, 1.0, 1.0), 2.0);
  EXPECT_EQ(assumption2_radius(4, 1.0, 3.0, 0.0), 0.0);
}

TEST(Radius, TravelSeriesSumsToClosedForm) {
  // Per-step travel η·√(λ_max L)/(√2 λ_min)·r_k with r_k = (1−η)^{k/2} r0,
  // divided by √2: summing the geometric series term by term.
  const double eta = 0.01, lmin = 0.5, lmax = 2.0, r0 = 1.3;
  const std::size_t l = 5;
  long double sum = 0.0L;
  for (int k = 0; k < 200000; ++k)
    sum += eta * std::sqrt(lmax * l) / (std::sqrt(2.0) * lmin) * std::pow(1.0 - eta, k / 2.0) * r0 / std::sqrt(2.0);
  EXPECT_NEAR(travel_series_bound(l, lmin, lmax, r0, eta), static_cast<double>(sum), 1e-9);
  EXPECT_LE(travel_series_bound(l, lmin, lmax, r0, eta), assumption2_radius(l, lmin, lmax, r0));
  EXPECT_NEAR(travel_series_bound(l, lmin, lmax, r0, 1e-12), assumption2_radius(l, lmin, lmax, r0), 1e-10);
}

TEST(LinearProblem, BlockArrangement) {
  const LinearProblem p = LinearProblem::random(4, 3, 5, 7);
  const Matrix jt = p.block_arranged();
  ASSERT_EQ(jt.cols(), 12u);
  Matrix k(12, 3);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t i = 0; i < 3; ++i) k(3 * b + i, i) = 1.0;
  EXPECT_EQ(test::naive_matmul(jt, k), p.stacked());
  EXPECT_LE(test::rel_err(p.gram().span(), test::naive_matmul(test::naive_transpose(jt), jt).span()), 1e-14);
  EXPECT_GE(sym_eigvals(p.gram())[0], 0.1);
  EXPECT_THROW(LinearProblem::random(4, 3, 2, 7), std::invalid_argument);
}

TEST(ConvergenceHarness, ScalarRecursion) {
  LinearProblem p;
  for (int l = 0; l < 4; ++l) {
    p.jacobians.push_back(Matrix{{1.0}});
    p.w0.push_back(Vector{0.0});
  }
  p.y = Vector{1.0};
  p.v0 = Vector{0.0};
  const double eta = eta_tilde(4, 1.0, 1.0);
  const HarnessResult r = theorem1_harness(p, eta, 50);
  EXPECT_EQ(r.lambda, 1.0);
  for (double ratio : r.ratios) {
    EXPECT_NEAR(ratio, (1.0 - 2.0 * eta) * (1.0 - 2.0 * eta), 1e-12);
    EXPECT_LE(ratio, 1.0 - eta);
  }
}

TEST(ConvergenceHarness, ConvergedStaysConverged) {
  LinearProblem p = LinearProblem::random(4, 2, 3, 9);
  p.y = p.v0;
  const HarnessResult r = theorem1_harness(p, 0.5 * eta_tilde(4, 0.1, 100.0), 20);
  for (double v : r.residual_sq) EXPECT_EQ(v, 0.0);
}

TEST(ConvergenceHarness, RandomProblemsObeyBound) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const LinearProblem p = LinearProblem::random(4 + seed % 3, 3, 5, seed);
    const Vector ev = sym_eigvals(p.gram());
    const double eta = 0.5 * eta_tilde(p.layers(), ev[0], ev[ev.size() - 1]);
    const HarnessResult r = theorem1_harness(p, eta, 200);
    ASSERT_EQ(r.ratios.size(), 200u);
    for (std::size_t k = 0; k < r.ratios.size(); ++k) {
      EXPECT_LE(r.ratios[k], 1.0 - eta + 1e-10);
      EXPECT_LE(r.residual_sq[k + 1], std::pow(1.0 - eta, k + 1.0) * r.residual_sq[0] * (1 + 1e-12));
    }
    EXPECT_LE(r.sharing_gap, 1e-12);
    EXPECT_LE(r.direct_gap, 1e-12);
    EXPECT_LE(r.max_travel, r.radius);
    EXPECT_THROW(theorem1_harness(p, 2.0 * r.eta_tilde, 1), std::invalid_argument);
  }
}

TEST(RunAllChecks, AllPass) {
  const auto results = run_all_checks();
  EXPECT_GE(results.size(), 20u);
  for (const auto& r : results) EXPECT_TRUE(r.pass) << r.name << " measured " << r.measured;
}

}  // namespace
}  // namespace fngd
