#pragma once

// Numerical checks of the algebra behind the optimizer and of its linear
// convergence guarantee on a constant-Jacobian least-squares model.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fngd/linalg.hpp"
#include "fngd/persample.hpp"

namespace fngd::theory {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
/// BᵀB + shift·I for a square Gaussian B.
Matrix random_spd(std::size_t n, std::mt19937_64& rng, double shift = 0.0);

/// Solves (λI + UUᵀ/M)·x = g twice: through the M×M Woodbury form and by a
/// direct N×N Cholesky solve. Returns max|x_smw − x_direct| / ‖x_direct‖∞.
double smw_identity_check(const Matrix& u, const Vector& g, double lambda);
double smw_identity_check(std::size_t n, std::size_t m, double lambda, std::uint64_t seed);

using CoefficientFn = std::function<Vector(const GramStats&, double, std::size_t)>;

/// (1/λ)·U·c(G) against the direct solve with g = (1/M)·U·𝟙, same error
/// measure as smw_identity_check. `fn` defaults to fngd::coefficients.
double coefficient_path_check(const Matrix& u, double lambda, const CoefficientFn& fn = {});

/// Eigenvalues of (G + λM·I)⁻¹G against μ/(λM + μ); max abs gap.
double lemma1_check(const Matrix& gram, double lambda_m);
/// Eigenvalues of G(I − (λM·I + G)⁻¹G) against μ·λM/(λM + μ); max abs gap.
double lemma2_check(const Matrix& gram, double lambda_m);
/// max_p ‖A·p − f(μ)·p‖ over the eigenpairs (μ, p) of G, for the two maps.
double lemma1_eigenvector_gap(const Matrix& gram, double lambda_m);
double lemma2_eigenvector_gap(const Matrix& gram, double lambda_m);

/// Largest step size covered by the convergence guarantee. Throws
/// std::domain_error for L < 4, where the bound is vacuous.
double eta_tilde(std::size_t layers, double lambda_min, double lambda_max);

/// √(λ_max·L)/λ_min · r0
double assumption2_radius(std::size_t layers, double lambda_min, double lambda_max, double r0);

/// Closed form of the summed per-step travel bound,
/// η/(2(1 − √(1 − η))) · √(λ_max·L)/λ_min · r0. Never exceeds the radius and
/// tends to it as η → 0.
double travel_series_bound(std::size_t layers, double lambda_min, double lambda_max, double r0,
                           double eta);

/// Single-output least squares with a model that is exactly linear in the
/// parameters of each of L layers: v(w) = v0 + Σ_l J_lᵀ(w_l − w0_l).
struct LinearProblem {
  std::vector<Matrix> jacobians;  // J_l, N_l × M
  Vector y;
  Vector v0;
  std::vector<Vector> w0;

  std::size_t layers() const { return jacobians.size(); }
  std::size_t samples() const { return y.size(); }
  /// Stacked J (N × M).
  Matrix stacked() const;
  /// J̃, the N × ML block arrangement with J = J̃·K.
  Matrix block_arranged() const;
  /// J̃ᵀJ̃, block diagonal with blocks J_lᵀJ_l.
  Matrix gram() const;
  Vector output(const std::vector<Vector>& w) const;

  /// Gaussian J_l resampled until λ_min(J_lᵀJ_l) ≥ min_eig; needs N_l ≥ M.
  static LinearProblem random(std::size_t layers, std::size_t m, std::size_t n_per_layer,
                              std::uint64_t seed, double min_eig = 0.1);
};

struct HarnessResult {
  double eta = 0.0;
  double eta_tilde = 0.0;
  double lambda = 0.0;  // λ_min(G)/M
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  std::vector<double> residual_sq;  // ‖v_k − y‖², k = 0..steps
  std::vector<double> ratios;       // residual_sq[k]/residual_sq[k−1]; 0 once converged
  double sharing_gap = 0.0;         // max |w_shared − w_fresh| relative to max(1, ‖w‖∞)
  double direct_gap = 0.0;          // max per-step |Δw_coeff − Δw_direct|, same scale
  double max_travel = 0.0;          // max_k ‖w_k − w_0‖₂
  double radius = 0.0;              // assumption2_radius at w0
};

/// Runs per-layer damped natural-gradient steps
///   w_l ← w_l − (η/M)·(J_lJ_lᵀ/M + λI)⁻¹·J_l·(v − y),  λ = λ_min(G)/M,
/// three ways: fresh coefficients every step, a coefficient map computed once
/// and reused, and a direct N_l × N_l solve. Throws std::invalid_argument when
/// η exceeds eta_tilde.
HarnessResult theorem1_harness(const LinearProblem& problem, double eta, std::size_t steps);

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

/// Every identity and theory check. `fn` replaces the coefficient routine
/// under test; the default is fngd::coefficients.
std::vector<CheckResult> run_all_checks(std::uint64_t seed = 20240601, const CoefficientFn& fn = {});

}  // namespace fngd::theory
