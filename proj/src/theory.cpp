#include "fngd/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fngd/natural_gradient.hpp"

namespace fngd::theory {

namespace {

double rel_inf_error(const Vector& got, const Vector& want) {
  const double scale = max_abs(want.span());
  const double diff = max_abs_diff(got.span(), want.span());
  if (scale == 0.0) return diff;
  return diff / scale;
}

// (λI + UUᵀ/M)⁻¹·g by Cholesky of the N×N matrix.
Vector direct_solve(const Matrix& u, const Vector& g, double lambda) {
  Matrix a = (1.0 / static_cast<double>(u.cols())) * matmul_nt(u, u);
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += lambda;
  return solve_spd(a, g);
}

// (c·I + G)⁻¹·B, column by column.
Matrix shifted_solve(const Matrix& gram, double shift, const Matrix& b) {
  Matrix a = gram;
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += shift;
  const Matrix chol = cholesky(a);
  Matrix out(b.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) out.set_col(j, cholesky_solve(chol, b.col(j)));
  return out;
}

Matrix symmetrized(const Matrix& a) {
  Matrix s = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

Matrix lemma1_matrix(const Matrix& gram, double lambda_m) {
  return symmetrized(shifted_solve(gram, lambda_m, gram));
}

Matrix lemma2_matrix(const Matrix& gram, double lambda_m) {
  return symmetrized(gram - matmul(gram, shifted_solve(gram, lambda_m, gram)));
}

double eigenvalue_gap(const Matrix& mapped, const Matrix& gram, double (*f)(double, double),
                      double lambda_m) {
  const Vector got = sym_eigvals(mapped);
  const Vector mu = sym_eigvals(gram);
  std::vector<double> want(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) want[i] = f(std::max(mu[i], 0.0), lambda_m);
  std::sort(want.begin(), want.end());
  double gap = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) gap = std::max(gap, std::abs(got[i] - want[i]));
  return gap;
}

double eigenvector_gap(const Matrix& mapped, const Matrix& gram, double (*f)(double, double),
                       double lambda_m) {
  const SymEigen eig = sym_eig(gram);
  double gap = 0.0;
  for (std::size_t k = 0; k < eig.values.size(); ++k) {
    const Vector p = eig.vectors.col(k);
    const Vector r = matvec(mapped, p) - f(std::max(eig.values[k], 0.0), lambda_m) * p;
    gap = std::max(gap, norm2(r));
  }
  return gap;
}

double lemma1_value(double mu, double lm) { return mu / (lm + mu); }
double lemma2_value(double mu, double lm) { return mu * lm / (lm + mu); }

double inf_norm(const std::vector<Vector>& w) {
  double m = 0.0;
  for (const Vector& v : w) m = std::max(m, max_abs(v.span()));
  return m;
}

}  // namespace

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(rows, cols);
  for (double& v : a.span()) v = normal(rng);
  return a;
}

Matrix random_spd(std::size_t n, std::mt19937_64& rng, double shift) {
  const Matrix b = random_matrix(n, n, rng);
  Matrix g = matmul_tn(b, b);
  for (std::size_t i = 0; i < n; ++i) g(i, i) += shift;
  return g;
}

double smw_identity_check(const Matrix& u, const Vector& g, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("smw_identity_check: λ must be positive");
  if (g.size() != u.rows()) throw DimensionError("smw_identity_check: g does not match U");
  const double m = static_cast<double>(u.cols());
  // (λI + UUᵀ/M)⁻¹ = (1/λ)·(I − U(λM·I + UᵀU)⁻¹Uᵀ)
  Matrix inner = matmul_tn(u, u);
  for (std::size_t i = 0; i < inner.rows(); ++i) inner(i, i) += lambda * m;
  const Vector t = solve_spd(inner, matvec_t(u, g));
  const Vector smw = (1.0 / lambda) * (g - matvec(u, t));
  return rel_inf_error(smw, direct_solve(u, g, lambda));
}

double smw_identity_check(std::size_t n, std::size_t m, double lambda, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix u = random_matrix(n, m, rng);
  const Matrix g = random_matrix(n, 1, rng);
  return smw_identity_check(u, g.col(0), lambda);
}

double coefficient_path_check(const Matrix& u, double lambda, const CoefficientFn& fn) {
  const std::size_t m = u.cols();
  const GramStats stats = gram_conv(u);
  const Vector c = fn ? fn(stats, lambda, m) : coefficients(stats, lambda, m);
  const Vector ones(m, 1.0);
  const Vector g = (1.0 / static_cast<double>(m)) * matvec(u, ones);
  return rel_inf_error((1.0 / lambda) * matvec(u, c), direct_solve(u, g, lambda));
}

double lemma1_check(const Matrix& gram, double lambda_m) {
  return eigenvalue_gap(lemma1_matrix(gram, lambda_m), gram, lemma1_value, lambda_m);
}

double lemma2_check(const Matrix& gram, double lambda_m) {
  return eigenvalue_gap(lemma2_matrix(gram, lambda_m), gram, lemma2_value, lambda_m);
}

double lemma1_eigenvector_gap(const Matrix& gram, double lambda_m) {
  return eigenvector_gap(lemma1_matrix(gram, lambda_m), gram, lemma1_value, lambda_m);
}

double lemma2_eigenvector_gap(const Matrix& gram, double lambda_m) {
  return eigenvector_gap(lemma2_matrix(gram, lambda_m), gram, lemma2_value, lambda_m);
}

double eta_tilde(std::size_t layers, double lambda_min, double lambda_max) {
  if (layers < 4)
    throw std::domain_error("bound vacuous: needs at least 4 layers, got " + std::to_string(layers));
  if (!(lambda_min > 0.0) || lambda_max < lambda_min)
    throw std::invalid_argument("eta_tilde: need 0 < λ_min ≤ λ_max");
  const double l = static_cast<double>(layers);
  const double root = std::sqrt(2.0 * l);
  const double den = l * std::sqrt(lambda_max / (lambda_min * lambda_min + lambda_min * lambda_max)) +
                     root / 2.0;
  return (l - root - 1.0) / (den * den);
}

double assumption2_radius(std::size_t layers, double lambda_min, double lambda_max, double r0) {
  if (!(lambda_min > 0.0) || !(lambda_max > 0.0) || r0 < 0.0)
    throw std::invalid_argument("assumption2_radius: inputs must be positive");
  return std::sqrt(lambda_max * static_cast<double>(layers)) / lambda_min * r0;
}

double travel_series_bound(std::size_t layers, double lambda_min, double lambda_max, double r0,
                           double eta) {
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("travel_series_bound: η in (0, 1)");
  // η/(2(1 − √(1 − η))) rewritten as (1 + √(1 − η))/2 to avoid cancellation
  return 0.5 * (1.0 + std::sqrt(1.0 - eta)) * assumption2_radius(layers, lambda_min, lambda_max, r0);
}

Matrix LinearProblem::stacked() const {
  std::size_t rows = 0;
  for (const Matrix& j : jacobians) rows += j.rows();
  Matrix out(rows, samples());
  std::size_t r = 0;
  for (const Matrix& j : jacobians)
    for (std::size_t i = 0; i < j.rows(); ++i, ++r)
      std::copy(j.row(i).begin(), j.row(i).end(), out.row(r).begin());
  return out;
}

Matrix LinearProblem::block_arranged() const {
  const std::size_t m = samples();
  std::size_t rows = 0;
  for (const Matrix& j : jacobians) rows += j.rows();
  Matrix out(rows, m * layers());
  std::size_t r = 0;
  for (std::size_t l = 0; l < layers(); ++l)
    for (std::size_t i = 0; i < jacobians[l].rows(); ++i, ++r)
      for (std::size_t c = 0; c < m; ++c) out(r, l * m + c) = jacobians[l](i, c);
  return out;
}

Matrix LinearProblem::gram() const {
  const std::size_t m = samples();
  Matrix g(m * layers(), m * layers());
  for (std::size_t l = 0; l < layers(); ++l) {
    const Matrix b = matmul_tn(jacobians[l], jacobians[l]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) g(l * m + i, l * m + j) = b(i, j);
  }
  return g;
}

Vector LinearProblem::output(const std::vector<Vector>& w) const {
  if (w.size() != layers()) throw DimensionError("LinearProblem::output: wrong layer count");
  Vector v = v0;
  for (std::size_t l = 0; l < layers(); ++l) axpy(1.0, matvec_t(jacobians[l], w[l] - w0[l]), v);
  return v;
}

LinearProblem LinearProblem::random(std::size_t layers, std::size_t m, std::size_t n_per_layer,
                                    std::uint64_t seed, double min_eig) {
  if (layers == 0 || m == 0) throw std::invalid_argument("LinearProblem: empty problem");
  if (n_per_layer < m)
    throw std::invalid_argument("LinearProblem: N_l = " + std::to_string(n_per_layer) +
                                " < M = " + std::to_string(m) + " leaves G singular");
  std::mt19937_64 rng(seed);
  LinearProblem p;
  for (std::size_t l = 0; l < layers; ++l) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000)
        throw std::runtime_error("LinearProblem: could not reach λ_min ≥ " + std::to_string(min_eig));
      Matrix j = random_matrix(n_per_layer, m, rng);
      if (sym_eigvals(matmul_tn(j, j))[0] >= min_eig) {
        p.jacobians.push_back(std::move(j));
        break;
      }
    }
    p.w0.push_back(random_matrix(n_per_layer, 1, rng).col(0));
  }
  p.y = random_matrix(m, 1, rng).col(0);
  p.v0 = random_matrix(m, 1, rng).col(0);
  return p;
}

HarnessResult theorem1_harness(const LinearProblem& problem, double eta, std::size_t steps) {
  const std::size_t layers = problem.layers();
  const std::size_t m = problem.samples();
  const double md = static_cast<double>(m);

  HarnessResult res;
  const Vector eig = sym_eigvals(problem.gram());
  res.lambda_min = eig[0];
  res.lambda_max = eig[eig.size() - 1];
  if (!(res.lambda_min > 0.0))
    throw std::invalid_argument("convergence_harness: Gram matrix is singular");
  res.eta_tilde = eta_tilde(layers, res.lambda_min, res.lambda_max);
  if (!(eta > 0.0) || eta > res.eta_tilde)
    throw std::invalid_argument("convergence_harness: η = " + std::to_string(eta) +
                                " outside (0, η̃], η̃ = " + std::to_string(res.eta_tilde));
  res.eta = eta;
  res.lambda = res.lambda_min / md;
  const double lambda = res.lambda;

  std::vector<Matrix> grams, shared_maps, direct_chol;
  for (const Matrix& j : problem.jacobians) {
    Matrix g = matmul_tn(j, j);
    // Q = (1/M)·(I − (λI + G/M)⁻¹·G/M), computed once and reused
    const Matrix scaled = (1.0 / md) * g;
    Matrix q = Matrix::identity(m) - shifted_solve(scaled, lambda, scaled);
    scale(q, 1.0 / md);
    shared_maps.push_back(std::move(q));
    Matrix f = (1.0 / md) * matmul_nt(j, j);
    for (std::size_t i = 0; i < f.rows(); ++i) f(i, i) += lambda;
    direct_chol.push_back(cholesky(f));
    grams.push_back(std::move(g));
  }

  std::vector<Vector> fresh = problem.w0, shared = problem.w0;
  const auto residual = [&](const std::vector<Vector>& w) { return problem.output(w) - problem.y; };
  Vector r = residual(fresh);
  res.residual_sq.push_back(dot(r, r));
  res.radius = assumption2_radius(layers, res.lambda_min, res.lambda_max, std::sqrt(dot(r, r)));

  for (std::size_t k = 0; k < steps; ++k) {
    const Vector rs = residual(shared);
    const double scale_w = std::max(1.0, inf_norm(fresh));
    for (std::size_t l = 0; l < layers; ++l) {
      const Matrix& j = problem.jacobians[l];
      const Vector step = (-eta / lambda) * matvec(j, weighted_coefficients(grams[l], r, lambda));
      const Vector direct = (-eta / md) * cholesky_solve(direct_chol[l], matvec(j, r));
      res.direct_gap = std::max(res.direct_gap, max_abs_diff(step.span(), direct.span()) / scale_w);
      axpy(1.0, step, fresh[l]);
      axpy(-eta / lambda, matvec(j, matvec(shared_maps[l], rs)), shared[l]);
    }
    double travel = 0.0, gap = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      const Vector d = fresh[l] - problem.w0[l];
      travel += dot(d, d);
      gap = std::max(gap, max_abs_diff(fresh[l].span(), shared[l].span()));
    }
    res.max_travel = std::max(res.max_travel, std::sqrt(travel));
    res.sharing_gap = std::max(res.sharing_gap, gap / std::max(1.0, inf_norm(fresh)));

    r = residual(fresh);
    const double rsq = dot(r, r);
    res.ratios.push_back(res.residual_sq.back() > 0.0 ? rsq / res.residual_sq.back() : 0.0);
    res.residual_sq.push_back(rsq);
  }
  return res;
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed, const CoefficientFn& fn) {
  std::vector<CheckResult> out;
  const auto add = [&](std::string name, double measured, double threshold) {
    out.push_back({std::move(name), measured, threshold, measured <= threshold});
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_n(1, 200), pick_m(1, 32), pick_small(1, 16);
  std::uniform_real_distribution<double> log_lambda(-3.0, 0.0);

  {
    const Matrix eye = Matrix::identity(2);
    add("smw_identity_2x2", smw_identity_check(eye, Vector{1.0, 1.0}, 1.0), 1e-14);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = pick_n(rng), m = pick_m(rng);
      worst = std::max(worst, smw_identity_check(n, m, std::pow(10.0, log_lambda(rng)), rng()));
    }
    add("smw_identity_random", worst, 1e-9);
  }
  {
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = pick_n(rng), m = pick_m(rng);
      const Matrix u = random_matrix(n, m, rng);
      worst = std::max(worst, coefficient_path_check(u, std::pow(10.0, log_lambda(rng)), fn));
    }
    add("coefficient_path_vs_direct", worst, 1e-9);
    // Scale invariance under the Frobenius damping rule.
    const Matrix u = random_matrix(40, 8, rng);
    const DampingRule rule;
    const GramStats a = gram_conv(u), b = gram_conv(7.5 * u);
    const Vector ca = fn ? fn(a, damping_lambda(a, rule), 8) : coefficients(a, damping_lambda(a, rule), 8);
    const Vector cb = fn ? fn(b, damping_lambda(b, rule), 8) : coefficients(b, damping_lambda(b, rule), 8);
    add("coefficient_scale_invariance", max_abs_diff(ca.span(), cb.span()), 1e-10);
  }
  {
    double gram_err = 0.0, pre_err = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t in = pick_small(rng), o = pick_small(rng), m = pick_m(rng);
      LayerCapture cap;
      cap.x.push_back(random_matrix(in, m, rng));
      cap.z.push_back(random_matrix(o, m, rng));
      const Matrix u = khatri_rao(cap.z[0], cap.x[0]);
      const Matrix explicit_gram = matmul_tn(u, u);
      const GramStats stats = gram_dense(cap);
      gram_err = std::max(gram_err, max_abs_diff(stats.gram.span(), explicit_gram.span()) /
                                        std::max(1.0, max_abs(explicit_gram.span())));
      const Vector c = random_matrix(m, 1, rng).col(0);
      const Matrix d = precondition(cap, c);
      const Vector uc = matvec(u, c);
      pre_err = std::max(pre_err, max_abs_diff(d.span(), uc.span()) /
                                      std::max(1.0, max_abs(uc.span())));
    }
    add("khatri_rao_gram_identity", gram_err, 1e-12);
    add("weighted_input_vs_explicit_u", pre_err, 1e-12);
  }
  {
    const Matrix diag{{2.0, 0.0}, {0.0, 5.0}};
    const Vector l1 = sym_eigvals(lemma1_matrix(diag, 2.0));
    const Vector l2 = sym_eigvals(lemma2_matrix(diag, 2.0));
    add("damped_projection_diag", std::max(std::abs(l1[0] - 0.5), std::abs(l1[1] - 5.0 / 7.0)), 1e-15);
    add("damped_residual_diag", std::max(std::abs(l2[0] - 1.0), std::abs(l2[1] - 10.0 / 7.0)), 1e-15);
    double g1 = 0.0, g2 = 0.0, v1 = 0.0, v2 = 0.0;
    for (int t = 0; t < 50; ++t) {
      const Matrix g = random_spd(pick_small(rng), rng);
      const double lm = std::pow(10.0, log_lambda(rng) + 1.0);
      g1 = std::max(g1, lemma1_check(g, lm));
      g2 = std::max(g2, lemma2_check(g, lm));
      v1 = std::max(v1, lemma1_eigenvector_gap(g, lm));
      v2 = std::max(v2, lemma2_eigenvector_gap(g, lm));
    }
    add("damped_projection_random_spd", g1, 1e-9);
    add("damped_residual_random_spd", g2, 1e-9);
    add("damped_projection_eigenvectors", v1, 1e-9);
    add("damped_residual_eigenvectors", v2, 1e-9);
    const Matrix g = random_spd(6, rng, 0.5);
    const Vector mu = sym_eigvals(g);
    const Vector big = sym_eigvals(lemma2_matrix(g, 1e9));
    double rel = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) rel = std::max(rel, std::abs(big[i] - mu[i]) / mu[i]);
    add("damped_residual_large_damping_limit", rel, 1e-6);
  }
  {
    add("eta_tilde_l4_unit", std::abs(eta_tilde(4, 1.0, 1.0) - (4.0 - std::sqrt(8.0) - 1.0) / 18.0),
        1e-15);
    double worst_increase = 0.0;
    for (std::size_t layers : {4u, 5u, 8u, 16u}) {
      double prev = eta_tilde(layers, 1.0, 1.0);
      for (double kappa = 1.25; kappa <= 1e4; kappa *= 1.25) {
        const double cur = eta_tilde(layers, 1.0, kappa);
        worst_increase = std::max(worst_increase, cur - prev);
        prev = cur;
      }
    }
    add("eta_tilde_decreasing_in_condition", worst_increase, 0.0);
    // Partial sums of the per-step travel bound against the closed form.
    const double eta = 0.01, radius = assumption2_radius(5, 0.3, 2.0, 1.7);
    const double closed = travel_series_bound(5, 0.3, 2.0, 1.7, eta);
    double sum = 0.0, term = eta / 2.0 * radius;
    for (int k = 0; k < 20000; ++k, term *= std::sqrt(1.0 - eta)) sum += term;
    add("travel_series_closed_form", std::abs(sum - closed) / closed, 1e-12);
    add("travel_series_within_radius", closed - radius, 0.0);
    add("travel_series_small_eta_limit",
        std::abs(travel_series_bound(5, 0.3, 2.0, 1.7, 1e-8) - radius) / radius, 1e-8);
  }
  {
    LinearProblem scalar;
    for (int l = 0; l < 4; ++l) {
      scalar.jacobians.push_back(Matrix{{1.0}});
      scalar.w0.push_back(Vector{0.0});
    }
    scalar.y = Vector{1.0};
    scalar.v0 = Vector{0.0};
    const double eta = eta_tilde(4, 1.0, 1.0) / 2.0;
    const HarnessResult h = theorem1_harness(scalar, eta, 20);
    double gap = 0.0;
    for (double ratio : h.ratios) gap = std::max(gap, std::abs(ratio - (1 - 2 * eta) * (1 - 2 * eta)));
    add("convergence_scalar_recursion", gap, 1e-12);
  }
  {
    double ratio_excess = -1.0, cumulative_excess = -1.0, sharing = 0.0, direct = 0.0, travel = -1e300;
    std::uniform_int_distribution<std::size_t> pick_l(4, 6), pick_m4(1, 4);
    for (int t = 0; t < 10; ++t) {
      const std::size_t layers = pick_l(rng), m = pick_m4(rng);
      std::uniform_int_distribution<std::size_t> pick_nl(m, 8);
      const LinearProblem p = LinearProblem::random(layers, m, pick_nl(rng), rng());
      const Vector eig = sym_eigvals(p.gram());
      const double eta = eta_tilde(layers, eig[0], eig[eig.size() - 1]) / 2.0;
      const HarnessResult h = theorem1_harness(p, eta, 200);
      for (std::size_t k = 0; k < h.ratios.size(); ++k) {
        ratio_excess = std::max(ratio_excess, h.ratios[k] - (1.0 - eta));
        const double bound = std::pow(1.0 - eta, static_cast<double>(k + 1)) * h.residual_sq[0];
        cumulative_excess = std::max(cumulative_excess, (h.residual_sq[k + 1] - bound) / h.residual_sq[0]);
      }
      sharing = std::max(sharing, h.sharing_gap);
      direct = std::max(direct, h.direct_gap);
      travel = std::max(travel, h.max_travel - h.radius);
    }
    add("convergence_step_ratio_excess", ratio_excess, 1e-10);
    add("convergence_cumulative_bound_excess", cumulative_excess, 1e-12);
    add("convergence_sharing_matches_fresh", sharing, 1e-12);
    add("convergence_coefficients_match_direct", direct, 1e-12);
    add("convergence_travel_within_radius", travel, 0.0);
  }
  return out;
}

}  // namespace fngd::theory
