#pragma once
// Gradient of the value: solves the linear BSDE satisfied by the
// directional derivative (U, V) of (Y, Z) with respect to the initial
// state, with the base solution's coefficients frozen, and cross-checks it
// against a common-random-number finite difference.

#include <cmath>
#include <stdexcept>

#include "qbsde/bsde.hpp"
#include "qbsde/forward.hpp"
#include "qbsde/horizon.hpp"
#include "qbsde/model.hpp"

namespace qbsde::gradient {

struct GradientSolution {
  bsde::BackwardSolution sol;  // y = U (directional derivative), z = V
  Vec direction;

  double u0_mean() const { return sol.y0_mean(); }
  double max_abs_u() const {
    double m = 0.0;
    for (double v : sol.y) m = std::max(m, std::abs(v));
    return m;
  }
};

/// Builds the linearized coefficients
///   psi_i = grad_x F(X_i, Y_i, Z_i) . D_i,
///   a_i   = grad_y F(X_i, Y_i, Z_i)  (must be <= -lambda on the data),
///   b_i   = grad_z F(X_i, Y_i, Z_i),
/// and solves the linear backward equation with zero terminal. Z enters the
/// derivatives as the clipped value the base solver actually used.
inline GradientSolution solve_gradient_bsde(const model::ProblemSpec& spec,
                                            const fwd::PathEnsemble& ens,
                                            const bsde::BackwardSolution& bsol,
                                            const fwd::VariationalPaths& var,
                                            const bsde::RegressionConfig& reg,
                                            double monotonicity_tol = 1e-9) {
  spec.validate();
  if (!spec.generator.grad_x || !spec.generator.grad_y || !spec.generator.grad_z)
    throw std::invalid_argument("solve_gradient_bsde: generator partials required");
  if (bsol.n_paths != ens.n_paths || var.n_paths != ens.n_paths ||
      bsol.grid.steps != ens.grid.steps || var.steps != ens.grid.steps)
    throw std::invalid_argument("solve_gradient_bsde: inputs are not aligned");

  const int n = ens.grid.steps;
  const int k = ens.noise_dim;
  const double lambda = spec.constants.lambda;
  auto coeffs = bsde::LinearCoeffs::zeros(ens.n_paths, n, k);

  for (int p = 0; p < ens.n_paths; ++p) {
    for (int i = 0; i < n; ++i) {
      if (ens.exit_index[p] <= i) continue;  // frozen region: coefficients unused
      const Vec x = ens.state(p, i);
      const double y = bsol.y_at(p, i);
      const Vec z = bsol.z_at(p, i);
      const double a = spec.generator.grad_y(x, y, z);
      if (a > -lambda + monotonicity_tol)
        throw std::runtime_error(
            "solve_gradient_bsde: grad_y F exceeds -lambda on the data "
            "(monotonicity violated)");
      const size_t flat = static_cast<size_t>(p) * n + i;
      coeffs.a[flat] = a;
      coeffs.psi[flat] = spec.generator.grad_x(x, y, z).dot(var.at(p, i));
      const Vec bz = spec.generator.grad_z(x, y, z);
      for (int j = 0; j < k; ++j)
        coeffs.b[flat * static_cast<size_t>(k) + static_cast<size_t>(j)] = bz[j];
    }
  }
  const double psi_env = spec.constants.growth_c * var.direction.norm();
  for (auto& r : coeffs.rho) r = psi_env;

  GradientSolution g;
  g.direction = var.direction;
  g.sol = bsde::solve_linear_backward(coeffs, Vec::Zero(ens.n_paths), ens, reg);
  return g;
}

/// Central finite difference of y0 with common random numbers: both runs
/// reuse the same seed, horizon, and grid.
inline double gradient_fd(const model::ProblemSpec& spec, const Vec& x0, const Vec& h,
                          double delta, double eps, const bsde::RegressionConfig& reg,
                          uint64_t seed, horizon::Mode mode,
                          const horizon::SolveOptions& opts = {}) {
  if (!(delta > 0.0)) throw std::invalid_argument("gradient_fd: delta must be > 0");
  if (delta < 1e-8)
    throw std::invalid_argument("gradient_fd: delta below 1e-8 loses all precision");
  if (h.size() != x0.size()) throw std::invalid_argument("gradient_fd: dimension mismatch");

  const auto bounds = model::theoretical_bounds(spec);
  const auto req = horizon::required_horizon(bounds, spec.constants.lambda, eps);
  const int n = std::max(1, req.n);
  const auto grid = fwd::TimeGrid::with_density(static_cast<double>(n), opts.steps_per_unit);

  auto y0_at = [&](const Vec& x) {
    auto ens = fwd::simulate(spec, grid, opts.n_paths, seed, x, opts.threads);
    if (spec.stopping.is_exit()) ens = fwd::first_exit(std::move(ens), spec.stopping.domain);
    horizon::detail::check_mode(spec, mode);
    return bsde::solve_backward(spec, ens, reg, {}, opts.threads).y0_mean();
  };
  const double up = y0_at(x0 + delta * h);
  const double down = y0_at(x0 - delta * h);
  return (up - down) / (2.0 * delta);
}

/// Margin of the closed-form gradient bound: (C/lambda)|h| - max |U|.
/// Nonnegative (within discretization tolerance) on conforming problems.
inline double gradient_bound_check(const GradientSolution& gsol,
                                   const model::BoundSet& bounds) {
  return bounds.gradient_bound * gsol.direction.norm() - gsol.max_abs_u();
}

struct GradientAgreement {
  double u0 = 0.0;          // linear-BSDE estimate (block mean)
  double u0_se = 0.0;
  double fd = 0.0;          // finite-difference estimate (block mean)
  double diff_mean = 0.0;   // per-block paired difference, common random numbers
  double diff_se = 0.0;
  double bound_margin = 0.0;        // worst gradient-bound margin across blocks
  double variational_sup = 0.0;     // max |D| across blocks
};

/// Paired comparison of the two gradient estimators on common random
/// numbers: per path block, both the linear-BSDE value and the central
/// difference are computed from the same noise, and the difference is
/// averaged across blocks.
inline GradientAgreement gradient_agreement(const model::ProblemSpec& spec, const Vec& x0,
                                            const Vec& h, double delta, double eps,
                                            const bsde::RegressionConfig& reg,
                                            uint64_t seed, horizon::Mode mode,
                                            const horizon::SolveOptions& opts = {}) {
  if (!(delta >= 1e-8)) throw std::invalid_argument("gradient_agreement: delta too small");
  horizon::detail::check_mode(spec, mode);
  const auto bounds = model::theoretical_bounds(spec);
  const auto req = horizon::required_horizon(bounds, spec.constants.lambda, eps);
  const int n = std::max(1, req.n);
  const auto grid = fwd::TimeGrid::with_density(static_cast<double>(n), opts.steps_per_unit);
  const int blocks = std::max(2, opts.blocks);
  const int per_block = std::max(64, opts.n_paths / blocks);

  std::vector<double> u0s, fds, diffs;
  GradientAgreement out;
  out.bound_margin = std::numeric_limits<double>::infinity();
  for (int b = 0; b < blocks; ++b) {
    const uint64_t offset = static_cast<uint64_t>(b) * per_block;
    auto ens = fwd::simulate(spec, grid, per_block, seed, x0, opts.threads, offset);
    if (spec.stopping.is_exit()) ens = fwd::first_exit(std::move(ens), spec.stopping.domain);
    const auto bsol = bsde::solve_backward(spec, ens, reg, {}, opts.threads);
    const auto var = fwd::simulate_variational(spec, ens, h, opts.threads);
    const auto gsol = solve_gradient_bsde(spec, ens, bsol, var, reg);
    const double u0 = gsol.u0_mean();

    auto y0_shifted = [&](const Vec& x) {
      auto e2 = fwd::simulate(spec, grid, per_block, seed, x, opts.threads, offset);
      if (spec.stopping.is_exit()) e2 = fwd::first_exit(std::move(e2), spec.stopping.domain);
      return bsde::solve_backward(spec, e2, reg, {}, opts.threads).y0_mean();
    };
    const double fd = (y0_shifted(x0 + delta * h) - y0_shifted(x0 - delta * h)) /
                      (2.0 * delta);
    u0s.push_back(u0);
    fds.push_back(fd);
    diffs.push_back(u0 - fd);
    out.bound_margin = std::min(out.bound_margin, gradient_bound_check(gsol, bounds));
    for (int p = 0; p < var.n_paths; ++p)
      for (int i = 0; i <= var.steps; ++i)
        out.variational_sup = std::max(out.variational_sup, var.at(p, i).norm());
  }
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= std::max<size_t>(1, v.size() - 1);
    se = std::sqrt(var / static_cast<double>(v.size()));
  };
  double se_fd = 0.0;
  mean_se(u0s, out.u0, out.u0_se);
  mean_se(fds, out.fd, se_fd);
  mean_se(diffs, out.diff_mean, out.diff_se);
  return out;
}

}  // namespace qbsde::gradient
