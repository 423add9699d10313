#pragma once
// Finite-horizon backward solver: least-squares Monte Carlo regression for
// the conditional expectations, implicit-in-y Picard step for the driver,
// explicit treatment of z, plus the linear-driver variant psi + a u + b v
// and a BMO-style diagnostic for the martingale part.
//
// Scheme per step (active paths only):
//   Z_i = regression of Y_{i+1} dW_i / dt on basis(X_i)
//   Y_i = E_i[Y_{i+1}] + dt F(X_i, Y_i, clip(Z_i))   (implicit, Picard)
// After a path exits, (Y, Z) are frozen at (xi(X_exit), 0) exactly. Y is
// clamped to +/- (M + K/lambda); clamp activations are counted so tests can
// reject runs that lean on the clamp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/forward.hpp"
#include "qbsde/linalg.hpp"
#include "qbsde/model.hpp"
#include "qbsde/regression.hpp"

namespace qbsde::bsde {

struct RegressionConfig {
  regression::BasisSpec basis;
  double ridge = 1e-8;
  int picard_cap = 50;
  double picard_tol = 1e-12;
  double z_clip = 0.0;  // 0 = auto: 10 (1 + y_bound)

  double effective_z_clip(const model::BoundSet& bounds) const {
    return z_clip > 0.0 ? z_clip : 10.0 * (1.0 + bounds.y_bound);
  }
  void validate() const {
    basis.validate();
    if (!(ridge >= 0.0)) throw std::invalid_argument("regression: ridge must be >= 0");
    if (picard_cap < 1) throw std::invalid_argument("regression: picard cap must be >= 1");
    if (z_clip < 0.0) throw std::invalid_argument("regression: z clip must be >= 0 (0 = auto)");
  }
};

/// Per-path, per-node backward solution. z holds the clipped regression
/// estimate actually fed to the driver.
struct BackwardSolution {
  fwd::TimeGrid grid;
  int n_paths = 0;
  int noise_dim = 0;
  std::vector<double> y;            // n_paths * (steps+1)
  std::vector<double> z;            // n_paths * steps * noise_dim
  std::vector<int> picard_counts;   // max iterations per time step
  int64_t clamp_activations = 0;
  int64_t clip_activations = 0;
  int64_t path_steps = 0;           // active path-steps, denominator for rates
  double max_abs_y_preclamp = 0.0;  // worst |Y| before the clamp was applied
  double bmo_estimate = 0.0;

  double& y_at(int p, int i) { return y[static_cast<size_t>(p) * (grid.steps + 1) + i]; }
  double y_at(int p, int i) const { return y[static_cast<size_t>(p) * (grid.steps + 1) + i]; }
  Eigen::Map<const Vec> z_at(int p, int i) const {
    return {z.data() + (static_cast<size_t>(p) * grid.steps + i) * noise_dim, noise_dim};
  }
  Eigen::Map<Vec> z_at(int p, int i) {
    return {z.data() + (static_cast<size_t>(p) * grid.steps + i) * noise_dim, noise_dim};
  }
  double y0_mean() const {
    double s = 0.0;
    for (int p = 0; p < n_paths; ++p) s += y_at(p, 0);
    return s / n_paths;
  }
};

/// Coefficients of the linear driver psi + a u + b . v along an ensemble.
struct LinearCoeffs {
  int n_paths = 0;
  int steps = 0;
  int noise_dim = 0;
  std::vector<double> psi;  // n_paths * steps
  std::vector<double> a;    // n_paths * steps
  std::vector<double> b;    // n_paths * steps * noise_dim
  std::vector<double> rho;  // deterministic envelope rho(t_i) >= |psi|, length steps

  double psi_at(int p, int i) const { return psi[static_cast<size_t>(p) * steps + i]; }
  double a_at(int p, int i) const { return a[static_cast<size_t>(p) * steps + i]; }
  Eigen::Map<const Vec> b_at(int p, int i) const {
    return {b.data() + (static_cast<size_t>(p) * steps + i) * noise_dim, noise_dim};
  }

  static LinearCoeffs zeros(int n_paths, int steps, int noise_dim) {
    LinearCoeffs c;
    c.n_paths = n_paths;
    c.steps = steps;
    c.noise_dim = noise_dim;
    c.psi.assign(static_cast<size_t>(n_paths) * steps, 0.0);
    c.a.assign(static_cast<size_t>(n_paths) * steps, 0.0);
    c.b.assign(static_cast<size_t>(n_paths) * steps * noise_dim, 0.0);
    c.rho.assign(static_cast<size_t>(steps), 0.0);
    return c;
  }
};

namespace detail {

// Conditional expectations at one time step, fitted on the active paths.
struct StepRegression {
  std::optional<regression::Fit> fit;
  std::vector<Vec> coeffs;  // one per target
  std::vector<double> means;
  bool degenerate = false;  // no spread: conditional expectation = mean

  StepRegression(const Mat& xs, const std::vector<Vec>& targets,
                 const regression::BasisSpec& basis, double ridge) {
    const Eigen::Index n = xs.rows();
    double spread = 0.0;
    Vec mean = xs.colwise().mean();
    for (Eigen::Index j = 0; j < xs.cols(); ++j)
      spread = std::max(spread, (xs.col(j).array() - mean[j]).abs().maxCoeff());
    if (spread < 1e-12 || n < 2) {
      degenerate = true;
      for (const auto& t : targets) means.push_back(t.size() ? t.mean() : 0.0);
      return;
    }
    fit.emplace(xs, basis, ridge);
    for (const auto& t : targets) coeffs.push_back(fit->coefficients(t));
  }

  double value(size_t target, const Vec& x) const {
    if (degenerate) return means[target];
    return fit->evaluate(coeffs[target], x);
  }
};

inline double picard_solve(const std::function<double(double)>& rhs, double y0,
                           int cap, double tol, int& iterations) {
  double y = y0;
  for (iterations = 1; iterations <= cap; ++iterations) {
    const double next = rhs(y);
    if (std::abs(next - y) <= tol * (1.0 + std::abs(next))) return next;
    y = next;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Backward solve of the quadratic BSDE on a simulated ensemble.
///
/// Terminal data: paths that exited on or before the final node carry
/// xi(X at exit); the rest receive `terminal` evaluated at X_N (default 0,
/// the truncated-horizon convention). With infinite stopping no path exits.
inline BackwardSolution solve_backward(
    const model::ProblemSpec& spec, const fwd::PathEnsemble& ens,
    const RegressionConfig& reg,
    const std::function<double(const Vec&)>& terminal = {}, int threads = 1) {
  spec.validate();
  reg.validate();
  if (spec.stopping.is_exit() && !spec.terminal_fn)
    throw std::invalid_argument("solve_backward: exit stopping needs terminal_fn");

  const auto bounds = model::theoretical_bounds(spec);
  const double z_max = reg.effective_z_clip(bounds);
  const double dt = ens.grid.dt();
  const int n = ens.grid.steps;
  const int n_paths = ens.n_paths;
  const int k = ens.noise_dim;

  BackwardSolution sol;
  sol.grid = ens.grid;
  sol.n_paths = n_paths;
  sol.noise_dim = k;
  sol.y.assign(static_cast<size_t>(n_paths) * (n + 1), 0.0);
  sol.z.assign(static_cast<size_t>(n_paths) * n * k, 0.0);
  sol.picard_counts.assign(static_cast<size_t>(n), 0);

  // Terminal layer and frozen values on exited paths.
  for (int p = 0; p < n_paths; ++p) {
    const int e = ens.exit_index[p];
    if (e != fwd::kNeverExits && e <= n) {
      const double frozen = spec.terminal_fn(ens.state(p, e));
      for (int i = e; i <= n; ++i) sol.y_at(p, i) = frozen;
      sol.max_abs_y_preclamp = std::max(sol.max_abs_y_preclamp, std::abs(frozen));
    } else {
      sol.y_at(p, n) = terminal ? terminal(ens.state(p, n)) : 0.0;
      sol.max_abs_y_preclamp =
          std::max(sol.max_abs_y_preclamp, std::abs(sol.y_at(p, n)));
    }
  }

  std::vector<int> active;
  active.reserve(static_cast<size_t>(n_paths));
  for (int i = n - 1; i >= 0; --i) {
    active.clear();
    for (int p = 0; p < n_paths; ++p)
      if (ens.exit_index[p] > i) active.push_back(p);
    sol.path_steps += static_cast<int64_t>(active.size());
    if (active.empty()) continue;

    Mat xs(static_cast<Eigen::Index>(active.size()), ens.state_dim);
    std::vector<Vec> targets(static_cast<size_t>(k) + 1,
                             Vec(static_cast<Eigen::Index>(active.size())));
    for (size_t r = 0; r < active.size(); ++r) {
      const int p = active[r];
      xs.row(static_cast<Eigen::Index>(r)) = ens.state(p, i).transpose();
      const double y_next = sol.y_at(p, i + 1);
      targets[0][static_cast<Eigen::Index>(r)] = y_next;
      const auto dw = ens.dW(p, i);
      for (int j = 0; j < k; ++j)
        targets[1 + static_cast<size_t>(j)][static_cast<Eigen::Index>(r)] =
            y_next * dw[j] / dt;
    }
    detail::StepRegression step(xs, targets, reg.basis, reg.ridge);

    int worst_picard = 0;
    int failed_at = -1;
    int64_t clamps = 0, clips = 0;
    for (size_t r = 0; r < active.size(); ++r) {
      const int p = active[r];
      const Vec x = ens.state(p, i);
      Vec z_hat(k);
      for (int j = 0; j < k; ++j) z_hat[j] = step.value(1 + static_cast<size_t>(j), x);
      const double z_norm = z_hat.norm();
      if (z_norm > z_max) {
        z_hat *= z_max / z_norm;
        ++clips;
      }
      const double cond_mean = step.value(0, x);
      int iters = 0;
      const double y_new = detail::picard_solve(
          [&](double y) { return cond_mean + dt * spec.generator.f(x, y, z_hat); },
          cond_mean, reg.picard_cap, reg.picard_tol, iters);
      if (std::isnan(y_new)) {
        failed_at = i;
        break;
      }
      worst_picard = std::max(worst_picard, iters);
      sol.max_abs_y_preclamp = std::max(sol.max_abs_y_preclamp, std::abs(y_new));
      double y_clamped = y_new;
      if (y_clamped > bounds.y_bound) {
        y_clamped = bounds.y_bound;
        ++clamps;
      } else if (y_clamped < -bounds.y_bound) {
        y_clamped = -bounds.y_bound;
        ++clamps;
      }
      sol.y_at(p, i) = y_clamped;
      sol.z_at(p, i) = z_hat;
    }
    if (failed_at >= 0)
      throw std::runtime_error("solve_backward: Picard iteration did not converge at time index " +
                               std::to_string(failed_at) + " (cap " +
                               std::to_string(reg.picard_cap) + ")");
    sol.picard_counts[static_cast<size_t>(i)] = worst_picard;
    sol.clamp_activations += clamps;
    sol.clip_activations += clips;
  }
  return sol;
}

/// Backward solve with the linear driver psi + a u + b . v and explicit
/// per-path terminal values. The implicit step is solved exactly,
///   u = (m + dt (psi + b.v)) / (1 - dt a),
/// which is the Picard fixed point; monotone coefficients keep 1 - dt a > 0.
inline BackwardSolution solve_linear_backward(const LinearCoeffs& coeffs,
                                              const Vec& terminal,
                                              const fwd::PathEnsemble& ens,
                                              const RegressionConfig& reg,
                                              double y_cap = 0.0) {
  reg.validate();
  if (coeffs.n_paths != ens.n_paths || coeffs.steps != ens.grid.steps ||
      coeffs.noise_dim != ens.noise_dim)
    throw std::invalid_argument("solve_linear_backward: coefficients do not match ensemble");
  if (terminal.size() != ens.n_paths)
    throw std::invalid_argument("solve_linear_backward: terminal must have one value per path");

  const double dt = ens.grid.dt();
  const int n = ens.grid.steps;
  const int n_paths = ens.n_paths;
  const int k = ens.noise_dim;

  BackwardSolution sol;
  sol.grid = ens.grid;
  sol.n_paths = n_paths;
  sol.noise_dim = k;
  sol.y.assign(static_cast<size_t>(n_paths) * (n + 1), 0.0);
  sol.z.assign(static_cast<size_t>(n_paths) * n * k, 0.0);
  sol.picard_counts.assign(static_cast<size_t>(n), 1);

  for (int p = 0; p < n_paths; ++p) {
    const int e = ens.exit_index[p];
    if (e != fwd::kNeverExits && e <= n) {
      for (int i = e; i <= n; ++i) sol.y_at(p, i) = terminal[p];
    } else {
      sol.y_at(p, n) = terminal[p];
    }
  }

  std::vector<int> active;
  active.reserve(static_cast<size_t>(n_paths));
  for (int i = n - 1; i >= 0; --i) {
    active.clear();
    for (int p = 0; p < n_paths; ++p)
      if (ens.exit_index[p] > i) active.push_back(p);
    sol.path_steps += static_cast<int64_t>(active.size());
    if (active.empty()) continue;

    Mat xs(static_cast<Eigen::Index>(active.size()), ens.state_dim);
    std::vector<Vec> targets(static_cast<size_t>(k) + 1,
                             Vec(static_cast<Eigen::Index>(active.size())));
    for (size_t r = 0; r < active.size(); ++r) {
      const int p = active[r];
      xs.row(static_cast<Eigen::Index>(r)) = ens.state(p, i).transpose();
      const double u_next = sol.y_at(p, i + 1);
      targets[0][static_cast<Eigen::Index>(r)] = u_next;
      const auto dw = ens.dW(p, i);
      for (int j = 0; j < k; ++j)
        targets[1 + static_cast<size_t>(j)][static_cast<Eigen::Index>(r)] =
            u_next * dw[j] / dt;
    }
    detail::StepRegression step(xs, targets, reg.basis, reg.ridge);

    for (size_t r = 0; r < active.size(); ++r) {
      const int p = active[r];
      const Vec x = ens.state(p, i);
      Vec v_hat(k);
      for (int j = 0; j < k; ++j) v_hat[j] = step.value(1 + static_cast<size_t>(j), x);
      const double a = coeffs.a_at(p, i);
      const double denom = 1.0 - dt * a;
      if (!(denom > 0.0))
        throw std::runtime_error("solve_linear_backward: 1 - dt a <= 0 at time index " +
                                 std::to_string(i) + "; refine the grid");
      double u = (step.value(0, x) +
                  dt * (coeffs.psi_at(p, i) + coeffs.b_at(p, i).dot(v_hat))) /
                 denom;
      if (y_cap > 0.0) u = std::clamp(u, -y_cap, y_cap);
      sol.y_at(p, i) = u;
      sol.z_at(p, i) = v_hat;
    }
  }
  return sol;
}

/// Numerical surrogate for the squared BMO_2 norm of the martingale part:
/// max over time indices of the regression estimate of
/// E[ sum_{j>=i} |Z_j|^2 dt | X_i ], maximized over sample states.
inline double bmo_estimate(const BackwardSolution& sol, const fwd::PathEnsemble& ens,
                           const RegressionConfig& reg) {
  const int n = sol.grid.steps;
  const int n_paths = sol.n_paths;
  const double dt = sol.grid.dt();

  std::vector<double> tail(static_cast<size_t>(n_paths), 0.0);
  double worst = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    for (int p = 0; p < n_paths; ++p)
      tail[static_cast<size_t>(p)] += sol.z_at(p, i).squaredNorm() * dt;
    Mat xs(n_paths, ens.state_dim);
    Vec target(n_paths);
    for (int p = 0; p < n_paths; ++p) {
      xs.row(p) = ens.state(p, i).transpose();
      target[p] = tail[static_cast<size_t>(p)];
    }
    std::vector<Vec> targets{target};
    detail::StepRegression step(xs, targets, reg.basis, reg.ridge);
    for (int p = 0; p < n_paths; ++p)
      worst = std::max(worst, step.value(0, ens.state(p, i)));
  }
  return worst;
}

}  // namespace qbsde::bsde
