#pragma once
// Deterministic brute-force ground truth, kept on a separate numerical
// pathway from the Monte Carlo solver: quadrature trees / lattices for 1-D
// backward equations, Gaussian-marginal quadrature for z-free drivers, and
// a damped-Newton finite-difference solver for the 1-D semilinear elliptic
// equation. No randomness anywhere in this header.

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/linalg.hpp"
#include "qbsde/model.hpp"

namespace qbsde::oracle {

/// Gauss-Hermite rule normalized for standard-normal expectations:
/// E[f(G)] ~ sum_j weights[j] f(nodes[j]), weights summing to 1.
struct GaussHermite {
  Vec nodes;
  Vec weights;
};

inline GaussHermite gauss_hermite(int order) {
  if (order < 1) throw std::invalid_argument("gauss_hermite: order must be >= 1");
  Mat jacobi = Mat::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double beta = std::sqrt(i / 2.0);
    jacobi(i, i - 1) = beta;
    jacobi(i - 1, i) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
  GaussHermite rule;
  rule.nodes = es.eigenvalues() * std::sqrt(2.0);
  rule.weights = es.eigenvectors().row(0).transpose().array().square();
  rule.weights /= rule.weights.sum();
  return rule;
}

/// Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
  Vec nodes;
  Vec weights;
};

inline GaussLegendre gauss_legendre(int order) {
  if (order < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
  Mat jacobi = Mat::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double beta = i / std::sqrt(4.0 * i * i - 1.0);
    jacobi(i, i - 1) = beta;
    jacobi(i - 1, i) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
  GaussLegendre rule;
  rule.nodes = es.eigenvalues();
  rule.weights = 2.0 * es.eigenvectors().row(0).transpose().array().square();
  return rule;
}

struct TreeResult {
  double y0 = 0.0;
  int depth = 0;
  int quad_order = 0;
  std::vector<std::vector<double>> node_states;  // per level
  std::vector<std::vector<double>> node_values;  // per level, backward values
};

namespace detail {

// Implicit step u = m + dt F(x, u, z): own fixed-point loop, no sharing with
// the Monte Carlo solver.
inline double tree_implicit_step(const model::Generator& gen, const Vec& x,
                                 double mean, double z, double dt) {
  double u = mean;
  Vec zv(1);
  zv[0] = z;
  for (int it = 0; it < 200; ++it) {
    const double next = mean + dt * gen.f(x, u, zv);
    if (std::abs(next - u) <= 1e-14 * (1.0 + std::abs(next))) return next;
    u = next;
  }
  throw std::runtime_error("tree_solve: implicit step did not converge");
}

// Catmull-Rom interpolation on a uniform grid, clamped at the ends.
inline double interp_uniform(const std::vector<double>& values, double lo, double h,
                             double x) {
  const int n = static_cast<int>(values.size());
  double t = (x - lo) / h;
  if (t <= 0.0) return values.front();
  if (t >= n - 1) return values.back();
  const int j = std::min(n - 2, static_cast<int>(t));
  const double u = t - j;
  const double p0 = values[static_cast<size_t>(std::max(0, j - 1))];
  const double p1 = values[static_cast<size_t>(j)];
  const double p2 = values[static_cast<size_t>(j + 1)];
  const double p3 = values[static_cast<size_t>(std::min(n - 1, j + 2))];
  return p1 + 0.5 * u * (p2 - p0 +
                         u * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 +
                              u * (3.0 * (p1 - p2) + p3 - p0)));
}

}  // namespace detail

/// Exact backward induction on a Gauss-Hermite quadrature tree (d = k = 1,
/// no stopping). General drift uses a non-recombining tree, depth-limited by
/// the node budget; drift-free (Ornstein-Uhlenbeck type) problems use a
/// recombining lattice with interpolation, so any depth is affordable.
inline TreeResult tree_solve(const model::ProblemSpec& spec, double x0, double horizon,
                             int depth, int quad_order,
                             const std::function<double(double)>& terminal = {},
                             int lattice_nodes = 1201) {
  spec.validate();
  if (spec.state_dim != 1 || spec.noise_dim != 1)
    throw std::invalid_argument("tree_solve: requires d = k = 1");
  if (spec.stopping.is_exit())
    throw std::invalid_argument("tree_solve: exit stopping unsupported");
  if (depth < 1 || quad_order < 1)
    throw std::invalid_argument("tree_solve: depth and quadrature order must be >= 1");

  const auto rule = gauss_hermite(quad_order);
  if (std::abs(rule.weights.sum() - 1.0) > 1e-12)
    throw std::runtime_error("tree_solve: quadrature weights do not sum to 1");
  const double dt = horizon / depth;
  const double sqrt_dt = std::sqrt(dt);
  const double semigroup = std::exp(dt * spec.drift_matrix(0, 0));
  const double sigma = spec.diffusion(0, 0);
  const bool has_drift = static_cast<bool>(spec.drift_fn);

  TreeResult result;
  result.depth = depth;
  result.quad_order = quad_order;

  auto terminal_value = [&](double x) { return terminal ? terminal(x) : 0.0; };

  if (!has_drift) {
    // Recombining lattice: fixed spatial grid, Gaussian transitions.
    const double a = spec.drift_matrix(0, 0);
    const double var_max =
        std::abs(a) < 1e-14 ? sigma * sigma * horizon
                            : sigma * sigma * (std::exp(2.0 * a * horizon) - 1.0) / (2.0 * a);
    const double spread = 8.0 * std::sqrt(std::max(var_max, 1e-12)) + 1.0;
    const double mean_end = std::exp(a * horizon) * x0;
    const double lo = std::min(x0, mean_end) - spread;
    const double hi = std::max(x0, mean_end) + spread;
    const int n_nodes = lattice_nodes;
    const double h = (hi - lo) / (n_nodes - 1);

    std::vector<double> grid(static_cast<size_t>(n_nodes));
    for (int j = 0; j < n_nodes; ++j) grid[static_cast<size_t>(j)] = lo + j * h;

    std::vector<double> values(grid.size()), next(grid.size());
    for (size_t j = 0; j < grid.size(); ++j) next[j] = terminal_value(grid[j]);
    result.node_states.push_back(grid);
    result.node_values.push_back(next);

    Vec x(1);
    for (int i = depth - 1; i >= 0; --i) {
      for (size_t j = 0; j < grid.size(); ++j) {
        double mean = 0.0, zsum = 0.0;
        for (int q = 0; q < quad_order; ++q) {
          const double child = semigroup * (grid[j] + sigma * sqrt_dt * rule.nodes[q]);
          const double y_child = detail::interp_uniform(next, lo, h, child);
          mean += rule.weights[q] * y_child;
          zsum += rule.weights[q] * y_child * rule.nodes[q];
        }
        x[0] = grid[j];
        values[j] = detail::tree_implicit_step(spec.generator, x, mean,
                                               zsum / sqrt_dt, dt);
      }
      std::swap(values, next);
    }
    result.y0 = detail::interp_uniform(next, lo, h, x0);
    result.node_values.insert(result.node_values.begin(), next);
    result.node_states.insert(result.node_states.begin(), grid);
    return result;
  }

  // Non-recombining tree for state-dependent drift.
  double budget = 1.0;
  for (int i = 0; i < depth; ++i) {
    budget *= quad_order;
    if (budget > 4.0e6)
      throw std::invalid_argument("tree_solve: node budget exceeded (reduce depth or order)");
  }
  std::vector<std::vector<double>> levels(static_cast<size_t>(depth) + 1);
  levels[0] = {x0};
  Vec xv(1);
  for (int i = 0; i < depth; ++i) {
    const auto& cur = levels[static_cast<size_t>(i)];
    auto& nxt = levels[static_cast<size_t>(i) + 1];
    nxt.resize(cur.size() * static_cast<size_t>(quad_order));
    for (size_t nidx = 0; nidx < cur.size(); ++nidx) {
      xv[0] = cur[nidx];
      const double drift = spec.drift_fn(xv)[0];
      for (int q = 0; q < quad_order; ++q)
        nxt[nidx * static_cast<size_t>(quad_order) + static_cast<size_t>(q)] =
            semigroup * (cur[nidx] + dt * drift + sigma * sqrt_dt * rule.nodes[q]);
    }
  }
  std::vector<double> vals(levels.back().size());
  for (size_t j = 0; j < vals.size(); ++j) vals[j] = terminal_value(levels.back()[j]);
  result.node_states = levels;
  result.node_values.assign(levels.size(), {});
  result.node_values.back() = vals;
  for (int i = depth - 1; i >= 0; --i) {
    std::vector<double> cur_vals(levels[static_cast<size_t>(i)].size());
    for (size_t nidx = 0; nidx < cur_vals.size(); ++nidx) {
      double mean = 0.0, zsum = 0.0;
      for (int q = 0; q < quad_order; ++q) {
        const double y_child = vals[nidx * static_cast<size_t>(quad_order) + static_cast<size_t>(q)];
        mean += rule.weights[q] * y_child;
        zsum += rule.weights[q] * y_child * rule.nodes[q];
      }
      xv[0] = levels[static_cast<size_t>(i)][nidx];
      cur_vals[nidx] =
          detail::tree_implicit_step(spec.generator, xv, mean, zsum / sqrt_dt, dt);
    }
    vals = std::move(cur_vals);
    result.node_values[static_cast<size_t>(i)] = vals;
  }
  result.y0 = vals[0];
  return result;
}

/// Quadrature value of Y_0 for z-free drivers F(x, y, z) = -lambda y + f(x)
/// over an Ornstein-Uhlenbeck forward with known Gaussian marginals:
///   Y_0 = int_0^T e^{-lambda s} E[f(X_s^x)] ds.
/// Refines both quadratures until successive values agree to 1e-7.
inline double quadrature_value_1d(const model::ProblemSpec& spec, double x0,
                                  double horizon) {
  spec.validate();
  if (spec.state_dim != 1 || spec.noise_dim != 1)
    throw std::invalid_argument("quadrature_value_1d: requires d = k = 1");
  if (spec.drift_fn)
    throw std::invalid_argument("quadrature_value_1d: forward must be drift-free OU");
  const double lambda = spec.constants.lambda;

  // Conformance: the driver must be -lambda y + f(x) with no z dependence.
  {
    Vec xv(1), zv(1);
    for (double xs : {-2.0, -0.7, 0.0, 1.3, 2.9})
      for (double ys : {-1.1, 0.0, 0.8})
        for (double zs : {-1.7, 0.0, 2.2}) {
          xv[0] = xs;
          zv[0] = zs;
          const double f0 = spec.generator.f(xv, 0.0, Vec::Zero(1));
          const double full = spec.generator.f(xv, ys, zv);
          if (std::abs(full - (f0 - lambda * ys)) > 1e-10 * (1.0 + std::abs(full)))
            throw std::invalid_argument(
                "quadrature_value_1d: generator is not of the form -lambda y + f(x)");
        }
  }

  const double a = spec.drift_matrix(0, 0);
  const double sigma = spec.diffusion(0, 0);
  auto marginal_mean = [&](double s) { return std::exp(a * s) * x0; };
  auto marginal_var = [&](double s) {
    if (std::abs(a) < 1e-14) return sigma * sigma * s;
    return sigma * sigma * (std::exp(2.0 * a * s) - 1.0) / (2.0 * a);
  };

  Vec xv(1);
  auto expected_f = [&](double s, const GaussHermite& rule) {
    const double m = marginal_mean(s);
    const double sd = std::sqrt(std::max(0.0, marginal_var(s)));
    double acc = 0.0;
    for (Eigen::Index q = 0; q < rule.nodes.size(); ++q) {
      xv[0] = m + sd * rule.nodes[q];
      acc += rule.weights[q] * spec.generator.f(xv, 0.0, Vec::Zero(1));
    }
    return acc;
  };

  auto integral = [&](int panels, const GaussHermite& gh, const GaussLegendre& gl) {
    const double width = horizon / panels;
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
      const double mid = (p + 0.5) * width;
      for (Eigen::Index q = 0; q < gl.nodes.size(); ++q) {
        const double s = mid + 0.5 * width * gl.nodes[q];
        acc += 0.5 * width * gl.weights[q] * std::exp(-lambda * s) * expected_f(s, gh);
      }
    }
    return acc;
  };

  const auto gl = gauss_legendre(16);
  double prev = integral(8, gauss_hermite(24), gl);
  for (int level = 1; level <= 6; ++level) {
    const double cur = integral(8 << level, gauss_hermite(24 + 12 * level), gl);
    if (std::abs(cur - prev) <= 1e-7 * (1.0 + std::abs(cur))) return cur;
    prev = cur;
  }
  return prev;
}

struct HjbResult {
  std::vector<double> grid;
  std::vector<double> values;
  std::vector<double> residual_history;
  int refinements = 0;

  double value_at(double x) const {
    const double lo = grid.front();
    const double h = grid[1] - grid[0];
    return detail::interp_uniform(values, lo, h, x);
  }
};

namespace detail {

inline void thomas_solve(std::vector<double>& sub, std::vector<double>& diag,
                         std::vector<double>& sup, std::vector<double>& rhs) {
  const size_t n = diag.size();
  for (size_t i = 1; i < n; ++i) {
    const double w = sub[i] / diag[i - 1];
    diag[i] -= w * sup[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
}

}  // namespace detail

/// Damped-Newton finite-difference solution of the 1-D stationary equation
///   (1/2) sigma^2 v'' + (a x + b(x)) v' + F(x, v, v' sigma) = 0
/// with artificial Neumann boundaries. Meshes are refined until successive
/// solutions differ by < 1e-5 in sup norm on the inner half of the domain.
inline HjbResult fd_hjb_1d(const model::ProblemSpec& spec, double lo, double hi,
                           int initial_mesh = 257, int max_refinements = 4) {
  spec.validate();
  if (spec.state_dim != 1 || spec.noise_dim != 1)
    throw std::invalid_argument("fd_hjb_1d: requires d = k = 1");
  if (!spec.generator.grad_y || !spec.generator.grad_z)
    throw std::invalid_argument("fd_hjb_1d: generator partials grad_y/grad_z required");
  if (!(hi > lo)) throw std::invalid_argument("fd_hjb_1d: empty domain");

  const double a = spec.drift_matrix(0, 0);
  const double sigma = spec.diffusion(0, 0);
  const double half_sig2 = 0.5 * sigma * sigma;

  auto solve_on_mesh = [&](int n, const HjbResult* warm) {
    HjbResult res;
    res.grid.resize(static_cast<size_t>(n));
    const double h = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) res.grid[static_cast<size_t>(i)] = lo + i * h;
    res.values.assign(static_cast<size_t>(n), 0.0);
    if (warm)
      for (int i = 0; i < n; ++i)
        res.values[static_cast<size_t>(i)] = warm->value_at(res.grid[static_cast<size_t>(i)]);

    Vec xv(1), zv(1);
    auto drift_at = [&](double x) {
      if (!spec.drift_fn) return a * x;
      xv[0] = x;
      return a * x + spec.drift_fn(xv)[0];
    };

    std::vector<double> residual(static_cast<size_t>(n));
    auto compute_residual = [&](const std::vector<double>& v) {
      for (int i = 1; i < n - 1; ++i) {
        const double vpp = (v[static_cast<size_t>(i + 1)] - 2.0 * v[static_cast<size_t>(i)] +
                            v[static_cast<size_t>(i - 1)]) / (h * h);
        const double vp = (v[static_cast<size_t>(i + 1)] - v[static_cast<size_t>(i - 1)]) / (2.0 * h);
        xv[0] = res.grid[static_cast<size_t>(i)];
        zv[0] = vp * sigma;
        residual[static_cast<size_t>(i)] =
            half_sig2 * vpp + drift_at(xv[0]) * vp + spec.generator.f(xv, v[static_cast<size_t>(i)], zv);
      }
      residual[0] = v[1] - v[0];                      // Neumann: v' = 0
      residual[static_cast<size_t>(n - 1)] = v[static_cast<size_t>(n - 2)] - v[static_cast<size_t>(n - 1)];
      double norm = 0.0;
      for (double r : residual) norm = std::max(norm, std::abs(r));
      return norm;
    };

    double res_norm = compute_residual(res.values);
    res.residual_history.push_back(res_norm);
    std::vector<double> sub(static_cast<size_t>(n)), diag(static_cast<size_t>(n)),
        sup(static_cast<size_t>(n)), rhs(static_cast<size_t>(n));
    std::vector<double> trial(static_cast<size_t>(n));

    for (int iter = 0; iter < 60 && res_norm > 1e-11; ++iter) {
      for (int i = 1; i < n - 1; ++i) {
        const double vp = (res.values[static_cast<size_t>(i + 1)] -
                           res.values[static_cast<size_t>(i - 1)]) / (2.0 * h);
        xv[0] = res.grid[static_cast<size_t>(i)];
        zv[0] = vp * sigma;
        const double fy = spec.generator.grad_y(xv, res.values[static_cast<size_t>(i)], zv);
        const double fz = spec.generator.grad_z(xv, res.values[static_cast<size_t>(i)], zv)[0];
        const double conv = drift_at(xv[0]) + fz * sigma;
        sub[static_cast<size_t>(i)] = half_sig2 / (h * h) - conv / (2.0 * h);
        diag[static_cast<size_t>(i)] = -2.0 * half_sig2 / (h * h) + fy;
        sup[static_cast<size_t>(i)] = half_sig2 / (h * h) + conv / (2.0 * h);
        rhs[static_cast<size_t>(i)] = -residual[static_cast<size_t>(i)];
      }
      diag[0] = -1.0;
      sup[0] = 1.0;
      sub[0] = 0.0;
      rhs[0] = -residual[0];
      diag[static_cast<size_t>(n - 1)] = -1.0;
      sub[static_cast<size_t>(n - 1)] = 1.0;
      sup[static_cast<size_t>(n - 1)] = 0.0;
      rhs[static_cast<size_t>(n - 1)] = -residual[static_cast<size_t>(n - 1)];

      auto d2 = diag;
      auto s2 = sup;
      auto b2 = sub;
      auto r2 = rhs;
      detail::thomas_solve(b2, d2, s2, r2);

      double step = 1.0;
      bool accepted = false;
      for (int back = 0; back < 30; ++back) {
        for (int i = 0; i < n; ++i)
          trial[static_cast<size_t>(i)] =
              res.values[static_cast<size_t>(i)] + step * r2[static_cast<size_t>(i)];
        const double trial_norm = compute_residual(trial);
        if (trial_norm < res_norm) {
          res.values = trial;
          res_norm = trial_norm;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      res.residual_history.push_back(res_norm);
      if (!accepted) {
        std::ostringstream msg;
        msg << "fd_hjb_1d: Newton diverged; residual history:";
        for (double r : res.residual_history) msg << " " << r;
        throw std::runtime_error(msg.str());
      }
      compute_residual(res.values);  // refresh residual for next Jacobian
    }
    if (res_norm > 1e-8) {
      std::ostringstream msg;
      msg << "fd_hjb_1d: Newton stalled at residual " << res_norm;
      throw std::runtime_error(msg.str());
    }
    return res;
  };

  HjbResult current = solve_on_mesh(initial_mesh, nullptr);
  for (int r = 1; r <= max_refinements; ++r) {
    HjbResult refined = solve_on_mesh((static_cast<int>(current.grid.size()) - 1) * 2 + 1,
                                      &current);
    double change = 0.0;
    const double quarter = lo + 0.25 * (hi - lo);
    const double three_quarter = lo + 0.75 * (hi - lo);
    for (size_t i = 0; i < refined.grid.size(); ++i)
      if (refined.grid[i] >= quarter && refined.grid[i] <= three_quarter)
        change = std::max(change,
                          std::abs(refined.values[i] - current.value_at(refined.grid[i])));
    refined.refinements = r;
    current = std::move(refined);
    if (change < 1e-5) break;
  }
  return current;
}

}  // namespace qbsde::oracle
