#pragma once
// Horizon truncation: pick the finite horizon from the closed-form
// truncation bound beta e^{-lambda n}, solve the truncated problem, and
// quantify convergence across horizons (Cauchy tables, decay-slope fits,
// weighted-norm gaps).
//
// Monte Carlo confidence intervals come from solving on disjoint path
// blocks: the reported value is the block mean and ci is the standard error
// of that mean. Blocks reuse the global per-path noise streams, so the
// union of blocks is the same ensemble a single big run would produce.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qbsde/bsde.hpp"
#include "qbsde/forward.hpp"
#include "qbsde/model.hpp"

namespace qbsde::horizon {

enum class Mode {
  random_terminal,  // terminal xi(X_tau) 1_{tau <= n}, needs exit stopping
  zero_terminal,    // terminal 0, infinite stopping
};

struct RequiredHorizon {
  int n = 0;
  bool already_satisfied = false;  // beta <= eps/2 at n = 0
};

/// Smallest integer n >= 0 with beta e^{-lambda n} <= eps/2 (half the error
/// budget goes to truncation, half to discretization + Monte Carlo).
inline RequiredHorizon required_horizon(const model::BoundSet& bounds, double lambda,
                                        double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("required_horizon: eps must be > 0");
  if (!(lambda > 0.0)) throw std::invalid_argument("required_horizon: lambda must be > 0");
  if (bounds.beta <= 0.5 * eps) return {0, true};
  const int n = static_cast<int>(std::ceil(std::log(2.0 * bounds.beta / eps) / lambda));
  return {std::max(n, 0), false};
}

struct SolveOptions {
  int n_paths = 100000;
  int blocks = 8;
  int steps_per_unit = 32;
  int max_grid_doublings = 2;
  int threads = 1;
  double clamp_budget = 1e-3;  // flag when clamps exceed this fraction
};

struct RefinementRecord {
  int horizon = 0;
  int steps_per_unit = 0;
  double y0 = 0.0;
  double ci = 0.0;
  double bound = 0.0;  // beta e^{-lambda n}
};

struct InfiniteSolution {
  double y0 = 0.0;
  double ci = 0.0;
  int n_used = 0;
  double eps_target = 0.0;
  bool truncation_warning = false;
  bool clamp_flag = false;
  double clamp_fraction = 0.0;
  int steps_per_unit_used = 0;
  std::vector<RefinementRecord> refinements;
};

namespace detail {

struct BlockRun {
  double y0_mean = 0.0;
  double y0_se = 0.0;
  int64_t clamps = 0;
  int64_t path_steps = 0;
};

inline void check_mode(const model::ProblemSpec& spec, Mode mode) {
  if (mode == Mode::random_terminal && !spec.stopping.is_exit())
    throw std::invalid_argument("horizon: random-terminal mode needs exit stopping");
  if (mode == Mode::zero_terminal && spec.stopping.is_exit())
    throw std::invalid_argument("horizon: zero-terminal mode needs infinite stopping");
}

// Solve y0 on `blocks` disjoint path blocks at one horizon and grid.
inline BlockRun block_solve(const model::ProblemSpec& spec, const Vec& x0, int n,
                            const bsde::RegressionConfig& reg, uint64_t seed,
                            const SolveOptions& opts) {
  const auto grid = fwd::TimeGrid::with_density(static_cast<double>(n), opts.steps_per_unit);
  const int per_block = std::max(64, opts.n_paths / opts.blocks);
  std::vector<double> block_y0;
  BlockRun run;
  for (int b = 0; b < opts.blocks; ++b) {
    auto ens = fwd::simulate(spec, grid, per_block, seed, x0, opts.threads,
                             static_cast<uint64_t>(b) * per_block);
    if (spec.stopping.is_exit()) ens = fwd::first_exit(std::move(ens), spec.stopping.domain);
    const auto sol = bsde::solve_backward(spec, ens, reg, {}, opts.threads);
    block_y0.push_back(sol.y0_mean());
    run.clamps += sol.clamp_activations;
    run.path_steps += sol.path_steps;
  }
  double mean = 0.0;
  for (double v : block_y0) mean += v;
  mean /= static_cast<double>(block_y0.size());
  double var = 0.0;
  for (double v : block_y0) var += (v - mean) * (v - mean);
  var /= std::max<size_t>(1, block_y0.size() - 1);
  run.y0_mean = mean;
  run.y0_se = std::sqrt(var / static_cast<double>(block_y0.size()));
  return run;
}

}  // namespace detail

/// Truncate at n = required_horizon(eps), then solve with grid doubling
/// until two successive refinements agree within the discretization half of
/// the budget. Terminal data follows the mode: xi at exit (0 if the path
/// never exits) or identically 0.
inline InfiniteSolution solve_random_horizon(const model::ProblemSpec& spec, const Vec& x0,
                                             double eps, const bsde::RegressionConfig& reg,
                                             uint64_t seed, Mode mode,
                                             const SolveOptions& opts = {}) {
  spec.validate();
  detail::check_mode(spec, mode);
  const auto bounds = model::theoretical_bounds(spec);
  const auto req = required_horizon(bounds, spec.constants.lambda, eps);
  const int n = std::max(1, req.n);

  InfiniteSolution out;
  out.eps_target = eps;
  out.n_used = n;
  out.truncation_warning = req.already_satisfied;

  SolveOptions level = opts;
  detail::BlockRun prev{};
  for (int doubling = 0; doubling <= opts.max_grid_doublings; ++doubling) {
    const auto run = detail::block_solve(spec, x0, n, reg, seed, level);
    out.refinements.push_back({n, level.steps_per_unit, run.y0_mean, run.y0_se,
                               bounds.beta * std::exp(-spec.constants.lambda * n)});
    out.y0 = run.y0_mean;
    out.ci = run.y0_se;
    out.steps_per_unit_used = level.steps_per_unit;
    out.clamp_fraction = run.path_steps > 0
                             ? static_cast<double>(run.clamps) / static_cast<double>(run.path_steps)
                             : 0.0;
    out.clamp_flag = out.clamp_fraction > opts.clamp_budget;
    if (doubling > 0 && std::abs(run.y0_mean - prev.y0_mean) <= 0.5 * eps) break;
    prev = run;
    level.steps_per_unit *= 2;
  }
  return out;
}

struct CauchyRow {
  double n = 0.0;
  double m = 0.0;
  double gap = 0.0;
  double bound = 0.0;  // beta e^{-lambda min(n,m)}
  double ci = 0.0;     // ci(n) + ci(m)
};

/// Truncates a simulated ensemble to its first `steps` increments.
inline fwd::PathEnsemble prefix(const fwd::PathEnsemble& ens, int steps) {
  if (steps > ens.grid.steps)
    throw std::invalid_argument("prefix: requested more steps than available");
  fwd::PathEnsemble out;
  out.grid = {ens.grid.horizon * steps / ens.grid.steps, steps};
  out.n_paths = ens.n_paths;
  out.state_dim = ens.state_dim;
  out.noise_dim = ens.noise_dim;
  out.seed = ens.seed;
  out.stream_offset = ens.stream_offset;
  out.overflow = ens.overflow;
  out.overflow_paths = ens.overflow_paths;
  out.states.resize(static_cast<size_t>(out.n_paths) * (steps + 1) * out.state_dim);
  out.noise.resize(static_cast<size_t>(out.n_paths) * steps * out.noise_dim);
  out.exit_index.resize(static_cast<size_t>(out.n_paths));
  for (int p = 0; p < ens.n_paths; ++p) {
    std::copy_n(ens.states.data() + static_cast<size_t>(p) * (ens.grid.steps + 1) * ens.state_dim,
                static_cast<size_t>(steps + 1) * ens.state_dim,
                out.states.data() + static_cast<size_t>(p) * (steps + 1) * out.state_dim);
    std::copy_n(ens.noise.data() + static_cast<size_t>(p) * ens.grid.steps * ens.noise_dim,
                static_cast<size_t>(steps) * ens.noise_dim,
                out.noise.data() + static_cast<size_t>(p) * steps * out.noise_dim);
    out.exit_index[static_cast<size_t>(p)] =
        ens.exit_index[static_cast<size_t>(p)] <= steps ? ens.exit_index[static_cast<size_t>(p)]
                                                        : fwd::kNeverExits;
  }
  return out;
}

/// Solves the same path family truncated at each horizon (the paper's
/// construction compares Y^n and Y^m on one probability space) and tabulates
/// pairwise gaps against the closed-form bound.
inline std::vector<CauchyRow> cauchy_table(const model::ProblemSpec& spec, const Vec& x0,
                                           const std::vector<int>& horizons,
                                           const bsde::RegressionConfig& reg, uint64_t seed,
                                           Mode mode, const SolveOptions& opts = {}) {
  spec.validate();
  detail::check_mode(spec, mode);
  if (horizons.size() < 2)
    throw std::invalid_argument("cauchy_table: need at least two horizons");
  for (size_t i = 1; i < horizons.size(); ++i)
    if (horizons[i] <= horizons[i - 1])
      throw std::invalid_argument("cauchy_table: horizons must be strictly increasing");

  const auto bounds = model::theoretical_bounds(spec);
  const int n_max = horizons.back();
  const auto grid = fwd::TimeGrid::with_density(static_cast<double>(n_max), opts.steps_per_unit);
  const int per_block = std::max(64, opts.n_paths / opts.blocks);

  std::vector<std::vector<double>> block_y0(horizons.size());
  for (int b = 0; b < opts.blocks; ++b) {
    auto ens = fwd::simulate(spec, grid, per_block, seed, x0, opts.threads,
                             static_cast<uint64_t>(b) * per_block);
    if (spec.stopping.is_exit()) ens = fwd::first_exit(std::move(ens), spec.stopping.domain);
    for (size_t h = 0; h < horizons.size(); ++h) {
      const int steps = horizons[h] * opts.steps_per_unit;
      const auto sub = prefix(ens, steps);
      const auto sol = bsde::solve_backward(spec, sub, reg, {}, opts.threads);
      block_y0[h].push_back(sol.y0_mean());
    }
  }

  std::vector<double> mean(horizons.size(), 0.0), se(horizons.size(), 0.0);
  for (size_t h = 0; h < horizons.size(); ++h) {
    for (double v : block_y0[h]) mean[h] += v;
    mean[h] /= static_cast<double>(block_y0[h].size());
    double var = 0.0;
    for (double v : block_y0[h]) var += (v - mean[h]) * (v - mean[h]);
    var /= std::max<size_t>(1, block_y0[h].size() - 1);
    se[h] = std::sqrt(var / static_cast<double>(block_y0[h].size()));
  }

  std::vector<CauchyRow> rows;
  for (size_t i = 0; i < horizons.size(); ++i)
    for (size_t j = i + 1; j < horizons.size(); ++j)
      rows.push_back({static_cast<double>(horizons[i]), static_cast<double>(horizons[j]),
                      std::abs(mean[i] - mean[j]),
                      bounds.beta * std::exp(-spec.constants.lambda * horizons[i]),
                      se[i] + se[j]});
  return rows;
}

struct SlopeFit {
  double slope = 0.0;
  int points_used = 0;
};

/// Least-squares slope of ln(gap) against n over rows ending at the largest
/// horizon, keeping rows whose gap clears the noise floor (3 ci).
inline SlopeFit fit_gap_decay(const std::vector<CauchyRow>& rows) {
  double m_max = 0.0;
  for (const auto& r : rows) m_max = std::max(m_max, r.m);
  std::vector<double> ns, logs;
  for (const auto& r : rows)
    if (r.m == m_max && r.gap > 3.0 * r.ci && r.gap > 0.0) {
      ns.push_back(r.n);
      logs.push_back(std::log(r.gap));
    }
  SlopeFit fit;
  fit.points_used = static_cast<int>(ns.size());
  if (ns.size() < 2) return fit;
  double sn = 0, sl = 0, snn = 0, snl = 0;
  for (size_t i = 0; i < ns.size(); ++i) {
    sn += ns[i];
    sl += logs[i];
    snn += ns[i] * ns[i];
    snl += ns[i] * logs[i];
  }
  const double count = static_cast<double>(ns.size());
  fit.slope = (count * snl - sn * sl) / (count * snn - sn * sn);
  return fit;
}

struct WeightedGap {
  double y_gap = 0.0;
  double z_gap = 0.0;
};

/// Monte Carlo weighted-norm gaps E int e^{-2 w t} |dY|^2 dt and the same
/// for dZ over the longer horizon; the shorter solution is extended by its
/// frozen terminal convention (Y constant, Z = 0).
inline WeightedGap weighted_l2_gap(const bsde::BackwardSolution& sol_a,
                                   const bsde::BackwardSolution& sol_b, double weight) {
  const bsde::BackwardSolution& shorter =
      sol_a.grid.steps <= sol_b.grid.steps ? sol_a : sol_b;
  const bsde::BackwardSolution& longer =
      sol_a.grid.steps <= sol_b.grid.steps ? sol_b : sol_a;
  if (shorter.n_paths != longer.n_paths || shorter.noise_dim != longer.noise_dim)
    throw std::invalid_argument("weighted_l2_gap: solutions are not comparable");
  const double dt_s = shorter.grid.dt();
  const double dt_l = longer.grid.dt();
  if (std::abs(dt_s - dt_l) > 1e-12 * dt_l)
    throw std::invalid_argument("weighted_l2_gap: grids do not share a common prefix");

  const int n_long = longer.grid.steps;
  const int n_short = shorter.grid.steps;
  const double dt = dt_l;
  double y_acc = 0.0, z_acc = 0.0;
  for (int p = 0; p < longer.n_paths; ++p) {
    const double frozen = shorter.y_at(p, n_short);
    for (int i = 0; i < n_long; ++i) {
      const double w = std::exp(-2.0 * weight * dt * i);
      const double ys = i <= n_short ? shorter.y_at(p, i) : frozen;
      const double dy = longer.y_at(p, i) - ys;
      y_acc += w * dy * dy * dt;
      double dz2 = 0.0;
      if (i < n_short)
        dz2 = (longer.z_at(p, i) - shorter.z_at(p, i)).squaredNorm();
      else
        dz2 = longer.z_at(p, i).squaredNorm();
      z_acc += w * dz2 * dt;
    }
  }
  return {y_acc / longer.n_paths, z_acc / longer.n_paths};
}

}  // namespace qbsde::horizon
