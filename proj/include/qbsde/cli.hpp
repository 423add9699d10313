#pragma once
// Mode dispatch behind the command-line runner: each mode produces a Report
// (written as report.json) plus CSV artifacts, and the process exit code is
// 0 iff every check passed (2 = config error, 3 = numerical failure).

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "qbsde/bsde.hpp"
#include "qbsde/config.hpp"
#include "qbsde/control.hpp"
#include "qbsde/fixtures.hpp"
#include "qbsde/forward.hpp"
#include "qbsde/gradient.hpp"
#include "qbsde/horizon.hpp"
#include "qbsde/io.hpp"
#include "qbsde/mild.hpp"
#include "qbsde/model.hpp"
#include "qbsde/oracle.hpp"
#include "qbsde/report.hpp"

namespace qbsde::cli {

namespace detail {

inline const model::ProblemSpec& need_problem(const config::RunConfig& cfg) {
  if (!cfg.problem) throw config::ConfigError("this mode requires a 'problem' block");
  return *cfg.problem;
}

inline const control::ControlSpec& need_control(const config::RunConfig& cfg) {
  if (!cfg.control_spec) throw config::ConfigError("this mode requires a 'control' block");
  return *cfg.control_spec;
}

inline horizon::SolveOptions solve_options(const config::RunConfig& cfg) {
  horizon::SolveOptions opts;
  opts.n_paths = cfg.paths;
  opts.blocks = cfg.blocks;
  opts.steps_per_unit = cfg.steps_per_unit;
  opts.threads = cfg.threads;
  return opts;
}

inline horizon::Mode horizon_mode(const model::ProblemSpec& spec) {
  return spec.stopping.is_exit() ? horizon::Mode::random_terminal
                                 : horizon::Mode::zero_terminal;
}

inline void run_validate(const config::RunConfig& cfg, report::Report& rep) {
  const auto& spec = need_problem(cfg);
  const auto audit = model::validate_assumptions(spec, 10000, cfg.seed);
  for (const auto& rec : audit.records)
    rep.add({"assumption/" + rec.name, "worst violation <= tolerance", rec.worst_violation,
             audit.tolerance, 0.0, rec.pass});
  const double margin = model::monotonicity_margin(spec, 10000, cfg.seed);
  rep.add({"monotonicity_margin", "sampled sup (y-y')(dF)/|y-y'|^2 <= -lambda", margin,
           -spec.constants.lambda, 0.0, margin <= -spec.constants.lambda + 1e-9});
  const auto bounds = model::theoretical_bounds(spec);
  rep.add({"bounds/y_bound", "M + K/lambda", bounds.y_bound, bounds.y_bound, 0.0, true});
  rep.add({"bounds/beta", "M + C(1+M)/lambda", bounds.beta, bounds.beta, 0.0, true});
  rep.add({"bounds/gradient", "C/lambda", bounds.gradient_bound, bounds.gradient_bound,
           0.0, true});
}

inline void run_simulate(const config::RunConfig& cfg, report::Report& rep,
                         const std::filesystem::path& out) {
  const auto& spec = need_problem(cfg);
  const auto grid = fwd::TimeGrid::with_density(cfg.horizon, cfg.steps_per_unit);
  auto ens = fwd::simulate(spec, grid, cfg.paths, cfg.seed, cfg.problem_x0, cfg.threads);
  if (spec.stopping.is_exit()) ens = fwd::first_exit(std::move(ens), spec.stopping.domain);

  // CLT checks on the stored increments: mean -> 0, covariance -> dt I.
  const int k = ens.noise_dim;
  const int n = grid.steps;
  const double dt = grid.dt();
  const int64_t draws = static_cast<int64_t>(ens.n_paths) * n;
  Vec mean = Vec::Zero(k);
  Mat cov = Mat::Zero(k, k);
  for (int p = 0; p < ens.n_paths; ++p)
    for (int i = 0; i < n; ++i) {
      const auto dw = ens.dW(p, i);
      mean += dw;
      cov += dw * dw.transpose();
    }
  mean /= static_cast<double>(draws);
  cov /= static_cast<double>(draws);
  const double se_mean = std::sqrt(dt / static_cast<double>(draws));
  rep.add_upper("increments/mean", "|mean dW| <= 3 sqrt(dt/(P N))",
                mean.cwiseAbs().maxCoeff(), 3.0 * se_mean);
  double cov_err = 0.0;
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      cov_err = std::max(cov_err, std::abs(cov(a, b) - (a == b ? dt : 0.0)));
  rep.add_upper("increments/covariance", "|cov dW - dt I| <= 3 dt sqrt(2/(P N))", cov_err,
                3.0 * dt * std::sqrt(2.0 / static_cast<double>(draws)));
  rep.add_flag("states/finite", "no overflow on any path", !ens.overflow);

  std::ofstream csv(out / "ensemble.csv");
  io::ensemble_to_csv(ens, csv);
  std::ofstream bin(out / "ensemble.bin", std::ios::binary);
  io::ensemble_to_binary(ens, bin);
}

inline void run_solve(const config::RunConfig& cfg, report::Report& rep) {
  const auto& spec = need_problem(cfg);
  const auto bounds = model::theoretical_bounds(spec);
  const auto sol = horizon::solve_random_horizon(spec, cfg.problem_x0, cfg.eps,
                                                 cfg.regression, cfg.seed,
                                                 horizon_mode(spec), solve_options(cfg));
  rep.add({"solve/y0", "Y_0 (block mean, truncated horizon)", sol.y0, sol.y0, sol.ci, true});
  rep.add_upper("solve/y0_magnitude", "|Y_0| <= M + K/lambda", std::abs(sol.y0),
                bounds.y_bound, sol.ci);
  rep.add_upper("solve/clamp_fraction", "clamp activations < 0.1% of path-steps",
                sol.clamp_fraction, 1e-3);
  rep.add_flag("solve/truncation", "beta e^{-lambda n} <= eps/2 at chosen n",
               !sol.refinements.empty() &&
                   sol.refinements.front().bound <= 0.5 * cfg.eps + 1e-15);
}

inline void run_gradient(const config::RunConfig& cfg, report::Report& rep) {
  const auto& spec = need_problem(cfg);
  const auto bounds = model::theoretical_bounds(spec);
  const Vec h = Vec::Unit(spec.state_dim, 0);
  const auto agree =
      gradient::gradient_agreement(spec, cfg.problem_x0, h, 1e-4, cfg.eps, cfg.regression,
                                   cfg.seed, horizon_mode(spec), solve_options(cfg));
  rep.add({"gradient/u0", "directional derivative of Y_0", agree.u0, agree.u0, agree.u0_se,
           true});
  const double tol = std::max(1e-2 * std::abs(agree.u0), 3.0 * agree.diff_se);
  rep.add({"gradient/fd_agreement", "|U_0 - central difference| <= max(1% |U_0|, 3 ci)",
           std::abs(agree.diff_mean), tol, agree.diff_se,
           std::abs(agree.diff_mean) <= tol});
  rep.add_upper("gradient/bound", "sup|U| <= (C/lambda) |h| + tol", -agree.bound_margin,
                1e-6);
  const double dt = 1.0 / cfg.steps_per_unit;
  rep.add_upper("gradient/variational", "max|grad_x X h| <= |h| (1 + 10 dt)",
                agree.variational_sup, h.norm() * (1.0 + 10.0 * dt));
}

inline mild::ValueField build_field(const config::RunConfig& cfg,
                                    const model::ProblemSpec& spec, const Mat& points) {
  mild::EvaluateOptions opts;
  opts.solve = solve_options(cfg);
  opts.mode = horizon_mode(spec);
  return mild::evaluate_value(spec, points, cfg.eps, cfg.regression, cfg.seed, opts);
}

inline void field_rows(const mild::ValueField& field, const model::BoundSet& bounds,
                       const model::ProblemSpec& spec, report::Report& rep) {
  double worst_v = 0.0, worst_g = 0.0, worst_ci = 0.0;
  int failures = 0;
  for (const auto& pt : field.points) {
    if (pt.failed) {
      ++failures;
      continue;
    }
    worst_v = std::max(worst_v, std::abs(pt.value));
    worst_g = std::max(worst_g, pt.grad_sigma.norm());
    worst_ci = std::max(worst_ci, pt.ci);
  }
  rep.add_flag("value/all_points", "every query point evaluated", failures == 0);
  rep.add_upper("value/bound", "sup|v| <= M + K/lambda + tol", worst_v,
                bounds.y_bound + 0.05 * (1.0 + bounds.y_bound), worst_ci);
  const double sigma_norm = spec.diffusion.norm();
  rep.add_upper("value/gradient_bound", "sup|grad v sigma| <= (C/lambda) |sigma| + tol",
                worst_g, bounds.gradient_bound * sigma_norm +
                             0.05 * (1.0 + bounds.gradient_bound * sigma_norm));
}

inline void run_value(const config::RunConfig& cfg, report::Report& rep,
                      const std::filesystem::path& out) {
  const auto& spec = need_problem(cfg);
  const auto field = build_field(cfg, spec, cfg.query_points);
  field_rows(field, model::theoretical_bounds(spec), spec, rep);
  std::ofstream csv(out / "value_field.csv");
  io::value_field_to_csv(field, csv);
}

inline void run_residuals(const config::RunConfig& cfg, report::Report& rep,
                          const std::filesystem::path& out) {
  const auto& spec = need_problem(cfg);
  const auto bounds = model::theoretical_bounds(spec);
  const auto field = build_field(cfg, spec, cfg.query_points);
  field_rows(field, bounds, spec, rep);

  // Interpolation tolerance: worst gap between the interpolant and its own
  // samples plus the per-point error budget.
  double interp_tol = cfg.eps;
  for (const auto& pt : field.points)
    if (!pt.failed)
      interp_tol = std::max(interp_tol, std::abs(field.value(pt.x) - pt.value) + cfg.eps);

  mild::ResidualOptions ropts;
  ropts.n_paths = std::max(2000, cfg.paths / 4);
  ropts.threads = cfg.threads;
  for (Eigen::Index j = 0; j < cfg.query_points.rows(); ++j) {
    const Vec x = cfg.query_points.row(j).transpose();
    const auto res = mild::mild_residual(spec, x, cfg.residual_horizon, field,
                                         cfg.seed + 1000 + static_cast<uint64_t>(j), ropts);
    rep.add({"mild/residual[" + std::to_string(j) + "]",
             "v = e^{-lambda T} P_T v + int e^{-lambda t} P_t[F + lambda v] dt",
             std::abs(res.residual), interp_tol, res.ci,
             std::abs(res.residual) <= interp_tol + 3.0 * res.ci});
  }

  // Identification along a fresh truncated-horizon solve at the first point.
  const auto req = horizon::required_horizon(bounds, spec.constants.lambda, cfg.eps);
  const auto grid = fwd::TimeGrid::with_density(std::max(1, req.n), cfg.steps_per_unit);
  auto ens = fwd::simulate(spec, grid, std::max(2000, cfg.paths / 4), cfg.seed + 17,
                           cfg.query_points.row(0).transpose(), cfg.threads);
  if (spec.stopping.is_exit()) ens = fwd::first_exit(std::move(ens), spec.stopping.domain);
  const auto bsol = bsde::solve_backward(spec, ens, cfg.regression, {}, cfg.threads);
  mild::IdentificationOptions iopts;
  iopts.extrapolation_budget = 1.0;  // reported, not enforced, in CLI mode
  const auto ident = mild::identification_residual(spec, ens, bsol, field, iopts);
  double max_z = 0.0;
  for (int p = 0; p < bsol.n_paths; ++p)
    for (int i = 0; i < bsol.grid.steps; ++i)
      max_z = std::max(max_z, bsol.z_at(p, i).norm());
  rep.add_upper("identification/y", "sup|Y - v(X)| <= max(2% y_bound, 3 ci)", ident.y_sup,
                std::max(0.02 * std::max(bounds.y_bound, 1.0), interp_tol));
  rep.add_upper("identification/z", "sup|Z - grad v(X) sigma| <= 5% (1 + max|Z|)",
                ident.z_sup, 0.05 * (1.0 + max_z) + interp_tol);
}

inline void emit_convergence_artifacts(const std::vector<horizon::CauchyRow>& rows,
                                       const std::filesystem::path& out) {
  std::ofstream csv(out / "cauchy.csv");
  io::cauchy_to_csv(rows, csv);
  std::ofstream long_csv(out / "cauchy_long.csv");
  io::cauchy_to_long_csv(rows, long_csv);
}

inline void run_cauchy(const config::RunConfig& cfg, report::Report& rep,
                       const std::filesystem::path& out) {
  const auto& spec = need_problem(cfg);
  const auto rows = horizon::cauchy_table(spec, cfg.problem_x0, cfg.horizons,
                                          cfg.regression, cfg.seed, horizon_mode(spec),
                                          solve_options(cfg));
  for (const auto& r : rows)
    rep.add({"cauchy/gap(" + std::to_string(static_cast<int>(r.n)) + "," +
                 std::to_string(static_cast<int>(r.m)) + ")",
             "|y0(n) - y0(m)| <= beta e^{-lambda n} + 3 ci", r.gap, r.bound, r.ci,
             r.gap <= r.bound + 3.0 * r.ci});
  const auto fit = horizon::fit_gap_decay(rows);
  if (fit.points_used >= 2)
    rep.add_upper("cauchy/decay_slope", "fitted slope of ln(gap) <= -0.75 lambda",
                  fit.slope, -0.75 * spec.constants.lambda);
  else
    rep.add_flag("cauchy/decay_slope", "too few gaps above the noise floor to fit", true);
  emit_convergence_artifacts(rows, out);
}

inline std::shared_ptr<const mild::ValueField> control_value_field(
    const config::RunConfig& cfg, const control::ControlSpec& ctrl,
    model::ProblemSpec& ham_spec_out) {
  const auto bounds = model::theoretical_bounds(ctrl.constants);
  const double z_max = cfg.regression.effective_z_clip(bounds);
  const double x_span = 4.0 + cfg.control_x0.cwiseAbs().maxCoeff();
  const auto table = std::make_shared<control::TabulatedHamiltonian>(
      ctrl, -x_span, x_span, z_max + 1.0);
  ham_spec_out = control::tabulated_problem_spec(table, ctrl);
  Mat points(9, 1);
  points << -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0;
  mild::EvaluateOptions opts;
  opts.solve = solve_options(cfg);
  opts.mode = horizon::Mode::zero_terminal;
  auto field = std::make_shared<mild::ValueField>(
      mild::evaluate_value(ham_spec_out, points, cfg.eps, cfg.regression, cfg.seed, opts));
  return field;
}

inline void run_policy(const config::RunConfig& cfg, report::Report& rep,
                       const std::filesystem::path& out) {
  const auto& ctrl = need_control(cfg);
  model::ProblemSpec ham_spec;
  const auto field = control_value_field(cfg, ctrl, ham_spec);
  const auto policy = control::synthesize_policy(ctrl, field);

  std::ofstream csv(out / "policy.csv");
  csv << "x,u\n";
  double worst_ratio = 0.0;
  for (double x = -2.0; x <= 2.0 + 1e-12; x += 0.125) {
    const Vec xv = Vec::Constant(1, x);
    const Vec u = policy(xv);
    const double allowed = ctrl.gamma_growth() * (1.0 + field->grad_sigma(xv).norm());
    worst_ratio = std::max(worst_ratio, u.norm() / allowed);
    csv << io::format_double(x) << "," << io::format_double(u[0]) << "\n";
  }
  rep.add_upper("policy/selection_bound", "|gamma(x,z)| <= C_gamma (1 + |z|)", worst_ratio,
                1.0);
  rep.add_upper("policy/argmin_convergence", "certified argmin at >= 99% of evaluations",
                1.0 - policy.converged_fraction(), 0.01);
}

inline void run_cost(const config::RunConfig& cfg, report::Report& rep,
                     const std::filesystem::path& out) {
  const auto& ctrl = need_control(cfg);
  model::ProblemSpec ham_spec;
  const auto field = control_value_field(cfg, ctrl, ham_spec);
  const auto policy = control::synthesize_policy(ctrl, field);
  const double v0 = field->value(cfg.control_x0);

  control::CostOptions copts;
  copts.steps_per_unit = cfg.steps_per_unit;
  copts.threads = cfg.threads;
  const int cost_paths = std::max(500, cfg.paths / 10);

  const auto fallback = [&ctrl](const Vec&, double) { return ctrl.fallback_control; };
  const auto j_fallback = control::cost_estimate(ctrl, cfg.control_x0, fallback,
                                                 cfg.cost_horizon, cost_paths,
                                                 cfg.seed + 3, copts);
  const auto j_policy = control::cost_estimate(ctrl, cfg.control_x0,
                                               control::as_source(policy),
                                               cfg.cost_horizon, cost_paths,
                                               cfg.seed + 3, copts);
  rep.add({"cost/fallback", "J(x, u0) with tail bound", j_fallback.j, j_fallback.j,
           j_fallback.ci, true});
  rep.add({"cost/policy", "J(x, policy)", j_policy.j, j_policy.j, j_policy.ci, true});
  rep.add({"cost/value", "v(x) from the value field", v0, v0, 0.0, true});
  const double duality_tol = 3.0 * (j_fallback.ci + j_fallback.tail_bound) + 0.05;
  rep.add_flag("cost/weak_duality", "J(x, u) >= v(x) - 3 ci - tol",
               j_fallback.j >= v0 - duality_tol);
  rep.add_close("cost/optimality_gap", "|J(policy) - v| <= 3 ci + tol", j_policy.j, v0,
                j_policy.tail_bound + 0.05, j_policy.ci);

  const auto rel = control::fundamental_relation_check(
      ctrl, cfg.control_x0, control::as_source(policy), *field, cfg.cost_horizon,
      cost_paths, cfg.seed + 5, copts);
  rep.add_close("cost/fundamental_relation",
                "J + e^{-lambda T} E v(X_T) = v + E int e^{-lambda t} gap dt",
                rel.residual, 0.0, 0.02, rel.ci);
  rep.add_upper("cost/integrand_min", "-F - lambda v + z.r + g >= -tol", -rel.min_integrand,
                1e-6);

  const auto grid = fwd::TimeGrid::with_density(cfg.cost_horizon, cfg.steps_per_unit);
  const auto loop = control::closed_loop_run(ctrl, policy, cfg.control_x0, grid,
                                             cost_paths, cfg.seed + 7, copts);
  rep.add({"closed_loop/admissibility", "E int e^{-lambda t} |u(X)|^2 dt finite",
           loop.admissibility, loop.admissibility, loop.admissibility_ci,
           std::isfinite(loop.admissibility)});
  rep.add_flag("closed_loop/no_overflow", "closed-loop state stayed finite",
               !loop.state_overflow);

  nlohmann::ordered_json summary;
  summary["j_policy"] = j_policy.j;
  summary["j_policy_ci"] = j_policy.ci;
  summary["j_fallback"] = j_fallback.j;
  summary["j_fallback_ci"] = j_fallback.ci;
  summary["v0"] = v0;
  summary["fundamental_residual"] = rel.residual;
  summary["fundamental_residual_ci"] = rel.ci;
  summary["admissibility"] = loop.admissibility;
  std::ofstream js(out / "control_summary.json");
  js << summary.dump(2) << "\n";
}

}  // namespace detail

struct RunResult {
  report::Report report;
  int exit_code = 0;
};

/// Executes one configured run and writes report.json plus artifacts.
inline RunResult run(const config::RunConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  RunResult result;
  result.report.config_echo = cfg.echo;
  try {
    switch (cfg.mode) {
      case config::Mode::validate:
        detail::run_validate(cfg, result.report);
        break;
      case config::Mode::simulate:
        detail::run_simulate(cfg, result.report, out);
        break;
      case config::Mode::solve:
        detail::run_solve(cfg, result.report);
        break;
      case config::Mode::gradient:
        detail::run_gradient(cfg, result.report);
        break;
      case config::Mode::value:
        detail::run_value(cfg, result.report, out);
        break;
      case config::Mode::residuals:
        detail::run_residuals(cfg, result.report, out);
        break;
      case config::Mode::policy:
        detail::run_policy(cfg, result.report, out);
        break;
      case config::Mode::cost:
        detail::run_cost(cfg, result.report, out);
        break;
      case config::Mode::verify_all:
        if (cfg.problem) {
          detail::run_validate(cfg, result.report);
          detail::run_solve(cfg, result.report);
          detail::run_cauchy(cfg, result.report, out);
          detail::run_gradient(cfg, result.report);
          detail::run_residuals(cfg, result.report, out);
        }
        if (cfg.control_spec) {
          detail::run_policy(cfg, result.report, out);
          detail::run_cost(cfg, result.report, out);
        }
        if (!cfg.problem && !cfg.control_spec)
          throw config::ConfigError("verify-all needs a 'problem' or 'control' block");
        break;
    }
  } catch (const config::ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    result.report.add_flag("run/exception", e.what(), false);
  }

  result.report.write((out / "report.json").string());
  result.exit_code = result.report.all_pass() ? 0 : 3;
  return result;
}

}  // namespace qbsde::cli
