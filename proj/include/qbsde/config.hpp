#pragma once
// Run configuration: a single JSON document with an embedded version field.
// The schema is strict; unknown keys are rejected so that experiment files
// stay unambiguous. See README for the full schema.

#include <json.hpp>

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/bsde.hpp"
#include "qbsde/control.hpp"
#include "qbsde/fixtures.hpp"
#include "qbsde/model.hpp"

namespace qbsde::config {

using nlohmann::json;

/// Schema violations: the CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Mode {
  validate,
  simulate,
  solve,
  gradient,
  value,
  residuals,
  policy,
  cost,
  verify_all,
};

inline Mode parse_mode(const std::string& s) {
  if (s == "validate") return Mode::validate;
  if (s == "simulate") return Mode::simulate;
  if (s == "solve") return Mode::solve;
  if (s == "gradient") return Mode::gradient;
  if (s == "value") return Mode::value;
  if (s == "residuals") return Mode::residuals;
  if (s == "policy") return Mode::policy;
  if (s == "cost") return Mode::cost;
  if (s == "verify-all") return Mode::verify_all;
  throw ConfigError("unknown mode '" + s + "'");
}

namespace detail {

inline void reject_unknown_keys(const json& node, const std::set<std::string>& allowed,
                                const std::string& context) {
  if (!node.is_object()) throw ConfigError(context + " must be an object");
  for (auto it = node.begin(); it != node.end(); ++it)
    if (!allowed.contains(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + context);
}

template <typename T>
T require(const json& node, const std::string& key, const std::string& context) {
  if (!node.contains(key))
    throw ConfigError("missing required key '" + key + "' in " + context);
  try {
    return node.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + key + "' in " + context + " has the wrong type");
  }
}

template <typename T>
T value_or(const json& node, const std::string& key, T fallback,
           const std::string& context) {
  if (!node.contains(key)) return fallback;
  try {
    return node.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + key + "' in " + context + " has the wrong type");
  }
}

inline Vec parse_vec(const json& node, const std::string& context) {
  if (!node.is_array() || node.empty())
    throw ConfigError(context + " must be a non-empty array of numbers");
  Vec v(static_cast<Eigen::Index>(node.size()));
  for (size_t i = 0; i < node.size(); ++i) {
    if (!node[i].is_number()) throw ConfigError(context + " must contain numbers");
    v[static_cast<Eigen::Index>(i)] = node[i].get<double>();
  }
  return v;
}

}  // namespace detail

/// Named problem catalog. Every entry is a fixture builder plus the set of
/// accepted parameters.
inline model::ProblemSpec build_problem(const json& node) {
  const std::string ctx = "problem";
  const auto name = detail::require<std::string>(node, "name", ctx);
  if (name == "cosine-ou") {
    detail::reject_unknown_keys(node, {"name", "x0"}, ctx);
    return fixtures::cosine_ou();
  }
  if (name == "sine-quadratic") {
    detail::reject_unknown_keys(node, {"name", "x0"}, ctx);
    return fixtures::sine_quadratic();
  }
  if (name == "affine") {
    detail::reject_unknown_keys(node, {"name", "lambda", "kappa", "x0"}, ctx);
    return fixtures::affine(detail::require<double>(node, "lambda", ctx),
                            detail::value_or(node, "kappa", 1.0, ctx));
  }
  if (name == "sine-monotone") {
    detail::reject_unknown_keys(node, {"name", "x0"}, ctx);
    return fixtures::sine_monotone();
  }
  if (name == "exit-laplace") {
    detail::reject_unknown_keys(node, {"name", "lambda", "x0"}, ctx);
    return fixtures::exit_laplace(detail::require<double>(node, "lambda", ctx));
  }
  if (name == "lq-hamiltonian") {
    detail::reject_unknown_keys(node, {"name", "lambda", "x0"}, ctx);
    return fixtures::lq_hamiltonian(detail::require<double>(node, "lambda", ctx));
  }
  if (name == "two-dim") {
    detail::reject_unknown_keys(node, {"name", "x0"}, ctx);
    return fixtures::two_dim();
  }
  if (name == "deterministic-sine") {
    detail::reject_unknown_keys(node, {"name", "lambda", "x0"}, ctx);
    return fixtures::deterministic_sine(detail::require<double>(node, "lambda", ctx));
  }
  throw ConfigError("unknown problem name '" + name + "'");
}

/// Linear-quadratic control fixture: r(x, u) = u,
/// g(x, u) = x^2/(1+x^2) + u^2, over an OU state.
inline control::ControlSpec lq_control(double lambda = 1.0, bool boxed = false) {
  control::ControlSpec ctrl;
  ctrl.state_dim = 1;
  ctrl.noise_dim = 1;
  ctrl.control_dim = 1;
  ctrl.drift_matrix = Mat::Constant(1, 1, -1.0);
  ctrl.diffusion = Mat::Constant(1, 1, 1.0);
  ctrl.control_set = boxed ? control::ControlSet::box(Vec::Constant(1, -2.0),
                                                      Vec::Constant(1, 2.0))
                           : control::ControlSet::all();
  ctrl.r = [](const Vec&, const Vec& u) { return u; };
  ctrl.g = [](const Vec& x, const Vec& u) {
    return x[0] * x[0] / (1.0 + x[0] * x[0]) + u.squaredNorm();
  };
  ctrl.r_growth = 1.0;
  ctrl.g_growth = 1.0;
  ctrl.coercive_radius = 1.0;
  ctrl.coercive_const = 1.0;
  ctrl.lambda = lambda;
  ctrl.fallback_control = Vec::Zero(1);
  ctrl.constants = {std::max(1.0, lambda), 0.25, lambda, 1.0, 0.0};
  return ctrl;
}

inline control::ControlSpec build_control(const json& node) {
  const std::string ctx = "control";
  const auto name = detail::require<std::string>(node, "name", ctx);
  if (name == "lq") {
    detail::reject_unknown_keys(node, {"name", "lambda", "x0"}, ctx);
    return lq_control(detail::require<double>(node, "lambda", ctx));
  }
  if (name == "lq-box") {
    detail::reject_unknown_keys(node, {"name", "lambda", "x0"}, ctx);
    return lq_control(detail::require<double>(node, "lambda", ctx), true);
  }
  throw ConfigError("unknown control name '" + name + "'");
}

struct RunConfig {
  Mode mode = Mode::verify_all;
  uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 1;

  std::optional<model::ProblemSpec> problem;
  Vec problem_x0;
  std::optional<control::ControlSpec> control_spec;
  Vec control_x0;

  int steps_per_unit = 32;
  double horizon = 2.0;
  int paths = 20000;
  int blocks = 8;
  double eps = 0.05;
  std::vector<int> horizons = {2, 4, 6, 8};
  bsde::RegressionConfig regression;
  Mat query_points;
  double residual_horizon = 1.0;
  double cost_horizon = 12.0;

  json echo;  // normalized config (threads stripped) for the report

  static RunConfig from_json(const json& root) {
    const std::string ctx = "config";
    detail::reject_unknown_keys(
        root,
        {"version", "mode", "seed", "out", "threads", "problem", "control", "grid",
         "paths", "blocks", "eps", "horizons", "regression", "query_points",
         "residual_horizon", "cost_horizon"},
        ctx);
    const int version = detail::require<int>(root, "version", ctx);
    if (version != 1) throw ConfigError("unsupported config version");

    RunConfig cfg;
    cfg.mode = parse_mode(detail::require<std::string>(root, "mode", ctx));
    cfg.seed = detail::require<uint64_t>(root, "seed", ctx);
    cfg.out_dir = detail::value_or<std::string>(root, "out", "out", ctx);
    cfg.threads = detail::value_or(root, "threads", 1, ctx);
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");

    if (root.contains("problem")) {
      cfg.problem = build_problem(root.at("problem"));
      cfg.problem_x0 = root.at("problem").contains("x0")
                           ? detail::parse_vec(root.at("problem").at("x0"), "problem.x0")
                           : Vec::Zero(cfg.problem->state_dim);
      if (cfg.problem_x0.size() != cfg.problem->state_dim)
        throw ConfigError("problem.x0 has the wrong dimension");
    }
    if (root.contains("control")) {
      cfg.control_spec = build_control(root.at("control"));
      cfg.control_x0 = root.at("control").contains("x0")
                           ? detail::parse_vec(root.at("control").at("x0"), "control.x0")
                           : Vec::Zero(cfg.control_spec->state_dim);
      if (cfg.control_x0.size() != cfg.control_spec->state_dim)
        throw ConfigError("control.x0 has the wrong dimension");
    }

    if (root.contains("grid")) {
      const auto& grid = root.at("grid");
      detail::reject_unknown_keys(grid, {"steps_per_unit", "horizon"}, "grid");
      cfg.steps_per_unit = detail::value_or(grid, "steps_per_unit", 32, "grid");
      cfg.horizon = detail::value_or(grid, "horizon", 2.0, "grid");
      if (cfg.steps_per_unit < 1) throw ConfigError("grid.steps_per_unit must be >= 1");
      if (!(cfg.horizon > 0.0)) throw ConfigError("grid.horizon must be > 0");
    }
    cfg.paths = detail::value_or(root, "paths", 20000, ctx);
    if (cfg.paths < 1) throw ConfigError("paths must be >= 1");
    cfg.blocks = detail::value_or(root, "blocks", 8, ctx);
    if (cfg.blocks < 2) throw ConfigError("blocks must be >= 2");
    cfg.eps = detail::value_or(root, "eps", 0.05, ctx);
    if (!(cfg.eps > 0.0)) throw ConfigError("eps must be > 0");
    if (root.contains("horizons")) {
      cfg.horizons.clear();
      if (!root.at("horizons").is_array() || root.at("horizons").empty())
        throw ConfigError("horizons must be a non-empty array of integers");
      for (const auto& h : root.at("horizons")) {
        if (!h.is_number_integer()) throw ConfigError("horizons must contain integers");
        cfg.horizons.push_back(h.get<int>());
      }
    }
    if (root.contains("regression")) {
      const auto& reg = root.at("regression");
      detail::reject_unknown_keys(
          reg, {"degree", "ridge", "picard_cap", "picard_tol", "z_clip"}, "regression");
      cfg.regression.basis.degree = detail::value_or(reg, "degree", 4, "regression");
      cfg.regression.ridge = detail::value_or(reg, "ridge", 1e-8, "regression");
      cfg.regression.picard_cap = detail::value_or(reg, "picard_cap", 50, "regression");
      cfg.regression.picard_tol = detail::value_or(reg, "picard_tol", 1e-12, "regression");
      cfg.regression.z_clip = detail::value_or(reg, "z_clip", 0.0, "regression");
      cfg.regression.validate();
    }
    if (root.contains("query_points")) {
      const auto& pts = root.at("query_points");
      if (!pts.is_array() || pts.empty())
        throw ConfigError("query_points must be a non-empty array of points");
      const size_t dim = pts[0].is_array() ? pts[0].size() : 1;
      cfg.query_points.resize(static_cast<Eigen::Index>(pts.size()),
                              static_cast<Eigen::Index>(dim));
      for (size_t i = 0; i < pts.size(); ++i) {
        const Vec row = detail::parse_vec(pts[i], "query_points[" + std::to_string(i) + "]");
        if (static_cast<size_t>(row.size()) != dim)
          throw ConfigError("query_points rows must share one dimension");
        cfg.query_points.row(static_cast<Eigen::Index>(i)) = row.transpose();
      }
    } else {
      cfg.query_points.resize(3, 1);
      cfg.query_points << -1.0, 0.0, 1.0;
    }
    cfg.residual_horizon = detail::value_or(root, "residual_horizon", 1.0, ctx);
    cfg.cost_horizon = detail::value_or(root, "cost_horizon", 12.0, ctx);
    if (!(cfg.residual_horizon > 0.0) || !(cfg.cost_horizon > 0.0))
      throw ConfigError("residual_horizon and cost_horizon must be > 0");

    cfg.echo = root;
    cfg.echo.erase("threads");  // reports must not depend on the thread count
    return cfg;
  }
};

}  // namespace qbsde::config
