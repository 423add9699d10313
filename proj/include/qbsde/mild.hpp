#pragma once
// The mild solution v(x) = Y_0^x of the stationary semilinear equation:
// pointwise evaluation (value and gradient-times-diffusion), reconstruction
// between query points by the regression basis family, the semigroup
// fixed-point residual, and the identification residuals Y = v(X),
// Z = grad v(X) sigma along simulated paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/bsde.hpp"
#include "qbsde/forward.hpp"
#include "qbsde/gradient.hpp"
#include "qbsde/horizon.hpp"
#include "qbsde/model.hpp"
#include "qbsde/regression.hpp"

namespace qbsde::mild {

struct FieldPoint {
  Vec x;
  double value = 0.0;
  Vec grad_sigma;  // grad v(x) sigma, in the noise space
  double ci = 0.0;
  bool failed = false;
  std::string error;
};

/// Sampled value field with a basis-function interpolant fitted over the
/// query points (the same basis family the regression solver uses).
struct ValueField {
  std::vector<FieldPoint> points;
  int state_dim = 0;
  int noise_dim = 0;
  Vec hull_lower, hull_upper;

  regression::BasisSpec basis;
  std::optional<regression::Fit> fit;
  Vec value_coeffs;
  std::vector<Vec> grad_coeffs;  // one per noise dimension

  bool in_hull(const Vec& x) const {
    for (Eigen::Index j = 0; j < x.size(); ++j)
      if (x[j] < hull_lower[j] || x[j] > hull_upper[j]) return false;
    return true;
  }
  double value(const Vec& x) const { return fit->evaluate(value_coeffs, x); }
  Vec grad_sigma(const Vec& x) const {
    Vec g(noise_dim);
    for (int j = 0; j < noise_dim; ++j) g[j] = fit->evaluate(grad_coeffs[static_cast<size_t>(j)], x);
    return g;
  }
};

struct EvaluateOptions {
  horizon::SolveOptions solve;
  horizon::Mode mode = horizon::Mode::zero_terminal;
  double field_ridge = 1e-12;
  int field_degree = -1;  // -1: follow the regression config degree
};

namespace detail {

inline uint64_t point_seed(uint64_t master, size_t index) {
  // splitmix64 step keyed by the point index
  uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// v(x_j) and grad v(x_j) sigma at each query point: per point, one
/// truncated-horizon solve per path block plus one linear gradient solve per
/// coordinate direction, all on the same paths. Failures are recorded per
/// point and do not abort the remaining points.
inline ValueField evaluate_value(const model::ProblemSpec& spec, const Mat& query_points,
                                 double eps, const bsde::RegressionConfig& reg,
                                 uint64_t master_seed, const EvaluateOptions& opts = {}) {
  spec.validate();
  if (query_points.rows() < 1)
    throw std::invalid_argument("evaluate_value: need at least one query point");
  if (query_points.cols() != spec.state_dim)
    throw std::invalid_argument("evaluate_value: query points have wrong dimension");

  const auto bounds = model::theoretical_bounds(spec);
  const auto req = horizon::required_horizon(bounds, spec.constants.lambda, eps);
  const int n = std::max(1, req.n);
  const auto grid =
      fwd::TimeGrid::with_density(static_cast<double>(n), opts.solve.steps_per_unit);
  const int d = spec.state_dim;
  const int k = spec.noise_dim;
  const int blocks = std::max(1, opts.solve.blocks);
  const int per_block = std::max(64, opts.solve.n_paths / blocks);

  ValueField field;
  field.state_dim = d;
  field.noise_dim = k;
  field.basis = reg.basis;
  if (opts.field_degree >= 0) field.basis.degree = opts.field_degree;

  for (Eigen::Index j = 0; j < query_points.rows(); ++j) {
    FieldPoint pt;
    pt.x = query_points.row(j).transpose();
    const uint64_t seed = detail::point_seed(master_seed, static_cast<size_t>(j));
    try {
      std::vector<double> block_v(static_cast<size_t>(blocks));
      Mat block_u(blocks, d);
      for (int b = 0; b < blocks; ++b) {
        auto ens = fwd::simulate(spec, grid, per_block, seed, pt.x, opts.solve.threads,
                                 static_cast<uint64_t>(b) * per_block);
        if (spec.stopping.is_exit())
          ens = fwd::first_exit(std::move(ens), spec.stopping.domain);
        const auto bsol = bsde::solve_backward(spec, ens, reg, {}, opts.solve.threads);
        block_v[static_cast<size_t>(b)] = bsol.y0_mean();
        for (int l = 0; l < d; ++l) {
          const auto var = fwd::simulate_variational(spec, ens, Vec::Unit(d, l),
                                                     opts.solve.threads);
          const auto g = gradient::solve_gradient_bsde(spec, ens, bsol, var, reg);
          block_u(b, l) = g.u0_mean();
        }
      }
      double mean = 0.0;
      for (double v : block_v) mean += v;
      mean /= blocks;
      double var_acc = 0.0;
      for (double v : block_v) var_acc += (v - mean) * (v - mean);
      pt.value = mean;
      pt.ci = std::sqrt(var_acc / std::max(1, blocks - 1) / blocks);
      const Vec grad_mean = block_u.colwise().mean().transpose();
      pt.grad_sigma = spec.diffusion.transpose() * grad_mean;
    } catch (const std::exception& e) {
      pt.failed = true;
      pt.error = e.what();
      pt.value = std::numeric_limits<double>::quiet_NaN();
      pt.grad_sigma = Vec::Constant(k, std::numeric_limits<double>::quiet_NaN());
    }
    field.points.push_back(std::move(pt));
  }

  // Interpolant over the successful points.
  Mat xs(0, d);
  std::vector<Eigen::Index> ok;
  for (size_t i = 0; i < field.points.size(); ++i)
    if (!field.points[i].failed) ok.push_back(static_cast<Eigen::Index>(i));
  if (ok.empty()) throw std::runtime_error("evaluate_value: every query point failed");
  xs.resize(static_cast<Eigen::Index>(ok.size()), d);
  Vec values(static_cast<Eigen::Index>(ok.size()));
  Mat grads(static_cast<Eigen::Index>(ok.size()), k);
  for (size_t r = 0; r < ok.size(); ++r) {
    const auto& pt = field.points[static_cast<size_t>(ok[r])];
    xs.row(static_cast<Eigen::Index>(r)) = pt.x.transpose();
    values[static_cast<Eigen::Index>(r)] = pt.value;
    grads.row(static_cast<Eigen::Index>(r)) = pt.grad_sigma.transpose();
  }
  field.hull_lower = xs.colwise().minCoeff().transpose();
  field.hull_upper = xs.colwise().maxCoeff().transpose();

  // Keep the basis small enough for the number of samples.
  while (field.basis.kind == regression::BasisSpec::Kind::polynomial &&
         field.basis.degree > 0) {
    regression::Fit probe(xs, field.basis, opts.field_ridge);
    if (probe.n_basis(d) <= static_cast<Eigen::Index>(ok.size())) break;
    --field.basis.degree;
  }
  field.fit.emplace(xs, field.basis, opts.field_ridge);
  field.value_coeffs = field.fit->coefficients(values);
  for (int j = 0; j < k; ++j)
    field.grad_coeffs.push_back(field.fit->coefficients(grads.col(j)));
  return field;
}

struct ResidualEstimate {
  double residual = 0.0;
  double ci = 0.0;
  double rhs = 0.0;
  double extrapolation_fraction = 0.0;
};

struct ResidualOptions {
  int n_paths = 20000;
  int steps_per_unit = 64;
  int threads = 1;
  double extrapolation_budget = 0.05;
};

/// Fixed-point residual of the semigroup identity at one state:
///   v(x) - e^{-lambda T} P_T[v](x)
///        - int_0^T e^{-lambda t} P_t[F(., v, grad v sigma) + lambda v](x) dt,
/// with P_t estimated by fresh Monte Carlo over uncontrolled paths and a
/// trapezoidal rule in t.
inline ResidualEstimate mild_residual(const model::ProblemSpec& spec, const Vec& x,
                                      double horizon_T, const ValueField& field,
                                      uint64_t seed, const ResidualOptions& opts = {}) {
  spec.validate();
  if (!field.fit) throw std::invalid_argument("mild_residual: field has no interpolant");
  const double lambda = spec.constants.lambda;
  const auto grid = fwd::TimeGrid::with_density(horizon_T, opts.steps_per_unit);
  const auto ens = fwd::simulate(spec, grid, opts.n_paths, seed, x, opts.threads);

  const int n = grid.steps;
  const double dt = grid.dt();
  int64_t outside = 0;
  int64_t evaluations = 0;
  double sum = 0.0, sumsq = 0.0;
  for (int p = 0; p < ens.n_paths; ++p) {
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      const Vec xi = ens.state(p, i);
      ++evaluations;
      if (!field.in_hull(xi)) ++outside;
      const double v = field.value(xi);
      const Vec g = field.grad_sigma(xi);
      const double integrand =
          std::exp(-lambda * grid.node(i)) * (spec.generator.f(xi, v, g) + lambda * v);
      acc += (i == 0 || i == n ? 0.5 : 1.0) * integrand * dt;
    }
    acc += std::exp(-lambda * horizon_T) * field.value(ens.state(p, n));
    sum += acc;
    sumsq += acc * acc;
  }
  const double frac = static_cast<double>(outside) / static_cast<double>(evaluations);
  if (frac > opts.extrapolation_budget)
    throw std::runtime_error(
        "mild_residual: " + std::to_string(100.0 * frac) +
        "% of evaluations left the interpolant hull; widen the query points");

  ResidualEstimate est;
  est.rhs = sum / ens.n_paths;
  const double sample_var =
      (sumsq - static_cast<double>(ens.n_paths) * est.rhs * est.rhs) /
      std::max(1, ens.n_paths - 1);
  est.ci = std::sqrt(std::max(0.0, sample_var) / ens.n_paths);
  est.residual = field.value(x) - est.rhs;
  est.extrapolation_fraction = frac;
  return est;
}

struct IdentificationResidual {
  double y_sup = 0.0;
  double z_sup = 0.0;
  double y_quantile_50 = 0.0, y_quantile_90 = 0.0, y_quantile_99 = 0.0;
  double z_quantile_50 = 0.0, z_quantile_90 = 0.0, z_quantile_99 = 0.0;
  int samples = 0;
  double extrapolation_fraction = 0.0;
};

struct IdentificationOptions {
  int max_samples = 20000;
  int time_strata = 8;
  double extrapolation_budget = 0.05;
};

/// Sup and quantiles of |Y - v(X)| and |Z - grad v(X) sigma| over a
/// stratified (path, time) subsample.
inline IdentificationResidual identification_residual(const model::ProblemSpec& spec,
                                                      const fwd::PathEnsemble& ens,
                                                      const bsde::BackwardSolution& bsol,
                                                      const ValueField& field,
                                                      const IdentificationOptions& opts = {}) {
  if (!field.fit) throw std::invalid_argument("identification_residual: field has no interpolant");
  const int n = ens.grid.steps;
  const int time_stride = std::max(1, n / std::max(1, opts.time_strata));
  std::vector<int> time_indices;
  for (int i = 0; i < n; i += time_stride) time_indices.push_back(i);
  const int per_time = std::max(1, opts.max_samples / static_cast<int>(time_indices.size()));
  const int path_stride = std::max(1, ens.n_paths / per_time);

  std::vector<double> y_res, z_res;
  int64_t outside = 0, evaluations = 0;
  for (int i : time_indices) {
    for (int p = 0; p < ens.n_paths; p += path_stride) {
      if (ens.exit_index[p] <= i) continue;  // frozen region is not the identification
      const Vec x = ens.state(p, i);
      ++evaluations;
      if (!field.in_hull(x)) {
        ++outside;
        continue;
      }
      y_res.push_back(std::abs(bsol.y_at(p, i) - field.value(x)));
      z_res.push_back((bsol.z_at(p, i) - field.grad_sigma(x)).norm());
    }
  }
  if (evaluations == 0) throw std::runtime_error("identification_residual: no samples");
  const double frac = static_cast<double>(outside) / static_cast<double>(evaluations);
  if (frac > opts.extrapolation_budget)
    throw std::runtime_error("identification_residual: interpolant coverage too small (" +
                             std::to_string(100.0 * frac) + "% outside hull)");

  auto quantile = [](std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    const size_t idx = static_cast<size_t>(q * (v.size() - 1));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
    return v[idx];
  };

  IdentificationResidual out;
  out.samples = static_cast<int>(y_res.size());
  for (double v : y_res) out.y_sup = std::max(out.y_sup, v);
  for (double v : z_res) out.z_sup = std::max(out.z_sup, v);
  out.y_quantile_50 = quantile(y_res, 0.5);
  out.y_quantile_90 = quantile(y_res, 0.9);
  out.y_quantile_99 = quantile(y_res, 0.99);
  out.z_quantile_50 = quantile(z_res, 0.5);
  out.z_quantile_90 = quantile(z_res, 0.9);
  out.z_quantile_99 = quantile(z_res, 0.99);
  out.extrapolation_fraction = frac;
  return out;
}

}  // namespace qbsde::mild
