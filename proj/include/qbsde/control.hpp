#pragma once
// Optimal-control synthesis: Hamiltonian minimization over the control set,
// measurable-selection feedback built from a value field, discounted cost
// estimation with explicit tail bounds, the fundamental-relation check, and
// closed-loop simulation with its admissibility estimate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/forward.hpp"
#include "qbsde/linalg.hpp"
#include "qbsde/mild.hpp"
#include "qbsde/model.hpp"

namespace qbsde::control {

/// Closed control set: everything, a box, or a centred ball.
struct ControlSet {
  enum class Kind { all, box, ball };
  Kind kind = Kind::all;
  Vec lower, upper;  // box
  Vec center;        // ball
  double radius = 0.0;

  static ControlSet all() { return {}; }
  static ControlSet box(Vec lo, Vec hi) {
    ControlSet s;
    s.kind = Kind::box;
    s.lower = std::move(lo);
    s.upper = std::move(hi);
    return s;
  }
  static ControlSet ball(Vec c, double r) {
    ControlSet s;
    s.kind = Kind::ball;
    s.center = std::move(c);
    s.radius = r;
    return s;
  }

  Vec project(Vec u) const {
    switch (kind) {
      case Kind::all:
        return u;
      case Kind::box:
        for (Eigen::Index i = 0; i < u.size(); ++i)
          u[i] = std::clamp(u[i], lower[i], upper[i]);
        return u;
      case Kind::ball: {
        const double norm = (u - center).norm();
        if (norm > radius) u = center + (u - center) * (radius / norm);
        return u;
      }
    }
    return u;
  }
};

/// Control-problem data for the state equation
///   dX = (A X + b(X) + sigma r(X, u)) dt + sigma dW
/// and the discounted cost J = E int_0^inf e^{-lambda t} g(X, u) dt.
struct ControlSpec {
  int state_dim = 1;
  int noise_dim = 1;
  int control_dim = 1;
  Mat drift_matrix;
  std::function<Vec(const Vec&)> drift_fn;
  std::function<Mat(const Vec&)> drift_jacobian;
  Mat diffusion;
  ControlSet control_set;
  std::function<Vec(const Vec&, const Vec&)> r;    // values in the noise space
  std::function<double(const Vec&, const Vec&)> g; // running cost, >= 0
  double r_growth = 1.0;       // C_r with |r(x,u)| <= C_r (1 + |u|)
  double g_growth = 1.0;       // C_g with g(x,u) <= C_g (1 + |u|^2)
  double coercive_radius = 1.0;  // R
  double coercive_const = 1.0;   // c with g >= c|u|^2 for |u| >= R
  double lambda = 1.0;
  Vec fallback_control;        // u0, always admissible
  double selection_growth = 0.0;  // C_gamma; 0 = default C_r + 1
  model::Constants constants;  // constants of the induced Hamiltonian driver

  double gamma_growth() const {
    return selection_growth > 0.0 ? selection_growth : r_growth + 1.0;
  }
  void validate() const {
    if (state_dim < 1 || noise_dim < 1 || control_dim < 1)
      throw std::invalid_argument("control spec: dimensions must be >= 1");
    if (!r || !g) throw std::invalid_argument("control spec: r and g required");
    if (!(lambda > 0.0)) throw std::invalid_argument("control spec: lambda must be > 0");
    if (fallback_control.size() != control_dim)
      throw std::invalid_argument("control spec: fallback control has wrong dimension");
  }

  model::ProblemSpec dynamics() const {
    model::ProblemSpec spec;
    spec.state_dim = state_dim;
    spec.noise_dim = noise_dim;
    spec.drift_matrix = drift_matrix;
    spec.drift_fn = drift_fn;
    spec.drift_jacobian = drift_jacobian;
    spec.diffusion = diffusion;
    spec.constants = constants;
    spec.generator.f = [](const Vec&, double, const Vec&) { return 0.0; };
    return spec;
  }
};

struct ArgminOptions {
  int starts = 16;
  int iterations = 40;
  int grid_points_per_dim = 33;
  double tie_tolerance = 1e-12;
  double fd_step = 1e-6;
};

struct ArgminResult {
  double f_value = 0.0;  // inf { g + z . r } - lambda y
  Vec u_star;
  bool converged = false;
  bool radius_enlarged = false;
};

namespace detail {

inline double halton(int index, int base) {
  double f = 1.0, result = 0.0;
  int i = index;
  while (i > 0) {
    f /= base;
    result += f * (i % base);
    i /= base;
  }
  return result;
}

inline constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13};

// Projection onto U intersected with the search ball (Dykstra, both convex).
inline Vec project_feasible(const ControlSet& set, double radius, Vec u) {
  if (set.kind == ControlSet::Kind::all) {
    const double norm = u.norm();
    return norm > radius ? Vec(u * (radius / norm)) : u;
  }
  Vec p = Vec::Zero(u.size()), q = Vec::Zero(u.size());
  Vec x = std::move(u);
  for (int sweep = 0; sweep < 10; ++sweep) {
    const Vec y = set.project(x + p);
    p = x + p - y;
    const double norm = (y + q).norm();
    x = norm > radius ? Vec((y + q) * (radius / norm)) : Vec(y + q);
    q = y + q - x;
  }
  const double norm = x.norm();
  return norm > radius ? Vec(x * (radius / norm)) : x;
}

}  // namespace detail

/// Minimizes g(x, u) + z . r(x, u) over U intersected with the ball
/// |u| <= C_gamma (1 + |z|), by multi-start projected gradient descent on a
/// low-discrepancy start cloud plus a coarse-grid fallback candidate, then
/// subtracts lambda y. Deterministic: fixed starts, fixed iteration budget,
/// ties broken by the smallest start index.
inline ArgminResult hamiltonian_argmin(const Vec& x, double y, const Vec& z,
                                       const ControlSpec& ctrl,
                                       const ArgminOptions& opts = {}) {
  ctrl.validate();
  const int m = ctrl.control_dim;
  double radius = ctrl.gamma_growth() * (1.0 + z.norm());
  ArgminResult result;
  if (ctrl.fallback_control.norm() > radius) {
    radius = ctrl.fallback_control.norm() * (1.0 + 1e-12);
    result.radius_enlarged = true;
  }

  auto objective = [&](const Vec& u) { return ctrl.g(x, u) + z.dot(ctrl.r(x, u)); };
  auto project = [&](Vec u) { return detail::project_feasible(ctrl.control_set, radius, std::move(u)); };

  // Candidate starts: low-discrepancy cloud, the fallback control, and the
  // best point of a coarse grid.
  std::vector<Vec> starts;
  for (int s = 0; s < opts.starts; ++s) {
    Vec u(m);
    for (int j = 0; j < m; ++j)
      u[j] = radius * (2.0 * detail::halton(s + 1, detail::kPrimes[j % 6]) - 1.0);
    starts.push_back(project(std::move(u)));
  }
  starts.push_back(project(ctrl.fallback_control));
  {
    Vec best;
    double best_val = std::numeric_limits<double>::infinity();
    if (m <= 2) {
      const int g = opts.grid_points_per_dim;
      const int total = m == 1 ? g : g * g;
      for (int idx = 0; idx < total; ++idx) {
        Vec u(m);
        if (m == 1) {
          u[0] = radius * (2.0 * idx / (g - 1) - 1.0);
        } else {
          u[0] = radius * (2.0 * (idx % g) / (g - 1) - 1.0);
          u[1] = radius * (2.0 * (idx / g) / (g - 1) - 1.0);
        }
        u = project(std::move(u));
        const double val = objective(u);
        if (val < best_val) {
          best_val = val;
          best = u;
        }
      }
    } else {
      for (int s = 0; s < 64; ++s) {
        Vec u(m);
        for (int j = 0; j < m; ++j)
          u[j] = radius * (2.0 * detail::halton(s + 17, detail::kPrimes[j % 6]) - 1.0);
        u = project(std::move(u));
        const double val = objective(u);
        if (val < best_val) {
          best_val = val;
          best = u;
        }
      }
    }
    starts.push_back(std::move(best));
  }

  Vec grad(m), trial(m);
  double best_value = std::numeric_limits<double>::infinity();
  Vec best_u;
  bool best_converged = false;
  int best_index = -1;
  for (size_t s = 0; s < starts.size(); ++s) {
    Vec u = starts[s];
    double val = objective(u);
    bool converged = false;
    for (int it = 0; it < opts.iterations; ++it) {
      for (int j = 0; j < m; ++j) {
        const double h = opts.fd_step * (1.0 + std::abs(u[j]));
        Vec up = u, down = u;
        up[j] += h;
        down[j] -= h;
        grad[j] = (objective(up) - objective(down)) / (2.0 * h);
      }
      const double gnorm = grad.norm();
      if (gnorm * radius < 1e-12 * (1.0 + std::abs(val))) {
        converged = true;
        break;
      }
      double step = 0.2 * radius / (1.0 + gnorm);
      bool moved = false;
      for (int back = 0; back < 12; ++back) {
        trial = project(u - step * grad);
        const double tval = objective(trial);
        if (tval < val - 1e-15 * (1.0 + std::abs(val))) {
          const double displacement = (trial - u).norm();
          u = trial;
          val = tval;
          moved = true;
          if (displacement <= 1e-9 * (1.0 + u.norm())) converged = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) {
        converged = true;  // no feasible descent direction at line-search floor
        break;
      }
      if (converged) break;
    }
    if (val < best_value - opts.tie_tolerance * (1.0 + std::abs(best_value))) {
      best_value = val;
      best_u = u;
      best_converged = converged;
      best_index = static_cast<int>(s);
    }
  }
  (void)best_index;

  result.f_value = best_value - ctrl.lambda * y;
  result.u_star = best_u;
  result.converged = best_converged;
  return result;
}

/// Problem spec whose generator is the Hamiltonian evaluated by numerical
/// minimization: F(x,y,z) = inf{ g + z.r } - lambda y. grad_z comes from the
/// envelope theorem (r at the argmin), grad_x from central differences, and
/// grad_y = -lambda exactly.
inline model::ProblemSpec hamiltonian_problem_spec(const ControlSpec& ctrl,
                                                   const ArgminOptions& opts = {},
                                                   double x_fd_step = 1e-5) {
  ctrl.validate();
  auto spec = ctrl.dynamics();
  const ControlSpec c = ctrl;
  const ArgminOptions o = opts;
  spec.generator.f = [c, o](const Vec& x, double y, const Vec& z) {
    return hamiltonian_argmin(x, y, z, c, o).f_value;
  };
  spec.generator.grad_y = [c](const Vec&, double, const Vec&) { return -c.lambda; };
  spec.generator.grad_z = [c, o](const Vec& x, double y, const Vec& z) {
    const auto res = hamiltonian_argmin(x, y, z, c, o);
    return Vec(c.r(x, res.u_star));
  };
  spec.generator.grad_x = [c, o, x_fd_step](const Vec& x, double y, const Vec& z) {
    Vec g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      Vec up = x, down = x;
      up[j] += x_fd_step;
      down[j] -= x_fd_step;
      g[j] = (hamiltonian_argmin(up, y, z, c, o).f_value -
              hamiltonian_argmin(down, y, z, c, o).f_value) /
             (2.0 * x_fd_step);
    }
    return g;
  };
  return spec;
}

namespace detail {

// Catmull-Rom value and first derivative on a uniform grid.
inline void catmull_rom(double p0, double p1, double p2, double p3, double u,
                        double& value, double& derivative) {
  const double c1 = 0.5 * (p2 - p0);
  const double c2 = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
  const double c3 = 0.5 * (3.0 * (p1 - p2) + p3 - p0);
  value = p1 + u * (c1 + u * (c2 + u * c3));
  derivative = c1 + u * (2.0 * c2 + 3.0 * u * c3);
}

}  // namespace detail

/// The Hamiltonian H(x, z) = inf{ g + z . r } tabulated on an (x, z) grid
/// (d = k = 1), evaluated by bicubic interpolation. Makes the control
/// pipeline affordable: the minimization runs once per grid node instead of
/// once per driver call inside the backward solve.
class TabulatedHamiltonian {
 public:
  TabulatedHamiltonian(const ControlSpec& ctrl, double x_lo, double x_hi, double z_max,
                       int nx = 121, int nz = 121, const ArgminOptions& opts = {})
      : lambda_(ctrl.lambda), x_lo_(x_lo), z_lo_(-z_max), nx_(nx), nz_(nz) {
    if (ctrl.state_dim != 1 || ctrl.noise_dim != 1 || ctrl.control_dim != 1)
      throw std::invalid_argument("tabulated hamiltonian: requires d = k = m = 1");
    if (nx < 4 || nz < 4 || !(x_hi > x_lo) || !(z_max > 0.0))
      throw std::invalid_argument("tabulated hamiltonian: bad grid");
    hx_ = (x_hi - x_lo) / (nx - 1);
    hz_ = 2.0 * z_max / (nz - 1);
    table_.resize(static_cast<size_t>(nx) * static_cast<size_t>(nz));
    Vec x(1), z(1);
    for (int i = 0; i < nx; ++i) {
      x[0] = x_lo_ + i * hx_;
      for (int j = 0; j < nz; ++j) {
        z[0] = z_lo_ + j * hz_;
        table_[static_cast<size_t>(i) * nz + static_cast<size_t>(j)] =
            hamiltonian_argmin(x, 0.0, z, ctrl, opts).f_value;  // H = F(y=0)
      }
    }
  }

  double value(double x, double z) const {
    double v, unused;
    interpolate(x, z, v, unused);
    return v;
  }
  double dz(double x, double z) const {
    double unused, d;
    interpolate(x, z, unused, d);
    return d;
  }
  double dx(double x, double z) const {
    // central difference across the tabulated value; hx is the resolution
    const double h = hx_;
    return (value(x + h, z) - value(x - h, z)) / (2.0 * h);
  }

 private:
  void interpolate(double x, double z, double& value_out, double& dz_out) const {
    double tx = (x - x_lo_) / hx_;
    double tz = (z - z_lo_) / hz_;
    tx = std::clamp(tx, 0.0, static_cast<double>(nx_ - 1));
    tz = std::clamp(tz, 0.0, static_cast<double>(nz_ - 1));
    const int ix = std::min(nx_ - 2, static_cast<int>(tx));
    const int iz = std::min(nz_ - 2, static_cast<int>(tz));
    const double ux = tx - ix;
    const double uz = tz - iz;
    double rows[4], drows[4];
    for (int s = -1; s <= 2; ++s) {
      const int i = std::clamp(ix + s, 0, nx_ - 1);
      auto at = [&](int j) {
        return table_[static_cast<size_t>(i) * nz_ +
                      static_cast<size_t>(std::clamp(j, 0, nz_ - 1))];
      };
      detail::catmull_rom(at(iz - 1), at(iz), at(iz + 1), at(iz + 2), uz, rows[s + 1],
                          drows[s + 1]);
    }
    double unused;
    detail::catmull_rom(rows[0], rows[1], rows[2], rows[3], ux, value_out, unused);
    detail::catmull_rom(drows[0], drows[1], drows[2], drows[3], ux, dz_out, unused);
    dz_out /= hz_;
  }

  double lambda_, x_lo_, z_lo_, hx_ = 1.0, hz_ = 1.0;
  int nx_ = 0, nz_ = 0;
  std::vector<double> table_;
};

/// Problem spec whose generator reads a shared Hamiltonian table:
/// F = H(x, z) - lambda y. The table is kept alive by the generator
/// closures.
inline model::ProblemSpec tabulated_problem_spec(
    std::shared_ptr<const TabulatedHamiltonian> table, const ControlSpec& ctrl) {
  if (!table) throw std::invalid_argument("tabulated_problem_spec: null table");
  auto spec = ctrl.dynamics();
  const double lambda = ctrl.lambda;
  spec.generator.f = [table, lambda](const Vec& x, double y, const Vec& z) {
    return table->value(x[0], z[0]) - lambda * y;
  };
  spec.generator.grad_y = [lambda](const Vec&, double, const Vec&) { return -lambda; };
  spec.generator.grad_z = [table](const Vec& x, double, const Vec& z) {
    return Vec::Constant(1, table->dz(x[0], z[0]));
  };
  spec.generator.grad_x = [table](const Vec& x, double, const Vec& z) {
    return Vec::Constant(1, table->dx(x[0], z[0]));
  };
  return spec;
}

/// Feedback policy u(x) = gamma(x, grad v(x) sigma) evaluated through a
/// value-field interpolant, with per-state caching on quantized states so
/// repeated queries are bit-identical.
class FeedbackPolicy {
 public:
  FeedbackPolicy(ControlSpec ctrl, std::shared_ptr<const mild::ValueField> field,
                 ArgminOptions opts = {})
      : ctrl_(std::move(ctrl)), field_(std::move(field)), opts_(opts) {
    if (!field_ || !field_->fit)
      throw std::invalid_argument("policy: value field with interpolant required");
  }

  Vec operator()(const Vec& x) const {
    std::vector<int64_t> key(static_cast<size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i)
      key[static_cast<size_t>(i)] = static_cast<int64_t>(std::llround(x[i] * 1e9));
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    const double v = field_->value(x);
    const Vec z = field_->grad_sigma(x);
    const auto res = hamiltonian_argmin(x, v, z, ctrl_, opts_);
    const double allowed = ctrl_.gamma_growth() * (1.0 + z.norm());
    if (res.u_star.norm() > allowed * (1.0 + 1e-9) && !res.radius_enlarged)
      throw std::runtime_error("policy: selection bound |gamma(x,z)| <= C_gamma (1+|z|) violated");
    std::lock_guard<std::mutex> lock(mutex_);
    ++evaluations_;
    if (res.converged) ++converged_;
    cache_.emplace(std::move(key), res.u_star);
    return res.u_star;
  }

  const ControlSpec& spec() const { return ctrl_; }
  const mild::ValueField& field() const { return *field_; }
  int64_t evaluations() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return evaluations_;
  }
  double converged_fraction() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return evaluations_ > 0 ? static_cast<double>(converged_) / evaluations_ : 1.0;
  }

 private:
  ControlSpec ctrl_;
  std::shared_ptr<const mild::ValueField> field_;
  ArgminOptions opts_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<int64_t>, Vec> cache_;
  mutable int64_t evaluations_ = 0;
  mutable int64_t converged_ = 0;
};

inline FeedbackPolicy synthesize_policy(const ControlSpec& ctrl,
                                        std::shared_ptr<const mild::ValueField> field,
                                        const ArgminOptions& opts = {}) {
  return FeedbackPolicy(ctrl, std::move(field), opts);
}

/// Wraps the control spec and a source into the forward module's controlled
/// stepper and records the realized control sequence.
inline fwd::ControlledEnsemble simulate_controlled(const ControlSpec& ctrl,
                                                   const fwd::ControlSource& source,
                                                   const fwd::TimeGrid& grid, int n_paths,
                                                   uint64_t seed, const Vec& x0,
                                                   int threads = 1,
                                                   uint64_t stream_offset = 0) {
  ctrl.validate();
  return fwd::simulate_controlled_core(
      ctrl.dynamics(), [&ctrl](const Vec& x, const Vec& u) { return ctrl.r(x, u); },
      source, ctrl.control_dim, grid, n_paths, seed, x0, threads, stream_offset);
}

inline fwd::ControlSource as_source(const FeedbackPolicy& policy) {
  return [&policy](const Vec& x, double) { return policy(x); };
}

struct CostEstimate {
  double j = 0.0;
  double ci = 0.0;
  double horizon = 0.0;
  double tail_bound = 0.0;
  double admissibility = 0.0;     // E int e^{-lambda t} |u|^2 dt
  double admissibility_ci = 0.0;
  bool state_overflow = false;
};

struct CostOptions {
  int steps_per_unit = 16;
  int threads = 1;
};

/// Monte Carlo discounted cost over [0, T] plus the explicit tail bound
/// C_g (1 + sup_t E|u_t|^2) e^{-lambda T} / lambda from the growth of g.
inline CostEstimate cost_estimate(const ControlSpec& ctrl, const Vec& x0,
                                  const fwd::ControlSource& source, double horizon_T,
                                  int n_paths, uint64_t seed, const CostOptions& opts = {}) {
  ctrl.validate();
  const auto grid = fwd::TimeGrid::with_density(horizon_T, opts.steps_per_unit);
  const auto run =
      simulate_controlled(ctrl, source, grid, n_paths, seed, x0, opts.threads);
  const auto& ens = run.paths;
  const int n = grid.steps;
  const double dt = grid.dt();
  const double lambda = ctrl.lambda;

  double j_sum = 0.0, j_sq = 0.0, adm_sum = 0.0, adm_sq = 0.0;
  std::vector<double> mean_u2(static_cast<size_t>(n), 0.0);
  for (int p = 0; p < ens.n_paths; ++p) {
    double cost = 0.0, adm = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec u = run.control(p, i);
      const double disc = std::exp(-lambda * grid.node(i));
      cost += disc * ctrl.g(ens.state(p, i), u) * dt;
      const double u2 = u.squaredNorm();
      adm += disc * u2 * dt;
      mean_u2[static_cast<size_t>(i)] += u2;
    }
    j_sum += cost;
    j_sq += cost * cost;
    adm_sum += adm;
    adm_sq += adm * adm;
  }
  const double inv_p = 1.0 / ens.n_paths;
  CostEstimate est;
  est.j = j_sum * inv_p;
  est.admissibility = adm_sum * inv_p;
  const double j_var = std::max(0.0, (j_sq - ens.n_paths * est.j * est.j) /
                                         std::max(1, ens.n_paths - 1));
  const double a_var = std::max(0.0, (adm_sq - ens.n_paths * est.admissibility *
                                                   est.admissibility) /
                                         std::max(1, ens.n_paths - 1));
  est.ci = std::sqrt(j_var * inv_p);
  est.admissibility_ci = std::sqrt(a_var * inv_p);
  est.horizon = horizon_T;
  double sup_u2 = 0.0;
  for (double v : mean_u2) sup_u2 = std::max(sup_u2, v * inv_p);
  est.tail_bound = ctrl.g_growth * (1.0 + sup_u2) * std::exp(-lambda * horizon_T) / lambda;
  est.state_overflow = ens.overflow;
  return est;
}

struct FundamentalRelation {
  double j = 0.0;                   // truncated cost
  double terminal_value_term = 0.0; // e^{-lambda T} E v(X_T)
  double v0 = 0.0;
  double correction = 0.0;          // E int e^{-lambda t} (gap integrand) dt
  double residual = 0.0;            // j + terminal term - v0 - correction
  double min_integrand = 0.0;
  double ci = 0.0;
  CostEstimate cost;
};

/// Verifies J(x, u) = v(x) + E int e^{-lambda t} ( -F(X, v, grad v sigma)
/// - lambda v + grad v sigma . r(X, u) + g(X, u) ) dt on the truncated
/// horizon, with the discounted terminal value restoring the finite-T
/// identity. The integrand is nonnegative up to argmin tolerance.
inline FundamentalRelation fundamental_relation_check(const ControlSpec& ctrl, const Vec& x0,
                                                      const fwd::ControlSource& source,
                                                      const mild::ValueField& field,
                                                      double horizon_T, int n_paths,
                                                      uint64_t seed,
                                                      const CostOptions& opts = {},
                                                      const ArgminOptions& argmin_opts = {}) {
  ctrl.validate();
  if (!field.fit)
    throw std::invalid_argument("fundamental_relation_check: field has no interpolant");
  const auto grid = fwd::TimeGrid::with_density(horizon_T, opts.steps_per_unit);
  const auto run =
      simulate_controlled(ctrl, source, grid, n_paths, seed, x0, opts.threads);
  const auto& ens = run.paths;
  const int n = grid.steps;
  const double dt = grid.dt();
  const double lambda = ctrl.lambda;

  double j_sum = 0.0, corr_sum = 0.0, corr_sq = 0.0, term_sum = 0.0;
  double min_integrand = std::numeric_limits<double>::infinity();
  for (int p = 0; p < ens.n_paths; ++p) {
    double cost = 0.0, corr = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec x = ens.state(p, i);
      const Vec u = run.control(p, i);
      const double disc = std::exp(-lambda * grid.node(i));
      const double v = field.value(x);
      const Vec z = field.grad_sigma(x);
      const double ham = hamiltonian_argmin(x, v, z, ctrl, argmin_opts).f_value;
      const double integrand =
          -ham - lambda * v + z.dot(ctrl.r(x, u)) + ctrl.g(x, u);
      min_integrand = std::min(min_integrand, integrand);
      corr += disc * integrand * dt;
      cost += disc * ctrl.g(x, u) * dt;
    }
    term_sum += std::exp(-lambda * horizon_T) * field.value(ens.state(p, n));
    j_sum += cost;
    corr_sum += corr;
    corr_sq += corr * corr;
  }
  const double inv_p = 1.0 / ens.n_paths;
  FundamentalRelation rel;
  rel.j = j_sum * inv_p;
  rel.terminal_value_term = term_sum * inv_p;
  rel.correction = corr_sum * inv_p;
  const double var = std::max(0.0, (corr_sq - ens.n_paths * rel.correction * rel.correction) /
                                       std::max(1, ens.n_paths - 1));
  rel.ci = std::sqrt(var * inv_p);
  rel.v0 = field.value(x0);
  rel.residual = rel.j + rel.terminal_value_term - rel.v0 - rel.correction;
  rel.min_integrand = min_integrand;
  return rel;
}

struct ClosedLoopStats {
  double admissibility = 0.0;
  double admissibility_ci = 0.0;
  double tail_bound = 0.0;  // (sup_t E|u|^2) e^{-lambda T} / lambda
  double cost = 0.0;
  double cost_ci = 0.0;
  Vec terminal_mean;
  Vec terminal_std;
  bool state_overflow = false;
  double policy_converged_fraction = 1.0;
};

/// Simulates the closed-loop state equation under the synthesized feedback
/// and reports the admissibility estimate E int e^{-lambda t} |u(X_t)|^2 dt.
inline ClosedLoopStats closed_loop_run(const ControlSpec& ctrl, const FeedbackPolicy& policy,
                                       const Vec& x0, const fwd::TimeGrid& grid,
                                       int n_paths, uint64_t seed,
                                       const CostOptions& opts = {}) {
  const auto run = simulate_controlled(ctrl, as_source(policy), grid, n_paths, seed, x0,
                                       opts.threads);
  const auto& ens = run.paths;
  const int n = grid.steps;
  const double dt = grid.dt();
  const double lambda = ctrl.lambda;

  double adm_sum = 0.0, adm_sq = 0.0, cost_sum = 0.0, cost_sq = 0.0;
  std::vector<double> mean_u2(static_cast<size_t>(n), 0.0);
  Vec term_mean = Vec::Zero(ens.state_dim);
  Vec term_sq = Vec::Zero(ens.state_dim);
  for (int p = 0; p < ens.n_paths; ++p) {
    double adm = 0.0, cost = 0.0;
    for (int i = 0; i < n; ++i) {
      const Vec u = run.control(p, i);
      const double disc = std::exp(-lambda * grid.node(i));
      const double u2 = u.squaredNorm();
      adm += disc * u2 * dt;
      cost += disc * ctrl.g(ens.state(p, i), u) * dt;
      mean_u2[static_cast<size_t>(i)] += u2;
    }
    adm_sum += adm;
    adm_sq += adm * adm;
    cost_sum += cost;
    cost_sq += cost * cost;
    const Vec xt = ens.state(p, n);
    term_mean += xt;
    term_sq += xt.cwiseProduct(xt);
  }
  const double inv_p = 1.0 / ens.n_paths;
  ClosedLoopStats stats;
  stats.admissibility = adm_sum * inv_p;
  stats.cost = cost_sum * inv_p;
  const double a_var = std::max(0.0, (adm_sq - ens.n_paths * stats.admissibility *
                                                   stats.admissibility) /
                                         std::max(1, ens.n_paths - 1));
  const double c_var = std::max(0.0, (cost_sq - ens.n_paths * stats.cost * stats.cost) /
                                         std::max(1, ens.n_paths - 1));
  stats.admissibility_ci = std::sqrt(a_var * inv_p);
  stats.cost_ci = std::sqrt(c_var * inv_p);
  double sup_u2 = 0.0;
  for (double v : mean_u2) sup_u2 = std::max(sup_u2, v * inv_p);
  stats.tail_bound = sup_u2 * std::exp(-lambda * grid.horizon) / lambda;
  stats.terminal_mean = term_mean * inv_p;
  stats.terminal_std =
      ((term_sq * inv_p) - stats.terminal_mean.cwiseProduct(stats.terminal_mean))
          .cwiseMax(0.0)
          .cwiseSqrt();
  stats.state_overflow = ens.overflow;
  stats.policy_converged_fraction = policy.converged_fraction();
  return stats;
}

}  // namespace qbsde::control
