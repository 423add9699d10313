#pragma once
// Forward SDE simulation in mild form, the variational (first-derivative)
// process, first exit times, and controlled variants.
//
// Stepping is exponential-Euler: the linear part is advanced by the exact
// semigroup e^{dt A}, so the scheme reduces to the exact flow when b = 0 and
// sigma = 0. Noise is drawn per (seed, path, step) from counter-based
// streams; results are bit-identical for any thread count.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qbsde/linalg.hpp"
#include "qbsde/model.hpp"
#include "qbsde/rng.hpp"

namespace qbsde::fwd {

/// Exit sentinel: the path never leaves the domain on the grid.
inline constexpr int32_t kNeverExits = std::numeric_limits<int32_t>::max();

struct TimeGrid {
  double horizon = 1.0;
  int steps = 1;

  double dt() const { return horizon / steps; }
  double node(int i) const { return horizon * i / steps; }

  static TimeGrid with_density(double horizon, int steps_per_unit) {
    if (!(horizon > 0.0) || steps_per_unit < 1)
      throw std::invalid_argument("time grid: horizon > 0 and density >= 1 required");
    const int n = std::max(1, static_cast<int>(std::lround(horizon * steps_per_unit)));
    return {horizon, n};
  }

  void validate() const {
    if (steps < 1 || !(horizon > 0.0))
      throw std::invalid_argument("time grid: steps >= 1 and horizon > 0 required");
  }
};

/// Simulated forward paths with their Brownian increments.
/// states are stored path-major: state(p, i) is X at node i of path p.
struct PathEnsemble {
  TimeGrid grid;
  int n_paths = 0;
  int state_dim = 0;
  int noise_dim = 0;
  uint64_t seed = 0;
  uint64_t stream_offset = 0;
  std::vector<double> states;       // n_paths * (steps+1) * state_dim
  std::vector<double> noise;        // n_paths * steps * noise_dim
  std::vector<int32_t> exit_index;  // filled by first_exit, else kNeverExits
  bool overflow = false;
  int64_t overflow_paths = 0;

  Eigen::Map<const Vec> state(int p, int i) const {
    return {states.data() + (static_cast<size_t>(p) * (grid.steps + 1) + i) * state_dim,
            state_dim};
  }
  Eigen::Map<Vec> state(int p, int i) {
    return {states.data() + (static_cast<size_t>(p) * (grid.steps + 1) + i) * state_dim,
            state_dim};
  }
  Eigen::Map<const Vec> dW(int p, int i) const {
    return {noise.data() + (static_cast<size_t>(p) * grid.steps + i) * noise_dim,
            noise_dim};
  }
  bool exited(int p) const { return exit_index[p] != kNeverExits; }
};

/// Directional derivative paths D = grad_x X h along a fixed direction h.
struct VariationalPaths {
  Vec direction;
  int n_paths = 0;
  int state_dim = 0;
  int steps = 0;
  std::vector<double> data;  // n_paths * (steps+1) * state_dim

  Eigen::Map<const Vec> at(int p, int i) const {
    return {data.data() + (static_cast<size_t>(p) * (steps + 1) + i) * state_dim,
            state_dim};
  }
  Eigen::Map<Vec> at(int p, int i) {
    return {data.data() + (static_cast<size_t>(p) * (steps + 1) + i) * state_dim,
            state_dim};
  }
};

/// Simulates X_{i+1} = e^{dt A}(X_i + dt b(X_i) + sigma dW_i) from X_0 = x0.
/// `stream_offset` shifts the per-path noise streams so that disjoint blocks
/// of one logical ensemble can be produced independently.
inline PathEnsemble simulate(const model::ProblemSpec& spec, const TimeGrid& grid,
                             int n_paths, uint64_t seed, const Vec& x0,
                             int threads = 1, uint64_t stream_offset = 0) {
  spec.validate();
  grid.validate();
  if (n_paths < 1) throw std::invalid_argument("simulate: n_paths must be >= 1");
  if (x0.size() != spec.state_dim)
    throw std::invalid_argument("simulate: x0 has wrong dimension");

  PathEnsemble ens;
  ens.grid = grid;
  ens.n_paths = n_paths;
  ens.state_dim = spec.state_dim;
  ens.noise_dim = spec.noise_dim;
  ens.seed = seed;
  ens.stream_offset = stream_offset;
  const int n = grid.steps;
  const int d = spec.state_dim;
  const int k = spec.noise_dim;
  ens.states.resize(static_cast<size_t>(n_paths) * (n + 1) * d);
  ens.noise.resize(static_cast<size_t>(n_paths) * n * k);
  ens.exit_index.assign(n_paths, kNeverExits);

  const double dt = grid.dt();
  const Mat step_semigroup = expm(dt * spec.drift_matrix);
  const double sqrt_dt = std::sqrt(dt);
  const rng::Key key{seed, rng::kDomainForwardNoise};
  const bool has_drift = static_cast<bool>(spec.drift_fn);

  std::atomic<int64_t> overflow_count{0};
  parallel_for(n_paths, threads, [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    Vec x(d), incr(k), pre(d);
    for (std::ptrdiff_t p = lo; p < hi; ++p) {
      x = x0;
      ens.state(static_cast<int>(p), 0) = x;
      bool dead = false;
      for (int i = 0; i < n; ++i) {
        double* w = ens.noise.data() + (static_cast<size_t>(p) * n + i) * k;
        rng::fill_normals(key, stream_offset + static_cast<uint64_t>(p),
                          static_cast<uint64_t>(i), {w, static_cast<size_t>(k)});
        for (int j = 0; j < k; ++j) w[j] *= sqrt_dt;
        if (!dead) {
          incr = Eigen::Map<const Vec>(w, k);
          pre = x + spec.diffusion * incr;
          if (has_drift) pre += dt * spec.drift_fn(x);
          x = step_semigroup * pre;
          if (!x.allFinite()) {
            dead = true;
            overflow_count.fetch_add(1, std::memory_order_relaxed);
            x = ens.state(static_cast<int>(p), i);  // freeze at last finite state
          }
        }
        ens.state(static_cast<int>(p), i + 1) = x;
      }
    }
  });
  ens.overflow_paths = overflow_count.load();
  ens.overflow = ens.overflow_paths > 0;
  return ens;
}

/// Integrates D_{i+1} = e^{dt A}(D_i + dt grad_b(X_i) D_i), D_0 = h, on the
/// stored ensemble. sigma is constant so no new noise enters.
inline VariationalPaths simulate_variational(const model::ProblemSpec& spec,
                                             const PathEnsemble& ens, const Vec& h,
                                             int threads = 1) {
  if (h.size() != spec.state_dim)
    throw std::invalid_argument("simulate_variational: direction has wrong dimension");
  VariationalPaths var;
  var.direction = h;
  var.n_paths = ens.n_paths;
  var.state_dim = spec.state_dim;
  var.steps = ens.grid.steps;
  var.data.resize(static_cast<size_t>(ens.n_paths) * (ens.grid.steps + 1) * spec.state_dim);

  const double dt = ens.grid.dt();
  const Mat step_semigroup = expm(dt * spec.drift_matrix);
  const bool has_jac = static_cast<bool>(spec.drift_jacobian);
  const int n = ens.grid.steps;

  parallel_for(ens.n_paths, threads, [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    Vec dvec(spec.state_dim);
    for (std::ptrdiff_t p = lo; p < hi; ++p) {
      dvec = h;
      var.at(static_cast<int>(p), 0) = dvec;
      for (int i = 0; i < n; ++i) {
        if (has_jac)
          dvec += dt * (spec.drift_jacobian(ens.state(static_cast<int>(p), i)) * dvec);
        dvec = step_semigroup * dvec;
        var.at(static_cast<int>(p), i + 1) = dvec;
      }
    }
  });
  return var;
}

/// Fills exit indices e[p] = min{ i : X[p][i] not in domain }, sentinel when
/// the path stays inside through the final node. Idempotent.
inline PathEnsemble first_exit(PathEnsemble ens, const model::Region& domain) {
  const int n = ens.grid.steps;
  for (int p = 0; p < ens.n_paths; ++p) {
    ens.exit_index[p] = kNeverExits;
    for (int i = 0; i <= n; ++i) {
      if (!domain.contains(ens.state(p, i))) {
        ens.exit_index[p] = i;
        break;
      }
    }
  }
  return ens;
}

/// Controlled forward run: the drift gains sigma * r(X, u) and the realized
/// control sequence is recorded alongside the paths.
struct ControlledEnsemble {
  PathEnsemble paths;
  int control_dim = 0;
  std::vector<double> controls;  // n_paths * steps * control_dim

  Eigen::Map<const Vec> control(int p, int i) const {
    return {controls.data() +
                (static_cast<size_t>(p) * paths.grid.steps + i) * control_dim,
            control_dim};
  }
};

/// State-feedback or time-dependent open-loop source u(x, t).
using ControlSource = std::function<Vec(const Vec&, double)>;

/// sigma-channel drift augmentation r(x, u), with values in the noise space.
using ControlChannel = std::function<Vec(const Vec&, const Vec&)>;

inline ControlledEnsemble simulate_controlled_core(
    const model::ProblemSpec& dynamics, const ControlChannel& channel,
    const ControlSource& source, int control_dim, const TimeGrid& grid,
    int n_paths, uint64_t seed, const Vec& x0, int threads = 1,
    uint64_t stream_offset = 0) {
  dynamics.validate();
  grid.validate();
  if (n_paths < 1) throw std::invalid_argument("simulate_controlled: n_paths must be >= 1");
  if (!channel || !source)
    throw std::invalid_argument("simulate_controlled: channel and source required");

  ControlledEnsemble out;
  out.control_dim = control_dim;
  auto& ens = out.paths;
  ens.grid = grid;
  ens.n_paths = n_paths;
  ens.state_dim = dynamics.state_dim;
  ens.noise_dim = dynamics.noise_dim;
  ens.seed = seed;
  ens.stream_offset = stream_offset;
  const int n = grid.steps;
  const int d = dynamics.state_dim;
  const int k = dynamics.noise_dim;
  ens.states.resize(static_cast<size_t>(n_paths) * (n + 1) * d);
  ens.noise.resize(static_cast<size_t>(n_paths) * n * k);
  ens.exit_index.assign(n_paths, kNeverExits);
  out.controls.resize(static_cast<size_t>(n_paths) * n * control_dim);

  const double dt = grid.dt();
  const Mat step_semigroup = expm(dt * dynamics.drift_matrix);
  const double sqrt_dt = std::sqrt(dt);
  const rng::Key key{seed, rng::kDomainForwardNoise};
  const bool has_drift = static_cast<bool>(dynamics.drift_fn);

  std::atomic<int64_t> overflow_count{0};
  std::atomic<bool> failed{false};
  std::string failure_message;
  std::mutex failure_mutex;

  parallel_for(n_paths, threads, [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    Vec x(d), incr(k), pre(d), u(control_dim);
    for (std::ptrdiff_t p = lo; p < hi && !failed.load(std::memory_order_relaxed); ++p) {
      x = x0;
      ens.state(static_cast<int>(p), 0) = x;
      bool dead = false;
      for (int i = 0; i < n; ++i) {
        double* w = ens.noise.data() + (static_cast<size_t>(p) * n + i) * k;
        rng::fill_normals(key, stream_offset + static_cast<uint64_t>(p),
                          static_cast<uint64_t>(i), {w, static_cast<size_t>(k)});
        for (int j = 0; j < k; ++j) w[j] *= sqrt_dt;
        double* uc = out.controls.data() +
                     (static_cast<size_t>(p) * n + i) * control_dim;
        if (!dead) {
          try {
            u = source(x, grid.node(i));
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failed.exchange(true)) {
              failure_message = "control source failed at t=" +
                                std::to_string(grid.node(i)) + ", state=[";
              for (int j = 0; j < d; ++j)
                failure_message += (j ? "," : "") + std::to_string(x[j]);
              failure_message += "]: " + std::string(e.what());
            }
            return;
          }
          for (int j = 0; j < control_dim; ++j) uc[j] = u[j];
          incr = Eigen::Map<const Vec>(w, k) + dt * channel(x, u);
          pre = x + dynamics.diffusion * incr;
          if (has_drift) pre += dt * dynamics.drift_fn(x);
          x = step_semigroup * pre;
          if (!x.allFinite()) {
            dead = true;
            overflow_count.fetch_add(1, std::memory_order_relaxed);
            x = ens.state(static_cast<int>(p), i);
          }
        } else {
          for (int j = 0; j < control_dim; ++j) uc[j] = 0.0;
        }
        ens.state(static_cast<int>(p), i + 1) = x;
      }
    }
  });
  if (failed.load()) throw std::runtime_error(failure_message);
  ens.overflow_paths = overflow_count.load();
  ens.overflow = ens.overflow_paths > 0;
  return out;
}

}  // namespace qbsde::fwd
