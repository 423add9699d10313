#pragma once
// Problem instances: forward dynamics, quadratic generator, terminal data,
// structural constants, and the sampled audit of the standing assumptions.
//
// All types are immutable values after construction; every operation here is
// a pure function of (spec, seed) and safe to call concurrently.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbsde/linalg.hpp"
#include "qbsde/rng.hpp"

namespace qbsde::model {

/// Structural constants of the generator and terminal data.
///   growth_c : growth constant C (dimensionless)
///   alpha    : exponent in (0,1) bounding the y-derivative growth
///   lambda   : strict monotonicity rate (1/time)
///   k_bound  : bound K on |F(x,0,0)|
///   m_bound  : bound M on |xi|
struct Constants {
  double growth_c = 1.0;
  double alpha = 0.5;
  double lambda = 1.0;
  double k_bound = 0.0;
  double m_bound = 0.0;

  void validate() const {
    if (!(growth_c >= 0.0)) throw std::invalid_argument("constants: C must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("constants: alpha must lie in (0,1)");
    if (!(lambda > 0.0)) throw std::invalid_argument("constants: lambda must be > 0");
    if (!(k_bound >= 0.0)) throw std::invalid_argument("constants: K must be >= 0");
    if (!(m_bound >= 0.0)) throw std::invalid_argument("constants: M must be >= 0");
  }
};

/// Closed-form a priori bounds implied by the constants.
struct BoundSet {
  double y_bound = 0.0;         // M + K/lambda
  double beta = 0.0;            // M + C(1+M)/lambda, truncation prefactor
  double gradient_bound = 0.0;  // C/lambda
};

/// Axis-aligned box or ball used as the exit domain of a stopped problem.
struct Region {
  enum class Kind { box, ball };
  Kind kind = Kind::box;
  Vec lower;   // box
  Vec upper;   // box
  Vec center;  // ball
  double radius = 0.0;

  static Region box(Vec lo, Vec hi) {
    Region r;
    r.kind = Kind::box;
    r.lower = std::move(lo);
    r.upper = std::move(hi);
    return r;
  }
  static Region ball(Vec c, double radius) {
    Region r;
    r.kind = Kind::ball;
    r.center = std::move(c);
    r.radius = radius;
    return r;
  }

  bool contains(const Vec& x) const {
    if (kind == Kind::ball) return (x - center).norm() <= radius;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x[i] < lower[i] || x[i] > upper[i]) return false;
    return true;
  }
};

struct Stopping {
  enum class Kind { infinite, exit };
  Kind kind = Kind::infinite;
  Region domain;  // meaningful only for Kind::exit

  static Stopping infinite() { return {}; }
  static Stopping exit(Region r) {
    Stopping s;
    s.kind = Kind::exit;
    s.domain = std::move(r);
    return s;
  }
  bool is_exit() const { return kind == Kind::exit; }
};

/// Generator F(x, y, z) with analytically supplied partial derivatives.
struct Generator {
  std::function<double(const Vec&, double, const Vec&)> f;
  std::function<Vec(const Vec&, double, const Vec&)> grad_x;
  std::function<double(const Vec&, double, const Vec&)> grad_y;
  std::function<Vec(const Vec&, double, const Vec&)> grad_z;
};

/// Finite-dimensional problem instance: state space R^d, noise space R^k.
struct ProblemSpec {
  int state_dim = 1;
  int noise_dim = 1;
  Mat drift_matrix;  // A, d x d
  std::function<Vec(const Vec&)> drift_fn;        // b
  std::function<Mat(const Vec&)> drift_jacobian;  // grad b
  Mat diffusion;  // sigma, d x k, constant
  Generator generator;
  std::function<double(const Vec&)> terminal_fn;  // xi, used when stopping = exit
  Stopping stopping;
  Constants constants;

  void validate() const {
    if (state_dim < 1 || noise_dim < 1)
      throw std::invalid_argument("spec: state_dim and noise_dim must be >= 1");
    if (drift_matrix.rows() != state_dim || drift_matrix.cols() != state_dim)
      throw std::invalid_argument("spec: drift_matrix must be d x d");
    if (diffusion.rows() != state_dim || diffusion.cols() != noise_dim)
      throw std::invalid_argument("spec: diffusion must be d x k");
    if (!generator.f) throw std::invalid_argument("spec: generator.f missing");
    constants.validate();
  }
};

/// Exact closed forms: y_bound = M + K/lambda, beta = M + C(1+M)/lambda,
/// gradient_bound = C/lambda. Pure function of the constants.
inline BoundSet theoretical_bounds(const Constants& c) {
  c.validate();
  return {c.m_bound + c.k_bound / c.lambda,
          c.m_bound + c.growth_c * (1.0 + c.m_bound) / c.lambda,
          c.growth_c / c.lambda};
}

inline BoundSet theoretical_bounds(const ProblemSpec& spec) {
  return theoretical_bounds(spec.constants);
}

/// Sampling cloud for the assumption audit: uniform on centred boxes.
struct SampleCloud {
  double x_half_width = 5.0;
  double y_half_width = 5.0;
  double z_half_width = 5.0;
};

struct AssumptionRecord {
  std::string name;
  int sample_count = 0;
  double worst_violation = -std::numeric_limits<double>::infinity();
  bool pass = true;
};

struct AssumptionReport {
  std::vector<AssumptionRecord> records;
  double tolerance = 1e-12;
  bool pass = true;

  const AssumptionRecord& record(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return r;
    throw std::out_of_range("no assumption record named " + name);
  }
};

namespace detail {

inline Vec uniform_vec(const rng::Key& key, uint64_t stream, uint64_t index,
                       uint32_t slot0, int dim, double half_width) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i)
    v[i] = (2.0 * rng::uniform(key, stream, index, slot0 + static_cast<uint32_t>(i)) - 1.0) *
           half_width;
  return v;
}

}  // namespace detail

/// Samples the standing assumptions on a documented uniform cloud and
/// records the worst signed violation of each inequality (<= 0 passes).
inline AssumptionReport validate_assumptions(const ProblemSpec& spec, int sample_count,
                                             uint64_t seed,
                                             const SampleCloud& cloud = {},
                                             double tolerance = 1e-12) {
  spec.validate();
  if (sample_count < 1) throw std::invalid_argument("sample_count must be >= 1");
  const auto& k = spec.constants;

  AssumptionReport report;
  report.tolerance = tolerance;
  report.records = {
      {"growth", sample_count},        // |F| <= C(1+|y|+|z|^2)
      {"grad_z", sample_count},        // |dF/dz| <= C(1+|z|)
      {"grad_y", sample_count},        // |dF/dy| <= C(1+|z|)^(2 alpha)
      {"monotonicity", sample_count},  // (y-y')(F(y)-F(y')) <= -lambda|y-y'|^2
      {"f_at_origin", sample_count},   // |F(x,0,0)| <= K
      {"dissipativity", sample_count}, // <(A + grad b(x))v, v> <= 0
      {"terminal_bound", 0},           // |xi| <= M on the exit domain
  };

  const rng::Key key{seed, rng::kDomainValidation};
  const int d = spec.state_dim;
  const int kz = spec.noise_dim;

  for (int s = 0; s < sample_count; ++s) {
    const auto idx = static_cast<uint64_t>(s);
    const Vec x = detail::uniform_vec(key, 0, idx, 0, d, cloud.x_half_width);
    const Vec z = detail::uniform_vec(key, 1, idx, 0, kz, cloud.z_half_width);
    const double y =
        (2.0 * rng::uniform(key, 2, idx, 0) - 1.0) * cloud.y_half_width;
    const double y2 =
        (2.0 * rng::uniform(key, 2, idx, 1) - 1.0) * cloud.y_half_width;
    const Vec v = detail::uniform_vec(key, 3, idx, 0, d, 1.0);

    const double f = spec.generator.f(x, y, z);
    auto& growth = report.records[0];
    growth.worst_violation =
        std::max(growth.worst_violation,
                 std::abs(f) - k.growth_c * (1.0 + std::abs(y) + z.squaredNorm()));

    if (spec.generator.grad_z) {
      auto& gz = report.records[1];
      gz.worst_violation = std::max(
          gz.worst_violation,
          spec.generator.grad_z(x, y, z).norm() - k.growth_c * (1.0 + z.norm()));
    }
    if (spec.generator.grad_y) {
      auto& gy = report.records[2];
      gy.worst_violation =
          std::max(gy.worst_violation,
                   std::abs(spec.generator.grad_y(x, y, z)) -
                       k.growth_c * std::pow(1.0 + z.norm(), 2.0 * k.alpha));
    }

    auto& mono = report.records[3];
    const double df = spec.generator.f(x, y, z) - spec.generator.f(x, y2, z);
    mono.worst_violation =
        std::max(mono.worst_violation,
                 (y - y2) * df + k.lambda * (y - y2) * (y - y2));

    auto& f00 = report.records[4];
    f00.worst_violation =
        std::max(f00.worst_violation,
                 std::abs(spec.generator.f(x, 0.0, Vec::Zero(kz))) - k.k_bound);

    auto& diss = report.records[5];
    Mat jac = spec.drift_jacobian ? spec.drift_jacobian(x) : Mat::Zero(d, d);
    diss.worst_violation =
        std::max(diss.worst_violation,
                 (v.transpose() * (spec.drift_matrix + jac) * v).value());

    if (spec.stopping.is_exit() && spec.terminal_fn) {
      auto& term = report.records[6];
      Vec xt = x;
      if (spec.stopping.domain.kind == Region::Kind::box) {
        for (int i = 0; i < d; ++i) {
          const double u = rng::uniform(key, 4, idx, static_cast<uint32_t>(i));
          xt[i] = spec.stopping.domain.lower[i] +
                  u * (spec.stopping.domain.upper[i] - spec.stopping.domain.lower[i]);
        }
      } else {
        xt = spec.stopping.domain.center +
             detail::uniform_vec(key, 4, idx, 0, d, spec.stopping.domain.radius);
        const double norm = (xt - spec.stopping.domain.center).norm();
        if (norm > spec.stopping.domain.radius)
          xt = spec.stopping.domain.center +
               (xt - spec.stopping.domain.center) * (spec.stopping.domain.radius / norm);
      }
      term.sample_count++;
      term.worst_violation = std::max(
          term.worst_violation, std::abs(spec.terminal_fn(xt)) - k.m_bound);
    }
  }

  report.pass = true;
  for (auto& r : report.records) {
    if (r.sample_count == 0)
      r.worst_violation = 0.0;  // nothing sampled, vacuously satisfied
    r.pass = r.worst_violation <= tolerance;
    report.pass = report.pass && r.pass;
  }
  return report;
}

/// Sampled supremum of (y-y')(F(x,y,z)-F(x,y',z)) / |y-y'|^2 over y != y'.
/// A spec is lambda-monotone in sample iff the returned value is <= -lambda.
inline double monotonicity_margin(const ProblemSpec& spec, int sample_count,
                                  uint64_t seed, const SampleCloud& cloud = {}) {
  spec.validate();
  if (sample_count < 1) throw std::invalid_argument("sample_count must be >= 1");
  const rng::Key key{seed, rng::kDomainValidation};
  double margin = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < sample_count; ++s) {
    const auto idx = static_cast<uint64_t>(s);
    const Vec x = detail::uniform_vec(key, 10, idx, 0, spec.state_dim, cloud.x_half_width);
    const Vec z = detail::uniform_vec(key, 11, idx, 0, spec.noise_dim, cloud.z_half_width);
    const double y = (2.0 * rng::uniform(key, 12, idx, 0) - 1.0) * cloud.y_half_width;
    double y2 = (2.0 * rng::uniform(key, 12, idx, 1) - 1.0) * cloud.y_half_width;
    if (y == y2) y2 += 0.5 * cloud.y_half_width + 1e-6;
    const double quot = (y - y2) *
                        (spec.generator.f(x, y, z) - spec.generator.f(x, y2, z)) /
                        ((y - y2) * (y - y2));
    margin = std::max(margin, quot);
  }
  return margin;
}

}  // namespace qbsde::model
