#pragma once
// Named problem instances used by the test suite and the CLI catalog.
// Every fixture passes validate_assumptions at tolerance 1e-12 with the
// constants it declares.

#include <cmath>

#include "qbsde/linalg.hpp"
#include "qbsde/model.hpp"

namespace qbsde::fixtures {

inline model::ProblemSpec ou_base_1d(double mean_reversion = -1.0, double sigma = 1.0) {
  model::ProblemSpec spec;
  spec.state_dim = 1;
  spec.noise_dim = 1;
  spec.drift_matrix = Mat::Constant(1, 1, mean_reversion);
  spec.diffusion = Mat::Constant(1, 1, sigma);
  return spec;
}

/// F(x, y, z) = -y + z^2 / (2 (1 + z^2)) + cos(x) over an OU forward.
/// C = 1, alpha = 1/4, lambda = 1, K = 1, M = 0.
inline model::ProblemSpec cosine_ou() {
  auto spec = ou_base_1d();
  spec.generator.f = [](const Vec& x, double y, const Vec& z) {
    return -y + 0.5 * z[0] * z[0] / (1.0 + z[0] * z[0]) + std::cos(x[0]);
  };
  spec.generator.grad_x = [](const Vec& x, double, const Vec&) {
    return Vec::Constant(1, -std::sin(x[0]));
  };
  spec.generator.grad_y = [](const Vec&, double, const Vec&) { return -1.0; };
  spec.generator.grad_z = [](const Vec&, double, const Vec& z) {
    const double denom = (1.0 + z[0] * z[0]);
    return Vec::Constant(1, z[0] / (denom * denom));
  };
  spec.constants = {1.0, 0.25, 1.0, 1.0, 0.0};
  return spec;
}

/// F(x, y, z) = -y + sin(x)/2 + z^2 / (4 (1 + z^2)): the assumption-audit
/// fixture. C = 1, alpha = 1/4, lambda = 1, K = 1, M = 0.
inline model::ProblemSpec sine_quadratic() {
  auto spec = ou_base_1d();
  spec.generator.f = [](const Vec& x, double y, const Vec& z) {
    return -y + 0.5 * std::sin(x[0]) + 0.25 * z[0] * z[0] / (1.0 + z[0] * z[0]);
  };
  spec.generator.grad_x = [](const Vec& x, double, const Vec&) {
    return Vec::Constant(1, 0.5 * std::cos(x[0]));
  };
  spec.generator.grad_y = [](const Vec&, double, const Vec&) { return -1.0; };
  spec.generator.grad_z = [](const Vec&, double, const Vec& z) {
    const double denom = (1.0 + z[0] * z[0]);
    return Vec::Constant(1, 0.5 * z[0] / (denom * denom));
  };
  spec.constants = {1.0, 0.25, 1.0, 1.0, 0.0};
  return spec;
}

/// F(x, y, z) = -lambda y + kappa: constant solution kappa / lambda.
inline model::ProblemSpec affine(double lambda = 1.0, double kappa = 1.0) {
  auto spec = ou_base_1d();
  spec.generator.f = [lambda, kappa](const Vec&, double y, const Vec&) {
    return -lambda * y + kappa;
  };
  spec.generator.grad_x = [](const Vec&, double, const Vec&) { return Vec::Zero(1); };
  spec.generator.grad_y = [lambda](const Vec&, double, const Vec&) { return -lambda; };
  spec.generator.grad_z = [](const Vec&, double, const Vec&) { return Vec::Zero(1); };
  spec.constants = {std::max(lambda, std::abs(kappa)), 0.25, lambda, std::abs(kappa), 0.0};
  return spec;
}

/// Nonlinear-in-y fixture: F = -1.5 y + sin(y)/2 + cos(x)/2 + 0.3 z^2/(1+z^2).
/// C = 2, alpha = 1/4, lambda = 1, K = 1/2, M = 0.
inline model::ProblemSpec sine_monotone() {
  auto spec = ou_base_1d();
  spec.generator.f = [](const Vec& x, double y, const Vec& z) {
    return -1.5 * y + 0.5 * std::sin(y) + 0.5 * std::cos(x[0]) +
           0.3 * z[0] * z[0] / (1.0 + z[0] * z[0]);
  };
  spec.generator.grad_x = [](const Vec& x, double, const Vec&) {
    return Vec::Constant(1, -0.5 * std::sin(x[0]));
  };
  spec.generator.grad_y = [](const Vec&, double y, const Vec&) {
    return -1.5 + 0.5 * std::cos(y);
  };
  spec.generator.grad_z = [](const Vec&, double, const Vec& z) {
    const double denom = (1.0 + z[0] * z[0]);
    return Vec::Constant(1, 0.6 * z[0] / (denom * denom));
  };
  spec.constants = {2.0, 0.25, 1.0, 0.5, 0.0};
  return spec;
}

/// Exit-time fixture: F = -lambda y, xi = 1 on the boundary of (-1, 1),
/// so Y_0 = E[e^{-lambda tau} 1_{tau <= n}]. M = 1, K = 0.
inline model::ProblemSpec exit_laplace(double lambda = 1.0) {
  auto spec = ou_base_1d();
  spec.generator.f = [lambda](const Vec&, double y, const Vec&) { return -lambda * y; };
  spec.generator.grad_x = [](const Vec&, double, const Vec&) { return Vec::Zero(1); };
  spec.generator.grad_y = [lambda](const Vec&, double, const Vec&) { return -lambda; };
  spec.generator.grad_z = [](const Vec&, double, const Vec&) { return Vec::Zero(1); };
  spec.terminal_fn = [](const Vec&) { return 1.0; };
  spec.stopping = model::Stopping::exit(
      model::Region::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)));
  spec.constants = {lambda, 0.25, lambda, 0.0, 1.0};
  return spec;
}

/// Quadratic Hamiltonian of the linear-quadratic control fixture
/// (r(x,u) = u, g(x,u) = x^2/(1+x^2) + u^2, U = R):
///   F(x, y, z) = x^2/(1+x^2) - z^2/4 - lambda y.
/// C = 1, alpha = 1/4, K = 1, M = 0 (for lambda >= 1/2).
inline model::ProblemSpec lq_hamiltonian(double lambda = 1.0) {
  auto spec = ou_base_1d();
  spec.generator.f = [lambda](const Vec& x, double y, const Vec& z) {
    return x[0] * x[0] / (1.0 + x[0] * x[0]) - 0.25 * z[0] * z[0] - lambda * y;
  };
  spec.generator.grad_x = [](const Vec& x, double, const Vec&) {
    const double denom = 1.0 + x[0] * x[0];
    return Vec::Constant(1, 2.0 * x[0] / (denom * denom));
  };
  spec.generator.grad_y = [lambda](const Vec&, double, const Vec&) { return -lambda; };
  spec.generator.grad_z = [](const Vec&, double, const Vec& z) {
    return Vec::Constant(1, -0.5 * z[0]);
  };
  spec.constants = {std::max(1.0, lambda), 0.25, lambda, 1.0, 0.0};
  return spec;
}

/// Two-dimensional spot-check fixture (d = k = 2).
inline model::ProblemSpec two_dim() {
  model::ProblemSpec spec;
  spec.state_dim = 2;
  spec.noise_dim = 2;
  spec.drift_matrix = -Mat::Identity(2, 2);
  spec.diffusion = Mat::Identity(2, 2);
  spec.generator.f = [](const Vec& x, double y, const Vec& z) {
    const double zs = z.squaredNorm();
    return -y + 0.4 * zs / (1.0 + zs) + 0.5 * std::cos(x[0]) + 0.5 * std::sin(x[1]);
  };
  spec.generator.grad_x = [](const Vec& x, double, const Vec&) {
    Vec g(2);
    g << -0.5 * std::sin(x[0]), 0.5 * std::cos(x[1]);
    return g;
  };
  spec.generator.grad_y = [](const Vec&, double, const Vec&) { return -1.0; };
  spec.generator.grad_z = [](const Vec&, double, const Vec& z) {
    const double denom = 1.0 + z.squaredNorm();
    return Vec(0.8 * z / (denom * denom));
  };
  spec.constants = {1.0, 0.25, 1.0, 1.0, 0.0};
  return spec;
}

/// Deterministic-forward fixture (A = 0, b = 0, sigma = 0) with
/// F = -lambda y + f(x), f = sin: gradients have an explicit integral form.
inline model::ProblemSpec deterministic_sine(double lambda = 1.0) {
  model::ProblemSpec spec;
  spec.state_dim = 1;
  spec.noise_dim = 1;
  spec.drift_matrix = Mat::Zero(1, 1);
  spec.diffusion = Mat::Zero(1, 1);
  spec.generator.f = [lambda](const Vec& x, double y, const Vec&) {
    return -lambda * y + std::sin(x[0]);
  };
  spec.generator.grad_x = [](const Vec& x, double, const Vec&) {
    return Vec::Constant(1, std::cos(x[0]));
  };
  spec.generator.grad_y = [lambda](const Vec&, double, const Vec&) { return -lambda; };
  spec.generator.grad_z = [](const Vec&, double, const Vec&) { return Vec::Zero(1); };
  spec.constants = {std::max(1.0, lambda), 0.25, lambda, 1.0, 0.0};
  return spec;
}

}  // namespace qbsde::fixtures
