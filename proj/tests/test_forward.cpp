#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qbsde/fixtures.hpp"
#include "qbsde/forward.hpp"

using namespace qbsde;
using Catch::Approx;

namespace {

model::ProblemSpec frozen_spec(double a, double sigma) {
  auto spec = fixtures::affine(1.0, 0.0);
  spec.drift_matrix = Mat::Constant(1, 1, a);
  spec.diffusion = Mat::Constant(1, 1, sigma);
  return spec;
}

}  // namespace

TEST_CASE("no dynamics means constant paths") {
  auto spec = frozen_spec(0.0, 0.0);
  const auto ens = fwd::simulate(spec, {1.0, 16}, 50, 1, Vec::Constant(1, 0.7));
  for (int p = 0; p < ens.n_paths; ++p)
    for (int i = 0; i <= 16; ++i) REQUIRE(ens.state(p, i)[0] == 0.7);
}

TEST_CASE("pure linear drift reproduces the exponential exactly") {
  auto spec = frozen_spec(-1.0, 0.0);
  const auto ens = fwd::simulate(spec, {1.0, 64}, 3, 1, Vec::Constant(1, 1.0));
  REQUIRE(ens.state(0, 64)[0] == Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("OU moments match the closed form within 3 standard errors") {
  auto spec = frozen_spec(-1.0, 1.0);
  const int n_paths = 100000;
  const double T = 1.0;
  const auto ens = fwd::simulate(spec, fwd::TimeGrid::with_density(T, 512), n_paths, 77,
                                 Vec::Constant(1, 2.0), 2);
  double sum = 0.0, sumsq = 0.0;
  for (int p = 0; p < n_paths; ++p) {
    const double x = ens.state(p, 512)[0];
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n_paths;
  const double var = sumsq / n_paths - mean * mean;
  const double mean_exact = 2.0 * std::exp(-T);
  const double var_exact = (1.0 - std::exp(-2.0 * T)) / 2.0;
  const double se_mean = std::sqrt(var_exact / n_paths);
  const double se_var = var_exact * std::sqrt(2.0 / n_paths);
  REQUIRE(std::abs(mean - mean_exact) < 3.0 * se_mean);
  REQUIRE(std::abs(var - var_exact) < 3.0 * se_var);
}

TEST_CASE("simulation is bit-identical across thread counts and blocks") {
  auto spec = frozen_spec(-1.0, 1.0);
  const auto a = fwd::simulate(spec, {2.0, 32}, 500, 9, Vec::Zero(1), 1);
  const auto b = fwd::simulate(spec, {2.0, 32}, 500, 9, Vec::Zero(1), 4);
  REQUIRE(a.states == b.states);
  REQUIRE(a.noise == b.noise);

  // Two half blocks with stream offsets reproduce the big run exactly.
  const auto lo = fwd::simulate(spec, {2.0, 32}, 250, 9, Vec::Zero(1), 2, 0);
  const auto hi = fwd::simulate(spec, {2.0, 32}, 250, 9, Vec::Zero(1), 2, 250);
  for (int p = 0; p < 250; ++p) {
    REQUIRE(lo.state(p, 32)[0] == a.state(p, 32)[0]);
    REQUIRE(hi.state(p, 32)[0] == a.state(p + 250, 32)[0]);
  }
}

TEST_CASE("deterministic Richardson: error halves when dt halves") {
  auto spec = frozen_spec(0.0, 0.0);
  spec.drift_fn = [](const Vec& x) { return Vec::Constant(1, std::sin(x[0])); };
  spec.drift_jacobian = [](const Vec& x) { return Mat::Constant(1, 1, std::cos(x[0])); };
  spec.drift_matrix = Mat::Constant(1, 1, -0.5);
  auto terminal = [&](int steps) {
    return fwd::simulate(spec, {1.0, steps}, 1, 1, Vec::Constant(1, 0.3)).state(0, steps)[0];
  };
  const double ref = terminal(4096);
  const double err_coarse = std::abs(terminal(32) - ref);
  const double err_fine = std::abs(terminal(64) - ref);
  const double ratio = err_coarse / err_fine;
  REQUIRE(ratio > 1.4);
  REQUIRE(ratio < 2.6);
}

TEST_CASE("variational process: linear case is exact, dissipative case bounded") {
  auto spec = frozen_spec(-1.0, 0.5);
  const auto ens = fwd::simulate(spec, {2.0, 64}, 200, 5, Vec::Zero(1));
  const auto var = fwd::simulate_variational(spec, ens, Vec::Constant(1, 1.0));
  for (int i = 0; i <= 64; ++i)
    REQUIRE(var.at(0, i)[0] == Approx(std::exp(-2.0 * i / 64.0)).epsilon(1e-12));

  auto nonlinear = fixtures::cosine_ou();
  nonlinear.drift_fn = [](const Vec& x) { return Vec::Constant(1, -0.3 * std::sin(x[0])); };
  nonlinear.drift_jacobian = [](const Vec& x) {
    return Mat::Constant(1, 1, -0.3 * std::cos(x[0]));
  };
  const auto ens2 = fwd::simulate(nonlinear, {2.0, 64}, 500, 5, Vec::Zero(1));
  const auto var2 = fwd::simulate_variational(nonlinear, ens2, Vec::Constant(1, 1.0));
  double sup = 0.0;
  for (int p = 0; p < 500; ++p)
    for (int i = 0; i <= 64; ++i) sup = std::max(sup, std::abs(var2.at(p, i)[0]));
  REQUIRE(sup <= 1.0 * (1.0 + 10.0 * (2.0 / 64.0)));
}

TEST_CASE("variational process agrees with a common-noise finite difference") {
  auto spec = fixtures::cosine_ou();
  spec.drift_fn = [](const Vec& x) { return Vec::Constant(1, -0.3 * std::sin(x[0])); };
  spec.drift_jacobian = [](const Vec& x) {
    return Mat::Constant(1, 1, -0.3 * std::cos(x[0]));
  };
  const double eps_fd = 1e-4;
  const fwd::TimeGrid grid{1.0, 32};
  const Vec x0 = Vec::Constant(1, 0.4);
  const Vec h = Vec::Constant(1, 1.0);
  const auto base = fwd::simulate(spec, grid, 100, 13, x0);
  const auto var = fwd::simulate_variational(spec, base, h);
  const auto up = fwd::simulate(spec, grid, 100, 13, x0 + eps_fd * h);
  const auto down = fwd::simulate(spec, grid, 100, 13, x0 - eps_fd * h);
  double worst = 0.0;
  for (int p = 0; p < 100; ++p)
    for (int i = 0; i <= 32; ++i) {
      const double fd = (up.state(p, i)[0] - down.state(p, i)[0]) / (2.0 * eps_fd);
      worst = std::max(worst, std::abs(fd - var.at(p, i)[0]) /
                                  (1.0 + std::abs(var.at(p, i)[0])));
    }
  REQUIRE(worst <= std::max(1e-3, 5.0 * eps_fd));
}

TEST_CASE("first exit: immediate, never, and distributional cases") {
  auto spec = frozen_spec(-1.0, 1.0);
  const auto domain = model::Region::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));

  auto outside = fwd::first_exit(
      fwd::simulate(spec, {1.0, 8}, 20, 3, Vec::Constant(1, 2.0)), domain);
  for (int p = 0; p < 20; ++p) REQUIRE(outside.exit_index[p] == 0);

  auto whole = fwd::first_exit(
      fwd::simulate(spec, {1.0, 8}, 20, 3, Vec::Zero(1)),
      model::Region::box(Vec::Constant(1, -1e9), Vec::Constant(1, 1e9)));
  for (int p = 0; p < 20; ++p) REQUIRE(whole.exit_index[p] == fwd::kNeverExits);

  // Exit fraction vs a 10x-finer reference grid, 3 standard errors.
  const int n_paths = 20000;
  auto coarse = fwd::first_exit(
      fwd::simulate(spec, fwd::TimeGrid::with_density(4.0, 16), n_paths, 21, Vec::Zero(1), 2),
      domain);
  auto fine = fwd::first_exit(
      fwd::simulate(spec, fwd::TimeGrid::with_density(4.0, 160), n_paths, 22, Vec::Zero(1), 2),
      domain);
  auto fraction = [](const fwd::PathEnsemble& e) {
    int hits = 0;
    for (int p = 0; p < e.n_paths; ++p)
      if (e.exit_index[p] != fwd::kNeverExits) ++hits;
    return static_cast<double>(hits) / e.n_paths;
  };
  const double f_coarse = fraction(coarse);
  const double f_fine = fraction(fine);
  const double se = std::sqrt(f_fine * (1.0 - f_fine) / n_paths);
  // Grid exit detection has a known O(sqrt(dt)) bias; allow it on top of CLT noise.
  const double bias_allowance = 0.5 * std::sqrt(4.0 / 16.0 / 4.0);
  REQUIRE(std::abs(f_coarse - f_fine) < 3.0 * se + bias_allowance);
  REQUIRE(f_fine > 0.5);  // most OU paths leave (-1,1) by T = 4

  // Idempotence.
  const auto twice = fwd::first_exit(coarse, domain);
  REQUIRE(twice.exit_index == coarse.exit_index);
}

TEST_CASE("controlled simulation with r = 0 matches the uncontrolled run") {
  auto spec = frozen_spec(-1.0, 1.0);
  const auto plain = fwd::simulate(spec, {1.0, 32}, 200, 31, Vec::Zero(1));
  const auto controlled = fwd::simulate_controlled_core(
      spec, [](const Vec&, const Vec&) { return Vec::Zero(1); },
      [](const Vec&, double) { return Vec::Zero(1); }, 1, {1.0, 32}, 200, 31, Vec::Zero(1));
  REQUIRE(controlled.paths.states == plain.states);
}

TEST_CASE("constant control shifts the OU mean by u0 (1 - e^{-T})") {
  auto spec = frozen_spec(-1.0, 1.0);
  const double u0 = 0.8;
  const int n_paths = 40000;
  const double T = 1.0;
  const auto run = fwd::simulate_controlled_core(
      spec, [](const Vec&, const Vec& u) { return u; },
      [u0](const Vec&, double) { return Vec::Constant(1, u0); }, 1,
      fwd::TimeGrid::with_density(T, 256), n_paths, 47, Vec::Constant(1, 2.0), 2);
  double mean = 0.0;
  for (int p = 0; p < n_paths; ++p) mean += run.paths.state(p, run.paths.grid.steps)[0];
  mean /= n_paths;
  const double expected = 2.0 * std::exp(-T) + u0 * (1.0 - std::exp(-T));
  const double se = std::sqrt(0.43 / n_paths);
  REQUIRE(std::abs(mean - expected) < 3.0 * se + 2e-3);
}

TEST_CASE("linear feedback doubles the mean-reversion rate") {
  auto spec = frozen_spec(-1.0, 0.0);  // deterministic: clean slope
  const auto run = fwd::simulate_controlled_core(
      spec, [](const Vec&, const Vec& u) { return u; },
      [](const Vec& x, double) { return Vec(-x); }, 1,
      fwd::TimeGrid::with_density(1.0, 512), 1, 53, Vec::Constant(1, 1.0));
  const double x_end = run.paths.state(0, 512)[0];
  const double rate = -std::log(std::abs(x_end)) / 1.0;  // A = -1 plus feedback -1
  REQUIRE(rate == Approx(2.0).epsilon(0.1));
}

TEST_CASE("control source failure carries the offending state") {
  auto spec = frozen_spec(-1.0, 1.0);
  REQUIRE_THROWS_WITH(
      fwd::simulate_controlled_core(
          spec, [](const Vec&, const Vec& u) { return u; },
          [](const Vec&, double) -> Vec { throw std::runtime_error("boom"); }, 1,
          {1.0, 8}, 4, 3, Vec::Constant(1, 0.25)),
      Catch::Matchers::ContainsSubstring("state=[0.25") &&
          Catch::Matchers::ContainsSubstring("boom"));
}
