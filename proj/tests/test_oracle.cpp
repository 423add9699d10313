#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qbsde/fixtures.hpp"
#include "qbsde/oracle.hpp"

using namespace qbsde;
using Catch::Approx;

TEST_CASE("gauss-hermite integrates normal moments exactly") {
  const auto rule = oracle::gauss_hermite(7);
  REQUIRE(rule.weights.sum() == Approx(1.0).margin(1e-12));
  double m2 = 0.0, m4 = 0.0;
  for (int q = 0; q < 7; ++q) {
    m2 += rule.weights[q] * rule.nodes[q] * rule.nodes[q];
    m4 += rule.weights[q] * std::pow(rule.nodes[q], 4);
  }
  REQUIRE(m2 == Approx(1.0).margin(1e-12));
  REQUIRE(m4 == Approx(3.0).margin(1e-10));
}

TEST_CASE("tree: deterministic ODE limits") {
  auto spec = fixtures::affine(1.0, 0.0);
  spec.diffusion = Mat::Zero(1, 1);
  const double c = 1.2, T = 1.0;
  const auto res = oracle::tree_solve(spec, 0.0, T, 64, 3, [c](double) { return c; });
  REQUIRE(res.y0 == Approx(c * std::exp(-T)).margin(2.0 * c / 64.0));

  auto affine = fixtures::affine(1.0, 1.0);
  affine.diffusion = Mat::Zero(1, 1);
  const auto res2 = oracle::tree_solve(affine, 0.0, T, 64, 3);
  REQUIRE(res2.y0 == Approx(1.0 - std::exp(-T)).margin(2.0 / 64.0));
}

TEST_CASE("tree: quadrature order 5 vs 7 agree to 1e-4 on the cosine fixture") {
  const auto spec = fixtures::cosine_ou();
  const auto q5 = oracle::tree_solve(spec, 0.0, 2.0, 32, 5);
  const auto q7 = oracle::tree_solve(spec, 0.0, 2.0, 32, 7);
  REQUIRE(std::abs(q5.y0 - q7.y0) < 1e-4);
}

TEST_CASE("tree: non-recombining variant agrees with the lattice") {
  // Same problem both ways: a zero drift function forces the non-recombining
  // representation, a null one selects the lattice.
  auto spec = fixtures::cosine_ou();
  const auto lattice = oracle::tree_solve(spec, 0.1, 1.0, 7, 7);
  spec.drift_fn = [](const Vec&) { return Vec::Zero(1); };
  spec.drift_jacobian = [](const Vec&) { return Mat::Zero(1, 1); };
  const auto tree = oracle::tree_solve(spec, 0.1, 1.0, 7, 7);  // 7^7 nodes
  REQUIRE(lattice.y0 == Approx(tree.y0).margin(1e-4));
}

TEST_CASE("tree: node budget is enforced") {
  auto spec = fixtures::cosine_ou();
  spec.drift_fn = [](const Vec&) { return Vec::Zero(1); };
  REQUIRE_THROWS_WITH(oracle::tree_solve(spec, 0.0, 1.0, 12, 7),
                      Catch::Matchers::ContainsSubstring("budget"));
}

TEST_CASE("quadrature value: constant, odd, and frozen cosine cases") {
  // f constant: kappa (1 - e^{-lambda T}) / lambda exactly.
  const auto affine = fixtures::affine(1.0, 0.7);
  REQUIRE(oracle::quadrature_value_1d(affine, 0.0, 8.0) ==
          Approx(0.7 * (1.0 - std::exp(-8.0))).margin(1e-7));

  // f odd, x = 0: symmetric OU marginals integrate it to zero.
  auto odd = fixtures::affine(1.0, 0.0);
  odd.generator.f = [](const Vec& x, double y, const Vec&) {
    return -y + x[0] * std::exp(-x[0] * x[0]);
  };
  REQUIRE(oracle::quadrature_value_1d(odd, 0.0, 6.0) == Approx(0.0).margin(1e-9));

  // f = cos over the standard OU: frozen fixture value.
  auto cosine = fixtures::affine(1.0, 0.0);
  cosine.generator.f = [](const Vec& x, double y, const Vec&) {
    return -y + std::cos(x[0]);
  };
  REQUIRE(oracle::quadrature_value_1d(cosine, 0.0, 8.0) ==
          Approx(0.848611508444293).margin(1e-6));
}

TEST_CASE("quadrature value rejects z-dependent drivers") {
  REQUIRE_THROWS_WITH(oracle::quadrature_value_1d(fixtures::cosine_ou(), 0.0, 4.0),
                      Catch::Matchers::ContainsSubstring("-lambda y + f(x)"));
}

TEST_CASE("finite-difference elliptic solver: constant solution to 1e-8") {
  // F = -lambda v + lambda c has v = c.
  auto spec = fixtures::affine(1.0, 0.0);
  const double c = 0.8;
  spec.generator.f = [c](const Vec&, double y, const Vec&) { return -y + c; };
  const auto res = oracle::fd_hjb_1d(spec, -4.0, 4.0, 129);
  for (size_t i = res.grid.size() / 4; i < 3 * res.grid.size() / 4; ++i)
    REQUIRE(res.values[i] == Approx(c).margin(1e-8));
}

TEST_CASE("finite-difference solver is insensitive to boundary placement") {
  const auto spec = fixtures::lq_hamiltonian(1.0);
  // Stationary OU deviation is 1/sqrt(2); 5 and 7 standard deviations out.
  const auto narrow = oracle::fd_hjb_1d(spec, -3.6, 3.6, 257);
  const auto wide = oracle::fd_hjb_1d(spec, -5.0, 5.0, 257);
  for (double x : {-1.0, -0.5, 0.0, 0.5, 1.0})
    REQUIRE(std::abs(narrow.value_at(x) - wide.value_at(x)) < 1e-4);
}

TEST_CASE("oracle outputs are deterministic") {
  const auto spec = fixtures::cosine_ou();
  const auto a = oracle::tree_solve(spec, 0.0, 2.0, 32, 7);
  const auto b = oracle::tree_solve(spec, 0.0, 2.0, 32, 7);
  REQUIRE(a.y0 == b.y0);
  const auto qa = oracle::quadrature_value_1d(fixtures::affine(1.0, 0.5), 0.3, 5.0);
  const auto qb = oracle::quadrature_value_1d(fixtures::affine(1.0, 0.5), 0.3, 5.0);
  REQUIRE(qa == qb);
}
