#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qbsde/fixtures.hpp"
#include "qbsde/mild.hpp"
#include "qbsde/oracle.hpp"

using namespace qbsde;
using Catch::Approx;

namespace {

mild::EvaluateOptions small_eval(int paths = 8000, int spu = 16) {
  mild::EvaluateOptions opts;
  opts.solve.n_paths = paths;
  opts.solve.blocks = 4;
  opts.solve.steps_per_unit = spu;
  opts.solve.threads = 2;
  return opts;
}

Mat points_1d(std::initializer_list<double> xs) {
  Mat m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST_CASE("constant fixed point: F = -lambda y + lambda c gives v = c, g = 0") {
  const double lambda = 1.0, c = 0.7, eps = 0.04;
  const auto spec = fixtures::affine(lambda, lambda * c);
  const auto field = mild::evaluate_value(spec, points_1d({-1.0, 0.0, 1.0}), eps, {}, 3,
                                          small_eval());
  for (const auto& pt : field.points) {
    REQUIRE_FALSE(pt.failed);
    REQUIRE(std::abs(pt.value - c) <= eps + 3.0 * pt.ci);
    REQUIRE(std::abs(pt.grad_sigma[0]) <= 0.02);
  }
}

TEST_CASE("zero fixture is exact through the whole chain") {
  const auto spec = fixtures::affine(1.0, 0.0);  // F = -y, v = 0
  const auto field = mild::evaluate_value(spec, points_1d({-1.0, 0.0, 1.0}), 0.1, {}, 5,
                                          small_eval(2000, 8));
  for (const auto& pt : field.points) {
    REQUIRE(pt.value == 0.0);
    REQUIRE(pt.grad_sigma[0] == 0.0);
  }
  const auto res = mild::mild_residual(spec, Vec::Zero(1), 1.0, field, 7,
                                       {2000, 32, 2, 0.05});
  REQUIRE(std::abs(res.residual) <= 1e-10);
}

TEST_CASE("cosine fixture: value matches the quadrature oracle and is symmetric") {
  auto spec = fixtures::affine(1.0, 0.0);
  spec.generator.f = [](const Vec& x, double y, const Vec&) { return -y + std::cos(x[0]); };
  spec.generator.grad_x = [](const Vec& x, double, const Vec&) {
    return Vec::Constant(1, -std::sin(x[0]));
  };
  const double eps = 0.04;
  const auto field = mild::evaluate_value(spec, points_1d({-1.0, 0.0, 1.0}), eps, {}, 7,
                                          small_eval(16000, 16));
  const auto& left = field.points[0];
  const auto& mid = field.points[1];
  const auto& right = field.points[2];
  const double n_used = std::ceil(std::log(2.0 * 1.0 / eps));
  const double oracle_mid = oracle::quadrature_value_1d(spec, 0.0, n_used);
  REQUIRE(std::abs(mid.value - oracle_mid) <= std::max(0.01 * oracle_mid, eps) + 3.0 * mid.ci);
  REQUIRE(std::abs(left.value - right.value) <= eps + 3.0 * (left.ci + right.ci));
}

TEST_CASE("mild residual vanishes within band on the constant fixture") {
  const double lambda = 1.0, c = 0.7;
  const auto spec = fixtures::affine(lambda, lambda * c);
  const auto field = mild::evaluate_value(spec, points_1d({-1.5, -0.5, 0.5, 1.5}), 0.04, {},
                                          9, small_eval());
  double interp_tol = 0.04;
  for (const auto& pt : field.points)
    interp_tol = std::max(interp_tol, std::abs(field.value(pt.x) - pt.value) + 0.04);
  const auto res = mild::mild_residual(spec, Vec::Zero(1), 1.0, field, 11,
                                       {4000, 32, 2, 0.05});
  REQUIRE(std::abs(res.residual) <= interp_tol + 3.0 * res.ci);
}

TEST_CASE("extrapolation beyond the hull is rejected") {
  const auto spec = fixtures::affine(1.0, 0.7);
  const auto field = mild::evaluate_value(spec, points_1d({-0.1, 0.0, 0.1}), 0.1, {}, 13,
                                          small_eval(1000, 8));
  // Paths from x = 0 over T = 2 leave (-0.1, 0.1) almost surely.
  REQUIRE_THROWS_WITH(mild::mild_residual(spec, Vec::Zero(1), 2.0, field, 15,
                                          {1000, 16, 1, 0.05}),
                      Catch::Matchers::ContainsSubstring("hull"));
}

TEST_CASE("identification residuals are tight on the constant fixture") {
  const double lambda = 1.0, c = 0.7;
  const auto spec = fixtures::affine(lambda, lambda * c);
  const auto field = mild::evaluate_value(spec, points_1d({-2.0, -1.0, 0.0, 1.0, 2.0}),
                                          0.03, {}, 17, small_eval(16000, 16));
  const int n = 4 * 16;
  const auto ens = fwd::simulate(spec, {4.0, n}, 4000, 19, Vec::Zero(1), 2);
  const auto bsol = bsde::solve_backward(spec, ens, {}, {}, 2);
  mild::IdentificationOptions opts;
  opts.extrapolation_budget = 0.2;
  const auto ident = mild::identification_residual(spec, ens, bsol, field, opts);
  REQUIRE(ident.y_sup <= 0.06);
  REQUIRE(ident.z_sup <= 0.06);
  REQUIRE(ident.samples > 500);
}

TEST_CASE("identification statistics are stationary in time") {
  const auto spec = fixtures::cosine_ou();
  const auto field = mild::evaluate_value(
      spec, points_1d({-2.5, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5}), 0.04,
      {}, 21, small_eval(16000, 16));
  const int n = 5 * 16;
  const auto ens = fwd::simulate(spec, {5.0, n}, 4000, 23, Vec::Zero(1), 2);
  const auto bsol = bsde::solve_backward(spec, ens, {}, {}, 2);

  auto residual_at = [&](int i) {
    double worst = 0.0;
    int used = 0;
    for (int p = 0; p < ens.n_paths; p += 4) {
      const Vec x = ens.state(p, i);
      if (!field.in_hull(x)) continue;
      worst = std::max(worst, std::abs(bsol.y_at(p, i) - field.value(x)));
      ++used;
    }
    REQUIRE(used > 100);
    return worst;
  };
  const double early = residual_at(n / 4);
  const double late = residual_at(n / 2);
  REQUIRE(std::abs(early - late) <= 0.5 * (early + late) + 0.01);
}
