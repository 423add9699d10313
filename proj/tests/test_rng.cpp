#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "qbsde/rng.hpp"

using namespace qbsde;

TEST_CASE("philox blocks are deterministic and key sensitive") {
  const auto a = rng::philox4x32({1, 2, 3, 4}, {5, 6});
  const auto b = rng::philox4x32({1, 2, 3, 4}, {5, 6});
  REQUIRE(a == b);
  const auto c = rng::philox4x32({1, 2, 3, 4}, {5, 7});
  REQUIRE(a != c);
  const auto d = rng::philox4x32({1, 2, 3, 5}, {5, 6});
  REQUIRE(a != d);
}

TEST_CASE("streams and indices do not collide") {
  const rng::Key key{42, rng::kDomainForwardNoise};
  std::set<uint64_t> seen;
  for (uint64_t stream = 0; stream < 64; ++stream)
    for (uint64_t idx = 0; idx < 64; ++idx) {
      const double u = rng::uniform(key, stream, idx, 0);
      seen.insert(static_cast<uint64_t>(u * (1ull << 62)));
    }
  REQUIRE(seen.size() == 64 * 64);
}

TEST_CASE("uniforms live strictly inside (0,1)") {
  const rng::Key key{7, 1};
  for (int i = 0; i < 10000; ++i) {
    const double u = rng::uniform(key, 3, static_cast<uint64_t>(i), 1);
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("normals match standard moments at 3 sigma") {
  const rng::Key key{2024, rng::kDomainForwardNoise};
  const int n = 200000;
  std::vector<double> buf(2);
  double sum = 0.0, sumsq = 0.0, sumcube = 0.0;
  for (int i = 0; i < n / 2; ++i) {
    rng::fill_normals(key, 0, static_cast<uint64_t>(i), buf);
    for (double z : buf) {
      sum += z;
      sumsq += z * z;
      sumcube += z * z * z;
    }
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  const double skew = sumcube / n;
  REQUIRE(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  REQUIRE(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
  REQUIRE(std::abs(skew) < 3.0 * std::sqrt(15.0 / n));
}

TEST_CASE("odd-length normal fills use the same leading draws") {
  const rng::Key key{11, 5};
  std::vector<double> three(3), four(4);
  rng::fill_normals(key, 9, 1234, three);
  rng::fill_normals(key, 9, 1234, four);
  REQUIRE(three[0] == four[0]);
  REQUIRE(three[1] == four[1]);
  REQUIRE(three[2] == four[2]);
}
