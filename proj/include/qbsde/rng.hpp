#pragma once
// Counter-based random number generation (Philox 4x32-10).
//
// Every draw is a pure function of (seed, domain, stream, index), so path
// ensembles are reproducible regardless of how the path loop is scheduled.
// Streams map to path indices, the index to the time step, and the domain
// tag keeps independent consumers (forward noise, sampling clouds, ...)
// from colliding on the same counters.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace qbsde::rng {

namespace detail {

inline constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
  const uint64_t p = static_cast<uint64_t>(a) * static_cast<uint64_t>(b);
  hi = static_cast<uint32_t>(p >> 32);
  lo = static_cast<uint32_t>(p);
}

}  // namespace detail

/// One Philox 4x32 block with 10 rounds.
inline std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr,
                                          std::array<uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo(detail::kPhiloxM0, ctr[0], hi0, lo0);
    detail::mulhilo(detail::kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += detail::kPhiloxW0;
    key[1] += detail::kPhiloxW1;
  }
  return ctr;
}

/// Maps two 32-bit words to a double in the open interval (0,1).
inline double u01(uint32_t a, uint32_t b) {
  const uint64_t x = (static_cast<uint64_t>(a) << 32) | b;
  return (static_cast<double>(x >> 12) + 0.5) * 0x1.0p-52;
}

/// Identifies an independent random source derived from one user seed.
struct Key {
  uint64_t seed = 0;
  uint32_t domain = 0;

  std::array<uint32_t, 2> words() const {
    return {static_cast<uint32_t>(seed) ^ domain,
            static_cast<uint32_t>(seed >> 32)};
  }
};

// Domain tags used across the library.
inline constexpr uint32_t kDomainForwardNoise = 0x464E4F49u;
inline constexpr uint32_t kDomainValidation = 0x56414C44u;
inline constexpr uint32_t kDomainSubsample = 0x53554253u;

namespace detail {

inline std::array<uint32_t, 4> counter(uint64_t stream, uint64_t index,
                                       uint32_t block) {
  return {static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32),
          static_cast<uint32_t>(index),
          static_cast<uint32_t>(index >> 32) ^ block};
}

}  // namespace detail

/// Uniform (0,1) draw number `slot` for (stream, index).
inline double uniform(const Key& key, uint64_t stream, uint64_t index,
                      uint32_t slot) {
  const auto words =
      philox4x32(detail::counter(stream, index, slot >> 1), key.words());
  return (slot & 1u) ? u01(words[2], words[3]) : u01(words[0], words[1]);
}

/// Fills `out` with standard normal draws for (stream, index) via Box-Muller.
inline void fill_normals(const Key& key, uint64_t stream, uint64_t index,
                         std::span<double> out) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (size_t j = 0; j < out.size(); j += 2) {
    const auto words = philox4x32(
        detail::counter(stream, index, static_cast<uint32_t>(j / 2)),
        key.words());
    const double u1 = u01(words[0], words[1]);
    const double u2 = u01(words[2], words[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    out[j] = radius * std::cos(two_pi * u2);
    if (j + 1 < out.size()) out[j + 1] = radius * std::sin(two_pi * u2);
  }
}

inline double normal(const Key& key, uint64_t stream, uint64_t index) {
  double z;
  fill_normals(key, stream, index, {&z, 1});
  return z;
}

}  // namespace qbsde::rng
