#pragma once

#include <cstdint>

namespace gpdit {

// Portable 64-bit generator: the canonical splitmix64 sequence.
// All randomness in this library flows through this generator so that
// alternate-language ports can reproduce every stream bit-for-bit.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform double strictly inside (0, 1), built from the top 53 bits.
  double next_unit();

  // Standard normal via the inverse-CDF transform (deterministic, no
  // rejection), so draw counts per variate are fixed at one.
  double next_gaussian();

 private:
  std::uint64_t state_;
};

// The splitmix64 output mix. Bijective on 64-bit words.
std::uint64_t splitmix64_mix(std::uint64_t z);

// Child seed = mix(seed + GOLDEN * (stream_id + 1)), i.e. the
// (stream_id+1)-th output of the splitmix64 sequence started at `seed`.
// mix is a bijection and the pre-mix argument is injective in stream_id,
// so distinct streams under one seed never collide.
std::uint64_t seed_split(std::uint64_t seed, std::uint64_t stream_id);

// Inverse of the standard normal CDF on (0, 1), accurate to ~1e-15
// relative (Wichura's double-precision rational approximation).
double inverse_normal_cdf(double p);

}  // namespace gpdit
