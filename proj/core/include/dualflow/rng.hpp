#pragma once

#include <array>
#include <cstdint>

namespace dualflow {

/// Philox4x32-10 block cipher (Salmon et al., SC'11). Stateless: each
/// (counter, key) pair maps to 128 independent random bits, so draws are
/// addressable by (path, step, channel) and identical no matter how the
/// work is scheduled across threads.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Map 64 random bits to a double strictly inside (0,1).
double uniform_from_bits(std::uint64_t bits);

/// Inverse standard normal CDF, Wichura's PPND16 (AS 241), ~1e-15 accuracy.
double inv_normal_cdf(double p);

/// Standard normal CDF via erfc.
double normal_cdf(double x);

/// Addressable field of iid N(0,1) variates keyed by a 64-bit seed.
/// normal(path, step, channel) is a pure function of its arguments and the
/// seed; channel 0 drives the asset Brownian motion, channel 1 the
/// orthogonal factor noise.
class NormalField {
 public:
  explicit NormalField(std::uint64_t seed) : seed_(seed) {}

  double operator()(std::uint64_t path, std::uint32_t step, std::uint32_t channel) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace dualflow
