#pragma once

#include <array>
#include <cstdint>

namespace conformer {

// xoshiro256** with splitmix64 seeding. Chosen over std::mt19937_64 because the
// whole state is four u64 words, which is exactly the 32-byte RNG blob stored in
// checkpoints, and because its output is identical across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Integer in [0, n), n > 0. Uses rejection to avoid modulo bias.
  uint64_t next_below(uint64_t n);

  // Standard normal via Box-Muller. The sine partner is discarded so a draw
  // consumes a fixed number of state advances and the state alone captures the
  // generator, with no hidden cached value.
  double normal();
  double normal(double mean, double stddev);
  // Normal redrawn until within two standard deviations of the mean.
  double truncated_normal(double mean, double stddev);

  std::array<uint8_t, 32> state_bytes() const;
  void set_state_bytes(const std::array<uint8_t, 32>& bytes);

 private:
  std::array<uint64_t, 4> s_;
};

}  // namespace conformer
