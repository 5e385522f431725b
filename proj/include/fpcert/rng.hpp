#pragma once

#include <cstdint>

namespace fpcert {

// Counter-based splittable PRNG. Streams are derived from a root seed plus up
// to three stream labels (module, instance, sample), so parallel workers can
// draw independent, reproducible sequences without sharing state.
//
// Reproducibility is promised within a build, not across languages.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream_a = 0,
               std::uint64_t stream_b = 0, std::uint64_t stream_c = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double next_double();

  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; the spare draw is cached.
  double next_normal();

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stream labels used across the project so derived streams never collide.
namespace stream {
inline constexpr std::uint64_t family_fixed = 1;
inline constexpr std::uint64_t family_instance = 2;
inline constexpr std::uint64_t weight_sample = 3;
inline constexpr std::uint64_t train_epoch = 4;
inline constexpr std::uint64_t test_misc = 99;
}  // namespace stream

}  // namespace fpcert
