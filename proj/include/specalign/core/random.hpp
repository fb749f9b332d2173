#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace specalign {

// Thin wrapper over mt19937_64. The distributions are written out here because the
// standard library ones are implementation-defined, and dataset bytes must not
// depend on which standard library built them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  /// Box-Muller; consumes exactly two draws per call.
  double normal(double mean, double stddev);

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace specalign
