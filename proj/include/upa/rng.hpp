#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace upa {

// Seeded generator with platform-independent real and integer draws.
// std::uniform_*_distribution is implementation-defined, so draws are
// derived from the raw 64-bit engine output directly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform over {0, ..., n-1}, unbiased via rejection.
  std::uint64_t index(std::uint64_t n);

  std::string checkpoint() const;
  static Rng restore(const std::string& checkpoint);

 private:
  Rng() = default;
  std::mt19937_64 engine_;
};

// Stream seed derived from a master seed and a stream tag (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace upa
