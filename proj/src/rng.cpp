#include "upa/rng.hpp"

#include <limits>
#include <sstream>
#include <stdexcept>

namespace upa {

std::uint64_t Rng::index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

std::string Rng::checkpoint() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

Rng Rng::restore(const std::string& checkpoint) {
  Rng r;
  std::istringstream is(checkpoint);
  is >> r.engine_;
  if (!is) throw std::invalid_argument("Rng::restore: malformed checkpoint");
  return r;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace upa
