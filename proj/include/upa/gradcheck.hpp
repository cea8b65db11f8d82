#pragma once

// Finite-difference verification of every differentiable objective on a
// small policy (8x8 frames, two-token instruction).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace upa::gradcheck {

inline constexpr double kTolerance = 1e-4;

struct LossCheck {
  std::string name;                // l1, infonce, pad, psm, j_out
  std::vector<double> rel_errors;  // one per seed
  double worst = 0.0;
  bool passed() const { return worst < kTolerance; }
};

std::vector<LossCheck> run_suite(std::size_t seeds = 5, std::uint64_t base_seed = 0);

}  // namespace upa::gradcheck
