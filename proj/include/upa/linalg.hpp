#pragma once

#include <vector>

#include "upa/tensor.hpp"

namespace upa {

// argmin_A ||X A - Y||_F. No centering is applied; callers decide.
// Throws std::invalid_argument when X is rank deficient (singular value <= 1e-10).
Tensor least_squares_fit(const Tensor& x, const Tensor& y);

// Descending singular values, length min(rows, cols).
std::vector<double> singular_values(const Tensor& m);

}  // namespace upa
