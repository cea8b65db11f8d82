#pragma once

#include <cstdint>
#include <utility>

#include "upa/tensor.hpp"

namespace upa {

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t step = 0;

  bool fresh() const { return step == 0 && first_moment.size() == 0; }
};

struct AdamParams {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// One AdamW step: param *= (1 - lr * wd), then the bias-corrected Adam move.
std::pair<Tensor, AdamState> adamw_update(const Tensor& param, const Tensor& grad, AdamState state,
                                          const AdamParams& params);

// Clamp every coordinate to [-radius, radius].
Tensor linf_project(const Tensor& sigma, double radius);

// Clamp every coordinate to [lo, hi].
Tensor clamp(const Tensor& t, double lo, double hi);

}  // namespace upa
