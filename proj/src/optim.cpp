#include "upa/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace upa {

std::pair<Tensor, AdamState> adamw_update(const Tensor& param, const Tensor& grad, AdamState state,
                                          const AdamParams& p) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adamw_update: param " + shape_string(param.shape()) + " vs grad " +
                                shape_string(grad.shape()));
  if (state.first_moment.size() == 0) {
    state.first_moment = Tensor(param.shape());
    state.second_moment = Tensor(param.shape());
  } else if (!state.first_moment.same_shape(param) || !state.second_moment.same_shape(param)) {
    throw std::invalid_argument("adamw_update: optimizer state shape does not match param");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(p.beta1, t);
  const double bc2 = 1.0 - std::pow(p.beta2, t);

  Tensor out = param;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= 1.0 - p.lr * p.weight_decay;
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = p.beta1 * m + (1.0 - p.beta1) * grad[i];
    v = p.beta2 * v + (1.0 - p.beta2) * grad[i] * grad[i];
    out[i] -= p.lr * (m / bc1) / (std::sqrt(v / bc2) + p.eps);
  }
  return {std::move(out), std::move(state)};
}

Tensor linf_project(const Tensor& sigma, double radius) {
  if (radius < 0.0) throw std::invalid_argument("linf_project: negative radius");
  return clamp(sigma, -radius, radius);
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  Tensor out = t;
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

}  // namespace upa
