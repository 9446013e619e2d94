#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "asdformer/numerics/tensor.hpp"

namespace asdformer::numerics {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One Adam update with bias correction. Weight decay is coupled: decay *
/// param is added to the gradient before the moment updates. An empty grad
/// span counts as a zero gradient.
inline void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " params but " + std::to_string(grads.size()) +
                        " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: optimiser state tracks a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].size() || (!grads[i].empty() && grads[i].size() != params[i].size())) {
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " +
                          shape_str(params[i].shape()));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = (grads[i].empty() ? 0.0 : grads[i][j]) + state.weight_decay * value[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      value[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

/// Convenience overload reading each parameter's accumulated gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state);
}

}  // namespace asdformer::numerics
