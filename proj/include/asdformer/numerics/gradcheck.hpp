#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "asdformer/numerics/tensor.hpp"

namespace asdformer::numerics {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares tape gradients of `loss_fn` against central finite differences
/// for every element of every tensor in `inputs`. `loss_fn` must rebuild the
/// graph from scratch on each call.
inline std::vector<GradCheckResult> gradient_check(const std::function<Tensor(Tape&)>& loss_fn,
                                                   std::vector<Tensor> inputs, double h = 1e-5,
                                                   double floor = 1e-8) {
  for (auto& t : inputs) t.zero_grad();
  {
    Tape tape;
    const Tensor loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape;
    return loss_fn(tape).item();
  };

  std::vector<GradCheckResult> results;
  results.reserve(inputs.size());
  for (auto& t : inputs) {
    GradCheckResult r;
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval();
      values[i] = saved - h;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric, floor);
      if (i == 0 || err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_index = i;
        r.analytic = analytic[i];
        r.numeric = numeric;
      }
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace asdformer::numerics
