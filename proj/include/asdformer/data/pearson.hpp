#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "asdformer/data/dataset.hpp"

namespace asdformer::data {

/// Pairwise Pearson correlation of the columns of a [T, N] time series.
/// The diagonal is exactly 1 and the result is exactly symmetric.
inline Tensor pearson_fc(const Tensor& timeseries) {
  if (timeseries.rank() != 2) {
    throw ShapeError("pearson_fc expects [T, N], got " + numerics::shape_str(timeseries.shape()));
  }
  const std::size_t t = timeseries.dim(0), n = timeseries.dim(1);
  if (t < 3) throw DataError("pearson_fc needs at least 3 time points, got " + std::to_string(t));

  std::vector<double> centered(t * n);
  std::vector<double> norm(n);
  for (std::size_t j = 0; j < n; ++j) {
    bool constant = true;
    double mean = 0.0;
    for (std::size_t s = 0; s < t; ++s) {
      mean += timeseries[s * n + j];
      constant = constant && timeseries[s * n + j] == timeseries[j];
    }
    if (constant) throw DataError("ROI " + std::to_string(j) + " has zero variance");
    mean /= static_cast<double>(t);
    double ss = 0.0;
    for (std::size_t s = 0; s < t; ++s) {
      const double c = timeseries[s * n + j] - mean;
      centered[s * n + j] = c;
      ss += c * c;
    }
    norm[j] = std::sqrt(ss);
  }

  std::vector<double> r(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    r[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double cross = 0.0;
      for (std::size_t s = 0; s < t; ++s) cross += centered[s * n + i] * centered[s * n + j];
      const double v = std::clamp(cross / (norm[i] * norm[j]), -1.0, 1.0);
      r[i * n + j] = v;
      r[j * n + i] = v;
    }
  }
  return Tensor::from({n, n}, std::move(r));
}

}  // namespace asdformer::data
