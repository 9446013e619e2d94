#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <random>
#include <utility>
#include <vector>

#include "asdformer/data/dataset.hpp"

namespace asdformer::data {

struct SynthOptions {
  std::size_t n_subjects = 200;
  std::size_t n_rois = 20;
  std::size_t communities = kNumCommunities;
  double delta = 0.4;  // shift of the planted inter-community correlations
  double noise = 0.05;  // per-subject perturbation of the shared factors
  std::uint64_t seed = 0;
};

/// The two communities whose mutual correlations carry the class signal:
/// SMN and DMN with all eight communities, otherwise the last two in use.
inline std::pair<std::size_t, std::size_t> synth_signal_communities(std::size_t communities = kNumCommunities) {
  if (communities == kNumCommunities) return {community_index("SMN"), community_index("DMN")};
  return {communities - 2, communities - 1};
}

inline std::vector<std::size_t> synth_signal_rois(const ConnectomeDataset& ds, std::size_t communities = kNumCommunities) {
  const auto [a, b] = synth_signal_communities(communities);
  auto rois = ds.communities.members(a);
  const auto more = ds.communities.members(b);
  rois.insert(rois.end(), more.begin(), more.end());
  std::sort(rois.begin(), rois.end());
  return rois;
}

inline void validate(const SynthOptions& o) {
  if (o.n_subjects < 2) throw ArgumentError("synth needs at least 2 subjects");
  if (o.communities < 2 || o.communities > kNumCommunities) {
    throw ArgumentError("synth community count must be in [2, 8], got " + std::to_string(o.communities));
  }
  if (o.n_rois < o.communities) {
    throw ArgumentError(std::to_string(o.n_rois) + " ROIs cannot be divided into " + std::to_string(o.communities) +
                        " communities");
  }
  if (!(o.delta >= 0.0) || !std::isfinite(o.delta)) throw ArgumentError("delta must be a finite value >= 0");
  if (!(o.noise >= 0.0) || !std::isfinite(o.noise)) throw ArgumentError("noise must be a finite value >= 0");
}

/// Planted-signal connectomes. A shared Gaussian factor matrix R0 [N, N] is
/// perturbed per subject (R = R0 + noise * G), turned into a correlation
/// matrix via R R^T with unit diagonal, and for label-1 subjects the entries
/// between the two signal communities are shifted by +delta, then clipped.
inline ConnectomeDataset synth_generate(const SynthOptions& o) {
  validate(o);
  const std::size_t n = o.n_rois, f = o.n_rois;
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  ConnectomeDataset ds;
  ds.n_rois = n;
  ds.communities = block_communities(n, o.communities);
  const auto [ca, cb] = synth_signal_communities(o.communities);
  std::vector<char> in_a(n), in_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    in_a[i] = ds.communities.assignment[i] == ca;
    in_b[i] = ds.communities.assignment[i] == cb;
  }

  std::vector<double> base(n * f);
  for (auto& v : base) v = normal(rng);

  std::vector<int> labels(o.n_subjects, 0);
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(o.n_subjects / 2), labels.end(), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  const int width = std::max(4, static_cast<int>(std::to_string(o.n_subjects).size()));
  std::vector<double> r(n * f), gram(n * n);
  for (std::size_t s = 0; s < o.n_subjects; ++s) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = base[i] + o.noise * normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < f; ++k) acc += r[i * f + k] * r[j * f + k];
        gram[i * n + j] = acc;
      }
    }
    std::vector<double> fc(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      fc[i * n + i] = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        double v = gram[i * n + j] / std::sqrt(gram[i * n + i] * gram[j * n + j]);
        const bool planted = (in_a[i] && in_b[j]) || (in_b[i] && in_a[j]);
        if (labels[s] == 1 && planted) v += o.delta;
        v = std::clamp(v, -1.0, 1.0);
        fc[i * n + j] = v;
        fc[j * n + i] = v;
      }
    }
    std::string id = std::to_string(s + 1);
    id = "sub-" + std::string(static_cast<std::size_t>(width) - std::min(id.size(), static_cast<std::size_t>(width)), '0') + id;
    ds.subjects.push_back({id, labels[s], Tensor::from({n, n}, std::move(fc))});
  }
  return ds;
}

}  // namespace asdformer::data
