#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asdformer/error.hpp"
#include "asdformer/numerics/tensor.hpp"

namespace asdformer::data {

using numerics::Tensor;

inline constexpr std::size_t kNumCommunities = 8;
inline constexpr std::array<std::string_view, kNumCommunities> kCommunityNames{
    "CS & SB", "V", "SMN", "DAN", "VAN", "L", "FPN", "DMN"};

inline std::size_t community_index(std::string_view name) {
  for (std::size_t c = 0; c < kNumCommunities; ++c) {
    if (kCommunityNames[c] == name) return c;
  }
  throw DataError("unknown community '" + std::string(name) + "'");
}

/// ROI -> functional community assignment over the eight canonical names.
struct CommunityMap {
  std::vector<std::size_t> assignment;  // per ROI, index into kCommunityNames

  std::size_t n_rois() const { return assignment.size(); }

  std::size_t of(std::size_t roi) const {
    if (roi >= assignment.size()) {
      throw DataError("ROI " + std::to_string(roi) + " has no community (map covers " +
                      std::to_string(assignment.size()) + ")");
    }
    return assignment[roi];
  }

  std::string_view name_of(std::size_t roi) const { return kCommunityNames[of(roi)]; }

  std::vector<std::size_t> members(std::size_t community) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] == community) out.push_back(i);
    }
    return out;
  }

  void validate(std::size_t n_rois) const {
    if (assignment.size() != n_rois) {
      throw DataError("community map covers " + std::to_string(assignment.size()) + " ROIs, expected " +
                      std::to_string(n_rois));
    }
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] >= kNumCommunities) {
        throw DataError("ROI " + std::to_string(i) + " has community index " + std::to_string(assignment[i]));
      }
    }
  }

  bool operator==(const CommunityMap&) const = default;
};

/// Contiguous near-equal blocks: the first N mod count communities get one
/// extra ROI.
inline CommunityMap block_communities(std::size_t n_rois, std::size_t count = kNumCommunities) {
  if (count < 1 || count > kNumCommunities) {
    throw ArgumentError("community count must be in [1, 8], got " + std::to_string(count));
  }
  if (n_rois < count) {
    throw ArgumentError(std::to_string(n_rois) + " ROIs cannot cover " + std::to_string(count) + " communities");
  }
  CommunityMap map;
  const std::size_t base = n_rois / count, extra = n_rois % count;
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t size = base + (c < extra ? 1 : 0);
    map.assignment.insert(map.assignment.end(), size, c);
  }
  return map;
}

struct Subject {
  std::string id;
  int label = 0;  // 0 = HC, 1 = ASD
  Tensor fc;      // [N, N]
};

/// Checks symmetry, unit diagonal and range, each within `tol`.
inline void validate_fc(const Tensor& fc, std::size_t n, const std::string& id, double tol = 1e-9) {
  if (fc.shape() != numerics::Shape{n, n}) {
    throw DataError("subject " + id + ": FC has shape " + numerics::shape_str(fc.shape()) + ", expected [" +
                    std::to_string(n) + ", " + std::to_string(n) + "]");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = fc[i * n + j];
      if (!std::isfinite(v)) throw DataError("subject " + id + ": non-finite FC entry");
      if (std::abs(v) > 1.0 + tol) {
        throw DataError("subject " + id + ": FC entry (" + std::to_string(i) + ", " + std::to_string(j) + ") = " +
                        std::to_string(v) + " outside [-1, 1]");
      }
      if (std::abs(v - fc[j * n + i]) > tol) throw DataError("subject " + id + ": FC is not symmetric");
    }
    if (std::abs(fc[i * n + i] - 1.0) > tol) {
      throw DataError("subject " + id + ": FC diagonal entry " + std::to_string(i) + " is not 1");
    }
  }
}

struct ConnectomeDataset {
  std::size_t n_rois = 0;
  std::vector<Subject> subjects;
  CommunityMap communities;

  std::size_t size() const { return subjects.size(); }
  bool empty() const { return subjects.empty(); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects) out.push_back(s.label);
    return out;
  }

  bool has_both_classes() const {
    const auto l = labels();
    return std::count(l.begin(), l.end(), 0) > 0 && std::count(l.begin(), l.end(), 1) > 0;
  }

  std::size_t index_of(std::string_view id) const {
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (subjects[i].id == id) return i;
    }
    throw ArgumentError("unknown subject id '" + std::string(id) + "'");
  }

  void validate() const {
    if (subjects.empty()) throw DataError("dataset has no subjects");
    communities.validate(n_rois);
    for (const auto& s : subjects) {
      if (s.label != 0 && s.label != 1) throw DataError("subject " + s.id + ": label must be 0 or 1");
      validate_fc(s.fc, n_rois, s.id);
    }
  }

  /// Subset with the same N and community map.
  ConnectomeDataset subset(std::span<const std::size_t> indices) const {
    ConnectomeDataset out{n_rois, {}, communities};
    out.subjects.reserve(indices.size());
    for (auto i : indices) out.subjects.push_back(subjects.at(i));
    return out;
  }
};

inline bool operator==(const Subject& a, const Subject& b) {
  return a.id == b.id && a.label == b.label && a.fc.shape() == b.fc.shape() && a.fc.values() == b.fc.values();
}

inline bool operator==(const ConnectomeDataset& a, const ConnectomeDataset& b) {
  return a.n_rois == b.n_rois && a.communities == b.communities && a.subjects == b.subjects;
}

/// Stacks the selected subjects into a model input [B, N, N] and label vector.
struct Batch {
  Tensor x;
  std::vector<int> labels;
};

inline Batch make_batch(const ConnectomeDataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("empty batch");
  const std::size_t nn = ds.n_rois * ds.n_rois;
  std::vector<double> v;
  v.reserve(indices.size() * nn);
  Batch b;
  for (auto i : indices) {
    const auto& s = ds.subjects.at(i);
    v.insert(v.end(), s.fc.values().begin(), s.fc.values().end());
    b.labels.push_back(s.label);
  }
  b.x = Tensor::from({indices.size(), ds.n_rois, ds.n_rois}, std::move(v));
  return b;
}

inline Batch make_batch(const ConnectomeDataset& ds) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(ds, all);
}

}  // namespace asdformer::data
