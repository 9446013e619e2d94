#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "asdformer/data/dataset.hpp"

namespace asdformer::data {

struct SplitFractions {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

struct DatasetSplit {
  ConnectomeDataset train, val, test;
};

/// Per class: shuffle with the seed, give floor(fraction * count) to each
/// split and the remainder to train. Indices come back in dataset order.
inline SplitIndices stratified_split_indices(const ConnectomeDataset& ds, SplitFractions f, std::uint64_t seed) {
  for (double v : {f.train, f.val, f.test}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("split fractions must lie in [0, 1]");
  }
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw ArgumentError("split fractions must sum to 1");
  std::mt19937_64 rng(seed);
  SplitIndices out;
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.subjects[i].label == label) members.push_back(i);
    }
    if (members.size() < 3) {
      throw DataError("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                      " subjects; stratified splitting needs at least 3");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const double count = static_cast<double>(members.size());
    // The small offset keeps products such as 0.7 * 30 from flooring one short.
    const auto n_val = static_cast<std::size_t>(std::floor(f.val * count + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(f.test * count + 1e-9));
    const std::size_t n_train = members.size() - n_val - n_test;
    out.train.insert(out.train.end(), members.begin(), members.begin() + n_train);
    out.val.insert(out.val.end(), members.begin() + n_train, members.begin() + n_train + n_val);
    out.test.insert(out.test.end(), members.begin() + n_train + n_val, members.end());
  }
  for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

inline DatasetSplit stratified_split(const ConnectomeDataset& ds, SplitFractions f, std::uint64_t seed) {
  const auto idx = stratified_split_indices(ds, f, seed);
  return {ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

}  // namespace asdformer::data
