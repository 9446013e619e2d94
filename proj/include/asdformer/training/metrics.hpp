#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "asdformer/error.hpp"
#include "json.hpp"

namespace asdformer::training {

struct Metrics {
  double auroc = 0.0;
  double accuracy = 0.0;
  double sensitivity = 0.0;  // 0 when there are no positives
  double specificity = 0.0;  // 0 when there are no negatives
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Mann-Whitney U / (P * Q) with ties credited 0.5, via midranks.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("auroc: scores and labels differ in length");
  const std::size_t m = scores.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j < m && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t r = i; r < j; ++r) {
      const int l = labels[order[r]];
      if (l != 0 && l != 1) throw ArgumentError("auroc: labels must be 0 or 1");
      if (l == 1) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = m - positives;
  if (positives == 0 || negatives == 0) throw MetricError("auroc needs both classes present");
  const double p = static_cast<double>(positives), q = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

/// Confusion counts and rates; AUROC is left untouched.
inline void fill_confusion(Metrics& m, std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw ArgumentError("predictions and labels differ in length");
  m.tp = m.fp = m.tn = m.fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) (predicted[i] == 1 ? m.tp : m.fn)++;
    else (predicted[i] == 1 ? m.fp : m.tn)++;
  }
  const auto total = static_cast<double>(labels.size());
  m.accuracy = total > 0 ? static_cast<double>(m.tp + m.tn) / total : 0.0;
  m.sensitivity = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.specificity = m.tn + m.fp > 0 ? static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp) : 0.0;
}

inline nlohmann::ordered_json to_json(const Metrics& m) {
  return {{"auroc", m.auroc},
          {"accuracy", m.accuracy},
          {"sensitivity", m.sensitivity},
          {"specificity", m.specificity},
          {"confusion", {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}}}};
}

}  // namespace asdformer::training
