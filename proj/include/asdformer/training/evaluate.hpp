#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "asdformer/data/dataset.hpp"
#include "asdformer/model/asdformer.hpp"
#include "asdformer/training/metrics.hpp"

namespace asdformer::training {

struct Predictions {
  std::vector<double> scores;  // P(ASD)
  std::vector<int> predicted;
  std::vector<int> labels;
};

/// Class-1 probability and hard prediction from a row of two logits;
/// equal logits predict HC.
inline std::pair<double, int> binary_decision(double logit0, double logit1) {
  const double m = std::max(logit0, logit1);
  const double e0 = std::exp(logit0 - m), e1 = std::exp(logit1 - m);
  return {e1 / (e0 + e1), logit1 > logit0 ? 1 : 0};
}

inline Predictions predict(const model::ModelParams& params, const model::ModelConfig& config,
                           const data::ConnectomeDataset& ds, std::size_t chunk = 64) {
  if (config.num_classes != 2) throw ConfigError("binary evaluation requires num_classes == 2");
  if (ds.n_rois != config.n_rois) {
    throw ConfigError("dataset has " + std::to_string(ds.n_rois) + " ROIs but the model expects " +
                      std::to_string(config.n_rois));
  }
  Predictions out;
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) idx.push_back(i);
    const auto batch = data::make_batch(ds, idx);
    numerics::Tape tape;
    const auto logits = model::run_model(tape, batch.x, params, config).logits;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto [score, label] = binary_decision(logits[2 * b], logits[2 * b + 1]);
      out.scores.push_back(score);
      out.predicted.push_back(label);
      out.labels.push_back(batch.labels[b]);
    }
  }
  return out;
}

inline Metrics metrics_from(const Predictions& p) {
  if (p.labels.empty()) throw MetricError("cannot evaluate an empty dataset");
  Metrics m;
  m.auroc = auroc(p.scores, p.labels);
  fill_confusion(m, p.predicted, p.labels);
  return m;
}

inline Metrics evaluate(const model::ModelParams& params, const model::ModelConfig& config,
                        const data::ConnectomeDataset& ds) {
  return metrics_from(predict(params, config, ds));
}

}  // namespace asdformer::training
