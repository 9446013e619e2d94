#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "asdformer/data/csv.hpp"
#include "asdformer/data/dataset.hpp"
#include "asdformer/model/asdformer.hpp"
#include "asdformer/numerics/adam.hpp"
#include "asdformer/training/evaluate.hpp"

namespace asdformer::training {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  void validate(const model::ModelConfig& mc) const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
      throw ConfigError("weight_decay must be a finite value >= 0");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (mc.lambda > 0.0 && mc.decoder == model::Decoder::kMixture && mc.num_experts > 1 && batch_size < 2) {
      throw ConfigError("batch_size must be at least 2 when lambda > 0");
    }
    if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
    if (patience < 1 || patience > max_epochs) throw ConfigError("patience must lie in [1, max_epochs]");
  }
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auroc = 0.0;
  double cv2 = 0.0;                // mean batch CV^2 over the epoch
  std::vector<double> gate_mean;  // per expert, over the epoch's training subjects
};

struct TrainResult {
  model::ModelParams params;  // best snapshot
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  double best_val_auroc = 0.0;
  std::size_t steps = 0;
  std::string rng_state;  // shuffling engine after the last epoch
};

struct StepResult {
  double loss = 0.0;
  double cv2 = 0.0;
  numerics::Tensor gate_probs;  // undefined for the CLS decoder
};

/// forward -> total loss -> backward -> Adam on one batch.
inline StepResult train_step(model::ModelParams& params, const model::ModelConfig& config, const data::Batch& batch,
                             numerics::AdamState& adam) {
  params.zero_grad();
  numerics::Tape tape;
  const auto out = model::run_model(tape, batch.x, params, config);
  const auto& probs = out.trace.gate_probs;
  const bool mixture = config.decoder == model::Decoder::kMixture;
  const auto loss = model::total_loss(tape, out.logits, batch.labels, mixture ? probs : numerics::Tensor{},
                                      config.lambda, config.cv_eps);
  StepResult r;
  r.loss = loss.item();
  if (!std::isfinite(r.loss)) return r;
  tape.backward(loss);
  auto tensors = params.tensors();
  numerics::adam_step(tensors, adam);
  r.gate_probs = probs;
  if (mixture) r.cv2 = model::batch_cv_squared(probs, config.cv_eps);
  return r;
}

inline std::size_t history_gate_columns(const model::ModelConfig& c) {
  switch (c.decoder) {
    case model::Decoder::kMixture: return c.num_experts;
    case model::Decoder::kPooling: return 1;
    case model::Decoder::kCls: return 0;
  }
  return 0;
}

/// Mini-batch Adam with seeded shuffling (the last short batch is kept),
/// validation AUROC after every epoch, a snapshot whenever it strictly
/// improves, and early stopping after `patience` epochs without improvement.
inline TrainResult train(const model::ModelParams& init, const model::ModelConfig& config,
                         const data::ConnectomeDataset& train_set, const data::ConnectomeDataset& val_set,
                         const TrainConfig& tc, const std::function<void(const HistoryRow&)>& on_epoch = {}) {
  config.validate();
  tc.validate(config);
  if (train_set.empty()) throw ArgumentError("training set is empty");
  if (!val_set.has_both_classes()) throw ArgumentError("validation set must contain both classes");
  for (const auto* ds : {&train_set, &val_set}) {
    if (ds->n_rois != config.n_rois) {
      throw ConfigError("dataset has " + std::to_string(ds->n_rois) + " ROIs but the model expects " +
                        std::to_string(config.n_rois));
    }
  }

  model::ModelParams params = init.clone();
  numerics::AdamState adam;
  adam.lr = tc.lr;
  adam.weight_decay = tc.weight_decay;
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t gate_cols = history_gate_columns(config);

  TrainResult result;
  result.params = params.clone();
  result.best_val_auroc = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    HistoryRow row;
    row.epoch = epoch;
    row.gate_mean.assign(gate_cols, 0.0);
    double loss_sum = 0.0, cv_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto batch = data::make_batch(train_set, idx);
      const auto step = train_step(params, config, batch, adam);
      ++result.steps;
      if (!std::isfinite(step.loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(result.steps));
      }
      loss_sum += step.loss * static_cast<double>(idx.size());
      cv_sum += step.cv2;
      ++batches;
      for (std::size_t b = 0; b < idx.size(); ++b)
        for (std::size_t e = 0; e < gate_cols; ++e) row.gate_mean[e] += step.gate_probs[b * gate_cols + e];
    }
    const auto n = static_cast<double>(order.size());
    row.train_loss = loss_sum / n;
    row.cv2 = cv_sum / static_cast<double>(batches);
    for (auto& g : row.gate_mean) g /= n;
    row.val_auroc = evaluate(params, config, val_set).auroc;
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_auroc > result.best_val_auroc) {
      result.best_val_auroc = row.val_auroc;
      result.best_epoch = epoch;
      result.params = params.clone();
      stale = 0;
    } else if (++stale >= tc.patience) {
      break;
    }
  }
  std::ostringstream engine;
  engine << rng;
  result.rng_state = engine.str();
  return result;
}

inline std::string history_csv(const std::vector<HistoryRow>& history, std::size_t gate_cols) {
  std::string out = "epoch,train_loss,val_auroc,cv2";
  for (std::size_t e = 0; e < gate_cols; ++e) out += ",gate_mean_e" + std::to_string(e);
  out += '\n';
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + ',' + data::format_double(r.train_loss) + ',' + data::format_double(r.val_auroc) +
           ',' + data::format_double(r.cv2);
    for (double g : r.gate_mean) out += ',' + data::format_double(g);
    out += '\n';
  }
  return out;
}

inline void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& history,
                          std::size_t gate_cols) {
  data::write_text(path, history_csv(history, gate_cols));
}

}  // namespace asdformer::training
