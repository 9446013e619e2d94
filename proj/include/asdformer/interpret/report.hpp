#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "asdformer/data/dataset.hpp"
#include "asdformer/model/asdformer.hpp"
#include "asdformer/training/evaluate.hpp"

namespace asdformer::interpret {

enum class HeadMode { kMean, kPerHead };

inline std::string to_string(HeadMode m) { return m == HeadMode::kMean ? "mean" : "per-head"; }

inline HeadMode head_mode_from_string(const std::string& s) {
  if (s == "mean") return HeadMode::kMean;
  if (s == "per-head") return HeadMode::kPerHead;
  throw ArgumentError("unknown head mode '" + s + "' (expected mean or per-head)");
}

struct RoiScore {
  std::size_t roi = 0;
  double weight = 0.0;  // pooling weight w
  double score = 0.0;   // pi * w
};

struct ExpertScores {
  std::size_t index = 0;
  std::size_t k = 0;
  std::vector<RoiScore> rois;  // ascending ROI index
};

struct AttentionRow {
  std::size_t roi = 0;
  std::optional<std::size_t> head;  // empty for the head mean
  std::vector<double> values;       // over all N tokens
};

/// Mean of a value vector over each non-empty community, in canonical order.
struct CommunityValues {
  std::vector<std::pair<std::size_t, double>> entries;  // (community, value)
};

struct RollupRow {
  std::size_t source = 0;
  CommunityValues targets;
};

struct InterpretReport {
  std::string subject_id;
  int predicted_label = 0;
  double prob_asd = 0.0;
  double prob_hc = 0.0;
  std::vector<double> gate_probs;
  std::vector<std::size_t> roi_community;  // community index of every ROI
  std::vector<ExpertScores> experts;
  HeadMode mode = HeadMode::kMean;
  std::size_t layer = 0;
  std::vector<AttentionRow> attention;
  std::vector<CommunityValues> attention_by_community;  // parallel to `attention`
  std::vector<RollupRow> rollup;
};

/// score_{b,i}^(e) = pi_b^(e) * w_{b,i}^(e) over each expert's selected ROIs.
inline std::vector<ExpertScores> roi_scores(const model::ForwardTrace& trace, std::size_t b) {
  if (trace.experts.empty()) throw ArgumentError("ROI scores need a trace with pooling experts");
  const std::size_t e_count = trace.experts.size();
  if (!trace.gate_probs.defined() || trace.gate_probs.dim(1) != e_count) {
    throw ContractError("trace gate probabilities do not match its experts");
  }
  std::vector<ExpertScores> out;
  for (std::size_t e = 0; e < e_count; ++e) {
    const auto& ex = trace.experts[e];
    const std::size_t n = ex.weights.dim(1);
    const double pi = trace.gate_probs[b * e_count + e];
    ExpertScores s{e, ex.k, {}};
    auto selected = ex.selected.at(b);
    std::sort(selected.begin(), selected.end());
    for (auto roi : selected) {
      const double w = ex.weights[b * n + roi];
      s.rois.push_back({roi, w, pi * w});
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Rows of the attention map softmax(A) for the given ROIs, averaged over
/// heads or one row per head.
inline std::vector<AttentionRow> attention_rows(const model::ForwardTrace& trace, std::size_t b,
                                                std::span<const std::size_t> rois, std::size_t layer,
                                                HeadMode mode) {
  if (layer >= trace.attention.size()) {
    throw ArgumentError("layer " + std::to_string(layer) + " does not exist (model has " +
                        std::to_string(trace.attention.size()) + ")");
  }
  const auto& a = trace.attention[layer];  // [B, h, T, T]
  const std::size_t heads = a.dim(1), t = a.dim(2);
  std::vector<AttentionRow> out;
  for (auto roi : rois) {
    if (roi >= t) throw ArgumentError("ROI index " + std::to_string(roi) + " out of range");
    auto row_of = [&](std::size_t h) {
      const std::size_t base = ((b * heads + h) * t + roi) * t;
      return std::vector<double>(a.data().begin() + static_cast<std::ptrdiff_t>(base),
                                 a.data().begin() + static_cast<std::ptrdiff_t>(base + t));
    };
    if (mode == HeadMode::kPerHead) {
      for (std::size_t h = 0; h < heads; ++h) out.push_back({roi, h, row_of(h)});
    } else {
      std::vector<double> mean(t, 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto r = row_of(h);
        for (std::size_t j = 0; j < t; ++j) mean[j] += r[j];
      }
      for (auto& v : mean) v /= static_cast<double>(heads);
      out.push_back({roi, std::nullopt, std::move(mean)});
    }
  }
  return out;
}

inline CommunityValues by_community(std::span<const double> row, const data::CommunityMap& map) {
  if (row.size() != map.n_rois()) {
    throw DataError("attention row covers " + std::to_string(row.size()) + " ROIs, community map " +
                    std::to_string(map.n_rois()));
  }
  CommunityValues out;
  for (std::size_t c = 0; c < data::kNumCommunities; ++c) {
    const auto members = map.members(c);
    if (members.empty()) continue;
    double sum = 0.0;
    for (auto i : members) sum += row[i];
    out.entries.emplace_back(c, sum / static_cast<double>(members.size()));
  }
  return out;
}

/// Groups the selected ROIs' rows by source community, averages them, then
/// averages each averaged row over every target community's members.
inline std::vector<RollupRow> community_aggregate(const std::vector<AttentionRow>& rows,
                                                  const data::CommunityMap& map) {
  std::vector<std::vector<double>> sums(data::kNumCommunities);
  std::vector<std::size_t> counts(data::kNumCommunities, 0);
  for (const auto& r : rows) {
    if (r.head) throw ArgumentError("community_aggregate expects head-averaged rows");
    const std::size_t c = map.of(r.roi);
    if (sums[c].empty()) sums[c].assign(r.values.size(), 0.0);
    for (std::size_t j = 0; j < r.values.size(); ++j) sums[c][j] += r.values[j];
    ++counts[c];
  }
  std::vector<RollupRow> out;
  for (std::size_t c = 0; c < data::kNumCommunities; ++c) {
    if (counts[c] == 0) continue;
    for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
    out.push_back({c, by_community(sums[c], map)});
  }
  return out;
}

struct InterpretOptions {
  std::optional<std::size_t> layer;  // default: last encoder layer
  HeadMode mode = HeadMode::kMean;
};

/// Report for subject `b` of a completed forward pass.
inline InterpretReport build_report(const model::ForwardTrace& trace, std::size_t b, const std::string& subject_id,
                                    const data::CommunityMap& communities, const InterpretOptions& opt = {}) {
  if (trace.decoder == model::Decoder::kCls) {
    throw ArgumentError("interpretation needs a pooling decoder; the CLS decoder has no ROI selection");
  }
  InterpretReport r;
  r.subject_id = subject_id;
  const auto& logits = trace.final_logits;
  if (logits.dim(1) != 2) throw ConfigError("interpretation reports assume two classes");
  const auto [prob, label] = training::binary_decision(logits[2 * b], logits[2 * b + 1]);
  r.prob_asd = prob;
  r.prob_hc = 1.0 - prob;
  r.predicted_label = label;
  const std::size_t e_count = trace.experts.size();
  for (std::size_t e = 0; e < e_count; ++e) r.gate_probs.push_back(trace.gate_probs[b * e_count + e]);
  r.roi_community = communities.assignment;
  r.experts = roi_scores(trace, b);
  for (const auto& ex : r.experts) {
    if (ex.rois.empty()) throw ContractError("expert " + std::to_string(ex.index) + " selected no ROIs");
  }

  std::set<std::size_t> selected;
  for (const auto& ex : r.experts)
    for (const auto& s : ex.rois) selected.insert(s.roi);
  const std::vector<std::size_t> rois(selected.begin(), selected.end());
  r.mode = opt.mode;
  r.layer = opt.layer.value_or(trace.attention.empty() ? 0 : trace.attention.size() - 1);
  r.attention = attention_rows(trace, b, rois, r.layer, opt.mode);
  for (const auto& row : r.attention) {
    double total = 0.0;
    for (double v : row.values) total += v;
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("attention row of ROI " + std::to_string(row.roi) + " sums to " + std::to_string(total));
    }
    r.attention_by_community.push_back(by_community(row.values, communities));
  }
  const auto mean_rows = opt.mode == HeadMode::kMean ? r.attention
                                                     : attention_rows(trace, b, rois, r.layer, HeadMode::kMean);
  r.rollup = community_aggregate(mean_rows, communities);
  return r;
}

/// Forward pass over the named subjects and one report each.
inline std::vector<InterpretReport> interpret_subjects(const model::ModelParams& params,
                                                       const model::ModelConfig& config,
                                                       const data::ConnectomeDataset& ds,
                                                       std::span<const std::string> ids,
                                                       const InterpretOptions& opt = {}) {
  if (ds.n_rois != config.n_rois) {
    throw ConfigError("dataset has " + std::to_string(ds.n_rois) + " ROIs but the model expects " +
                      std::to_string(config.n_rois));
  }
  if (opt.layer && *opt.layer >= config.encoder_layers) {
    throw ArgumentError("layer " + std::to_string(*opt.layer) + " does not exist (model has " +
                        std::to_string(config.encoder_layers) + ")");
  }
  std::vector<std::size_t> idx;
  for (const auto& id : ids) idx.push_back(ds.index_of(id));
  if (idx.empty()) return {};
  const auto batch = data::make_batch(ds, idx);
  numerics::Tape tape;
  const auto out = model::run_model(tape, batch.x, params, config);
  std::vector<InterpretReport> reports;
  for (std::size_t b = 0; b < idx.size(); ++b) {
    reports.push_back(build_report(out.trace, b, ds.subjects[idx[b]].id, ds.communities, opt));
  }
  return reports;
}

}  // namespace asdformer::interpret
