#pragma once

#include <span>
#include <vector>

#include "asdformer/model/config.hpp"
#include "asdformer/model/layers.hpp"
#include "asdformer/model/params.hpp"

namespace asdformer::model {

struct ExpertTrace {
  std::size_t k = 0;
  Tensor logits;         // alpha, [B, N]
  std::vector<std::vector<std::size_t>> selected;  // K, B sets of k indices
  Tensor weights;        // w, [B, N]
  Tensor pooled;         // z, [B, d_red]
  Tensor expert_logits;  // y_e, [B, C]
};

/// Intermediate activations of one forward pass, kept for interpretation.
/// Tensors stay attached to the tape they were produced on.
struct ForwardTrace {
  Decoder decoder = Decoder::kMixture;
  std::vector<Tensor> attention;  // per layer, [B, h, T, T]; T = N + 1 for the CLS decoder
  Tensor embedded;                // Z
  Tensor encoded;                 // H
  Tensor reduced;                 // H'
  std::vector<ExpertTrace> experts;
  Tensor gate_input;   // v
  Tensor gate_logits;  // g
  Tensor gate_probs;   // pi, [B, E]; all ones for the single-expert decoder
  Tensor final_logits;
};

struct ModelOutput {
  Tensor logits;  // [B, C]
  ForwardTrace trace;
};

/// Embedding followed by the encoder stack. `prefix_token`, when given, is
/// prepended to every subject's sequence at index 0.
inline Tensor encode(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c, ForwardTrace& trace,
                     const Tensor* prefix_token = nullptr) {
  Tensor h = embed(tape, x, p, c);
  trace.embedded = h;
  if (prefix_token) {
    const std::size_t batch = x.dim(0);
    const Tensor row = numerics::reshape(tape, *prefix_token, {1, c.embed_dim});
    h = numerics::concat(tape, {numerics::expand_leading(tape, row, batch), h}, 1);
  }
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    auto layer = encoder_layer(tape, h, p, c, l);
    h = layer.out;
    trace.attention.push_back(std::move(layer.attention));
  }
  trace.encoded = h;
  return h;
}

namespace detail {

inline void require_decoder(const ModelConfig& c, Decoder d, const char* fn) {
  c.validate();
  if (c.decoder != d) {
    throw ConfigError(std::string(fn) + " called with a config for the " + to_string(c.decoder) + " decoder");
  }
}

inline ExpertTrace run_expert(Tape& tape, const Tensor& reduced, const ModelParams& p, std::size_t e, std::size_t k) {
  auto pool = expert_pool(tape, reduced, p, e, k);
  ExpertTrace t;
  t.k = k;
  t.logits = pool.logits;
  t.selected = std::move(pool.pool.selected);
  t.weights = pool.pool.weights;
  t.pooled = pool.pool.pooled;
  t.expert_logits = expert_classify(tape, t.pooled, p, e);
  return t;
}

}  // namespace detail

/// Full model: encoder, reduction, E pooling-classifier experts, gate and
/// convex combination of the expert logits.
inline ModelOutput forward(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c) {
  detail::require_decoder(c, Decoder::kMixture, "forward");
  ModelOutput out;
  auto& tr = out.trace;
  tr.decoder = Decoder::kMixture;
  const Tensor h = encode(tape, x, p, c, tr);
  tr.reduced = reduce(tape, h, p);
  std::vector<Tensor> ys;
  for (std::size_t e = 0; e < c.num_experts; ++e) {
    tr.experts.push_back(detail::run_expert(tape, tr.reduced, p, e, c.k_per_expert[e]));
    ys.push_back(tr.experts.back().expert_logits);
  }
  auto g = gate(tape, tr.reduced, p);
  tr.gate_input = g.input;
  tr.gate_logits = g.logits;
  tr.gate_probs = g.probs;
  tr.final_logits = combine(tape, g.probs, ys);
  out.logits = tr.final_logits;
  return out;
}

/// Ablation: a single pooling-classifier expert without a gate.
inline ModelOutput single_expert_forward(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c) {
  if (c.num_experts != 1) throw ConfigError("single_expert_forward requires num_experts == 1");
  if (c.decoder == Decoder::kCls) throw ConfigError("single_expert_forward called with a CLS config");
  c.validate();
  ModelOutput out;
  auto& tr = out.trace;
  tr.decoder = Decoder::kPooling;
  const Tensor h = encode(tape, x, p, c, tr);
  tr.reduced = reduce(tape, h, p);
  tr.experts.push_back(detail::run_expert(tape, tr.reduced, p, 0, c.k_per_expert[0]));
  tr.gate_probs = Tensor::filled({x.dim(0), 1}, 1.0);
  tr.final_logits = tr.experts.front().expert_logits;
  out.logits = tr.final_logits;
  return out;
}

/// Ablation: learnable token at position 0, classified from its encoder output.
inline ModelOutput cls_decoder_forward(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c) {
  detail::require_decoder(c, Decoder::kCls, "cls_decoder_forward");
  ModelOutput out;
  auto& tr = out.trace;
  tr.decoder = Decoder::kCls;
  const Tensor& token = p.at("cls.token");
  const Tensor h = encode(tape, x, p, c, tr, &token);
  const std::size_t batch = x.dim(0);
  const Tensor first = numerics::reshape(tape, numerics::slice(tape, h, 1, 0, 1), {batch, c.embed_dim});
  tr.final_logits = mlp2(tape, first, p, "cls.head");
  out.logits = tr.final_logits;
  return out;
}

/// Dispatches on the configured decoder.
inline ModelOutput run_model(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c) {
  switch (c.decoder) {
    case Decoder::kMixture: return forward(tape, x, p, c);
    case Decoder::kPooling: return single_expert_forward(tape, x, p, c);
    case Decoder::kCls: return cls_decoder_forward(tape, x, p, c);
  }
  throw ConfigError("unknown decoder");
}

/// CV^2 of per-expert importance I_e = sum_b pi[b, e], as a plain number.
inline double cv_squared(std::span<const double> importance, double eps = 1e-8) {
  if (importance.empty()) throw ArgumentError("cv_squared of an empty vector");
  if (importance.size() == 1) return 0.0;
  const double n = static_cast<double>(importance.size());
  double mu = 0.0;
  for (double v : importance) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : importance) var += (v - mu) * (v - mu);
  var /= n;
  return var / ((mu + eps) * (mu + eps));
}

/// Batch CV^2 of the gate probabilities [B, E].
inline double batch_cv_squared(const Tensor& gate_probs, double eps = 1e-8) {
  const std::size_t batch = gate_probs.dim(0), experts = gate_probs.dim(1);
  std::vector<double> importance(experts, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t e = 0; e < experts; ++e) importance[e] += gate_probs[b * experts + e];
  return cv_squared(importance, eps);
}

/// Cross-entropy plus lambda * CV^2 of the batch expert importance.
inline Tensor total_loss(Tape& tape, const Tensor& logits, std::span<const int> labels, const Tensor& gate_probs,
                         double lambda, double eps = 1e-8) {
  namespace ops = numerics;
  const Tensor ce = ops::cross_entropy(tape, logits, labels);
  if (lambda == 0.0 || !gate_probs.defined()) return ce;
  const Tensor cv = ops::cv_squared(tape, ops::sum_leading(tape, gate_probs), eps);
  return ops::add(tape, ce, ops::scale(tape, cv, lambda));
}

}  // namespace asdformer::model
