#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "asdformer/model/config.hpp"
#include "asdformer/model/params.hpp"
#include "asdformer/numerics/ops.hpp"

namespace asdformer::model {

using numerics::Tape;

/// Two-layer perceptron gelu(x W1 + b1) W2 + b2 applied along the last axis.
inline Tensor mlp2(Tape& tape, const Tensor& x, const ModelParams& p, const std::string& prefix) {
  namespace ops = numerics;
  Tensor h = ops::add_bias(tape, ops::matmul(tape, x, p.at(prefix + ".fc1.w")), p.at(prefix + ".fc1.b"));
  h = ops::gelu(tape, h);
  return ops::add_bias(tape, ops::matmul(tape, h, p.at(prefix + ".fc2.w")), p.at(prefix + ".fc2.b"));
}

/// Shared token embedding: LayerNorm(MLP(x_i)) for every connectivity row.
inline Tensor embed(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c) {
  if (x.rank() != 3 || x.dim(2) != c.n_rois) {
    throw ShapeError("embed: expected [B, N, " + std::to_string(c.n_rois) + "], got " + numerics::shape_str(x.shape()));
  }
  return numerics::layer_norm(tape, mlp2(tape, x, p, "embed"), p.at("embed.ln.gamma"), p.at("embed.ln.beta"),
                              c.ln_eps);
}

struct AttentionOutput {
  Tensor out;
  Tensor attention;  // [B, h, N, N], row-stochastic, detached
};

/// Multi-head scaled dot-product self-attention with output projection.
inline AttentionOutput multi_head_attention(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c,
                                            std::size_t layer) {
  namespace ops = numerics;
  const std::size_t d = c.embed_dim, dh = c.resolved_head_dim();
  if (x.rank() != 3 || x.dim(2) != d) {
    throw ShapeError("attention: expected [B, N, " + std::to_string(d) + "], got " + numerics::shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), n = x.dim(1);
  const std::string prefix = layer_prefix(layer) + ".head.";
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> heads;
  std::vector<double> attn(batch * c.heads * n * n);
  for (std::size_t h = 0; h < c.heads; ++h) {
    const std::string hp = prefix + std::to_string(h);
    const Tensor q = ops::matmul(tape, x, p.at(hp + ".wq"));
    const Tensor k = ops::matmul(tape, x, p.at(hp + ".wk"));
    const Tensor v = ops::matmul(tape, x, p.at(hp + ".wv"));
    const Tensor scores = ops::scale(tape, ops::matmul(tape, q, ops::transpose_last2(tape, k)), inv_sqrt);
    const Tensor probs = ops::softmax(tape, scores);
    heads.push_back(ops::matmul(tape, probs, v));
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n * n; ++i) attn[((b * c.heads) + h) * n * n + i] = probs[b * n * n + i];
  }
  const Tensor joined = heads.size() == 1 ? heads.front() : ops::concat(tape, heads, 2);
  return {ops::matmul(tape, joined, p.at(layer_prefix(layer) + ".wo")),
          Tensor::from({batch, c.heads, n, n}, std::move(attn))};
}

/// Post-norm encoder block: attention and feed-forward, each with a residual
/// connection followed by LayerNorm.
inline AttentionOutput encoder_layer(Tape& tape, const Tensor& x, const ModelParams& p, const ModelConfig& c,
                                     std::size_t layer) {
  namespace ops = numerics;
  const std::string lp = layer_prefix(layer);
  auto mha = multi_head_attention(tape, x, p, c, layer);
  const Tensor x1 = ops::layer_norm(tape, ops::add(tape, x, mha.out), p.at(lp + ".ln1.gamma"), p.at(lp + ".ln1.beta"),
                                    c.ln_eps);
  const Tensor ffn = mlp2(tape, x1, p, lp + ".ffn");
  const Tensor h = ops::layer_norm(tape, ops::add(tape, x1, ffn), p.at(lp + ".ln2.gamma"), p.at(lp + ".ln2.beta"),
                                   c.ln_eps);
  return {h, std::move(mha.attention)};
}

/// Shared per-token reduction MLP: [B, N, d] -> [B, N, d_red].
inline Tensor reduce(Tape& tape, const Tensor& h, const ModelParams& p) { return mlp2(tape, h, p, "reduce"); }

struct PoolResult {
  Tensor pooled;   // [B, d_red]
  Tensor weights;  // [B, N], k non-zeros per row
  std::vector<std::vector<std::size_t>> selected;
};

/// Top-k attention pooling given per-token logits [B, N].
inline PoolResult attention_pool(Tape& tape, const Tensor& tokens, const Tensor& logits, std::size_t k) {
  namespace ops = numerics;
  if (tokens.rank() != 3 || logits.rank() != 2 || logits.dim(0) != tokens.dim(0) || logits.dim(1) != tokens.dim(1)) {
    throw ShapeError("attention_pool: tokens " + numerics::shape_str(tokens.shape()) + " vs logits " +
                     numerics::shape_str(logits.shape()));
  }
  const std::size_t batch = tokens.dim(0), n = tokens.dim(1), dr = tokens.dim(2);
  auto sel = ops::masked_topk_softmax(tape, logits, k);
  const Tensor w3 = ops::reshape(tape, sel.weights, {batch, 1, n});
  const Tensor pooled = ops::reshape(tape, ops::matmul(tape, w3, tokens), {batch, dr});
  return {pooled, sel.weights, std::move(sel.selected)};
}

struct ExpertPool {
  Tensor logits;  // alpha, [B, N]
  PoolResult pool;
};

inline ExpertPool expert_pool(Tape& tape, const Tensor& reduced, const ModelParams& p, std::size_t expert,
                              std::size_t k) {
  const std::size_t batch = reduced.dim(0), n = reduced.dim(1);
  const Tensor alpha =
      numerics::reshape(tape, mlp2(tape, reduced, p, expert_prefix(expert) + ".attn"), {batch, n});
  return {alpha, attention_pool(tape, reduced, alpha, k)};
}

inline Tensor expert_classify(Tape& tape, const Tensor& pooled, const ModelParams& p, std::size_t expert) {
  return mlp2(tape, pooled, p, expert_prefix(expert) + ".cls");
}

struct GateOutput {
  Tensor input;   // v, [B, N * d_red], ROI-major flatten
  Tensor logits;  // g, [B, E]
  Tensor probs;   // pi, [B, E]
};

inline GateOutput gate(Tape& tape, const Tensor& reduced, const ModelParams& p) {
  const std::size_t batch = reduced.dim(0);
  const Tensor v = numerics::reshape(tape, reduced, {batch, reduced.size() / batch});
  const Tensor g = mlp2(tape, v, p, "gate");
  return {v, g, numerics::softmax(tape, g)};
}

/// y_final[b] = sum_e pi[b, e] * y_e[b]
inline Tensor combine(Tape& tape, const Tensor& probs, const std::vector<Tensor>& expert_logits) {
  namespace ops = numerics;
  if (probs.rank() != 2 || probs.dim(1) != expert_logits.size()) {
    throw ShapeError("combine: gate " + numerics::shape_str(probs.shape()) + " vs " +
                     std::to_string(expert_logits.size()) + " experts");
  }
  const std::size_t batch = probs.dim(0), experts = probs.dim(1);
  for (const auto& y : expert_logits)
    if (y.rank() != 2 || y.dim(0) != batch || y.shape() != expert_logits.front().shape())
      throw ShapeError("combine: expert logits " + numerics::shape_str(y.shape()) + " inconsistent");
  const std::size_t classes = expert_logits.front().dim(1);
  const Tensor stacked = ops::stack(tape, expert_logits, 1);  // [B, E, C]
  const Tensor mixed = ops::matmul(tape, ops::reshape(tape, probs, {batch, 1, experts}), stacked);
  return ops::reshape(tape, mixed, {batch, classes});
}

}  // namespace asdformer::model
