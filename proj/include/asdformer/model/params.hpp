#pragma once

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "asdformer/model/config.hpp"
#include "asdformer/numerics/tensor.hpp"

namespace asdformer::model {

using numerics::Shape;
using numerics::Tensor;

/// Named learnable tensors in a fixed insertion order. Copies share storage;
/// use clone() for an independent snapshot.
class ModelParams {
 public:
  void add(std::string name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const Tensor& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ContractError("missing parameter '" + std::string(name) + "'");
    return entries_[it->second].second;
  }
  Tensor& at(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).at(name));
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Tensor& tensor(std::size_t i) const { return entries_[i].second; }
  Tensor& tensor(std::size_t i) { return entries_[i].second; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  ModelParams clone() const {
    ModelParams out;
    for (const auto& [n, t] : entries_) out.add(n, t.clone());
    return out;
  }

  bool values_equal(const ModelParams& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (name(i) != other.name(i) || tensor(i).shape() != other.tensor(i).shape() ||
          tensor(i).values() != other.tensor(i).values()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : rng_(seed) {}

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = rows.
  void weight(const std::string& name, std::size_t rows, std::size_t cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = dist(rng_);
    params_.add(name, Tensor::from({rows, cols}, std::move(v), true));
  }

  void vector_param(const std::string& name, std::size_t n, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng_);
    params_.add(name, Tensor::from({n}, std::move(v), true));
  }

  void constant(const std::string& name, std::size_t n, double value) {
    params_.add(name, Tensor::filled({n}, value, true));
  }

  void mlp(const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out) {
    weight(prefix + ".fc1.w", in, hidden);
    constant(prefix + ".fc1.b", hidden, 0.0);
    weight(prefix + ".fc2.w", hidden, out);
    constant(prefix + ".fc2.b", out, 0.0);
  }

  void layer_norm(const std::string& prefix, std::size_t d) {
    constant(prefix + ".gamma", d, 1.0);
    constant(prefix + ".beta", d, 0.0);
  }

  ModelParams take() { return std::move(params_); }

 private:
  std::mt19937_64 rng_;
  ModelParams params_;
};

}  // namespace detail

inline std::string layer_prefix(std::size_t layer) { return "encoder." + std::to_string(layer); }
inline std::string expert_prefix(std::size_t e) { return "expert." + std::to_string(e); }

/// Deterministic initialisation: weights uniform in +-1/sqrt(fan_in), biases
/// zero, LayerNorm gamma = 1 and beta = 0.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.embed_dim, dh = config.resolved_head_dim(), dr = config.reduced_dim;
  detail::ParamBuilder b(seed);

  b.mlp("embed", config.n_rois, config.resolved_embed_hidden(), d);
  b.layer_norm("embed.ln", d);
  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    const std::string p = layer_prefix(l);
    for (std::size_t h = 0; h < config.heads; ++h) {
      const std::string hp = p + ".head." + std::to_string(h);
      b.weight(hp + ".wq", d, dh);
      b.weight(hp + ".wk", d, dh);
      b.weight(hp + ".wv", d, dh);
    }
    b.weight(p + ".wo", config.heads * dh, d);
    b.layer_norm(p + ".ln1", d);
    b.mlp(p + ".ffn", d, config.resolved_ffn_dim(), d);
    b.layer_norm(p + ".ln2", d);
  }

  if (config.decoder == Decoder::kCls) {
    b.vector_param("cls.token", d, d);
    b.mlp("cls.head", d, config.classifier_hidden, config.num_classes);
    return b.take();
  }

  b.mlp("reduce", d, config.reduction_hidden, dr);
  for (std::size_t e = 0; e < config.num_experts; ++e) {
    b.mlp(expert_prefix(e) + ".attn", dr, config.resolved_attn_hidden(), 1);
    b.mlp(expert_prefix(e) + ".cls", dr, config.classifier_hidden, config.num_classes);
  }
  if (config.decoder == Decoder::kMixture) {
    b.mlp("gate", config.n_rois * dr, config.gate_hidden, config.num_experts);
  }
  return b.take();
}

/// Zeroes the gate's output weights and sets its output bias to log(odds), so
/// every subject starts with routing probabilities proportional to `odds`.
inline void bias_gate(ModelParams& params, const std::vector<double>& odds) {
  auto bias = params.at("gate.fc2.b").mutable_data();
  for (auto& w : params.at("gate.fc2.w").mutable_data()) w = 0.0;
  if (bias.size() != odds.size()) throw ArgumentError("bias_gate: one odds value per expert required");
  for (std::size_t e = 0; e < odds.size(); ++e) {
    if (!(odds[e] > 0.0)) throw ArgumentError("bias_gate: odds must be positive");
    bias[e] = std::log(odds[e]);
  }
}

}  // namespace asdformer::model
