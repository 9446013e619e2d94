#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asdformer/error.hpp"
#include "json.hpp"

namespace asdformer::model {

/// Which decoder sits on top of the shared encoder.
enum class Decoder {
  kMixture,  // gated mixture of pooling-classifier experts
  kPooling,  // one pooling-classifier expert, no gate
  kCls,      // learnable token prepended to the sequence
};

inline std::string to_string(Decoder d) {
  switch (d) {
    case Decoder::kMixture: return "asdformer";
    case Decoder::kPooling: return "pooling-classifier";
    case Decoder::kCls: return "cls";
  }
  return "?";
}

inline Decoder decoder_from_string(const std::string& s) {
  if (s == "asdformer" || s == "moe") return Decoder::kMixture;
  if (s == "pooling-classifier" || s == "pooling") return Decoder::kPooling;
  if (s == "cls") return Decoder::kCls;
  throw ConfigError("unknown decoder '" + s + "' (expected asdformer, pooling-classifier or cls)");
}

struct ModelConfig {
  std::size_t n_rois = 200;
  std::size_t embed_dim = 200;
  std::size_t heads = 8;
  std::size_t head_dim = 0;  // 0: embed_dim / heads
  std::size_t encoder_layers = 1;
  std::size_t ffn_dim = 0;  // 0: embed_dim
  std::size_t reduced_dim = 8;
  std::size_t num_experts = 2;
  std::vector<std::size_t> k_per_expert{8, 4};
  std::size_t num_classes = 2;
  double lambda = 0.23;
  double cv_eps = 1e-8;
  double ln_eps = 1e-5;
  std::size_t embed_hidden = 0;  // 0: embed_dim
  std::size_t reduction_hidden = 64;
  std::size_t attn_hidden = 0;  // 0: reduced_dim
  std::size_t classifier_hidden = 32;
  std::size_t gate_hidden = 64;
  std::uint64_t seed = 0;
  Decoder decoder = Decoder::kMixture;

  std::size_t resolved_head_dim() const { return head_dim ? head_dim : (heads ? embed_dim / heads : 0); }
  std::size_t resolved_ffn_dim() const { return ffn_dim ? ffn_dim : embed_dim; }
  std::size_t resolved_embed_hidden() const { return embed_hidden ? embed_hidden : embed_dim; }
  std::size_t resolved_attn_hidden() const { return attn_hidden ? attn_hidden : reduced_dim; }

  /// Throws ConfigError describing the first violated constraint.
  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
    if (n_rois == 0 || embed_dim == 0 || heads == 0 || encoder_layers == 0 || reduced_dim == 0 ||
        num_experts == 0 || num_classes == 0 || reduction_hidden == 0 || classifier_hidden == 0 ||
        gate_hidden == 0) {
      fail("all dimensions must be positive");
    }
    if (heads * resolved_head_dim() != embed_dim) {
      fail("heads * head_dim (" + std::to_string(heads) + " * " + std::to_string(resolved_head_dim()) +
           ") must equal embed_dim " + std::to_string(embed_dim));
    }
    if (k_per_expert.size() != num_experts) {
      fail("k_per_expert has " + std::to_string(k_per_expert.size()) + " entries for " +
           std::to_string(num_experts) + " experts");
    }
    for (auto k : k_per_expert)
      if (k < 1 || k > n_rois) fail("every k must lie in [1, n_rois]");
    if (decoder != Decoder::kCls && reduced_dim >= embed_dim) fail("reduced_dim must be smaller than embed_dim");
    if (decoder == Decoder::kPooling && num_experts != 1) fail("pooling-classifier decoder requires num_experts == 1");
    if (!(lambda >= 0.0)) fail("lambda must be non-negative");
    if (!(cv_eps > 0.0) || !(ln_eps > 0.0)) fail("eps values must be positive");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"n_rois", c.n_rois},
      {"embed_dim", c.embed_dim},
      {"heads", c.heads},
      {"head_dim", c.resolved_head_dim()},
      {"encoder_layers", c.encoder_layers},
      {"ffn_dim", c.resolved_ffn_dim()},
      {"reduced_dim", c.reduced_dim},
      {"num_experts", c.num_experts},
      {"k_per_expert", c.k_per_expert},
      {"num_classes", c.num_classes},
      {"lambda", c.lambda},
      {"cv_eps", c.cv_eps},
      {"ln_eps", c.ln_eps},
      {"embed_hidden", c.resolved_embed_hidden()},
      {"reduction_hidden", c.reduction_hidden},
      {"attn_hidden", c.resolved_attn_hidden()},
      {"classifier_hidden", c.classifier_hidden},
      {"gate_hidden", c.gate_hidden},
      {"seed", c.seed},
      {"decoder", to_string(c.decoder)},
  };
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_json(ModelConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_rois") c.n_rois = value.get<std::size_t>();
      else if (key == "embed_dim") c.embed_dim = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "head_dim") c.head_dim = value.get<std::size_t>();
      else if (key == "encoder_layers") c.encoder_layers = value.get<std::size_t>();
      else if (key == "ffn_dim") c.ffn_dim = value.get<std::size_t>();
      else if (key == "reduced_dim") c.reduced_dim = value.get<std::size_t>();
      else if (key == "num_experts") c.num_experts = value.get<std::size_t>();
      else if (key == "k_per_expert") c.k_per_expert = value.get<std::vector<std::size_t>>();
      else if (key == "num_classes") c.num_classes = value.get<std::size_t>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "cv_eps") c.cv_eps = value.get<double>();
      else if (key == "ln_eps") c.ln_eps = value.get<double>();
      else if (key == "embed_hidden") c.embed_hidden = value.get<std::size_t>();
      else if (key == "reduction_hidden") c.reduction_hidden = value.get<std::size_t>();
      else if (key == "attn_hidden") c.attn_hidden = value.get<std::size_t>();
      else if (key == "classifier_hidden") c.classifier_hidden = value.get<std::size_t>();
      else if (key == "gate_hidden") c.gate_hidden = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "decoder") c.decoder = decoder_from_string(value.get<std::string>());
      else throw ConfigError("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  apply_json(c, j);
  c.validate();
  return c;
}

}  // namespace asdformer::model
