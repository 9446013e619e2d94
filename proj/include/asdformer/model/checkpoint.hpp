#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "asdformer/model/config.hpp"
#include "asdformer/model/params.hpp"
#include "json.hpp"

namespace asdformer::model {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::string rng_state;  // opaque, textual engine state; may be empty
};

inline nlohmann::ordered_json checkpoint_to_json(const ModelConfig& config, const ModelParams& params,
                                                 const std::string& rng_state) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = nlohmann::ordered_json::parse(to_json(config).dump());
  nlohmann::ordered_json tensors = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensor(i);
    tensors[params.name(i)] = {{"shape", t.shape()}, {"data", t.values()}};
  }
  j["params"] = std::move(tensors);
  j["rng_state"] = rng_state;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ConfigError("unsupported checkpoint format_version " + j.at("format_version").dump());
    }
    Checkpoint ck;
    ck.config = model_config_from_json(j.at("config"));
    // The initialiser fixes the expected names and shapes; values are replaced.
    ck.params = init_params(ck.config, 0);
    const auto& stored = j.at("params");
    if (stored.size() != ck.params.size()) {
      throw ConfigError("checkpoint holds " + std::to_string(stored.size()) + " tensors, config implies " +
                        std::to_string(ck.params.size()));
    }
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      const auto& name = ck.params.name(i);
      if (!stored.contains(name)) throw ConfigError("checkpoint is missing parameter '" + name + "'");
      const auto& entry = stored.at(name);
      const auto shape = entry.at("shape").get<numerics::Shape>();
      auto data = entry.at("data").get<std::vector<double>>();
      if (shape != ck.params.tensor(i).shape()) {
        throw ConfigError("parameter '" + name + "' has shape " + numerics::shape_str(shape) + ", expected " +
                          numerics::shape_str(ck.params.tensor(i).shape()));
      }
      ck.params.tensor(i) = Tensor::from(shape, std::move(data), true);
    }
    ck.rng_state = j.value("rng_state", std::string{});
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params,
                            const std::string& rng_state = {}) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << checkpoint_to_json(config, params, rng_state).dump(1) << '\n';
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace asdformer::model
