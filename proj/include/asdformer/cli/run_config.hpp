#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asdformer/data/io.hpp"
#include "asdformer/data/split.hpp"
#include "asdformer/data/synth.hpp"
#include "asdformer/interpret/emit.hpp"
#include "asdformer/model/config.hpp"
#include "asdformer/training/trainer.hpp"
#include "json.hpp"

namespace asdformer::cli {

/// Everything a command needs: model and training hyperparameters, paths and
/// command-specific settings. Built from defaults, then a config file, then
/// flags.
struct RunConfig {
  model::ModelConfig model;
  bool n_rois_set = false;  // otherwise taken from the dataset
  training::TrainConfig train;
  data::SplitFractions split;
  std::uint64_t seed = 0;
  bool seed_set = false;  // eval falls back to the seed stored in the checkpoint
  std::string dataset, checkpoint, out;

  data::SynthOptions synth;
  std::string eval_split = "all";
  std::vector<std::string> subjects;  // empty: every subject
  interpret::InterpretOptions interp;
  interpret::ReportFormat format = interpret::ReportFormat::kBoth;
  std::vector<std::uint64_t> ablate_seeds;  // empty: just `seed`
  std::size_t gradcheck_batch = 3;
  bool corrupt_backward = false;
};

/// Small model used by `gradcheck` unless overridden.
inline model::ModelConfig gradcheck_model_defaults() {
  model::ModelConfig c;
  c.n_rois = 6;
  c.embed_dim = 8;
  c.heads = 2;
  c.reduced_dim = 4;
  c.num_experts = 2;
  c.k_per_expert = {2, 1};
  c.reduction_hidden = 6;
  c.classifier_hidden = 5;
  c.gate_hidden = 7;
  return c;
}

namespace detail {

template <typename F>
void for_each_key(const nlohmann::json& j, const std::string& section, F&& f) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!f(key, value)) throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
  }
}

}  // namespace detail

/// Overlays a config file onto `rc`; unknown keys anywhere are rejected.
inline void apply_config_json(RunConfig& rc, const nlohmann::json& j) {
  try {
    detail::for_each_key(j, "", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "seed") {
        rc.seed = v.get<std::uint64_t>();
        rc.seed_set = true;
      }
      else if (key == "dataset") rc.dataset = v.get<std::string>();
      else if (key == "checkpoint") rc.checkpoint = v.get<std::string>();
      else if (key == "out") rc.out = v.get<std::string>();
      else if (key == "model") {
        model::apply_json(rc.model, v);
        rc.n_rois_set = rc.n_rois_set || v.contains("n_rois");
      } else if (key == "train") {
        detail::for_each_key(v, key, [&](const std::string& k, const nlohmann::json& x) {
          if (k == "lr") rc.train.lr = x.get<double>();
          else if (k == "weight_decay") rc.train.weight_decay = x.get<double>();
          else if (k == "batch_size") rc.train.batch_size = x.get<std::size_t>();
          else if (k == "max_epochs") rc.train.max_epochs = x.get<std::size_t>();
          else if (k == "patience") rc.train.patience = x.get<std::size_t>();
          else return false;
          return true;
        });
      } else if (key == "split") {
        detail::for_each_key(v, key, [&](const std::string& k, const nlohmann::json& x) {
          if (k == "train") rc.split.train = x.get<double>();
          else if (k == "val") rc.split.val = x.get<double>();
          else if (k == "test") rc.split.test = x.get<double>();
          else return false;
          return true;
        });
      } else if (key == "synth") {
        detail::for_each_key(v, key, [&](const std::string& k, const nlohmann::json& x) {
          if (k == "subjects") rc.synth.n_subjects = x.get<std::size_t>();
          else if (k == "rois") rc.synth.n_rois = x.get<std::size_t>();
          else if (k == "communities") rc.synth.communities = x.get<std::size_t>();
          else if (k == "delta") rc.synth.delta = x.get<double>();
          else if (k == "noise") rc.synth.noise = x.get<double>();
          else return false;
          return true;
        });
      } else if (key == "eval") {
        detail::for_each_key(v, key, [&](const std::string& k, const nlohmann::json& x) {
          if (k == "split") rc.eval_split = x.get<std::string>();
          else return false;
          return true;
        });
      } else if (key == "interpret") {
        detail::for_each_key(v, key, [&](const std::string& k, const nlohmann::json& x) {
          if (k == "subjects") rc.subjects = x.get<std::vector<std::string>>();
          else if (k == "head_mode") rc.interp.mode = interpret::head_mode_from_string(x.get<std::string>());
          else if (k == "layer") rc.interp.layer = x.get<std::size_t>();
          else if (k == "format") rc.format = interpret::report_format_from_string(x.get<std::string>());
          else return false;
          return true;
        });
      } else if (key == "ablate") {
        detail::for_each_key(v, key, [&](const std::string& k, const nlohmann::json& x) {
          if (k == "seeds") rc.ablate_seeds = x.get<std::vector<std::uint64_t>>();
          else return false;
          return true;
        });
      } else if (key == "gradcheck") {
        detail::for_each_key(v, key, [&](const std::string& k, const nlohmann::json& x) {
          if (k == "batch") rc.gradcheck_batch = x.get<std::size_t>();
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

inline void apply_config_file(RunConfig& rc, const std::string& path) {
  const std::string text = data::read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  apply_config_json(rc, j);
}

/// The single run seed drives initialisation, shuffling, splitting and synthesis.
inline void propagate_seed(RunConfig& rc) {
  rc.model.seed = rc.seed;
  rc.train.seed = rc.seed;
  rc.synth.seed = rc.seed;
}

inline nlohmann::ordered_json to_json(const RunConfig& rc) {
  nlohmann::ordered_json j;
  j["seed"] = rc.seed;
  j["dataset"] = rc.dataset;
  j["checkpoint"] = rc.checkpoint;
  j["out"] = rc.out;
  j["model"] = nlohmann::ordered_json::parse(model::to_json(rc.model).dump());
  j["train"] = {{"lr", rc.train.lr},
                {"weight_decay", rc.train.weight_decay},
                {"batch_size", rc.train.batch_size},
                {"max_epochs", rc.train.max_epochs},
                {"patience", rc.train.patience}};
  j["split"] = {{"train", rc.split.train}, {"val", rc.split.val}, {"test", rc.split.test}};
  return j;
}

}  // namespace asdformer::cli
