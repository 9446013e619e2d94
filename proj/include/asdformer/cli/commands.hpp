#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "asdformer/cli/run_config.hpp"
#include "asdformer/data.hpp"
#include "asdformer/interpret.hpp"
#include "asdformer/model/checkpoint.hpp"
#include "asdformer/numerics/gradcheck.hpp"
#include "asdformer/training.hpp"
#include "json.hpp"

namespace asdformer::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

inline constexpr double kGradcheckTolerance = 1e-4;

namespace detail {

inline void emit(std::ostream& os, const nlohmann::ordered_json& j) { os << j.dump() << '\n'; }

inline void require(const std::string& value, const std::string& flag, const std::string& command) {
  if (value.empty()) throw ArgumentError(command + " needs " + flag);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

/// Dataset plus the model config resolved against its ROI count.
inline data::ConnectomeDataset load_for_model(RunConfig& rc) {
  auto ds = data::load_dataset(rc.dataset);
  if (rc.n_rois_set && rc.model.n_rois != ds.n_rois) {
    throw ConfigError("config sets n_rois=" + std::to_string(rc.model.n_rois) + " but the dataset has " +
                      std::to_string(ds.n_rois) + " ROIs");
  }
  rc.model.n_rois = ds.n_rois;
  return ds;
}

/// Metrics, with a null AUROC when the subset holds a single class.
inline nlohmann::ordered_json metrics_json(const model::ModelParams& params, const model::ModelConfig& config,
                                           const data::ConnectomeDataset& ds) {
  if (ds.empty()) return nullptr;
  if (ds.has_both_classes()) return training::to_json(training::evaluate(params, config, ds));
  const auto p = training::predict(params, config, ds);
  training::Metrics m;
  training::fill_confusion(m, p.predicted, p.labels);
  auto j = training::to_json(m);
  j["auroc"] = nullptr;
  return j;
}

inline data::ConnectomeDataset select_split(const data::ConnectomeDataset& ds, const RunConfig& rc,
                                            std::uint64_t seed) {
  if (rc.eval_split == "all") return ds;
  const auto s = data::stratified_split(ds, rc.split, seed);
  if (rc.eval_split == "train") return s.train;
  if (rc.eval_split == "val") return s.val;
  if (rc.eval_split == "test") return s.test;
  throw ArgumentError("unknown split '" + rc.eval_split + "' (expected all, train, val or test)");
}

inline void check_split_name(const std::string& s) {
  if (s != "all" && s != "train" && s != "val" && s != "test") {
    throw ArgumentError("unknown split '" + s + "' (expected all, train, val or test)");
  }
}

inline nlohmann::ordered_json history_json(const training::HistoryRow& h) {
  return {{"event", "epoch"},     {"epoch", h.epoch}, {"train_loss", h.train_loss},
          {"val_auroc", h.val_auroc}, {"cv2", h.cv2},     {"gate_mean", h.gate_mean}};
}

/// "encoder.0", "expert.1", otherwise the first name component.
inline std::string param_group(const std::string& name) {
  const auto first = name.find('.');
  const std::string head = name.substr(0, first);
  if ((head == "encoder" || head == "expert") && first != std::string::npos) {
    return name.substr(0, name.find('.', first + 1));
  }
  return head;
}

inline numerics::Tensor gradcheck_inputs(std::mt19937_64& rng, std::size_t batch, std::size_t n) {
  std::uniform_real_distribution<double> dist(-0.9, 0.9);
  std::vector<double> v(batch * n * n, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      v[(b * n + i) * n + i] = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double r = dist(rng);
        v[(b * n + i) * n + j] = r;
        v[(b * n + j) * n + i] = r;
      }
    }
  return numerics::Tensor::from({batch, n, n}, std::move(v));
}

struct HookGuard {
  explicit HookGuard(bool on) { numerics::corrupt_backward_hook() = on; }
  ~HookGuard() { numerics::corrupt_backward_hook() = false; }
  HookGuard(const HookGuard&) = delete;
  HookGuard& operator=(const HookGuard&) = delete;
};

}  // namespace detail

inline int cmd_synth(RunConfig rc, std::ostream& os) {
  detail::require(rc.out, "--out", "synth");
  propagate_seed(rc);
  data::validate(rc.synth);
  const auto ds = data::synth_generate(rc.synth);
  const auto manifest = data::save_dataset(ds, rc.out);
  std::size_t positives = 0;
  for (const auto& s : ds.subjects) positives += s.label == 1 ? 1 : 0;
  detail::emit(os, {{"command", "synth"},
                    {"manifest", manifest.string()},
                    {"subjects", ds.size()},
                    {"rois", ds.n_rois},
                    {"label0", ds.size() - positives},
                    {"label1", positives},
                    {"delta", rc.synth.delta},
                    {"seed", rc.seed}});
  return kExitOk;
}

inline int cmd_train(RunConfig rc, std::ostream& os) {
  detail::require(rc.dataset, "--dataset", "train");
  detail::require(rc.out, "--out", "train");
  propagate_seed(rc);
  const auto ds = detail::load_for_model(rc);
  rc.model.validate();
  rc.train.validate(rc.model);
  const auto split = data::stratified_split(ds, rc.split, rc.seed);
  if (!split.val.has_both_classes()) throw DataError("validation split must contain both classes");

  const auto init = model::init_params(rc.model, rc.model.seed);
  const auto result = training::train(init, rc.model, split.train, split.val, rc.train,
                                      [&](const training::HistoryRow& h) { detail::emit(os, detail::history_json(h)); });

  const std::filesystem::path out(rc.out);
  detail::ensure_dir(out);
  model::save_checkpoint(out / "checkpoint.json", rc.model, result.params, result.rng_state);
  training::write_history(out / "history.csv", result.history, training::history_gate_columns(rc.model));
  data::write_text(out / "config.json", to_json(rc).dump(2) + "\n");

  detail::emit(os, {{"command", "train"},
                    {"best_epoch", result.best_epoch},
                    {"epochs_run", result.history.size()},
                    {"best_val_auroc", result.best_val_auroc},
                    {"val", detail::metrics_json(result.params, rc.model, split.val)},
                    {"test", detail::metrics_json(result.params, rc.model, split.test)},
                    {"checkpoint", (out / "checkpoint.json").string()}});
  return kExitOk;
}

inline int cmd_eval(RunConfig rc, std::ostream& os) {
  detail::require(rc.checkpoint, "--checkpoint", "eval");
  detail::require(rc.dataset, "--dataset", "eval");
  detail::check_split_name(rc.eval_split);
  if (!std::filesystem::exists(rc.checkpoint)) throw IoError("checkpoint " + rc.checkpoint + " does not exist");
  const auto ck = model::load_checkpoint(rc.checkpoint);
  const auto ds = data::load_dataset(rc.dataset);
  if (ds.n_rois != ck.config.n_rois) {
    throw ConfigError("dataset has " + std::to_string(ds.n_rois) + " ROIs but the checkpoint expects " +
                      std::to_string(ck.config.n_rois));
  }
  const auto subset = detail::select_split(ds, rc, rc.seed_set ? rc.seed : ck.config.seed);
  const auto m = training::evaluate(ck.params, ck.config, subset);
  nlohmann::ordered_json j{{"command", "eval"}, {"split", rc.eval_split}, {"subjects", subset.size()}};
  const auto metrics = training::to_json(m);
  for (const auto& [k, v] : metrics.items()) j[k] = v;
  detail::emit(os, j);
  return kExitOk;
}

inline int cmd_interpret(RunConfig rc, std::ostream& os) {
  detail::require(rc.checkpoint, "--checkpoint", "interpret");
  detail::require(rc.dataset, "--dataset", "interpret");
  detail::require(rc.out, "--out", "interpret");
  if (!std::filesystem::exists(rc.checkpoint)) throw IoError("checkpoint " + rc.checkpoint + " does not exist");
  const auto ck = model::load_checkpoint(rc.checkpoint);
  const auto ds = data::load_dataset(rc.dataset);
  std::vector<std::string> ids = rc.subjects;
  if (ids.empty())
    for (const auto& s : ds.subjects) ids.push_back(s.id);
  for (const auto& id : ids) ds.index_of(id);
  if (ck.config.decoder == model::Decoder::kCls) {
    throw ArgumentError("interpretation needs a pooling decoder; the checkpoint uses cls");
  }
  if (rc.interp.layer && *rc.interp.layer >= ck.config.encoder_layers) {
    throw ArgumentError("layer " + std::to_string(*rc.interp.layer) + " does not exist (model has " +
                        std::to_string(ck.config.encoder_layers) + ")");
  }
  const auto reports = interpret::interpret_subjects(ck.params, ck.config, ds, ids, rc.interp);
  const std::filesystem::path out(rc.out);
  for (const auto& r : reports) {
    interpret::emit_report(r, out / r.subject_id, rc.format);
    std::vector<double> sums;
    for (const auto& e : r.experts) {
      double s = 0.0;
      for (const auto& roi : e.rois) s += roi.score;
      sums.push_back(s);
    }
    detail::emit(os, {{"command", "interpret"},
                      {"subject_id", r.subject_id},
                      {"predicted_label", r.predicted_label},
                      {"prob_asd", r.prob_asd},
                      {"gate_probs", r.gate_probs},
                      {"expert_score_sums", sums},
                      {"dir", (out / r.subject_id).string()}});
  }
  return kExitOk;
}

/// The three designs compared by `ablate`, sharing one single-layer encoder.
inline std::vector<std::pair<std::string, model::ModelConfig>> ablation_designs(const model::ModelConfig& base) {
  auto shared = base;
  shared.encoder_layers = 1;
  auto cls = shared;
  cls.decoder = model::Decoder::kCls;
  auto pooling = shared;
  pooling.decoder = model::Decoder::kPooling;
  pooling.num_experts = 1;
  pooling.k_per_expert = {shared.k_per_expert.at(0)};
  auto mixture = shared;
  mixture.decoder = model::Decoder::kMixture;
  return {{"CLS", cls}, {"Pooling-Classifier", pooling}, {"ASDFormer", mixture}};
}

inline int cmd_ablate(RunConfig rc, std::ostream& os) {
  detail::require(rc.dataset, "--dataset", "ablate");
  detail::require(rc.out, "--out", "ablate");
  const std::vector<std::uint64_t> seeds = rc.ablate_seeds.empty() ? std::vector<std::uint64_t>{rc.seed}
                                                                    : rc.ablate_seeds;
  const auto ds = detail::load_for_model(rc);
  const auto designs = ablation_designs(rc.model);
  for (const auto& [name, config] : designs) {
    config.validate();
    rc.train.validate(config);
  }

  std::string csv = "design,seed,auroc,accuracy,sensitivity,specificity\n";
  for (auto seed : seeds) {
    const auto split = data::stratified_split(ds, rc.split, seed);
    for (const auto& [name, base] : designs) {
      auto config = base;
      config.seed = seed;
      auto tc = rc.train;
      tc.seed = seed;
      const auto result = training::train(model::init_params(config, seed), config, split.train, split.val, tc);
      const auto m = training::evaluate(result.params, config, split.test);
      csv += name + ',' + std::to_string(seed) + ',' + data::format_fixed(m.auroc) + ',' +
             data::format_fixed(m.accuracy) + ',' + data::format_fixed(m.sensitivity) + ',' +
             data::format_fixed(m.specificity) + '\n';
      detail::emit(os, {{"command", "ablate"},
                        {"design", name},
                        {"seed", seed},
                        {"best_epoch", result.best_epoch},
                        {"auroc", m.auroc},
                        {"accuracy", m.accuracy},
                        {"sensitivity", m.sensitivity},
                        {"specificity", m.specificity}});
    }
  }
  const std::filesystem::path out(rc.out);
  detail::ensure_dir(out);
  data::write_text(out / "ablation.csv", csv);
  return kExitOk;
}

struct GradcheckGroup {
  std::string name;
  std::size_t tensors = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
};

/// Central-difference check of every parameter of `config` under the total
/// loss, on a seeded random batch. Groups follow parameter name prefixes.
inline std::vector<GradcheckGroup> run_gradcheck(const model::ModelConfig& config, std::size_t batch,
                                                 std::uint64_t seed, bool corrupt = false) {
  config.validate();
  if (batch < 2) throw ConfigError("gradcheck batch must be at least 2");
  auto params = model::init_params(config, seed);
  std::mt19937_64 rng(seed + 100);
  const auto x = detail::gradcheck_inputs(rng, batch, config.n_rois);
  std::vector<int> labels(batch);
  for (std::size_t b = 0; b < batch; ++b) labels[b] = static_cast<int>((b % 3 == 0 ? 0 : 1) % config.num_classes);
  const bool mixture = config.decoder == model::Decoder::kMixture;
  auto loss = [&](numerics::Tape& t) {
    const auto out = model::run_model(t, x, params, config);
    return model::total_loss(t, out.logits, labels, mixture ? out.trace.gate_probs : numerics::Tensor{},
                             config.lambda, config.cv_eps);
  };
  detail::HookGuard guard(corrupt);
  const auto results = numerics::gradient_check(loss, params.tensors());
  std::vector<GradcheckGroup> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto g = detail::param_group(params.name(i));
    auto [it, fresh] = index.emplace(g, groups.size());
    if (fresh) groups.push_back({g, 0, 0.0, {}});
    auto& group = groups[it->second];
    ++group.tensors;
    if (results[i].max_rel_error >= group.max_rel_error) {
      group.max_rel_error = results[i].max_rel_error;
      group.worst_param = params.name(i);
    }
  }
  return groups;
}

inline int cmd_gradcheck(RunConfig rc, std::ostream& os) {
  propagate_seed(rc);
  const auto groups = run_gradcheck(rc.model, rc.gradcheck_batch, rc.seed, rc.corrupt_backward);
  double worst = 0.0;
  std::vector<std::string> failed;
  for (const auto& g : groups) {
    const bool ok = g.max_rel_error < kGradcheckTolerance;
    if (!ok) failed.push_back(g.name);
    worst = std::max(worst, g.max_rel_error);
    detail::emit(os, {{"group", g.name},
                      {"tensors", g.tensors},
                      {"max_rel_error", g.max_rel_error},
                      {"worst_param", g.worst_param},
                      {"pass", ok}});
  }
  detail::emit(os, {{"command", "gradcheck"},
                    {"max_rel_error", worst},
                    {"tolerance", kGradcheckTolerance},
                    {"pass", failed.empty()},
                    {"failed_groups", failed}});
  return failed.empty() ? kExitOk : kExitFailure;
}

}  // namespace asdformer::cli
