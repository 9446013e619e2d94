#pragma once

#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "asdformer/cli/commands.hpp"

namespace asdformer::cli {

namespace detail {

/// Registers flags whose values are applied to a RunConfig only when given,
/// after the config file has been read.
class FlagSet {
 public:
  using Applier = std::function<void(RunConfig&)>;

  explicit FlagSet(CLI::App* app) : app_(app) {}

  template <typename T, typename Setter>
  CLI::Option* add(const std::string& name, const std::string& desc, Setter setter) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app_->add_option(name, *value, desc);
    if constexpr (!CLI::detail::is_mutable_container<T>::value) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    appliers_.push_back([value, opt, setter](RunConfig& rc) {
      if (opt->count() > 0) setter(rc, *value);
    });
    return opt;
  }

  void apply(RunConfig& rc) const {
    for (const auto& a : appliers_) a(rc);
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<Applier> appliers_;
};

inline void add_common(FlagSet& f, std::string& config_path) {
  f.app()->add_option("--config", config_path, "JSON config file");
  f.add<std::uint64_t>("--seed", "Run seed", [](RunConfig& rc, std::uint64_t v) {
    rc.seed = v;
    rc.seed_set = true;
  });
  f.add<std::string>("--out", "Output directory", [](RunConfig& rc, const std::string& v) { rc.out = v; });
  f.add<std::string>("--dataset", "Dataset manifest", [](RunConfig& rc, const std::string& v) { rc.dataset = v; });
  f.add<std::string>("--checkpoint", "Checkpoint file",
                     [](RunConfig& rc, const std::string& v) { rc.checkpoint = v; });
}

inline void add_model(FlagSet& f) {
  f.add<std::size_t>("--rois", "Number of ROIs", [](RunConfig& rc, std::size_t v) {
    rc.model.n_rois = v;
    rc.n_rois_set = true;
  });
  f.add<std::size_t>("--embed-dim", "Embedding width d", [](RunConfig& rc, std::size_t v) { rc.model.embed_dim = v; });
  f.add<std::size_t>("--heads", "Attention heads", [](RunConfig& rc, std::size_t v) { rc.model.heads = v; });
  f.add<std::size_t>("--layers", "Encoder layers", [](RunConfig& rc, std::size_t v) { rc.model.encoder_layers = v; });
  f.add<std::size_t>("--reduced-dim", "Reduced width", [](RunConfig& rc, std::size_t v) { rc.model.reduced_dim = v; });
  f.add<std::size_t>("--experts", "Number of experts", [](RunConfig& rc, std::size_t v) { rc.model.num_experts = v; });
  f.add<std::vector<std::size_t>>("--k", "ROIs kept per expert, comma separated",
                                  [](RunConfig& rc, const std::vector<std::size_t>& v) { rc.model.k_per_expert = v; })
      ->delimiter(',');
  f.add<double>("--lambda", "Load-balancing weight", [](RunConfig& rc, double v) { rc.model.lambda = v; });
  f.add<std::string>("--decoder", "asdformer, pooling-classifier or cls",
                     [](RunConfig& rc, const std::string& v) { rc.model.decoder = model::decoder_from_string(v); });
}

inline void add_training(FlagSet& f) {
  f.add<double>("--lr", "Adam learning rate", [](RunConfig& rc, double v) { rc.train.lr = v; });
  f.add<double>("--weight-decay", "L2 weight decay", [](RunConfig& rc, double v) { rc.train.weight_decay = v; });
  f.add<std::size_t>("--batch-size", "Mini-batch size", [](RunConfig& rc, std::size_t v) { rc.train.batch_size = v; });
  f.add<std::size_t>("--epochs", "Maximum epochs", [](RunConfig& rc, std::size_t v) { rc.train.max_epochs = v; });
  f.add<std::size_t>("--patience", "Early-stopping patience",
                     [](RunConfig& rc, std::size_t v) { rc.train.patience = v; });
}

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<FlagSet> flags;
  std::string config_path;
  std::function<RunConfig()> defaults;
  std::function<int(RunConfig, std::ostream&)> run;
};

}  // namespace detail

/// Parses `args` (without the program name), runs one command and returns
/// its exit code. Reports go to `out`, diagnostics to `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ASDFormer connectome classifier", "asdformer"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<detail::Command>> commands;

  auto make = [&](const std::string& name, const std::string& desc, std::function<RunConfig()> defaults,
                  std::function<int(RunConfig, std::ostream&)> run) -> detail::Command& {
    auto c = std::make_unique<detail::Command>();
    c->app = app.add_subcommand(name, desc);
    c->flags = std::make_unique<detail::FlagSet>(c->app);
    c->defaults = std::move(defaults);
    c->run = std::move(run);
    detail::add_common(*c->flags, c->config_path);
    commands.push_back(std::move(c));
    return *commands.back();
  };
  const auto base = [] { return RunConfig{}; };

  auto& synth = make("synth", "Generate a synthetic dataset", base, cmd_synth);
  synth.flags->add<std::size_t>("--subjects", "Number of subjects",
                                [](RunConfig& rc, std::size_t v) { rc.synth.n_subjects = v; });
  synth.flags->add<std::size_t>("--rois", "Number of ROIs", [](RunConfig& rc, std::size_t v) { rc.synth.n_rois = v; });
  synth.flags->add<std::size_t>("--communities", "Number of communities",
                                [](RunConfig& rc, std::size_t v) { rc.synth.communities = v; });
  synth.flags->add<double>("--delta", "Planted effect size", [](RunConfig& rc, double v) { rc.synth.delta = v; });
  synth.flags->add<double>("--noise", "Per-subject noise scale", [](RunConfig& rc, double v) { rc.synth.noise = v; });

  auto& train = make("train", "Train a model", base, cmd_train);
  detail::add_model(*train.flags);
  detail::add_training(*train.flags);

  auto& eval = make("eval", "Evaluate a checkpoint", base, cmd_eval);
  eval.flags->add<std::string>("--split", "all, train, val or test",
                               [](RunConfig& rc, const std::string& v) { rc.eval_split = v; });

  auto& interp = make("interpret", "Write interpretation reports", base, cmd_interpret);
  interp.flags->add<std::vector<std::string>>("--subject", "Subject id (repeatable; default all)",
                                              [](RunConfig& rc, const std::vector<std::string>& v) { rc.subjects = v; });
  interp.flags->add<std::string>("--head-mode", "mean or per-head", [](RunConfig& rc, const std::string& v) {
    rc.interp.mode = interpret::head_mode_from_string(v);
  });
  interp.flags->add<std::size_t>("--layer", "Encoder layer (default last)",
                                 [](RunConfig& rc, std::size_t v) { rc.interp.layer = v; });
  interp.flags->add<std::string>("--format", "json, csv or both", [](RunConfig& rc, const std::string& v) {
    rc.format = interpret::report_format_from_string(v);
  });

  auto& ablate = make("ablate", "Compare CLS, Pooling-Classifier and ASDFormer", base, cmd_ablate);
  detail::add_model(*ablate.flags);
  detail::add_training(*ablate.flags);
  ablate.flags
      ->add<std::vector<std::uint64_t>>("--seeds", "Seeds, comma separated",
                                        [](RunConfig& rc, const std::vector<std::uint64_t>& v) { rc.ablate_seeds = v; })
      ->delimiter(',');

  auto& grad = make(
      "gradcheck", "Finite-difference gradient check",
      [] {
        RunConfig rc;
        rc.model = gradcheck_model_defaults();
        return rc;
      },
      cmd_gradcheck);
  detail::add_model(*grad.flags);
  grad.flags->add<std::size_t>("--batch", "Batch size", [](RunConfig& rc, std::size_t v) { rc.gradcheck_batch = v; });
  auto corrupt = std::make_shared<bool>(false);
  grad.app->add_flag("--corrupt-backward", *corrupt, "Perturb one backward rule")->group("");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (auto& c : commands) {
    if (!c->app->parsed()) continue;
    try {
      RunConfig rc = c->defaults();
      if (!c->config_path.empty()) apply_config_file(rc, c->config_path);
      c->flags->apply(rc);
      rc.corrupt_backward = *corrupt;
      return c->run(std::move(rc), out);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const ArgumentError& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const IoError& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kExitFailure;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitFailure;
    }
  }
  return kExitUsage;
}

}  // namespace asdformer::cli
