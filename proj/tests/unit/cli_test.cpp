#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "asdformer/cli/app.hpp"
#include "support/tempdir.hpp"

namespace {

using namespace asdformer;
using oracle::TempDir;

struct Run {
  int code = 0;
  std::vector<nlohmann::json> lines;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(args, out, err);
  std::istringstream is(out.str());
  for (std::string line; std::getline(is, line);) r.lines.push_back(nlohmann::json::parse(line));
  r.err = err.str();
  return r;
}

std::string read(const std::filesystem::path& p) { return data::read_text(p); }

std::string synth(const TempDir& dir, const std::string& name, std::string subjects = "40", std::string rois = "8",
                  std::string delta = "0.4") {
  const auto out = (dir / name).string();
  const auto r = run({"synth", "--subjects", subjects, "--rois", rois, "--delta", delta, "--seed", "3", "--out", out});
  EXPECT_EQ(r.code, 0) << r.err;
  return (dir / name / "manifest.json").string();
}

std::vector<std::string> small_train(const std::string& dataset, const std::string& out) {
  return {"train",   "--dataset", dataset, "--out",   out,  "--embed-dim", "8",   "--heads",      "2",
          "--reduced-dim", "4",   "--k",   "3,2",     "--lr", "1e-3",        "--batch-size", "8", "--epochs",
          "3",       "--patience", "3",    "--seed",  "5"};
}

TEST(CliSynth, WritesLoadableBalancedDataset) {
  TempDir dir("cli_synth");
  const auto r = run({"synth", "--subjects", "200", "--rois", "20", "--delta", "0.4", "--seed", "1", "--out",
                      (dir / "ds").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ds = data::load_dataset(dir / "ds" / "manifest.json");
  EXPECT_EQ(ds.size(), 200u);
  std::size_t ones = 0;
  for (const auto& s : ds.subjects) ones += s.label;
  EXPECT_EQ(ones, 100u);
  EXPECT_EQ(r.lines.at(0)["label1"], 100);
}

TEST(CliSynth, SameFlagsGiveIdenticalFiles) {
  TempDir dir("cli_synth_det");
  synth(dir, "a");
  synth(dir, "b");
  for (const auto& f : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!f.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(f.path(), dir / "a");
    EXPECT_EQ(read(f.path()), read(dir / "b" / rel)) << rel;
  }
}

TEST(CliSynth, InvalidFlagsTouchNothing) {
  TempDir dir("cli_synth_bad");
  const auto r = run({"synth", "--subjects", "1", "--out", (dir / "x").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "x"));
  EXPECT_EQ(run({"synth", "--bogus"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST(CliTrain, EmitsArtifactsAndIsDeterministic) {
  TempDir dir("cli_train");
  const auto ds = synth(dir, "ds");
  const auto a = run(small_train(ds, (dir / "a").string()));
  ASSERT_EQ(a.code, 0) << a.err;
  for (const char* f : {"checkpoint.json", "history.csv", "config.json"}) EXPECT_TRUE(std::filesystem::exists(dir / "a" / f));
  EXPECT_EQ(a.lines.size(), 4u);
  EXPECT_EQ(a.lines.back()["command"], "train");
  EXPECT_TRUE(a.lines.back()["test"].contains("auroc"));
  const auto b = run(small_train(ds, (dir / "b").string()));
  ASSERT_EQ(b.code, 0);
  for (const char* f : {"checkpoint.json", "history.csv"}) EXPECT_EQ(read(dir / "a" / f), read(dir / "b" / f)) << f;
  auto resolved = nlohmann::json::parse(read(dir / "a" / "config.json"));
  auto other = nlohmann::json::parse(read(dir / "b" / "config.json"));
  EXPECT_EQ(resolved["out"], (dir / "a").string());
  resolved.erase("out");
  other.erase("out");
  EXPECT_EQ(resolved, other);
  EXPECT_EQ(resolved["model"]["n_rois"], 8);
  EXPECT_EQ(resolved["seed"], 5);
}

TEST(CliTrain, ZeroLearningRateKeepsInitialisation) {
  TempDir dir("cli_train_lr0");
  const auto ds = synth(dir, "ds");
  auto args = small_train(ds, (dir / "r").string());
  args.insert(args.end(), {"--lr", "0"});
  ASSERT_EQ(run(args).code, 0);
  const auto ck = model::load_checkpoint(dir / "r" / "checkpoint.json");
  EXPECT_TRUE(ck.params.values_equal(model::init_params(ck.config, 5)));
  EXPECT_FALSE(ck.rng_state.empty());
}

TEST(CliTrain, ConfigFilePrecedenceAndUnknownKeys) {
  TempDir dir("cli_config");
  const auto ds = synth(dir, "ds");
  data::write_text(dir / "cfg.json", R"({"train": {"max_epochs": 4, "patience": 4}, "model": {"lambda": 0.5}})");
  auto args = small_train(ds, (dir / "r").string());
  args.erase(args.end() - 6, args.end() - 2);  // drop --epochs / --patience
  args.insert(args.end(), {"--config", (dir / "cfg.json").string(), "--lambda", "0.1"});
  ASSERT_EQ(run(args).code, 0);
  const auto resolved = nlohmann::json::parse(read(dir / "r" / "config.json"));
  EXPECT_EQ(resolved["train"]["max_epochs"], 4);
  EXPECT_EQ(resolved["model"]["lambda"], 0.1);

  data::write_text(dir / "bad.json", R"({"train": {"epochz": 4}})");
  const auto bad = run({"train", "--config", (dir / "bad.json").string(), "--dataset", ds, "--out",
                        (dir / "bad").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("train.epochz"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "bad"));
}

TEST(CliTrain, InvalidSettingsAreRejectedBeforeWriting) {
  TempDir dir("cli_train_bad");
  const auto ds = synth(dir, "ds");
  auto args = small_train(ds, (dir / "r").string());
  args.insert(args.end(), {"--lr", "-1"});
  EXPECT_EQ(run(args).code, 2);
  args = small_train(ds, (dir / "r").string());
  args.insert(args.end(), {"--rois", "9"});
  EXPECT_EQ(run(args).code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "r"));
}

TEST(CliEval, MetricsAndErrors) {
  TempDir dir("cli_eval");
  const auto ds = synth(dir, "ds", "60");
  const auto flat = synth(dir, "flat", "60", "8", "0");
  auto args = small_train(ds, (dir / "r").string());
  args.insert(args.end(), {"--epochs", "15", "--patience", "15"});
  ASSERT_EQ(run(args).code, 0);
  const auto ck = (dir / "r" / "checkpoint.json").string();
  const auto on_train = run({"eval", "--checkpoint", ck, "--dataset", ds, "--split", "train"});
  ASSERT_EQ(on_train.code, 0) << on_train.err;
  const auto on_flat = run({"eval", "--checkpoint", ck, "--dataset", flat});
  ASSERT_EQ(on_flat.code, 0);
  EXPECT_GT(on_train.lines[0]["auroc"].get<double>(), on_flat.lines[0]["auroc"].get<double>());
  for (const char* k : {"auroc", "accuracy", "sensitivity", "specificity", "confusion"}) {
    EXPECT_TRUE(on_train.lines[0].contains(k)) << k;
  }
  // The split seed defaults to the one stored in the checkpoint.
  const auto test_default = run({"eval", "--checkpoint", ck, "--dataset", ds, "--split", "test"});
  const auto test_seeded = run({"eval", "--checkpoint", ck, "--dataset", ds, "--split", "test", "--seed", "5"});
  EXPECT_EQ(test_default.lines[0], test_seeded.lines[0]);

  const auto missing = run({"eval", "--checkpoint", (dir / "none.json").string(), "--dataset", ds});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("none.json"), std::string::npos);
  const auto other = synth(dir, "other", "40", "10");
  EXPECT_EQ(run({"eval", "--checkpoint", ck, "--dataset", other}).code, 2);
  EXPECT_EQ(run({"eval", "--checkpoint", ck, "--dataset", ds, "--split", "holdout"}).code, 2);
}

TEST(CliInterpret, ReportsEverySubjectWithConsistentScores) {
  TempDir dir("cli_interp");
  const auto ds = synth(dir, "ds", "30", "20");
  auto args = small_train(ds, (dir / "r").string());
  args[12] = "8,4";  // --k
  ASSERT_EQ(run(args).code, 0);
  const auto ck = (dir / "r" / "checkpoint.json").string();
  const auto r = run({"interpret", "--checkpoint", ck, "--dataset", ds, "--out", (dir / "rep").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(r.lines.size(), 30u);
  for (const auto& line : r.lines) {
    const auto gates = line["gate_probs"].get<std::vector<double>>();
    const auto sums = line["expert_score_sums"].get<std::vector<double>>();
    ASSERT_EQ(gates.size(), 2u);
    for (std::size_t e = 0; e < 2; ++e) EXPECT_NEAR(sums[e], gates[e], 1e-9);
    const auto id = line["subject_id"].get<std::string>();
    const auto report = interpret::report_from_json(nlohmann::json::parse(read(dir / "rep" / id / "report.json")));
    EXPECT_EQ(report.experts.at(0).rois.size(), 8u);
    EXPECT_EQ(report.experts.at(1).rois.size(), 4u);
    EXPECT_TRUE(std::filesystem::exists(dir / "rep" / id / "attention.csv"));
  }
}

TEST(CliInterpret, FlagsAndErrors) {
  TempDir dir("cli_interp_flags");
  const auto ds = synth(dir, "ds");
  ASSERT_EQ(run(small_train(ds, (dir / "r").string())).code, 0);
  const auto ck = (dir / "r" / "checkpoint.json").string();
  const auto out = (dir / "rep").string();
  const auto r = run({"interpret", "--checkpoint", ck, "--dataset", ds, "--out", out, "--subject", "sub-0002",
                      "--head-mode", "per-head", "--format", "csv", "--layer", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.lines.size(), 1u);
  EXPECT_FALSE(std::filesystem::exists(dir / "rep" / "sub-0002" / "report.json"));
  EXPECT_EQ(read(dir / "rep" / "sub-0002" / "attention.csv").substr(0, 44), "roi_index,head,target_community,mean_attenti");
  EXPECT_EQ(run({"interpret", "--checkpoint", ck, "--dataset", ds, "--out", out, "--subject", "nobody"}).code, 2);
  EXPECT_EQ(run({"interpret", "--checkpoint", ck, "--dataset", ds, "--out", out, "--layer", "1"}).code, 2);
  EXPECT_EQ(run({"interpret", "--checkpoint", ck, "--dataset", ds, "--out", out, "--head-mode", "max"}).code, 2);
}

TEST(CliAblate, OneRowPerDesignAndSeed) {
  TempDir dir("cli_ablate");
  const auto ds = synth(dir, "ds");
  const auto r = run({"ablate", "--dataset", ds, "--out", (dir / "ab").string(), "--seeds", "1,2", "--embed-dim", "8",
                      "--heads", "2", "--reduced-dim", "4", "--k", "3,2", "--lr", "1e-3", "--batch-size", "8",
                      "--epochs", "2", "--patience", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = data::read_lines(dir / "ab" / "ablation.csv");
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0], "design,seed,auroc,accuracy,sensitivity,specificity");
  std::set<std::string> designs;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = data::split_fields(lines[i]);
    ASSERT_EQ(fields.size(), 6u);
    designs.insert(std::string(fields[0]));
    for (std::size_t f = 2; f < 6; ++f) {
      const double v = data::parse_double(fields[f], "ablation");
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(designs, (std::set<std::string>{"CLS", "Pooling-Classifier", "ASDFormer"}));
}

TEST(CliGradcheck, DefaultAndThreeExpertConfigsPass) {
  const auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.lines.back()["pass"].get<bool>());
  std::set<std::string> groups;
  for (std::size_t i = 0; i + 1 < r.lines.size(); ++i) groups.insert(r.lines[i]["group"].get<std::string>());
  EXPECT_EQ(groups, (std::set<std::string>{"embed", "encoder.0", "reduce", "expert.0", "expert.1", "gate"}));

  TempDir dir("cli_grad");
  data::write_text(dir / "e3.json", R"({"model": {"num_experts": 3, "k_per_expert": [3, 2, 1]}})");
  const auto e3 = run({"gradcheck", "--config", (dir / "e3.json").string()});
  EXPECT_EQ(e3.code, 0);
  EXPECT_EQ(e3.lines.size(), 8u);
}

TEST(CliGradcheck, CorruptedBackwardFails) {
  const auto r = run({"gradcheck", "--corrupt-backward"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.lines.back()["failed_groups"].empty());
  EXPECT_FALSE(numerics::corrupt_backward_hook().load());
  EXPECT_EQ(run({"gradcheck"}).code, 0);
}

TEST(CliConfig, ParamGroups) {
  EXPECT_EQ(cli::detail::param_group("encoder.0.head.1.wq"), "encoder.0");
  EXPECT_EQ(cli::detail::param_group("expert.2.attn.fc1.w"), "expert.2");
  EXPECT_EQ(cli::detail::param_group("gate.fc1.b"), "gate");
  EXPECT_EQ(cli::detail::param_group("embed.ln.gamma"), "embed");
}

}  // namespace
