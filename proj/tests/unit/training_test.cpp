#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "asdformer/data.hpp"
#include "asdformer/training.hpp"
#include "support/oracles.hpp"

namespace {

using namespace asdformer;
using namespace asdformer::training;
using model::ModelConfig;

ModelConfig small_config() {
  ModelConfig c;
  c.n_rois = 8;
  c.embed_dim = 8;
  c.heads = 2;
  c.reduced_dim = 4;
  c.num_experts = 2;
  c.k_per_expert = {3, 2};
  c.reduction_hidden = 8;
  c.classifier_hidden = 8;
  c.gate_hidden = 8;
  return c;
}

data::ConnectomeDataset small_dataset(std::size_t n = 40, std::uint64_t seed = 3) {
  data::SynthOptions o;
  o.n_subjects = n;
  o.n_rois = 8;
  o.seed = seed;
  return data::synth_generate(o);
}

TEST(Auroc, ClosedFormCases) {
  const std::vector<int> labels{1, 0, 1, 0};
  EXPECT_EQ(auroc(std::vector<double>{0.8, 0.9, 0.7, 0.2}, labels), 0.5);
  EXPECT_EQ(auroc(std::vector<double>{0.9, 0.1, 0.8, 0.2}, labels), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, labels), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
}

TEST(Auroc, MatchesPairEnumerationWithTies) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> level(0, 5);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s;
    std::vector<int> l;
    for (int i = 0; i < 30; ++i) {
      s.push_back(0.1 * level(rng));
      l.push_back(coin(rng) ? 1 : 0);
    }
    l[0] = 0;
    l[1] = 1;
    EXPECT_NEAR(auroc(s, l), oracle::pairwise_auroc(s, l), 1e-12);
  }
}

TEST(Metrics, ConfusionFixture) {
  Metrics m;
  fill_confusion(m, std::vector<int>{1, 0, 0, 1}, std::vector<int>{1, 1, 0, 0});
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.sensitivity, 0.5);
  EXPECT_EQ(m.specificity, 0.5);
  EXPECT_EQ(m.accuracy, 0.5);
}

TEST(Metrics, OracleAndConstantLogits) {
  const std::vector<int> labels{1, 0, 0, 1, 1};
  Predictions oracle_p, constant_p;
  for (int y : labels) {
    const auto [s, p] = binary_decision(y == 0 ? 1.0 : 0.0, y == 1 ? 1.0 : 0.0);
    oracle_p.scores.push_back(s);
    oracle_p.predicted.push_back(p);
    oracle_p.labels.push_back(y);
    const auto [cs, cp] = binary_decision(0.2, 0.7);
    constant_p.scores.push_back(cs);
    constant_p.predicted.push_back(cp);
    constant_p.labels.push_back(y);
  }
  const auto m = metrics_from(oracle_p);
  EXPECT_EQ(m.auroc, 1.0);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.sensitivity, 1.0);
  EXPECT_EQ(m.specificity, 1.0);
  const auto c = metrics_from(constant_p);
  EXPECT_EQ(c.auroc, 0.5);
  EXPECT_EQ(c.accuracy, 0.6);
}

TEST(Metrics, EqualLogitsPredictHc) {
  const auto [score, label] = binary_decision(0.4, 0.4);
  EXPECT_EQ(score, 0.5);
  EXPECT_EQ(label, 0);
}

TEST(Evaluate, InvariantToDatasetOrder) {
  const auto c = small_config();
  const auto p = model::init_params(c, 4);
  auto ds = small_dataset(30);
  const auto a = evaluate(p, c, ds);
  std::mt19937_64 rng(2);
  std::shuffle(ds.subjects.begin(), ds.subjects.end(), rng);
  const auto b = evaluate(p, c, ds);
  EXPECT_EQ(a.auroc, b.auroc);
  EXPECT_EQ(a.tp, b.tp);
  EXPECT_EQ(a.fp, b.fp);
  EXPECT_EQ(a.accuracy, b.accuracy);
}

TEST(Evaluate, RoiCountMismatchIsRejected) {
  auto c = small_config();
  const auto p = model::init_params(c, 4);
  auto ds = small_dataset(10);
  ds.n_rois = 9;
  EXPECT_THROW(evaluate(p, c, ds), ConfigError);
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
  const auto c = small_config();
  const auto init = model::init_params(c, 1);
  const auto split = data::stratified_split(small_dataset(), {}, 0);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.batch_size = 8;
  tc.max_epochs = 3;
  tc.patience = 3;
  const auto r = train(init, c, split.train, split.val, tc);
  EXPECT_TRUE(r.params.values_equal(init));
  EXPECT_FALSE(r.history.empty());
}

TEST(Train, SameSeedsGiveIdenticalHistory) {
  const auto c = small_config();
  const auto init = model::init_params(c, 1);
  const auto split = data::stratified_split(small_dataset(), {}, 0);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.max_epochs = 4;
  tc.patience = 4;
  tc.seed = 12;
  const auto a = train(init, c, split.train, split.val, tc);
  const auto b = train(init, c, split.train, split.val, tc);
  EXPECT_EQ(history_csv(a.history, 2), history_csv(b.history, 2));
  EXPECT_TRUE(a.params.values_equal(b.params));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
}

TEST(Train, LossDecreasesForSmallSteps) {
  auto c = small_config();
  c.lambda = 0.0;
  auto params = model::init_params(c, 6);
  const auto ds = small_dataset(16);
  const auto batch = data::make_batch(ds);
  numerics::AdamState adam;
  adam.lr = 1e-5;
  std::vector<double> losses;
  for (int i = 0; i < 6; ++i) losses.push_back(train_step(params, c, batch, adam).loss);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
}

TEST(Train, BestSnapshotAndHistoryInvariants) {
  const auto c = small_config();
  const auto split = data::stratified_split(small_dataset(60, 9), {}, 2);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 8;
  tc.max_epochs = 12;
  tc.patience = 3;
  const auto r = train(model::init_params(c, 2), c, split.train, split.val, tc);
  double best = -1.0;
  for (const auto& h : r.history) {
    best = std::max(best, h.val_auroc);
    EXPECT_GE(h.cv2, 0.0);
    EXPECT_TRUE(std::isfinite(h.cv2));
    ASSERT_EQ(h.gate_mean.size(), 2u);
    EXPECT_NEAR(h.gate_mean[0] + h.gate_mean[1], 1.0, 1e-12);
  }
  EXPECT_EQ(r.best_val_auroc, best);
  EXPECT_EQ(r.history[r.best_epoch - 1].val_auroc, best);
  EXPECT_EQ(evaluate(r.params, c, split.val).auroc, best);
  EXPECT_LE(r.history.size(), std::min(tc.max_epochs, r.best_epoch + tc.patience));
}

TEST(Train, NonFiniteLossIsReported) {
  const auto c = small_config();
  auto init = model::init_params(c, 1);
  init.at("expert.0.cls.fc2.b").mutable_data()[0] = std::numeric_limits<double>::infinity();
  const auto split = data::stratified_split(small_dataset(), {}, 0);
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.patience = 2;
  try {
    train(init, c, split.train, split.val, tc);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, ConfigValidation) {
  const auto c = small_config();
  TrainConfig tc;
  tc.batch_size = 1;
  EXPECT_THROW(tc.validate(c), ConfigError);
  tc.batch_size = 4;
  tc.patience = 60;
  EXPECT_THROW(tc.validate(c), ConfigError);
  tc.patience = 10;
  tc.lr = -1.0;
  EXPECT_THROW(tc.validate(c), ConfigError);
}

TEST(Train, OtherDecodersTrain) {
  auto pooling = small_config();
  pooling.decoder = model::Decoder::kPooling;
  pooling.num_experts = 1;
  pooling.k_per_expert = {3};
  auto cls = small_config();
  cls.decoder = model::Decoder::kCls;
  const auto split = data::stratified_split(small_dataset(), {}, 0);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.max_epochs = 2;
  tc.patience = 2;
  const auto a = train(model::init_params(pooling, 1), pooling, split.train, split.val, tc);
  EXPECT_EQ(a.history.back().gate_mean, std::vector<double>{1.0});
  EXPECT_EQ(a.history.back().cv2, 0.0);
  const auto b = train(model::init_params(cls, 1), cls, split.train, split.val, tc);
  EXPECT_TRUE(b.history.back().gate_mean.empty());
  EXPECT_EQ(history_csv(b.history, 0).substr(0, 33), "epoch,train_loss,val_auroc,cv2\n1,");
}

TEST(Train, PlantedSignalIsLearned) {
  data::SynthOptions o;
  o.seed = 4;
  const auto split = data::stratified_split(data::synth_generate(o), {}, 4);
  ModelConfig c;
  c.n_rois = 20;
  c.embed_dim = 16;
  c.heads = 2;
  c.num_experts = 2;
  c.k_per_expert = {4, 2};
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 16;
  tc.max_epochs = 15;
  tc.patience = 15;
  const auto r = train(model::init_params(c, 4), c, split.train, split.val, tc);
  EXPECT_GE(r.best_val_auroc, 0.9);
}

TEST(History, CsvHeaderAndRows) {
  HistoryRow r;
  r.epoch = 1;
  r.train_loss = 0.5;
  r.val_auroc = 0.75;
  r.cv2 = 0.125;
  r.gate_mean = {0.25, 0.75};
  EXPECT_EQ(history_csv({r}, 2), "epoch,train_loss,val_auroc,cv2,gate_mean_e0,gate_mean_e1\n1,0.5,0.75,0.125,0.25,0.75\n");
}

}  // namespace
