#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "asdformer/numerics.hpp"
#include "support/oracles.hpp"

namespace {

using namespace asdformer;
using namespace asdformer::numerics;
using asdformer::oracle::max_fd_error;
using asdformer::oracle::random_tensor;
using asdformer::oracle::weighted_sum;

constexpr double kFdTolerance = 1e-4;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape tape;
  const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const auto m = Tensor::from({2, 2}, {0.3, -1.2, 4.5, 2.0});
  EXPECT_EQ(matmul(tape, eye, m).values(), m.values());
}

TEST(Matmul, HandMultipliedProduct) {
  Tape tape;
  const auto c = matmul(tape, Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {5, 6}));
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c[0], 17.0);
  EXPECT_DOUBLE_EQ(c[1], 39.0);
}

TEST(Matmul, ZeroLeftOperandGivesZeros) {
  Tape tape;
  std::mt19937_64 rng(1);
  const auto c = matmul(tape, Tensor::zeros({2, 3}), random_tensor(rng, {3, 4}, false));
  EXPECT_EQ(c.shape(), (Shape{2, 4}));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(tape, Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 2})), ShapeError);
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  auto a = random_tensor(rng, {2, 3, 4});
  auto b = random_tensor(rng, {4, 5});
  auto bb = random_tensor(rng, {2, 4, 5});
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, matmul(t, a, b)); }, {a, b}), kFdTolerance);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, matmul(t, a, bb)); }, {a, bb}), kFdTolerance);
}

TEST(Softmax, UniformOnEqualInputs) {
  Tape tape;
  const auto y = softmax(tape, Tensor::from({3}, {0, 0, 0}));
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ScalarEvaluation) {
  Tape tape;
  const auto y = softmax(tape, Tensor::from({2}, {0, std::log(3.0)}));
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantAndStableForLargeInputs) {
  Tape tape;
  std::mt19937_64 rng(3);
  const auto x = random_tensor(rng, {4, 5}, false);
  std::vector<double> shifted(x.values());
  for (auto& v : shifted) v += 800.0;
  const auto a = softmax(tape, x);
  const auto b = softmax(tape, Tensor::from({4, 5}, shifted));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Softmax, RowsSumToOneAlongAnyAxis) {
  Tape tape;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(rng, {3, 4, 5}, false, 5.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const auto y = softmax(tape, x, axis);
      const auto s = numerics::detail::split_at(x.shape(), axis);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          double total = 0.0;
          for (std::size_t j = 0; j < s.extent; ++j) total += y[o * s.extent * s.inner + j * s.inner + in];
          EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
  }
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_tensor(rng, {2, 3, 4});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, softmax(t, x, axis)); }, {x}), kFdTolerance);
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tape tape;
  const auto y = layer_norm(tape, Tensor::from({3}, {5, 5, 5}), Tensor::filled({3}, 1.0), Tensor::zeros({3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
  Tape tape;
  const auto y = layer_norm(tape, Tensor::from({2}, {1, -1}), Tensor::filled({2}, 1.0), Tensor::zeros({2}), 1e-5);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);  // mean 0, population variance 1
  EXPECT_NEAR(y[0], expected, 1e-15);
  EXPECT_NEAR(y[1], -expected, 1e-15);
  EXPECT_NEAR(y[0], 0.99999, 1e-5);
}

TEST(LayerNorm, ZeroGammaReturnsBeta) {
  Tape tape;
  std::mt19937_64 rng(6);
  const auto beta = random_tensor(rng, {4}, false);
  const auto y = layer_norm(tape, random_tensor(rng, {3, 4}, false), Tensor::zeros({4}), beta);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], beta[i % 4]);
}

TEST(LayerNorm, RowStatisticsProperty) {
  Tape tape;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(rng, {6, 9}, false, 3.0);
    const auto y = layer_norm(tape, x, Tensor::filled({9}, 1.0), Tensor::zeros({9}), 1e-12);
    for (std::size_t r = 0; r < 6; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 9; ++j) mean += y[r * 9 + j];
      mean /= 9.0;
      for (std::size_t j = 0; j < 9; ++j) var += (y[r * 9 + j] - mean) * (y[r * 9 + j] - mean);
      var /= 9.0;
      EXPECT_LT(std::abs(mean), 1e-10);
      EXPECT_NEAR(var, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto x = random_tensor(rng, {3, 5});
  auto gamma = random_tensor(rng, {5});
  auto beta = random_tensor(rng, {5});
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, layer_norm(t, x, gamma, beta)); }, {x, gamma, beta}),
            kFdTolerance);
}

TEST(Gelu, ReferenceValues) {
  Tape tape;
  const auto y = gelu(tape, Tensor::from({4}, {0.0, 1.0, 10.0, -10.0}));
  EXPECT_EQ(y[0], 0.0);
  // 1 * Phi(1); Phi(1) = 0.5 * (1 + erf(1/sqrt(2)))
  EXPECT_NEAR(y[1], 0.8413447460685429, 1e-12);
  EXPECT_NEAR(y[1], 0.841345, 1e-6);
  EXPECT_NEAR(y[2], 10.0, 1e-6);
  EXPECT_NEAR(y[3], 0.0, 1e-6);
}

TEST(Gelu, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto x = random_tensor(rng, {4, 4}, true, 2.0);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, gelu(t, x)); }, {x}), kFdTolerance);
}

TEST(Gelu, CorruptionHookIsDetectedByFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto x = random_tensor(rng, {4});
  corrupt_backward_hook() = true;
  const double err = max_fd_error([&](Tape& t) { return weighted_sum(t, gelu(t, x)); }, {x});
  corrupt_backward_hook() = false;
  EXPECT_GT(err, 1e-3);
}

TEST(TopK, InspectionCases) {
  const std::vector<double> x{3, 1, 2, 0};
  EXPECT_EQ(top_k_indices(x, 2), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(top_k_indices(x, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
  const std::vector<double> ties{1, 1, 1};
  EXPECT_EQ(top_k_indices(ties, 2), (std::vector<std::size_t>{0, 1}));
}

TEST(TopK, RejectsOutOfRangeK) {
  const std::vector<double> x{1, 2, 3};
  EXPECT_THROW(top_k_indices(x, 0), ArgumentError);
  EXPECT_THROW(top_k_indices(x, 4), ArgumentError);
}

TEST(TopK, AgreesWithStableSortWithAndWithoutTies) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> small(0, 3);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 12;
    std::vector<double> x(n);
    for (auto& v : x) v = trial % 2 ? small(rng) : gauss(rng);
    for (std::size_t k = 1; k <= n; ++k) EXPECT_EQ(top_k_indices(x, k), oracle::brute_force_topk(x, k));
  }
}

TEST(MaskedTopkSoftmax, HandEvaluatedWeights) {
  Tape tape;
  const auto r = masked_topk_softmax(tape, Tensor::from({4}, {3, 1, 2, 0}), 2);
  const double e3 = std::exp(3.0), e2 = std::exp(2.0);
  EXPECT_NEAR(r.weights[0], e3 / (e3 + e2), 1e-15);
  EXPECT_EQ(r.weights[1], 0.0);
  EXPECT_NEAR(r.weights[2], e2 / (e3 + e2), 1e-15);
  EXPECT_EQ(r.weights[3], 0.0);
  EXPECT_NEAR(r.weights[0], 0.73106, 1e-5);
  EXPECT_NEAR(r.weights[2], 0.26894, 1e-5);
  EXPECT_EQ(r.selected.front(), (std::vector<std::size_t>{0, 2}));
}

TEST(MaskedTopkSoftmax, FullKEqualsSoftmax) {
  Tape tape;
  std::mt19937_64 rng(12);
  const auto x = random_tensor(rng, {3, 6}, false);
  const auto a = masked_topk_softmax(tape, x, 6).weights;
  const auto b = softmax(tape, x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(MaskedTopkSoftmax, TieBreakOnEqualLogits) {
  Tape tape;
  const auto r = masked_topk_softmax(tape, Tensor::from({3}, {1, 1, 1}), 2);
  EXPECT_EQ(r.weights[0], 0.5);
  EXPECT_EQ(r.weights[1], 0.5);
  EXPECT_EQ(r.weights[2], 0.0);
}

TEST(MaskedTopkSoftmax, SupportSumsToOneAndGradientVanishesOffSupport) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    auto x = random_tensor(rng, {2, 7}, true, 3.0);
    const std::size_t k = 1 + trial % 7;
    Tape tape;
    auto r = masked_topk_softmax(tape, x, k);
    for (std::size_t row = 0; row < 2; ++row) {
      double total = 0.0;
      std::size_t nonzero = 0;
      for (std::size_t i = 0; i < 7; ++i) {
        total += r.weights[row * 7 + i];
        nonzero += r.weights[row * 7 + i] > 0.0;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_EQ(nonzero, k);
    }
    tape.backward(weighted_sum(tape, r.weights));
    for (std::size_t row = 0; row < 2; ++row)
      for (std::size_t i = 0; i < 7; ++i) {
        const auto& sel = r.selected[row];
        if (std::find(sel.begin(), sel.end(), i) == sel.end()) {
          EXPECT_EQ(x.grad()[row * 7 + i], 0.0);
        }
      }
    EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, masked_topk_softmax(t, x, k).weights); }, {x}),
              kFdTolerance);
  }
}

TEST(CrossEntropy, ReferenceValues) {
  Tape tape;
  const std::vector<int> zero{0};
  EXPECT_NEAR(cross_entropy(tape, Tensor::from({1, 2}, {0, 0}), zero).item(), std::numbers::ln2, 1e-12);
  EXPECT_NEAR(cross_entropy(tape, Tensor::from({1, 2}, {2, 0}), zero).item(), std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(cross_entropy(tape, Tensor::from({1, 2}, {2, 0}), zero).item(), 0.126928, 1e-6);
  EXPECT_LT(cross_entropy(tape, Tensor::from({1, 2}, {50, 0}), zero).item(), 1e-20);
}

TEST(CrossEntropy, RejectsOutOfRangeLabels) {
  Tape tape;
  const std::vector<int> bad{2};
  EXPECT_THROW(cross_entropy(tape, Tensor::from({1, 2}, {0, 0}), bad), ArgumentError);
}

TEST(CrossEntropy, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  auto logits = random_tensor(rng, {4, 3});
  const std::vector<int> labels{0, 2, 1, 2};
  EXPECT_LT(max_fd_error([&](Tape& t) { return cross_entropy(t, logits, labels); }, {logits}), kFdTolerance);
}

TEST(CvSquared, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(15);
  std::vector<double> v{1.3, 0.4, 2.2};
  auto imp = Tensor::from({3}, v, true);
  EXPECT_LT(max_fd_error([&](Tape& t) { return cv_squared(t, imp); }, {imp}), kFdTolerance);
}

TEST(Layout, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  auto a = random_tensor(rng, {2, 3, 4});
  auto b = random_tensor(rng, {2, 2, 4});
  auto v = random_tensor(rng, {4});
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, concat(t, {a, b}, 1)); }, {a, b}), kFdTolerance);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, slice(t, a, 2, 1, 2)); }, {a}), kFdTolerance);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, transpose_last2(t, a)); }, {a}), kFdTolerance);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, expand_leading(t, v, 3)); }, {v}), kFdTolerance);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, sum_leading(t, a)); }, {a}), kFdTolerance);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, stack(t, {a, a}, 3)); }, {a}), kFdTolerance);
  EXPECT_LT(max_fd_error([&](Tape& t) { return weighted_sum(t, add_bias(t, a, v)); }, {a, v}), kFdTolerance);
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tape tape;
  tape.backward(sum(tape, x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
  auto x = Tensor::from({4}, {1.5, -2, 0.25, 3}, true);
  Tape tape;
  tape.backward(scale(tape, sum(tape, mul(tape, x, x)), 0.5));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], x[i]);
}

TEST(Backward, ReplayWithoutResetDoublesGradients) {
  std::mt19937_64 rng(17);
  auto w = random_tensor(rng, {3, 3});
  auto x = random_tensor(rng, {2, 3}, false);
  Tape tape;
  const auto loss = weighted_sum(tape, gelu(tape, matmul(tape, x, w)));
  tape.backward(loss);
  const std::vector<double> once(w.grad().begin(), w.grad().end());
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Backward, NonScalarLossIsAContractError) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  EXPECT_THROW(tape.backward(scale(tape, x, 2.0)), ContractError);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<Tensor> params{Tensor::from({2}, {1.0, -2.0}, true)};
  AdamState state;
  state.lr = 0.1;
  const std::vector<double> zeros{0.0, 0.0};
  std::vector<std::span<const double>> grads{zeros};
  adam_step(params, grads, state);
  EXPECT_EQ(params[0].values(), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepClosedForm) {
  std::vector<Tensor> params{Tensor::from({1}, {0.5}, true)};
  AdamState state;
  state.lr = 0.1;
  const std::vector<double> g{1.0};
  std::vector<std::span<const double>> grads{g};
  adam_step(params, grads, state);
  // m_hat = g, v_hat = g^2 after bias correction
  EXPECT_NEAR(params[0][0], 0.5 - 0.1 * 1.0 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, DecreasesQuadraticMonotonically) {
  std::vector<Tensor> params{Tensor::from({1}, {1.0}, true)};
  AdamState state;
  state.lr = 0.1;
  double prev = 0.5;
  for (int i = 0; i < 2; ++i) {
    params[0].zero_grad();
    Tape tape;
    tape.backward(scale(tape, sum(tape, mul(tape, params[0], params[0])), 0.5));
    adam_step(params, state);
    const double loss = 0.5 * params[0][0] * params[0][0];
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_EQ(state.step, 2u);
}

TEST(Adam, CoupledWeightDecayActsThroughGradient) {
  std::vector<Tensor> params{Tensor::from({1}, {2.0}, true)};
  AdamState state;
  state.lr = 0.01;
  state.weight_decay = 0.5;
  const std::vector<double> g{0.0};
  std::vector<std::span<const double>> grads{g};
  adam_step(params, grads, state);
  // effective gradient 1.0 > 0, so the first normalised step is -lr
  EXPECT_NEAR(params[0][0], 2.0 - 0.01, 1e-9);
}

TEST(Adam, ShapeMismatchIsAContractError) {
  std::vector<Tensor> params{Tensor::from({2}, {1.0, 2.0}, true)};
  AdamState state;
  const std::vector<double> g{1.0};
  std::vector<std::span<const double>> grads{g};
  EXPECT_THROW(adam_step(params, grads, state), ContractError);
}

}  // namespace
