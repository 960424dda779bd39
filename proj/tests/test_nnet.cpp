#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "binheads/errors.hpp"
#include "binheads/nnet.hpp"
#include "binheads/reference.hpp"
#include "binheads/rng.hpp"
#include "gradcheck.hpp"

using namespace binheads;

using oracle::gradient_error;
using oracle::random_labels;
using oracle::random_matrix;
using oracle::random_model;

TEST(Losses, KnownValues) {
  EXPECT_NEAR(bh_loss(std::vector<double>{0.5, 0.5, 0.5}, 1), 3 * std::log(2.0), 1e-12);
  EXPECT_NEAR(softmax_loss(std::vector<double>{0.0, 0.0, 0.0, 0.0}, 2), std::log(4.0), 1e-12);
  EXPECT_NEAR(softmax_loss(std::vector<double>{1000.0, 0.0}, 0), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(bh_loss(std::vector<double>{1.0, 0.0}, 1)));
  EXPECT_THROW(bh_loss(std::vector<double>{0.5}, 1), std::invalid_argument);
}

TEST(Config, Validation) {
  EXPECT_THROW((MlpConfig{0, {4}, 2, HeadKind::Softmax}.validate()), std::invalid_argument);
  EXPECT_THROW((MlpConfig{3, {0}, 2, HeadKind::Softmax}.validate()), std::invalid_argument);
  EXPECT_THROW((MlpConfig{3, {4}, 0, HeadKind::Softmax}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((MlpConfig{3, {}, 2, HeadKind::BinaryHeads}.validate()));
}

TEST(Init, GlorotBoundsAndDeterminism) {
  const MlpConfig cfg{10, {20}, 4, HeadKind::BinaryHeads};
  const auto a = ModelParams::glorot_uniform(cfg, 9);
  EXPECT_EQ(a, ModelParams::glorot_uniform(cfg, 9));
  EXPECT_NE(a, ModelParams::glorot_uniform(cfg, 10));
  const double lim0 = std::sqrt(6.0 / 30.0), lim1 = std::sqrt(6.0 / 24.0);
  for (double w : a.weights(0)) EXPECT_LE(std::abs(w), lim0);
  for (double w : a.weights(1)) EXPECT_LE(std::abs(w), lim1);
  for (double b : a.bias(0)) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(a.size(), 10u * 20 + 20 + 20 * 4 + 4);
}

TEST(Forward, OutputKinds) {
  std::mt19937_64 gen(3);
  const auto x = random_matrix(5, 3, gen);
  const auto bh = random_model({3, {6}, 4, HeadKind::BinaryHeads}, gen);
  const auto r = forward(bh, x.row(0));
  ASSERT_EQ(r.head_outputs.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(r.head_outputs[k], 1.0 / (1.0 + std::exp(-r.head_logits[k])), 1e-15);
  EXPECT_EQ(score_dataset(bh, x).kind(), ScoreKind::Probability);
  const auto sm = random_model({3, {6}, 4, HeadKind::Softmax}, gen);
  EXPECT_EQ(score_dataset(sm, x).kind(), ScoreKind::Logit);
  EXPECT_THROW(forward(bh, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Gradients, FiniteDifferenceSpecShape) {
  std::mt19937_64 gen(5);
  for (auto head : {HeadKind::BinaryHeads, HeadKind::Softmax}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto p = random_model({2, {5}, 3, head}, gen);
      const auto x = random_matrix(4, 2, gen);
      EXPECT_LT(gradient_error(p, x, random_labels(4, 3, gen)), 1e-4) << to_string(head);
    }
  }
}

TEST(Gradients, FiniteDifferenceRandomShapes) {
  std::mt19937_64 gen(7);
  for (auto head : {HeadKind::BinaryHeads, HeadKind::Softmax}) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<std::size_t> hidden(gen() % 3);
      for (auto& h : hidden) h = 2 + gen() % 5;
      const std::size_t d = 1 + gen() % 4, c = 1 + gen() % 4;
      const auto p = random_model({d, hidden, c, head}, gen);
      const auto x = random_matrix(3, d, gen);
      EXPECT_LT(gradient_error(p, x, random_labels(3, c, gen)), 1e-4);
    }
  }
}

TEST(Gradients, ParallelMatchesSerialBitForBit) {
  std::mt19937_64 gen(11);
  for (auto head : {HeadKind::BinaryHeads, HeadKind::Softmax}) {
    const auto p = random_model({8, {16, 8}, 5, head}, gen);
    const auto x = random_matrix(300, 8, gen);
    const auto y = random_labels(300, 5, gen);
    std::vector<std::size_t> batch(300);
    std::iota(batch.begin(), batch.end(), 0);
    std::shuffle(batch.begin(), batch.end(), gen);
    batch.resize(97);
    EXPECT_EQ(gradients(p, x, y, batch), reference::gradients(p, x, y, batch));
    EXPECT_EQ(score_dataset(p, x), reference::score_dataset(p, x));
  }
}

TEST(Gradients, InputChecks) {
  std::mt19937_64 gen(13);
  const auto p = random_model({2, {3}, 2, HeadKind::Softmax}, gen);
  const auto x = random_matrix(2, 2, gen);
  EXPECT_THROW(gradients(p, x, std::vector<ClassIndex>{0, kOod}), std::invalid_argument);
  EXPECT_THROW(gradients(p, x, std::vector<ClassIndex>{0, 1}, std::vector<std::size_t>{}), std::invalid_argument);
  EXPECT_THROW(gradients(p, x, std::vector<ClassIndex>{0, 1}, std::vector<std::size_t>{2}), std::invalid_argument);
}

TEST(ScoreDataset, NonFiniteOutputIsNumericError) {
  ModelParams p({1, {}, 2, HeadKind::Softmax});
  p.weights(0)[0] = 1e308;
  const Matrix x(1, 1, {1e10});
  EXPECT_THROW(score_dataset(p, x), NumericError);
}

TEST(WeightedSampler, BalancesClasses) {
  std::vector<ClassIndex> y(100, 0);
  y[42] = 1;
  const WeightedSampler sampler(y, 2);
  Rng rng(17);
  std::size_t minority = 0;
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) minority += y[sampler.draw(rng)] == 1;
  const double f = static_cast<double>(minority) / draws;
  EXPECT_GE(f, 0.49);
  EXPECT_LE(f, 0.51);
}

TEST(WeightedSampler, InputChecks) {
  EXPECT_THROW(WeightedSampler(std::vector<ClassIndex>{}, 2), std::invalid_argument);
  EXPECT_THROW(WeightedSampler(std::vector<ClassIndex>{0, 2}, 2), std::invalid_argument);
  EXPECT_THROW(WeightedSampler(std::vector<ClassIndex>{0, kOod}, 2), std::invalid_argument);
}

namespace {

struct Toy {
  Matrix x, vx;
  LabelVector y, vy;
};

Toy toy(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, 0.7);
  auto make = [&](std::size_t rows, bool with_ood) {
    Matrix m(rows, 2);
    std::vector<ClassIndex> y(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      const int k = static_cast<int>(i % (with_ood ? 4 : 3)) - (with_ood ? 1 : 0);
      y[i] = k;
      const double cx = k < 0 ? 0.0 : 2.0 * std::cos(2.1 * k), cy = k < 0 ? 0.0 : 2.0 * std::sin(2.1 * k);
      m(i, 0) = cx + n(gen);
      m(i, 1) = cy + n(gen);
    }
    return std::pair{m, LabelVector(y, {"a", "b", "c"})};
  };
  auto [x, y] = make(300, false);
  auto [vx, vy] = make(120, true);
  return {x, vx, y, vy};
}

}  // namespace

TEST(Train, LearnsAndIsDeterministic) {
  const auto t = toy(19);
  TrainConfig cfg;
  cfg.max_epochs = 15;
  cfg.batch_size = 16;
  cfg.seed = 3;
  for (auto head : {HeadKind::BinaryHeads, HeadKind::Softmax}) {
    const MlpConfig mlp{2, {8}, 3, head};
    const auto a = train(t.x, t.y, t.vx, t.vy, mlp, cfg);
    const auto b = train(t.x, t.y, t.vx, t.vy, mlp, cfg);
    EXPECT_EQ(a.params, b.params);
    ASSERT_EQ(a.history.size(), 15u);
    EXPECT_LT(a.history.back().train_loss, a.history.front().train_loss);
    EXPECT_GT(a.history[a.best_epoch > 0 ? a.best_epoch - 1 : 0].val_balanced_accuracy, 0.8);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : a.history) best = std::min(best, e.val_loss);
    EXPECT_EQ(best, a.history[a.best_epoch - 1].val_loss);
  }
}

TEST(Train, PlateauDecaysLearningRate) {
  const auto t = toy(23);
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.learning_rate = 0.0;  // nothing improves, so every patience window decays
  cfg.plateau_patience = 2;
  cfg.lr_decay_factor = 0.5;
  const auto r = train(t.x, t.y, t.vx, t.vy, {2, {4}, 3, HeadKind::Softmax}, cfg);
  EXPECT_EQ(r.best_epoch, 0u);
  EXPECT_EQ(r.params, ModelParams::glorot_uniform({2, {4}, 3, HeadKind::Softmax}, Rng(cfg.seed).next()));
  for (const auto& e : r.history) EXPECT_EQ(e.learning_rate, 0.0);

  cfg.learning_rate = 1e-9;
  const auto s = train(t.x, t.y, t.vx, t.vy, {2, {4}, 3, HeadKind::Softmax}, cfg);
  for (const auto& e : s.history) EXPECT_GE(e.learning_rate, std::min(1e-9, kLearningRateFloor));
}

TEST(Train, RejectsOodTrainingLabels) {
  auto t = toy(29);
  t.y.labels[0] = kOod;
  EXPECT_THROW(train(t.x, t.y, t.vx, t.vy, {2, {4}, 3, HeadKind::Softmax}, TrainConfig{}), std::invalid_argument);
}

TEST(Serialize, RoundTrip) {
  std::mt19937_64 gen(31);
  const auto p = random_model({3, {7, 5}, 4, HeadKind::BinaryHeads}, gen);
  std::stringstream ss;
  save_model(p, ss);
  EXPECT_EQ(load_model(ss), p);
}

TEST(Serialize, CorruptInputs) {
  std::stringstream bad("NOTAMODEL");
  EXPECT_THROW(load_model(bad), DataError);
  std::mt19937_64 gen(37);
  std::stringstream ss;
  save_model(random_model({2, {3}, 2, HeadKind::Softmax}, gen), ss);
  const auto full = ss.str();
  std::stringstream truncated(full.substr(0, full.size() - 4));
  EXPECT_THROW(load_model(truncated), DataError);
}
