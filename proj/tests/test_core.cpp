#include <cmath>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "binheads/core.hpp"
#include "oracles.hpp"

using namespace binheads;

TEST(Softmax, KnownValues) {
  const std::vector<double> z{std::log(2.0), 0.0};
  const auto p = softmax(z);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);

  const auto u = softmax(std::vector<double>{5.0, 5.0, 5.0, 5.0});
  for (double v : u) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, TemperatureDividesLogits) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n(0.0, 4.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> z(5), zt(5);
    const double t = 0.1 + 0.05 * i;
    for (std::size_t k = 0; k < 5; ++k) {
      z[k] = n(gen);
      zt[k] = z[k] / t;
    }
    EXPECT_EQ(softmax(z, t), softmax(zt, 1.0));
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const auto p = softmax(std::vector<double>{1000.0, 999.0, -1000.0});
  EXPECT_TRUE(std::isfinite(p[0]));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Softmax, RejectsBadTemperature) {
  EXPECT_THROW(softmax(std::vector<double>{1.0}, 0.0), std::invalid_argument);
  EXPECT_THROW(softmax(std::vector<double>{1.0}, -1.0), std::invalid_argument);
}

TEST(LogSumExp, MatchesNaive) {
  const std::vector<double> x{0.5, -1.0, 2.0};
  EXPECT_NEAR(logsumexp(x), std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(2.0)), 1e-14);
  EXPECT_NEAR(logsumexp(std::vector<double>{800.0, 800.0}), 800.0 + std::log(2.0), 1e-12);
}

TEST(ScoreMatrix, Validation) {
  EXPECT_THROW(ScoreMatrix(1, 2, ScoreKind::Probability, {0.5}), std::invalid_argument);
  EXPECT_THROW(ScoreMatrix(1, 2, ScoreKind::Probability, {0.5, 1.5}), std::invalid_argument);
  EXPECT_THROW(ScoreMatrix(1, 2, ScoreKind::Logit, {0.5, NAN}), std::invalid_argument);
  EXPECT_NO_THROW(ScoreMatrix(1, 2, ScoreKind::Logit, {-7.0, 9.0}));
  EXPECT_NO_THROW(ScoreMatrix(0, 3, ScoreKind::Probability, {}));
}

TEST(LabelVector, Validation) {
  EXPECT_THROW(LabelVector({0, 2}, {"a", "b"}), std::invalid_argument);
  EXPECT_THROW(LabelVector({-2}, {"a"}), std::invalid_argument);
  const LabelVector l({0, kOod, 1, kOod}, {"a", "b"});
  EXPECT_EQ(l.ood_count(), 2u);
}

TEST(ThresholdVector, RangeChecked) {
  EXPECT_THROW(ThresholdVector({0.2, 1.1}), std::invalid_argument);
  EXPECT_THROW(ThresholdVector({-0.1}), std::invalid_argument);
  auto t = ThresholdVector::constant(3, 0.5);
  EXPECT_THROW(t.set(0, 2.0), std::invalid_argument);
  t.set(1, 1.0);
  EXPECT_EQ(t[1], 1.0);
}

TEST(Metrics, PerfectTwoClassWithoutOod) {
  const LabelVector labels({0, 1, 0, 1}, {"a", "b"});
  const std::vector<Prediction> preds{{0, 1.0}, {1, 1.0}, {0, 1.0}, {1, 1.0}};
  const auto cm = confusion_matrix(preds, labels);
  EXPECT_NEAR(balanced_accuracy(cm, OodConvention::AssumeZeroWhenAbsent), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(balanced_accuracy(cm, OodConvention::InDistOnly), 1.0);
  EXPECT_EQ(accuracy(cm), 1.0);
  EXPECT_FALSE(ood_recall(cm).has_value());
  EXPECT_FALSE(ood_precision(cm).has_value());
}

TEST(Metrics, OodPrecisionAndRecall) {
  const LabelVector labels({0, 1, kOod, kOod}, {"a", "b"});
  const std::vector<Prediction> preds{{kOod, 0}, {1, 0.9}, {kOod, 0}, {0, 0.7}};
  const auto cm = confusion_matrix(preds, labels);
  EXPECT_EQ(cm.at(0, 2), 1u);
  EXPECT_EQ(cm.at(2, 2), 1u);
  EXPECT_EQ(cm.at(2, 0), 1u);
  EXPECT_DOUBLE_EQ(*ood_recall(cm), 0.5);
  EXPECT_DOUBLE_EQ(*ood_precision(cm), 0.5);
  EXPECT_DOUBLE_EQ(accuracy(cm), 0.5);
  EXPECT_DOUBLE_EQ(balanced_accuracy(cm, OodConvention::AssumeZeroWhenAbsent), (0.0 + 1.0 + 0.5) / 3.0);
}

TEST(Metrics, MissingInDistClassIsAnError) {
  const LabelVector labels({0, 0}, {"a", "b"});
  const std::vector<Prediction> preds{{0, 1.0}, {1, 1.0}};
  const auto cm = confusion_matrix(preds, labels);
  EXPECT_THROW(balanced_accuracy(cm, OodConvention::InDistOnly), std::invalid_argument);
}

TEST(Metrics, ConfusionMatrixMarginals) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 3);
  cm.add(0, kOod, 2);
  cm.add(kOod, 1, 4);
  EXPECT_EQ(cm.total(), 9u);
  EXPECT_EQ(cm.trace(), 3u);
  EXPECT_EQ(cm.row_sum(0), 5u);
  EXPECT_EQ(cm.column_sum(2), 2u);
  EXPECT_THROW(cm.add(2, 0), std::invalid_argument);
}

TEST(Metrics, RandomRecountAgreement) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t c = 1 + gen() % 6;
    const std::size_t n = c + gen() % 80;
    std::vector<ClassIndex> y(n), p(n);
    std::vector<Prediction> preds(n);
    for (std::size_t s = 0; s < n; ++s) {
      y[s] = s < c ? static_cast<ClassIndex>(s) : static_cast<ClassIndex>(gen() % (c + 1)) - 1;
      p[s] = static_cast<ClassIndex>(gen() % (c + 1)) - 1;
      preds[s] = {p[s], 0.5};
    }
    const LabelVector labels(y, oracle::names(c));
    const auto report = evaluate(preds, labels);
    EXPECT_NEAR(report.balanced_accuracy, oracle::balanced_accuracy(y, p, c, true), 1e-12);
    const auto cm = confusion_matrix(preds, labels);
    EXPECT_NEAR(balanced_accuracy(cm, OodConvention::InDistOnly), oracle::balanced_accuracy(y, p, c, false), 1e-12);
    std::size_t hits = 0;
    for (std::size_t s = 0; s < n; ++s) hits += y[s] == p[s];
    EXPECT_DOUBLE_EQ(report.accuracy, static_cast<double>(hits) / static_cast<double>(n));
    EXPECT_EQ(report.confusion.total(), n);
  }
}
