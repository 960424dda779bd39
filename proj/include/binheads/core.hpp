#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace binheads {

/// In-distribution class index, or kOod. kOod never indexes a score column.
using ClassIndex = std::int32_t;
inline constexpr ClassIndex kOod = -1;

enum class ScoreKind { Probability, Logit };

const char* to_string(ScoreKind kind);

/// Dense row-major matrix, one sample per row.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix select_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Row-major N x C matrix of per-sample, per-class scores.
///
/// Probability-kind entries lie in [0, 1]; rows are not required to sum to
/// one since binary heads are independent sigmoids.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(std::size_t n_samples, std::size_t n_classes, ScoreKind kind,
              std::vector<double> values);

  std::size_t n_samples() const noexcept { return n_samples_; }
  std::size_t n_classes() const noexcept { return n_classes_; }
  ScoreKind kind() const noexcept { return kind_; }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * n_classes_, n_classes_};
  }
  double at(std::size_t i, std::size_t j) const { return values_[i * n_classes_ + j]; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Rows selected by `indices`, in that order.
  ScoreMatrix select_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const ScoreMatrix&, const ScoreMatrix&) = default;

 private:
  std::size_t n_samples_ = 0;
  std::size_t n_classes_ = 0;
  ScoreKind kind_ = ScoreKind::Probability;
  std::vector<double> values_;
};

/// Per-sample labels plus the ordered in-distribution class names.
struct LabelVector {
  std::vector<ClassIndex> labels;
  std::vector<std::string> class_names;

  LabelVector() = default;
  LabelVector(std::vector<ClassIndex> labels, std::vector<std::string> class_names);

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t n_classes() const noexcept { return class_names.size(); }
  std::size_t ood_count() const;
  LabelVector select(std::span<const std::size_t> indices) const;

  friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

/// Per-class acceptance thresholds, each in [0, 1].
class ThresholdVector {
 public:
  ThresholdVector() = default;
  explicit ThresholdVector(std::vector<double> values);
  static ThresholdVector constant(std::size_t n_classes, double value);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  void set(std::size_t i, double value);
  const std::vector<double>& values() const noexcept { return values_; }

  friend bool operator==(const ThresholdVector&, const ThresholdVector&) = default;

 private:
  std::vector<double> values_;
};

struct Prediction {
  ClassIndex verdict = kOod;
  double confidence = 0.0;

  bool is_ood() const noexcept { return verdict == kOod; }
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// (C+1) x (C+1) counts, rows are true classes and columns predictions.
/// Index C holds OOD on both axes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t n_classes);

  std::size_t n_classes() const noexcept { return n_classes_; }
  std::size_t dim() const noexcept { return n_classes_ + 1; }
  std::size_t ood_index() const noexcept { return n_classes_; }

  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * dim() + predicted];
  }
  void add(ClassIndex truth, ClassIndex predicted, std::uint64_t n = 1);

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t column_sum(std::size_t predicted) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index_of(ClassIndex c) const;

  std::size_t n_classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

enum class OodConvention {
  /// Mean over C+1 recalls; an empty OOD row contributes a recall of 0.
  AssumeZeroWhenAbsent,
  /// Mean over the C in-distribution recalls only.
  InDistOnly,
};

struct EvalReport {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  std::vector<double> per_class_recall;  // C+1 entries, OOD last
  ConfusionMatrix confusion;
  std::size_t ood_count = 0;
};

std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

/// log(sum(exp(x))) with max subtraction.
double logsumexp(std::span<const double> x);

ConfusionMatrix confusion_matrix(std::span<const Prediction> preds, const LabelVector& labels);

double accuracy(const ConfusionMatrix& cm);

/// Recall per class, OOD last. A class with no true samples reports 0.
std::vector<double> per_class_recall(const ConfusionMatrix& cm);

double balanced_accuracy(const ConfusionMatrix& cm, OodConvention convention);

/// Balanced accuracy from per-class correct/total counts (C+1 entries each,
/// OOD last). Shared by the metric engine and the calibration sweeps so that
/// both produce bit-identical objectives for identical counts.
double balanced_accuracy_from_counts(std::span<const std::uint64_t> correct,
                                     std::span<const std::uint64_t> totals,
                                     OodConvention convention);

/// Fraction of true-OOD samples flagged OOD; nullopt when there are none.
std::optional<double> ood_recall(const ConfusionMatrix& cm);
/// Fraction of OOD verdicts that are true OOD; nullopt when no OOD verdicts.
std::optional<double> ood_precision(const ConfusionMatrix& cm);

/// Full report using the AssumeZeroWhenAbsent convention.
EvalReport evaluate(std::span<const Prediction> preds, const LabelVector& labels);
EvalReport make_report(ConfusionMatrix cm);

}  // namespace binheads
