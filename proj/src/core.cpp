#include "binheads/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace binheads {

const char* to_string(ScoreKind kind) {
  return kind == ScoreKind::Probability ? "Probability" : "Logit";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw std::invalid_argument("Matrix: size mismatch");
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows_) throw std::out_of_range("Matrix::select_rows: row out of range");
    auto src = row(indices[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

ScoreMatrix::ScoreMatrix(std::size_t n_samples, std::size_t n_classes, ScoreKind kind,
                         std::vector<double> values)
    : n_samples_(n_samples), n_classes_(n_classes), kind_(kind), values_(std::move(values)) {
  if (values_.size() != n_samples_ * n_classes_) {
    throw std::invalid_argument("ScoreMatrix: expected " + std::to_string(n_samples_ * n_classes_) +
                                " values, got " + std::to_string(values_.size()));
  }
  for (std::size_t k = 0; k < values_.size(); ++k) {
    const double v = values_[k];
    if (!std::isfinite(v)) {
      throw std::invalid_argument("ScoreMatrix: non-finite entry at row " +
                                  std::to_string(k / std::max<std::size_t>(n_classes_, 1)));
    }
    if (kind_ == ScoreKind::Probability && (v < 0.0 || v > 1.0)) {
      throw std::invalid_argument("ScoreMatrix: probability outside [0, 1] at row " +
                                  std::to_string(k / n_classes_));
    }
  }
}

ScoreMatrix ScoreMatrix::select_rows(std::span<const std::size_t> indices) const {
  std::vector<double> out;
  out.reserve(indices.size() * n_classes_);
  for (std::size_t i : indices) {
    if (i >= n_samples_) throw std::out_of_range("ScoreMatrix::select_rows: row out of range");
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return ScoreMatrix(indices.size(), n_classes_, kind_, std::move(out));
}

LabelVector::LabelVector(std::vector<ClassIndex> labels_in, std::vector<std::string> names)
    : labels(std::move(labels_in)), class_names(std::move(names)) {
  const auto c = static_cast<ClassIndex>(class_names.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kOod && (labels[i] < 0 || labels[i] >= c)) {
      throw std::invalid_argument("LabelVector: label " + std::to_string(labels[i]) +
                                  " at sample " + std::to_string(i) + " outside class range");
    }
  }
}

std::size_t LabelVector::ood_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kOod));
}

LabelVector LabelVector::select(std::span<const std::size_t> indices) const {
  std::vector<ClassIndex> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return LabelVector(std::move(out), class_names);
}

ThresholdVector::ThresholdVector(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i) set(i, values_[i]);
}

ThresholdVector ThresholdVector::constant(std::size_t n_classes, double value) {
  return ThresholdVector(std::vector<double>(n_classes, value));
}

void ThresholdVector::set(std::size_t i, double value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw std::invalid_argument("ThresholdVector: threshold " + std::to_string(i) +
                                " outside [0, 1]");
  }
  values_.at(i) = value;
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes)
    : n_classes_(n_classes), counts_((n_classes + 1) * (n_classes + 1), 0) {}

std::size_t ConfusionMatrix::index_of(ClassIndex c) const {
  if (c == kOod) return n_classes_;
  if (c < 0 || static_cast<std::size_t>(c) >= n_classes_) {
    throw std::invalid_argument("ConfusionMatrix: class index " + std::to_string(c) +
                                " out of range");
  }
  return static_cast<std::size_t>(c);
}

void ConfusionMatrix::add(ClassIndex truth, ClassIndex predicted, std::uint64_t n) {
  counts_[index_of(truth) * dim() + index_of(predicted)] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < dim(); ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < dim(); ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < dim(); ++i) s += at(i, predicted);
  return s;
}

double logsumexp(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("softmax: temperature must be positive");
  }
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  std::vector<double> out(logits.size());
  double m = logits[0] / temperature;
  for (double v : logits) m = std::max(m, v / temperature);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const Prediction> preds, const LabelVector& labels) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("confusion_matrix: " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm(labels.n_classes());
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(labels.labels[i], preds[i].verdict);
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<double> per_class_recall(const ConfusionMatrix& cm) {
  std::vector<double> recall(cm.dim(), 0.0);
  for (std::size_t i = 0; i < cm.dim(); ++i) {
    const auto n = cm.row_sum(i);
    if (n > 0) recall[i] = static_cast<double>(cm.at(i, i)) / static_cast<double>(n);
  }
  return recall;
}

double balanced_accuracy_from_counts(std::span<const std::uint64_t> correct,
                                     std::span<const std::uint64_t> totals,
                                     OodConvention convention) {
  if (correct.size() != totals.size() || totals.empty()) {
    throw std::invalid_argument("balanced_accuracy: malformed count vectors");
  }
  const std::size_t c = totals.size() - 1;
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    if (totals[i] == 0) {
      throw std::invalid_argument("balanced_accuracy: class " + std::to_string(i) +
                                  " has no true samples");
    }
    sum += static_cast<double>(correct[i]) / static_cast<double>(totals[i]);
  }
  if (convention == OodConvention::InDistOnly) {
    if (c == 0) throw std::invalid_argument("balanced_accuracy: no in-distribution classes");
    return sum / static_cast<double>(c);
  }
  if (totals[c] > 0) sum += static_cast<double>(correct[c]) / static_cast<double>(totals[c]);
  return sum / static_cast<double>(c + 1);
}

double balanced_accuracy(const ConfusionMatrix& cm, OodConvention convention) {
  std::vector<std::uint64_t> correct(cm.dim()), totals(cm.dim());
  for (std::size_t i = 0; i < cm.dim(); ++i) {
    correct[i] = cm.at(i, i);
    totals[i] = cm.row_sum(i);
  }
  return balanced_accuracy_from_counts(correct, totals, convention);
}

std::optional<double> ood_recall(const ConfusionMatrix& cm) {
  const auto n = cm.row_sum(cm.ood_index());
  if (n == 0) return std::nullopt;
  return static_cast<double>(cm.at(cm.ood_index(), cm.ood_index())) / static_cast<double>(n);
}

std::optional<double> ood_precision(const ConfusionMatrix& cm) {
  const auto n = cm.column_sum(cm.ood_index());
  if (n == 0) return std::nullopt;
  return static_cast<double>(cm.at(cm.ood_index(), cm.ood_index())) / static_cast<double>(n);
}

EvalReport make_report(ConfusionMatrix cm) {
  EvalReport r;
  r.accuracy = accuracy(cm);
  r.balanced_accuracy = balanced_accuracy(cm, OodConvention::AssumeZeroWhenAbsent);
  r.per_class_recall = per_class_recall(cm);
  r.ood_count = cm.row_sum(cm.ood_index());
  r.confusion = std::move(cm);
  return r;
}

EvalReport evaluate(std::span<const Prediction> preds, const LabelVector& labels) {
  return make_report(confusion_matrix(preds, labels));
}

}  // namespace binheads
