#include "binheads/reference.hpp"

#include <stdexcept>

namespace binheads::reference {

std::vector<Prediction> predict_all(const ScoreMatrix& scores, const DetectorConfig& config) {
  std::vector<Prediction> out;
  out.reserve(scores.n_samples());
  for (std::size_t s = 0; s < scores.n_samples(); ++s) out.push_back(predict_row(scores.row(s), scores.kind(), config));
  return out;
}

ScoreMatrix score_dataset(const ModelParams& params, const Matrix& features) {
  const std::size_t c = params.config().n_classes;
  std::vector<double> values;
  values.reserve(features.rows() * c);
  for (std::size_t s = 0; s < features.rows(); ++s) {
    const auto r = forward(params, features.row(s));
    values.insert(values.end(), r.head_outputs.begin(), r.head_outputs.end());
  }
  const auto kind = params.config().head == HeadKind::BinaryHeads ? ScoreKind::Probability : ScoreKind::Logit;
  return ScoreMatrix(features.rows(), c, kind, std::move(values));
}

Gradients gradients(const ModelParams& params, const Matrix& features, std::span<const ClassIndex> labels,
                    std::span<const std::size_t> batch) {
  if (batch.empty()) throw std::invalid_argument("gradients: empty batch");
  Gradients g(params.config());
  auto out = g.flat();
  std::vector<double> one(params.size());
  for (std::size_t s : batch) {
    std::fill(one.begin(), one.end(), 0.0);
    add_sample_gradient(params, features.row(s), labels[s], one);
    for (std::size_t i = 0; i < one.size(); ++i) out[i] += one[i];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& v : out) v *= inv;
  return g;
}

std::vector<double> evaluate_candidates(const ScoreMatrix& scores, const LabelVector& labels,
                                        const ThresholdVector& thresholds, std::size_t class_idx,
                                        std::span<const double> candidates, OodConvention convention) {
  std::vector<double> out;
  out.reserve(candidates.size());
  std::vector<double> t(thresholds.values().begin(), thresholds.values().end());
  for (double cand : candidates) {
    t[class_idx] = cand;
    out.push_back(bh_objective(scores, labels, ThresholdVector(t), convention));
  }
  return out;
}

ThresholdOptimum optimize_threshold_1d(const ScoreMatrix& scores, const LabelVector& labels,
                                       const ThresholdVector& thresholds, std::size_t class_idx,
                                       OodConvention convention) {
  if (class_idx >= scores.n_classes()) throw std::invalid_argument("optimize_threshold_1d: class out of range");
  std::vector<double> column(scores.n_samples());
  for (std::size_t s = 0; s < scores.n_samples(); ++s) column[s] = scores.at(s, class_idx);
  const auto candidates = candidate_thresholds(column);
  const auto values = reference::evaluate_candidates(scores, labels, thresholds, class_idx, candidates, convention);
  ThresholdOptimum best{candidates[0], values[0]};
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (values[i] > best.objective) best = {candidates[i], values[i]};
  }
  return best;
}

SweepResult ood_sweep(const LabelVector& in_dist_labels, std::span<const SweepDetector> detectors,
                      const SweepConfig& cfg) {
  SweepResult result;
  for (const auto& d : detectors) {
    const std::size_t c = d.in_dist.n_classes();
    for (std::size_t k : cfg.ood_counts) {
      for (std::size_t r = 0; r < cfg.repetitions; ++r) {
        if (k > d.ood.n_samples()) throw std::invalid_argument("ood_sweep: ood count exceeds available rows");
        const auto order = ood_draw_order(d.ood.n_samples(), cfg.seed, r);
        std::vector<double> values(d.in_dist.values().begin(), d.in_dist.values().end());
        std::vector<ClassIndex> labels = in_dist_labels.labels;
        for (std::size_t i = 0; i < k; ++i) {
          const auto row = d.ood.row(order[i]);
          values.insert(values.end(), row.begin(), row.end());
          labels.push_back(kOod);
        }
        const ScoreMatrix scores(labels.size(), c, d.in_dist.kind(), std::move(values));
        const LabelVector lv{std::move(labels), in_dist_labels.class_names};
        result.rows.push_back({d.name, k, r, evaluate(reference::predict_all(scores, d.config), lv)});
      }
    }
  }
  return result;
}

}  // namespace binheads::reference
