#pragma once

#include <span>
#include <string>
#include <vector>

#include "binheads/core.hpp"

namespace binheads {

enum class DetectorMethod { BhThreshold, VanillaArgmax, MaxSoftmaxProb, Energy };

const char* to_string(DetectorMethod method);

/// Prediction rule plus its parameters. Use the named factories; they keep
/// the method-specific fields consistent with the method.
struct DetectorConfig {
  DetectorMethod method = DetectorMethod::VanillaArgmax;
  ThresholdVector thresholds;     // BhThreshold
  double global_threshold = 0.0;  // MaxSoftmaxProb: probability, Energy: energy value
  double temperature = 1.0;       // Energy; MaxSoftmaxProb over logits

  static DetectorConfig bh(ThresholdVector thresholds);
  static DetectorConfig vanilla();
  static DetectorConfig msp(double probability_threshold, double temperature = 1.0);
  static DetectorConfig energy(double energy_threshold, double temperature);

  /// Score kinds the rule accepts.
  bool accepts(ScoreKind kind) const;
};

/// Per-class thresholding: a head passes when prob > threshold; the highest
/// passing probability wins (lowest index on ties); no pass means OOD.
Prediction bh_predict(std::span<const double> probs, const ThresholdVector& thresholds);

/// Argmax with lowest-index tie break. Never OOD.
Prediction vanilla_predict(std::span<const double> probs);

/// OOD when the top probability is strictly below `threshold`.
Prediction msp_predict(std::span<const double> probs, double threshold);

/// -T * logsumexp(logits / T).
double energy_score(std::span<const double> logits, double temperature);

/// OOD when the energy is strictly above `threshold`, otherwise argmax of logits.
Prediction energy_predict(std::span<const double> logits, double temperature, double threshold);

/// Row-wise application of `config`. Rows are evaluated in parallel.
std::vector<Prediction> predict_all(const ScoreMatrix& scores, const DetectorConfig& config);

/// Prediction of a single row under `config` (row kind given by `kind`).
Prediction predict_row(std::span<const double> row, ScoreKind kind, const DetectorConfig& config);

}  // namespace binheads
