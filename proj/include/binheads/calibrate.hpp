#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "binheads/core.hpp"

namespace binheads {

inline constexpr std::size_t kDefaultMaxRounds = 20;
inline constexpr double kDefaultTemperatureMin = 0.05;
inline constexpr double kDefaultTemperatureMax = 100.0;

struct CalibrationStep {
  std::size_t class_index = 0;
  double threshold = 0.0;  // value in force after the step
  double objective = 0.0;  // objective after the step
  bool accepted = false;   // whether the threshold changed
};

struct CalibrationTrace {
  double initial_objective = 0.0;
  std::vector<CalibrationStep> steps;
  std::size_t rounds = 0;
  bool converged = false;
  /// State after the first full pass over the classes.
  std::vector<double> first_round_thresholds;
  double first_round_objective = 0.0;
};

struct ThresholdOptimum {
  double threshold = 0.0;
  double objective = 0.0;
};

struct CoordinateDescentResult {
  ThresholdVector thresholds;
  CalibrationTrace trace;
  double objective = 0.0;
};

/// {0} + midpoints of consecutive distinct sorted scores + {1}. Each
/// achievable accept set {score > t} is produced by exactly one candidate.
std::vector<double> candidate_thresholds(std::span<const double> class_scores);

/// Balanced accuracy of BH predictions under `thresholds`.
double bh_objective(const ScoreMatrix& scores, const LabelVector& labels,
                    const ThresholdVector& thresholds, OodConvention convention);

/// Best threshold for one class with the others held fixed. Ties go to the
/// smallest candidate. Runs in O(N log N + K C) via a single sorted sweep.
ThresholdOptimum optimize_threshold_1d(const ScoreMatrix& scores, const LabelVector& labels,
                                       const ThresholdVector& thresholds, std::size_t class_idx,
                                       OodConvention convention);

/// Objective at every candidate by full re-evaluation, candidates in parallel.
/// Brute-force counterpart of optimize_threshold_1d.
std::vector<double> evaluate_candidates(const ScoreMatrix& scores, const LabelVector& labels,
                                        const ThresholdVector& thresholds, std::size_t class_idx,
                                        std::span<const double> candidates,
                                        OodConvention convention);

/// Randomized coordinate ascent on balanced accuracy. Each round visits the
/// classes in a seeded random order; a new value is kept only on strict
/// improvement. Stops after a round without improvement or `max_rounds`.
CoordinateDescentResult coordinate_descent(const ScoreMatrix& scores, const LabelVector& labels,
                                           const ThresholdVector& init, std::uint64_t seed,
                                           std::size_t max_rounds, OodConvention convention);

enum class RejectDirection {
  RejectBelow,  // OOD when value < threshold (max softmax probability)
  RejectAbove,  // OOD when value > threshold (energy)
};

/// Single scalar threshold maximizing balanced accuracy. Candidates run from
/// reject-nothing to reject-everything; ties keep the lesser rejection.
ThresholdOptimum calibrate_global_threshold(std::span<const double> values,
                                            std::span<const Prediction> preds_if_accepted,
                                            const LabelVector& labels, RejectDirection direction,
                                            OodConvention convention);

/// Mean negative log-likelihood of softmax(logits / T).
double mean_nll(const ScoreMatrix& logits, const LabelVector& labels, double temperature);

/// Golden-section search for the NLL-minimizing temperature in [t_min, t_max].
double fit_temperature(const ScoreMatrix& logits, const LabelVector& labels,
                       double t_min = kDefaultTemperatureMin,
                       double t_max = kDefaultTemperatureMax);

}  // namespace binheads
