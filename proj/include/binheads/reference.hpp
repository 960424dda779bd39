#pragma once

// Single-threaded straightforward counterparts of the parallel kernels. Used
// by the tests as oracles and by the benchmark as the baseline.

#include <span>
#include <vector>

#include "binheads/calibrate.hpp"
#include "binheads/core.hpp"
#include "binheads/decision.hpp"
#include "binheads/harness.hpp"
#include "binheads/nnet.hpp"

namespace binheads::reference {

std::vector<Prediction> predict_all(const ScoreMatrix& scores, const DetectorConfig& config);

ScoreMatrix score_dataset(const ModelParams& params, const Matrix& features);

Gradients gradients(const ModelParams& params, const Matrix& features, std::span<const ClassIndex> labels,
                    std::span<const std::size_t> batch);

std::vector<double> evaluate_candidates(const ScoreMatrix& scores, const LabelVector& labels,
                                        const ThresholdVector& thresholds, std::size_t class_idx,
                                        std::span<const double> candidates, OodConvention convention);

/// Re-evaluates the objective at every candidate; first maximum wins.
ThresholdOptimum optimize_threshold_1d(const ScoreMatrix& scores, const LabelVector& labels,
                                       const ThresholdVector& thresholds, std::size_t class_idx,
                                       OodConvention convention);

/// Builds every evaluation set explicitly by concatenating rows.
SweepResult ood_sweep(const LabelVector& in_dist_labels, std::span<const SweepDetector> detectors,
                      const SweepConfig& cfg);

}  // namespace binheads::reference
