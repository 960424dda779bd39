#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "binheads/calibrate.hpp"
#include "binheads/config.hpp"
#include "binheads/core.hpp"
#include "binheads/data.hpp"
#include "binheads/decision.hpp"
#include "binheads/nnet.hpp"

namespace binheads {

// ---------------------------------------------------------------------------
// OOD-count sweep

/// A named detector with its scores on the in-distribution and OOD test
/// rows. Row order of `in_dist` must match the shared label vector.
struct SweepDetector {
  std::string name;
  DetectorConfig config;
  ScoreMatrix in_dist;
  ScoreMatrix ood;
};

struct SweepConfig {
  std::vector<std::size_t> ood_counts;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
};

/// 0 followed by `points` evenly spaced counts up to `available`, deduplicated.
std::vector<std::size_t> default_ood_grid(std::size_t available, std::size_t points = 8);

struct SweepRow {
  std::string method;
  std::size_t ood_count = 0;
  std::size_t repetition = 0;
  EvalReport report;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // method-major, then ood_count, then repetition
};

/// Each point appends the first k entries of a seeded shuffle of the OOD rows
/// (nested subsets) to the fixed in-distribution set and evaluates every
/// detector. Points run in parallel.
SweepResult ood_sweep(const LabelVector& in_dist_labels, std::span<const SweepDetector> detectors,
                      const SweepConfig& cfg);

/// Shuffled OOD row order for one repetition.
std::vector<std::size_t> ood_draw_order(std::size_t available, std::uint64_t seed,
                                        std::size_t repetition);

struct CompareRow {
  std::size_t ood_count = 0;
  std::string method;
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  std::optional<double> ood_recall;
  std::optional<double> ood_precision;
};

/// Per (ood_count, method) means over repetitions, recomputed from the stored
/// confusion matrices. Undefined OOD recall/precision stays empty.
std::vector<CompareRow> compare_report(const SweepResult& sweep);

std::string format_compare_csv(std::span<const CompareRow> rows);
std::string format_compare_table(std::span<const CompareRow> rows);

std::string format_sweep_csv(const SweepResult& sweep);
/// Parses format_sweep_csv output; reports are rebuilt from the confusion
/// column and must agree with the stored metrics.
SweepResult parse_sweep_csv(std::string_view text, const std::string& source = "<memory>");

std::string format_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> class_names);

enum class ChartMetric { Accuracy, BalancedAccuracy };
/// 800x500 line chart of a metric against OOD count, one polyline per method.
std::string format_svg_chart(std::span<const CompareRow> rows, ChartMetric metric);

// ---------------------------------------------------------------------------
// Experiment pipeline

struct TrainedModels {
  TrainResult bh;
  TrainResult softmax;
};

struct ModelScores {
  ScoresFile bh_val, bh_test, softmax_val, softmax_test;
};

struct Calibration {
  ThresholdVector bh;         // OOD-inclusive validation set, C+1 classes
  ThresholdVector bh_no_ood;  // in-distribution validation rows only
  CalibrationTrace bh_trace;
  CalibrationTrace bh_no_ood_trace;
  double msp_threshold = 0.0;
  double energy_temperature = 1.0;
  double energy_threshold = 0.0;
};

struct PipelineResult {
  DatasetBundle bundle;
  TrainedModels models;
  ModelScores scores;
  Calibration calibration;
  std::vector<std::pair<std::string, EvalReport>> full_test;  // per method, all OOD rows
  SweepResult sweep;
};

DatasetBundle generate_bundle(const ExperimentConfig& cfg);
TrainedModels train_models(const ExperimentConfig& cfg, const DatasetBundle& bundle);
ModelScores score_splits(const TrainedModels& models, const FeaturesFile& val, const FeaturesFile& test);
Calibration calibrate_detectors(const ExperimentConfig& cfg, const ScoresFile& bh_val,
                                const ScoresFile& softmax_val);

/// Splits the test rows into in-distribution/OOD parts and builds the
/// configured detectors.
struct SweepInputs {
  LabelVector in_dist_labels;
  std::vector<SweepDetector> detectors;
};
SweepInputs build_sweep_inputs(const ExperimentConfig& cfg, const Calibration& cal,
                               const ScoresFile& bh_test, const ScoresFile& softmax_test);

std::vector<std::pair<std::string, EvalReport>> evaluate_full(const SweepInputs& inputs);
SweepResult run_sweep(const ExperimentConfig& cfg, const SweepInputs& inputs);

/// All stages in memory.
PipelineResult run_pipeline(const ExperimentConfig& cfg);

std::string format_thresholds_csv(const Calibration& cal, std::span<const std::string> class_names);
Calibration parse_thresholds_csv(std::string_view text, std::span<const std::string> class_names,
                                 const std::string& source = "<memory>");

// ---------------------------------------------------------------------------
// File-based stages (CLI). Each reads its inputs from and writes its outputs
// to `dir`.

/// Failure inside a named stage. `exit_code` follows the CLI convention.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, int exit_code, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(std::move(stage)), exit_code_(exit_code) {}
  const std::string& stage() const noexcept { return stage_; }
  int exit_code() const noexcept { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

void stage_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_train(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_calibrate(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir);
void stage_report(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// gen-data, train, calibrate, eval, sweep, report, then manifest.txt.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir);

}  // namespace binheads
