#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "binheads/data.hpp"
#include "binheads/nnet.hpp"

namespace binheads {

struct CalibrateSettings {
  std::size_t max_rounds = 20;
  /// Second starting point for the per-class search, besides all zeros.
  double init_threshold = 0.5;
  std::uint64_t seed = 0;
  double t_min = 0.05;
  double t_max = 100.0;
};

struct SweepSettings {
  std::vector<std::size_t> ood_counts;  // empty: 0 plus `points` evenly spaced counts
  std::size_t points = 8;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> methods = {"bh", "bh_no_ood", "bh_vanilla", "msp", "energy"};
};

/// Everything a run needs. Parsed from a flat `key = value` file with
/// [data], [model], [train], [calibrate] and [sweep] sections.
struct ExperimentConfig {
  SyntheticSpec data = SyntheticSpec::imbalanced_default();
  double train_frac = 0.8;
  std::vector<std::size_t> hidden_dims = {32};
  TrainConfig train;
  CalibrateSettings calibrate;
  SweepSettings sweep;

  void validate() const;
  /// Replaces the seed of every section.
  void override_seed(std::uint64_t seed);
  MlpConfig mlp(HeadKind head) const;
};

/// Known method names for [sweep] methods.
const std::vector<std::string>& known_methods();

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const ExperimentConfig& config);

}  // namespace binheads
