#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "binheads/core.hpp"

namespace binheads {

/// Literal label used for OOD samples in interchange files.
inline constexpr std::string_view kOodLabel = "OOD";

/// Gaussian-cluster dataset with one optional held-out class.
struct SyntheticSpec {
  std::vector<std::string> class_names;  // all classes, held-out one included
  std::vector<double> class_proportions;
  std::size_t total_samples = 20000;
  std::size_t feature_dim = 16;
  double cluster_separation = 3.0;
  double cluster_scale = 1.0;
  std::optional<std::size_t> ood_class_index;
  std::size_t groups_per_class = 50;
  std::uint64_t seed = 0;

  std::size_t n_classes_total() const noexcept { return class_names.size(); }
  void validate() const;

  /// Eight classes in the proportions NV .50, MEL .15, BCC .09, BKL .08,
  /// SCC .02, DF .01, VASC .01, AK .14 with AK held out.
  static SyntheticSpec imbalanced_default();
};

struct SyntheticData {
  Matrix features;
  LabelVector labels;  // in-distribution classes re-indexed, held-out class -> kOod
  std::vector<std::int64_t> groups;
};

/// Floor of proportion * total, remainders handed out by largest fraction
/// (lower index first on ties). Always sums to `total`.
std::vector<std::size_t> largest_remainder_counts(std::span<const double> proportions,
                                                  std::size_t total);

SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct Split {
  Matrix features;
  LabelVector labels;
  std::vector<std::int64_t> groups;
  std::vector<std::size_t> source_rows;  // row index in the unsplit data
};

struct DatasetBundle {
  Split train, val, test;
  std::vector<std::string> class_names;
};

/// Group-aware split. Per in-distribution class, round(train_frac * groups)
/// groups go to train and the rest alternate val/test (odd extra to val).
/// OOD groups go to val and test only, the odd one to val.
DatasetBundle split_dataset(const Matrix& features, const LabelVector& labels,
                            std::span<const std::int64_t> groups, double train_frac,
                            std::uint64_t seed);

/// Score interchange file:
///   # kind: Probability|Logit     (optional, defaults to Probability)
///   id,label,<class names...>
///   <id>,<class name or OOD>,<score>...
struct ScoresFile {
  std::vector<std::string> ids;
  ScoreMatrix scores;
  LabelVector labels;
};

ScoresFile parse_scores_csv(std::string_view text, const std::string& source = "<memory>");
ScoresFile load_scores_csv(const std::filesystem::path& path);
std::string format_scores_csv(const ScoresFile& file);
void save_scores_csv(const std::filesystem::path& path, const ScoresFile& file);

/// Feature interchange file:
///   # classes: <class names...>
///   id,group,label,f0,...,f{d-1}
struct FeaturesFile {
  std::vector<std::string> ids;
  std::vector<std::int64_t> groups;
  Matrix features;
  LabelVector labels;
};

FeaturesFile features_file_from_split(const Split& split);
FeaturesFile parse_features_csv(std::string_view text, const std::string& source = "<memory>");
FeaturesFile load_features_csv(const std::filesystem::path& path);
std::string format_features_csv(const FeaturesFile& file);
void save_features_csv(const std::filesystem::path& path, const FeaturesFile& file);

/// Throws std::invalid_argument unless every name is non-empty, unique,
/// comma-free and distinct from the OOD label.
void validate_class_names(std::span<const std::string> names);

}  // namespace binheads
