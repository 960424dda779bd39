#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "binheads/core.hpp"
#include "binheads/rng.hpp"

namespace binheads {

enum class HeadKind {
  BinaryHeads,  // C independent sigmoid units
  Softmax,      // one C-way softmax (outputs are logits)
};

const char* to_string(HeadKind kind);

/// ReLU trunk of `hidden_dims` followed by a linear head of `n_classes` units.
struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t n_classes = 0;
  HeadKind head = HeadKind::BinaryHeads;

  void validate() const;
  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;  // out x in, row-major
  std::size_t bias_offset = 0;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// All weights and biases in one flat buffer, layers in declaration order
/// (trunk first, head last). Also used as the gradient container.
class ModelParams {
 public:
  ModelParams() = default;
  /// Zero-initialized parameters.
  explicit ModelParams(MlpConfig config);
  /// Uniform in +-sqrt(6 / (fan_in + fan_out)); zero biases.
  static ModelParams glorot_uniform(MlpConfig config, std::uint64_t seed);

  const MlpConfig& config() const noexcept { return config_; }
  std::size_t n_layers() const noexcept { return shapes_.size(); }
  const LayerShape& shape(std::size_t layer) const { return shapes_.at(layer); }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  std::span<double> flat() noexcept { return flat_; }
  std::span<const double> flat() const noexcept { return flat_; }
  std::size_t size() const noexcept { return flat_.size(); }
  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  MlpConfig config_;
  std::vector<LayerShape> shapes_;
  std::vector<double> flat_;
};

using Gradients = ModelParams;

struct ForwardResult {
  std::vector<std::vector<double>> trunk;  // post-ReLU activations per hidden layer
  std::vector<double> head_logits;
  std::vector<double> head_outputs;  // sigmoid probabilities (BH) or logits (Softmax)
};

ForwardResult forward(const ModelParams& params, std::span<const double> features);

/// Sum over heads of binary cross-entropy against the one-hot target.
double bh_loss(std::span<const double> head_probs, std::size_t true_class);

/// Cross-entropy of softmax(logits) against `true_class`.
double softmax_loss(std::span<const double> logits, std::size_t true_class);

/// Loss of one sample under the model's head kind.
double sample_loss(const ModelParams& params, std::span<const double> features, ClassIndex label);

/// Mean loss over the rows of `features`.
double mean_loss(const ModelParams& params, const Matrix& features, std::span<const ClassIndex> labels);

/// Analytic gradient of the mean loss over `batch` (row indices into
/// `features`). Per-sample gradients are computed in parallel and reduced in
/// batch order, so the result does not depend on the thread count.
Gradients gradients(const ModelParams& params, const Matrix& features,
                    std::span<const ClassIndex> labels, std::span<const std::size_t> batch);

/// Adds the loss gradient of one sample into `grad` (size params.size()).
void add_sample_gradient(const ModelParams& params, std::span<const double> features, ClassIndex label,
                         std::span<double> grad);

/// Gradient of the mean loss over all rows.
Gradients gradients(const ModelParams& params, const Matrix& features,
                    std::span<const ClassIndex> labels);

/// Row-wise forward pass. Probability kind for BinaryHeads, Logit for Softmax.
ScoreMatrix score_dataset(const ModelParams& params, const Matrix& features);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 60;
  std::size_t plateau_patience = 5;
  double lr_decay_factor = 0.5;
  bool weighted_sampling = true;
  /// Standard deviation of isotropic Gaussian noise added to drawn features.
  double feature_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kPlateauMinDelta = 1e-6;
inline constexpr double kLearningRateFloor = 1e-6;

struct EpochStats {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_balanced_accuracy = 0.0;
  double val_balanced_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;  // parameters with the best validation loss
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 0 means the initial parameters
};

/// Minibatch SGD with optional class-balanced sampling and learning-rate
/// decay on validation plateaus. OOD-labeled validation samples are ignored;
/// OOD-labeled training samples are an error.
TrainResult train(const Matrix& train_features, const LabelVector& train_labels,
                  const Matrix& val_features, const LabelVector& val_labels, const MlpConfig& mlp,
                  const TrainConfig& cfg);

/// Draws sample indices with probability proportional to 1 / count(label),
/// so every class is drawn equally often in expectation.
class WeightedSampler {
 public:
  WeightedSampler(std::span<const ClassIndex> labels, std::size_t n_classes);
  std::size_t draw(Rng& rng) const;

 private:
  std::vector<double> cumulative_;
};

/// Flat little-endian binary format:
///   "BHMLPv01" | u32 version | u32 head kind | u64 input_dim | u64 n_classes |
///   u64 n_hidden | u64 hidden dims... | f64 parameters (per layer: weights
///   row-major out x in, then bias)
void save_model(const ModelParams& params, std::ostream& out);
ModelParams load_model(std::istream& in);
void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace binheads
