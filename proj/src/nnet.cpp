#include "binheads/nnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "binheads/csv.hpp"
#include "binheads/errors.hpp"

namespace binheads {

namespace {

constexpr double kProbEpsilon = 1e-12;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_class(std::size_t true_class, std::size_t n, const char* who) {
  if (true_class >= n) {
    throw std::invalid_argument(std::string(who) + ": class " + std::to_string(true_class) +
                                " out of range");
  }
}

// Per-thread scratch for one forward/backward pass.
struct Workspace {
  std::vector<std::vector<double>> act;  // act[l] = input of layer l
  std::vector<double> delta, delta_prev;
};

void forward_into(const ModelParams& p, std::span<const double> x, Workspace& ws,
                  std::vector<double>& logits) {
  const std::size_t layers = p.n_layers();
  ws.act.resize(layers);
  ws.act[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& sh = p.shape(l);
    const auto w = p.weights(l);
    const auto b = p.bias(l);
    const auto& in = ws.act[l];
    std::vector<double>& out = (l + 1 < layers) ? ws.act[l + 1] : logits;
    out.resize(sh.out);
    for (std::size_t o = 0; o < sh.out; ++o) {
      double z = b[o];
      const double* row = w.data() + o * sh.in;
      for (std::size_t i = 0; i < sh.in; ++i) z += row[i] * in[i];
      out[o] = (l + 1 < layers) ? std::max(z, 0.0) : z;
    }
  }
}

// Adds the gradient of one sample's loss into `grad` (flat, parameter-shaped).
void backprop_sample(const ModelParams& p, std::span<const double> x, ClassIndex label,
                     std::span<double> grad, Workspace& ws) {
  std::vector<double> logits;
  forward_into(p, x, ws, logits);
  const auto y = static_cast<std::size_t>(label);
  ws.delta.resize(logits.size());
  if (p.config().head == HeadKind::BinaryHeads) {
    for (std::size_t k = 0; k < logits.size(); ++k) {
      ws.delta[k] = sigmoid(logits[k]) - (k == y ? 1.0 : 0.0);
    }
  } else {
    const auto probs = softmax(logits);
    for (std::size_t k = 0; k < logits.size(); ++k) ws.delta[k] = probs[k] - (k == y ? 1.0 : 0.0);
  }
  for (std::size_t l = p.n_layers(); l-- > 0;) {
    const auto& sh = p.shape(l);
    const auto& in = ws.act[l];
    double* gw = grad.data() + sh.weight_offset;
    double* gb = grad.data() + sh.bias_offset;
    for (std::size_t o = 0; o < sh.out; ++o) {
      const double d = ws.delta[o];
      gb[o] += d;
      for (std::size_t i = 0; i < sh.in; ++i) gw[o * sh.in + i] += d * in[i];
    }
    if (l == 0) break;
    const auto w = p.weights(l);
    ws.delta_prev.assign(sh.in, 0.0);
    for (std::size_t o = 0; o < sh.out; ++o) {
      const double d = ws.delta[o];
      for (std::size_t i = 0; i < sh.in; ++i) ws.delta_prev[i] += w[o * sh.in + i] * d;
    }
    for (std::size_t i = 0; i < sh.in; ++i) {
      if (in[i] <= 0.0) ws.delta_prev[i] = 0.0;
    }
    std::swap(ws.delta, ws.delta_prev);
  }
}

void check_features(const ModelParams& p, const Matrix& features, const char* who) {
  if (features.cols() != p.config().input_dim && features.rows() > 0) {
    throw std::invalid_argument(std::string(who) + ": feature dimension " +
                                std::to_string(features.cols()) + " != input_dim " +
                                std::to_string(p.config().input_dim));
  }
}

double row_loss(HeadKind head, std::span<const double> outputs, ClassIndex label) {
  return head == HeadKind::BinaryHeads ? bh_loss(outputs, static_cast<std::size_t>(label))
                                       : softmax_loss(outputs, static_cast<std::size_t>(label));
}

// Mean recall over the classes present in `labels`, from argmax verdicts.
double monitor_balanced_accuracy(const ScoreMatrix& scores, std::span<const ClassIndex> labels) {
  const std::size_t c = scores.n_classes();
  std::vector<std::size_t> hits(c, 0), totals(c, 0);
  for (std::size_t s = 0; s < scores.n_samples(); ++s) {
    const auto row = scores.row(s);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const auto y = static_cast<std::size_t>(labels[s]);
    ++totals[y];
    if (best == y) ++hits[y];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (totals[k] == 0) continue;
    sum += static_cast<double>(hits[k]) / static_cast<double>(totals[k]);
    ++present;
  }
  return present == 0 ? 0.0 : sum / static_cast<double>(present);
}

double scored_mean_loss(HeadKind head, const ScoreMatrix& scores, std::span<const ClassIndex> labels) {
  double total = 0.0;
  for (std::size_t s = 0; s < scores.n_samples(); ++s) total += row_loss(head, scores.row(s), labels[s]);
  return scores.n_samples() == 0 ? 0.0 : total / static_cast<double>(scores.n_samples());
}

}  // namespace

const char* to_string(HeadKind kind) {
  return kind == HeadKind::BinaryHeads ? "BinaryHeads" : "Softmax";
}

void MlpConfig::validate() const {
  if (input_dim < 1 || n_classes < 1) {
    throw std::invalid_argument("MlpConfig: input_dim and n_classes must be >= 1");
  }
  for (std::size_t h : hidden_dims) {
    if (h < 1) throw std::invalid_argument("MlpConfig: hidden dims must be >= 1");
  }
}

ModelParams::ModelParams(MlpConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t in = config_.input_dim, offset = 0;
  auto add = [&](std::size_t out) {
    LayerShape sh{in, out, offset, offset + in * out};
    offset = sh.bias_offset + out;
    shapes_.push_back(sh);
    in = out;
  };
  for (std::size_t h : config_.hidden_dims) add(h);
  add(config_.n_classes);
  flat_.assign(offset, 0.0);
}

ModelParams ModelParams::glorot_uniform(MlpConfig config, std::uint64_t seed) {
  ModelParams p(std::move(config));
  Rng rng(seed);
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    const auto& sh = p.shape(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(sh.in + sh.out));
    for (double& w : p.weights(l)) w = rng.uniform(-limit, limit);
  }
  return p;
}

std::span<double> ModelParams::weights(std::size_t layer) {
  const auto& sh = shapes_.at(layer);
  return {flat_.data() + sh.weight_offset, sh.in * sh.out};
}
std::span<const double> ModelParams::weights(std::size_t layer) const {
  const auto& sh = shapes_.at(layer);
  return {flat_.data() + sh.weight_offset, sh.in * sh.out};
}
std::span<double> ModelParams::bias(std::size_t layer) {
  const auto& sh = shapes_.at(layer);
  return {flat_.data() + sh.bias_offset, sh.out};
}
std::span<const double> ModelParams::bias(std::size_t layer) const {
  const auto& sh = shapes_.at(layer);
  return {flat_.data() + sh.bias_offset, sh.out};
}

bool ModelParams::all_finite() const {
  return std::all_of(flat_.begin(), flat_.end(), [](double v) { return std::isfinite(v); });
}

ForwardResult forward(const ModelParams& params, std::span<const double> features) {
  if (features.size() != params.config().input_dim) {
    throw std::invalid_argument("forward: feature length " + std::to_string(features.size()) +
                                " != input_dim " + std::to_string(params.config().input_dim));
  }
  Workspace ws;
  ForwardResult r;
  forward_into(params, features, ws, r.head_logits);
  r.trunk.assign(ws.act.begin() + 1, ws.act.end());
  if (params.config().head == HeadKind::BinaryHeads) {
    r.head_outputs.resize(r.head_logits.size());
    std::transform(r.head_logits.begin(), r.head_logits.end(), r.head_outputs.begin(), sigmoid);
  } else {
    r.head_outputs = r.head_logits;
  }
  return r;
}

double bh_loss(std::span<const double> head_probs, std::size_t true_class) {
  check_class(true_class, head_probs.size(), "bh_loss");
  double loss = 0.0;
  for (std::size_t k = 0; k < head_probs.size(); ++k) {
    const double p = head_probs[k];
    loss -= (k == true_class) ? std::log(std::max(p, kProbEpsilon))
                              : std::log(std::max(1.0 - p, kProbEpsilon));
  }
  return loss;
}

double softmax_loss(std::span<const double> logits, std::size_t true_class) {
  check_class(true_class, logits.size(), "softmax_loss");
  return std::max(0.0, logsumexp(logits) - logits[true_class]);
}

double sample_loss(const ModelParams& params, std::span<const double> features, ClassIndex label) {
  const auto r = forward(params, features);
  if (label < 0) throw std::invalid_argument("sample_loss: OOD label");
  return row_loss(params.config().head, r.head_outputs, label);
}

double mean_loss(const ModelParams& params, const Matrix& features,
                 std::span<const ClassIndex> labels) {
  if (labels.size() != features.rows()) throw std::invalid_argument("mean_loss: size mismatch");
  const auto scores = score_dataset(params, features);
  return scored_mean_loss(params.config().head, scores, labels);
}

Gradients gradients(const ModelParams& params, const Matrix& features,
                    std::span<const ClassIndex> labels, std::span<const std::size_t> batch) {
  if (batch.empty()) throw std::invalid_argument("gradients: empty batch");
  check_features(params, features, "gradients");
  if (labels.size() != features.rows()) throw std::invalid_argument("gradients: size mismatch");
  for (std::size_t s : batch) {
    if (s >= features.rows()) throw std::invalid_argument("gradients: batch index out of range");
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= params.config().n_classes) {
      throw std::invalid_argument("gradients: label out of range");
    }
  }

  const std::size_t n_params = params.size();
  std::vector<double> per_sample(batch.size() * n_params, 0.0);
  const auto b = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel
  {
    Workspace ws;
#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < b; ++k) {
      const std::size_t s = batch[static_cast<std::size_t>(k)];
      backprop_sample(params, features.row(s), labels[s],
                      {per_sample.data() + static_cast<std::size_t>(k) * n_params, n_params}, ws);
    }
  }

  Gradients g(params.config());
  auto out = g.flat();
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const double* src = per_sample.data() + k * n_params;
    for (std::size_t i = 0; i < n_params; ++i) out[i] += src[i];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& v : out) v *= inv;
  return g;
}

void add_sample_gradient(const ModelParams& params, std::span<const double> features, ClassIndex label,
                         std::span<double> grad) {
  if (features.size() != params.config().input_dim) {
    throw std::invalid_argument("add_sample_gradient: feature dimension mismatch");
  }
  if (label < 0 || static_cast<std::size_t>(label) >= params.config().n_classes) {
    throw std::invalid_argument("add_sample_gradient: label out of range");
  }
  if (grad.size() != params.size()) throw std::invalid_argument("add_sample_gradient: gradient size mismatch");
  Workspace ws;
  backprop_sample(params, features, label, grad, ws);
}

Gradients gradients(const ModelParams& params, const Matrix& features,
                    std::span<const ClassIndex> labels) {
  std::vector<std::size_t> all(features.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return gradients(params, features, labels, all);
}

ScoreMatrix score_dataset(const ModelParams& params, const Matrix& features) {
  check_features(params, features, "score_dataset");
  const std::size_t c = params.config().n_classes;
  const bool bh = params.config().head == HeadKind::BinaryHeads;
  std::vector<double> values(features.rows() * c);
  const auto n = static_cast<std::ptrdiff_t>(features.rows());
#pragma omp parallel
  {
    Workspace ws;
    std::vector<double> logits;
#pragma omp for schedule(static)
    for (std::ptrdiff_t s = 0; s < n; ++s) {
      forward_into(params, features.row(static_cast<std::size_t>(s)), ws, logits);
      double* dst = values.data() + static_cast<std::size_t>(s) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] = bh ? sigmoid(logits[k]) : logits[k];
    }
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("score_dataset: non-finite model output");
  }
  return ScoreMatrix(features.rows(), c, bh ? ScoreKind::Probability : ScoreKind::Logit,
                     std::move(values));
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (plateau_patience < 1) throw std::invalid_argument("TrainConfig: plateau_patience must be >= 1");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
    throw std::invalid_argument("TrainConfig: lr_decay_factor must be in (0, 1)");
  }
  if (!(feature_noise >= 0.0)) throw std::invalid_argument("TrainConfig: feature_noise must be >= 0");
}

WeightedSampler::WeightedSampler(std::span<const ClassIndex> labels, std::size_t n_classes) {
  if (labels.empty()) throw std::invalid_argument("WeightedSampler: no samples");
  std::vector<std::size_t> counts(n_classes, 0);
  for (ClassIndex l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes) {
      throw std::invalid_argument("WeightedSampler: label out of range");
    }
    ++counts[static_cast<std::size_t>(l)];
  }
  cumulative_.reserve(labels.size());
  double acc = 0.0;
  for (ClassIndex l : labels) {
    acc += 1.0 / static_cast<double>(counts[static_cast<std::size_t>(l)]);
    cumulative_.push_back(acc);
  }
}

std::size_t WeightedSampler::draw(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

TrainResult train(const Matrix& train_features, const LabelVector& train_labels,
                  const Matrix& val_features, const LabelVector& val_labels, const MlpConfig& mlp,
                  const TrainConfig& cfg) {
  mlp.validate();
  cfg.validate();
  const std::size_t n = train_features.rows();
  if (n == 0) throw std::invalid_argument("train: empty training set");
  if (train_labels.size() != n || val_labels.size() != val_features.rows()) {
    throw std::invalid_argument("train: feature and label counts differ");
  }
  if (train_features.cols() != mlp.input_dim ||
      (val_features.rows() > 0 && val_features.cols() != mlp.input_dim)) {
    throw std::invalid_argument("train: feature dimension does not match input_dim");
  }
  if (train_labels.ood_count() > 0) {
    throw std::invalid_argument("train: OOD samples are not allowed in the training set");
  }
  for (ClassIndex l : train_labels.labels) {
    if (static_cast<std::size_t>(l) >= mlp.n_classes) {
      throw std::invalid_argument("train: label exceeds n_classes");
    }
  }

  // Validation monitors use in-distribution samples only.
  std::vector<std::size_t> val_rows;
  for (std::size_t s = 0; s < val_labels.size(); ++s) {
    if (val_labels.labels[s] != kOod) val_rows.push_back(s);
  }
  const Matrix val_x = val_features.select_rows(val_rows);
  const LabelVector val_y = val_labels.select(val_rows);
  const bool have_val = !val_rows.empty();

  Rng rng(cfg.seed);
  ModelParams params = ModelParams::glorot_uniform(mlp, rng.next());

  auto evaluate = [&](EpochStats& st) {
    const auto train_scores = score_dataset(params, train_features);
    st.train_loss = scored_mean_loss(mlp.head, train_scores, train_labels.labels);
    st.train_balanced_accuracy = monitor_balanced_accuracy(train_scores, train_labels.labels);
    if (have_val) {
      const auto val_scores = score_dataset(params, val_x);
      st.val_loss = scored_mean_loss(mlp.head, val_scores, val_y.labels);
      st.val_balanced_accuracy = monitor_balanced_accuracy(val_scores, val_y.labels);
    } else {
      st.val_loss = st.train_loss;
      st.val_balanced_accuracy = st.train_balanced_accuracy;
    }
    if (!std::isfinite(st.train_loss) || !std::isfinite(st.val_loss)) {
      throw NumericError("train: loss diverged at epoch " + std::to_string(st.epoch));
    }
  };

  TrainResult result;
  EpochStats initial;
  evaluate(initial);
  double best_loss = initial.val_loss;
  result.params = params;

  const WeightedSampler sampler(train_labels.labels, mlp.n_classes);
  std::vector<std::size_t> draws(n);
  std::iota(draws.begin(), draws.end(), std::size_t{0});

  double lr = cfg.learning_rate;
  std::size_t waited = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.weighted_sampling) {
      for (auto& d : draws) d = sampler.draw(rng);
    } else {
      std::iota(draws.begin(), draws.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(draws));
    }

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> batch(draws.data() + start, len);
      Gradients g;
      if (cfg.feature_noise > 0.0) {
        Matrix noisy(len, mlp.input_dim);
        std::vector<ClassIndex> noisy_labels(len);
        std::vector<std::size_t> rows(len);
        for (std::size_t k = 0; k < len; ++k) {
          const auto src = train_features.row(batch[k]);
          auto dst = noisy.row(k);
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] + cfg.feature_noise * rng.normal();
          noisy_labels[k] = train_labels.labels[batch[k]];
          rows[k] = k;
        }
        g = gradients(params, noisy, noisy_labels, rows);
      } else {
        g = gradients(params, train_features, train_labels.labels, batch);
      }
      auto w = params.flat();
      const auto gw = g.flat();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    }

    EpochStats st;
    st.epoch = epoch;
    st.learning_rate = lr;
    evaluate(st);
    result.history.push_back(st);

    if (st.val_loss <= best_loss - kPlateauMinDelta) {
      best_loss = st.val_loss;
      result.params = params;
      result.best_epoch = epoch;
      waited = 0;
    } else if (++waited >= cfg.plateau_patience) {
      lr = std::max(lr * cfg.lr_decay_factor, std::min(lr, kLearningRateFloor));
      waited = 0;
    }
  }
  return result;
}

namespace {

constexpr char kMagic[8] = {'B', 'H', 'M', 'L', 'P', 'v', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw DataError("load_model: truncated model file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_model(const ModelParams& params, std::ostream& out) {
  const auto& cfg = params.config();
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kFormatVersion);
  write_le<std::uint32_t>(out, cfg.head == HeadKind::BinaryHeads ? 0u : 1u);
  write_le<std::uint64_t>(out, cfg.input_dim);
  write_le<std::uint64_t>(out, cfg.n_classes);
  write_le<std::uint64_t>(out, cfg.hidden_dims.size());
  for (std::size_t h : cfg.hidden_dims) write_le<std::uint64_t>(out, h);
  for (double v : params.flat()) write_le<double>(out, v);
  if (!out) throw DataError("save_model: write failed");
}

ModelParams load_model(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("load_model: bad magic");
  }
  if (read_le<std::uint32_t>(in) != kFormatVersion) throw DataError("load_model: unsupported version");
  MlpConfig cfg;
  const auto head = read_le<std::uint32_t>(in);
  if (head > 1) throw DataError("load_model: unknown head kind");
  cfg.head = head == 0 ? HeadKind::BinaryHeads : HeadKind::Softmax;
  cfg.input_dim = read_le<std::uint64_t>(in);
  cfg.n_classes = read_le<std::uint64_t>(in);
  const auto n_hidden = read_le<std::uint64_t>(in);
  if (n_hidden > 1024) throw DataError("load_model: implausible layer count");
  for (std::uint64_t i = 0; i < n_hidden; ++i) cfg.hidden_dims.push_back(read_le<std::uint64_t>(in));
  ModelParams p;
  try {
    p = ModelParams(cfg);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("load_model: ") + e.what());
  }
  for (double& v : p.flat()) v = read_le<double>(in);
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("load_model: trailing bytes");
  if (!p.all_finite()) throw DataError("load_model: non-finite parameter");
  return p;
}

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  save_model(params, buf);
  write_file_atomic(path, buf.str());
}

ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_model: cannot open " + path.string());
  return load_model(in);
}

}  // namespace binheads
