#include "binheads/decision.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace binheads {

namespace {

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void check_temperature(double t, const char* who) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw std::invalid_argument(std::string(who) + ": temperature must be positive");
  }
}

}  // namespace

const char* to_string(DetectorMethod method) {
  switch (method) {
    case DetectorMethod::BhThreshold: return "bh";
    case DetectorMethod::VanillaArgmax: return "vanilla";
    case DetectorMethod::MaxSoftmaxProb: return "msp";
    case DetectorMethod::Energy: return "energy";
  }
  return "?";
}

DetectorConfig DetectorConfig::bh(ThresholdVector thresholds) {
  DetectorConfig c;
  c.method = DetectorMethod::BhThreshold;
  c.thresholds = std::move(thresholds);
  return c;
}

DetectorConfig DetectorConfig::vanilla() { return {}; }

DetectorConfig DetectorConfig::msp(double probability_threshold, double temperature) {
  check_temperature(temperature, "DetectorConfig::msp");
  DetectorConfig c;
  c.method = DetectorMethod::MaxSoftmaxProb;
  c.global_threshold = probability_threshold;
  c.temperature = temperature;
  return c;
}

DetectorConfig DetectorConfig::energy(double energy_threshold, double temperature) {
  check_temperature(temperature, "DetectorConfig::energy");
  DetectorConfig c;
  c.method = DetectorMethod::Energy;
  c.global_threshold = energy_threshold;
  c.temperature = temperature;
  return c;
}

bool DetectorConfig::accepts(ScoreKind kind) const {
  switch (method) {
    case DetectorMethod::BhThreshold:
    case DetectorMethod::VanillaArgmax: return kind == ScoreKind::Probability;
    case DetectorMethod::MaxSoftmaxProb: return true;
    case DetectorMethod::Energy: return kind == ScoreKind::Logit;
  }
  return false;
}

Prediction bh_predict(std::span<const double> probs, const ThresholdVector& thresholds) {
  if (probs.size() != thresholds.size()) {
    throw std::invalid_argument("bh_predict: " + std::to_string(probs.size()) +
                                " probabilities vs " + std::to_string(thresholds.size()) +
                                " thresholds");
  }
  Prediction p;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double gated = probs[i] > thresholds[i] ? probs[i] : 0.0;
    if (gated > p.confidence) {
      p.confidence = gated;
      p.verdict = static_cast<ClassIndex>(i);
    }
  }
  return p;
}

Prediction vanilla_predict(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("vanilla_predict: empty row");
  const auto k = argmax(probs);
  return {static_cast<ClassIndex>(k), probs[k]};
}

Prediction msp_predict(std::span<const double> probs, double threshold) {
  if (probs.empty()) throw std::invalid_argument("msp_predict: empty row");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("msp_predict: entry outside [0, 1]");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("msp_predict: row does not sum to 1");
  }
  const auto k = argmax(probs);
  if (probs[k] < threshold) return {kOod, 0.0};
  return {static_cast<ClassIndex>(k), probs[k]};
}

double energy_score(std::span<const double> logits, double temperature) {
  check_temperature(temperature, "energy_score");
  if (logits.empty()) throw std::invalid_argument("energy_score: empty row");
  double m = logits[0] / temperature;
  for (double v : logits) m = std::max(m, v / temperature);
  double s = 0.0;
  for (double v : logits) s += std::exp(v / temperature - m);
  return -temperature * (m + std::log(s));
}

Prediction energy_predict(std::span<const double> logits, double temperature, double threshold) {
  const double e = energy_score(logits, temperature);
  if (e > threshold) return {kOod, 0.0};
  const auto k = argmax(logits);
  // Confidence is the (non-negative) negated energy margin; only the verdict
  // matters for metrics.
  return {static_cast<ClassIndex>(k), std::max(0.0, threshold - e)};
}

Prediction predict_row(std::span<const double> row, ScoreKind kind, const DetectorConfig& config) {
  switch (config.method) {
    case DetectorMethod::BhThreshold: return bh_predict(row, config.thresholds);
    case DetectorMethod::VanillaArgmax: return vanilla_predict(row);
    case DetectorMethod::MaxSoftmaxProb:
      if (kind == ScoreKind::Logit) {
        const auto probs = softmax(row, config.temperature);
        return msp_predict(probs, config.global_threshold);
      }
      return msp_predict(row, config.global_threshold);
    case DetectorMethod::Energy:
      return energy_predict(row, config.temperature, config.global_threshold);
  }
  throw std::logic_error("predict_row: unknown method");
}

std::vector<Prediction> predict_all(const ScoreMatrix& scores, const DetectorConfig& config) {
  if (!config.accepts(scores.kind())) {
    throw std::invalid_argument(std::string("predict_all: ") + to_string(config.method) +
                                " cannot consume " + to_string(scores.kind()) + " scores");
  }
  if (config.method == DetectorMethod::BhThreshold &&
      config.thresholds.size() != scores.n_classes()) {
    throw std::invalid_argument("predict_all: threshold count does not match class count");
  }
  const auto n = static_cast<std::ptrdiff_t>(scores.n_samples());
  std::vector<Prediction> out(scores.n_samples());
  // Exceptions must not escape an OpenMP region; rows are validated by the
  // ScoreMatrix invariants, so only MSP's row-sum check can throw here.
  std::string failure;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[i] = predict_row(scores.row(static_cast<std::size_t>(i)), scores.kind(), config);
    } catch (const std::exception& e) {
#pragma omp critical(binheads_predict_all)
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw std::invalid_argument(failure);
  return out;
}

}  // namespace binheads
