#include "binheads/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "binheads/decision.hpp"
#include "binheads/rng.hpp"

namespace binheads {

namespace {

std::size_t label_slot(ClassIndex label, std::size_t n_classes) {
  return label == kOod ? n_classes : static_cast<std::size_t>(label);
}

std::vector<std::uint64_t> class_totals(const LabelVector& labels) {
  std::vector<std::uint64_t> totals(labels.n_classes() + 1, 0);
  for (ClassIndex l : labels.labels) ++totals[label_slot(l, labels.n_classes())];
  return totals;
}

void check_bh_inputs(const ScoreMatrix& scores, const LabelVector& labels,
                     const ThresholdVector& thresholds, std::size_t class_idx, const char* who) {
  if (scores.kind() != ScoreKind::Probability) {
    throw std::invalid_argument(std::string(who) + ": scores must be probabilities");
  }
  if (scores.n_samples() != labels.size()) {
    throw std::invalid_argument(std::string(who) + ": score and label counts differ");
  }
  if (scores.n_classes() != labels.n_classes() || thresholds.size() != scores.n_classes()) {
    throw std::invalid_argument(std::string(who) + ": class counts differ");
  }
  if (class_idx >= scores.n_classes()) {
    throw std::invalid_argument(std::string(who) + ": class index out of range");
  }
}

}  // namespace

std::vector<double> candidate_thresholds(std::span<const double> class_scores) {
  if (class_scores.empty()) throw std::invalid_argument("candidate_thresholds: empty input");
  std::vector<double> v(class_scores.begin(), class_scores.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());

  std::vector<double> out;
  out.reserve(v.size() + 1);
  out.push_back(0.0);
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    // With the lowest score at 0 the first midpoint accepts the same set as 0.
    if (i == 0 && v[0] <= 0.0) continue;
    double mid = v[i] + (v[i + 1] - v[i]) / 2.0;
    if (mid >= v[i + 1]) mid = v[i];  // adjacent doubles
    out.push_back(mid);
  }
  if (out.back() < 1.0) out.push_back(1.0);
  return out;
}

double bh_objective(const ScoreMatrix& scores, const LabelVector& labels,
                    const ThresholdVector& thresholds, OodConvention convention) {
  const auto preds = predict_all(scores, DetectorConfig::bh(thresholds));
  return balanced_accuracy(confusion_matrix(preds, labels), convention);
}

ThresholdOptimum optimize_threshold_1d(const ScoreMatrix& scores, const LabelVector& labels,
                                       const ThresholdVector& thresholds, std::size_t class_idx,
                                       OodConvention convention) {
  check_bh_inputs(scores, labels, thresholds, class_idx, "optimize_threshold_1d");
  const std::size_t n = scores.n_samples();
  const std::size_t c = scores.n_classes();
  const auto j = static_cast<ClassIndex>(class_idx);

  // Each sample has exactly two possible verdicts: one when head j passes and
  // one when it does not. Only the former depends on j's threshold.
  std::vector<std::uint8_t> correct_with(n), correct_without(n);
  std::vector<double> column(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = scores.row(s);
    Prediction alt;
    for (std::size_t i = 0; i < c; ++i) {
      if (i == class_idx) continue;
      const double gated = row[i] > thresholds[i] ? row[i] : 0.0;
      if (gated > alt.confidence) alt = {static_cast<ClassIndex>(i), gated};
    }
    const double p = row[class_idx];
    ClassIndex with = alt.verdict;
    if (p > alt.confidence) {
      with = j;
    } else if (p == alt.confidence && p > 0.0) {
      with = std::min(j, alt.verdict);
    }
    column[s] = p;
    correct_with[s] = with == labels.labels[s];
    correct_without[s] = alt.verdict == labels.labels[s];
  }

  const auto totals = class_totals(labels);
  const auto candidates = candidate_thresholds(column);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });

  std::vector<std::uint64_t> correct(c + 1, 0);
  for (std::size_t s = 0; s < n; ++s) {
    correct[label_slot(labels.labels[s], c)] += correct_with[s];
  }

  ThresholdOptimum best{0.0, -1.0};
  std::size_t next = 0;
  for (double t : candidates) {
    while (next < n && column[order[next]] <= t) {
      const std::size_t s = order[next++];
      auto& slot = correct[label_slot(labels.labels[s], c)];
      slot = slot - correct_with[s] + correct_without[s];
    }
    const double objective = balanced_accuracy_from_counts(correct, totals, convention);
    if (objective > best.objective) best = {t, objective};
  }
  return best;
}

std::vector<double> evaluate_candidates(const ScoreMatrix& scores, const LabelVector& labels,
                                        const ThresholdVector& thresholds, std::size_t class_idx,
                                        std::span<const double> candidates,
                                        OodConvention convention) {
  check_bh_inputs(scores, labels, thresholds, class_idx, "evaluate_candidates");
  const std::size_t c = scores.n_classes();
  const auto totals = class_totals(labels);
  // Validates class support up front; nothing below can throw.
  balanced_accuracy_from_counts(std::vector<std::uint64_t>(c + 1, 0), totals, convention);
  for (double t : candidates) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("evaluate_candidates: bad candidate");
  }

  std::vector<double> objectives(candidates.size());
  const auto k = static_cast<std::ptrdiff_t>(candidates.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t q = 0; q < k; ++q) {
    ThresholdVector local = thresholds;
    local.set(class_idx, candidates[static_cast<std::size_t>(q)]);
    std::vector<std::uint64_t> correct(c + 1, 0);
    for (std::size_t s = 0; s < scores.n_samples(); ++s) {
      const auto pred = bh_predict(scores.row(s), local);
      if (pred.verdict == labels.labels[s]) ++correct[label_slot(labels.labels[s], c)];
    }
    objectives[static_cast<std::size_t>(q)] =
        balanced_accuracy_from_counts(correct, totals, convention);
  }
  return objectives;
}

CoordinateDescentResult coordinate_descent(const ScoreMatrix& scores, const LabelVector& labels,
                                           const ThresholdVector& init, std::uint64_t seed,
                                           std::size_t max_rounds, OodConvention convention) {
  if (max_rounds < 1) throw std::invalid_argument("coordinate_descent: max_rounds must be >= 1");
  if (scores.n_classes() == 0) throw std::invalid_argument("coordinate_descent: no classes");
  check_bh_inputs(scores, labels, init, 0, "coordinate_descent");

  CoordinateDescentResult result;
  result.thresholds = init;
  double current = bh_objective(scores, labels, init, convention);
  result.trace.initial_objective = current;

  Rng rng(seed);
  std::vector<std::size_t> order(scores.n_classes());
  for (std::size_t round = 0; round < max_rounds; ++round) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    bool improved = false;
    for (std::size_t j : order) {
      const auto opt = optimize_threshold_1d(scores, labels, result.thresholds, j, convention);
      const bool accept = opt.objective > current;
      if (accept) {
        result.thresholds.set(j, opt.threshold);
        current = opt.objective;
        improved = true;
      }
      result.trace.steps.push_back({j, result.thresholds[j], current, accept});
    }
    ++result.trace.rounds;
    if (round == 0) {
      result.trace.first_round_thresholds = result.thresholds.values();
      result.trace.first_round_objective = current;
    }
    if (!improved) {
      result.trace.converged = true;
      break;
    }
  }
  result.objective = current;
  return result;
}

ThresholdOptimum calibrate_global_threshold(std::span<const double> values,
                                            std::span<const Prediction> preds_if_accepted,
                                            const LabelVector& labels, RejectDirection direction,
                                            OodConvention convention) {
  const std::size_t n = values.size();
  if (preds_if_accepted.size() != n || labels.size() != n) {
    throw std::invalid_argument("calibrate_global_threshold: length mismatch");
  }
  if (n == 0) throw std::invalid_argument("calibrate_global_threshold: no samples");
  const std::size_t c = labels.n_classes();
  const bool below = direction == RejectDirection::RejectBelow;

  // Samples in rejection order: lowest first for RejectBelow, highest first
  // for RejectAbove.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return below ? values[a] < values[b] : values[a] > values[b];
  });

  std::vector<double> distinct;
  for (std::size_t s : order) {
    if (!std::isfinite(values[s])) {
      throw std::invalid_argument("calibrate_global_threshold: non-finite value");
    }
    if (distinct.empty() || values[s] != distinct.back()) distinct.push_back(values[s]);
  }
  // candidates[m] rejects exactly the first m distinct values.
  std::vector<double> candidates;
  candidates.push_back(distinct.front());
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
    const double lo = std::min(distinct[i], distinct[i + 1]);
    const double hi = std::max(distinct[i], distinct[i + 1]);
    double mid = lo + (hi - lo) / 2.0;
    // Adjacent doubles: below needs t in (lo, hi], above needs t in [lo, hi).
    if (below && mid <= lo) mid = hi;
    if (!below && mid >= hi) mid = lo;
    candidates.push_back(mid);
  }
  candidates.push_back(std::nextafter(distinct.back(), below ? HUGE_VAL : -HUGE_VAL));

  const auto totals = class_totals(labels);
  std::vector<std::uint64_t> correct(c + 1, 0);
  for (std::size_t s = 0; s < n; ++s) {
    if (preds_if_accepted[s].verdict == labels.labels[s]) {
      ++correct[label_slot(labels.labels[s], c)];
    }
  }

  ThresholdOptimum best{candidates.front(), balanced_accuracy_from_counts(correct, totals, convention)};
  std::size_t next = 0;
  for (std::size_t m = 1; m < candidates.size(); ++m) {
    const double rejected = distinct[m - 1];
    while (next < n && values[order[next]] == rejected) {
      const std::size_t s = order[next++];
      const ClassIndex truth = labels.labels[s];
      auto& slot = correct[label_slot(truth, c)];
      if (preds_if_accepted[s].verdict == truth) --slot;
      if (truth == kOod) ++slot;
    }
    const double objective = balanced_accuracy_from_counts(correct, totals, convention);
    if (objective > best.objective) best = {candidates[m], objective};
  }
  return best;
}

double mean_nll(const ScoreMatrix& logits, const LabelVector& labels, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("mean_nll: temperature must be positive");
  if (logits.n_samples() == 0) throw std::invalid_argument("mean_nll: no samples");
  double total = 0.0;
  for (std::size_t s = 0; s < logits.n_samples(); ++s) {
    const auto row = logits.row(s);
    const auto top = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const double m = row[top] / temperature;
    // log1p keeps the tiny losses of confident rows distinguishable.
    double rest = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i != top) rest += std::exp(row[i] / temperature - m);
    }
    total += (m - row[static_cast<std::size_t>(labels.labels[s])] / temperature) + std::log1p(rest);
  }
  return total / static_cast<double>(logits.n_samples());
}

double fit_temperature(const ScoreMatrix& logits, const LabelVector& labels, double t_min,
                       double t_max) {
  if (logits.kind() != ScoreKind::Logit) {
    throw std::invalid_argument("fit_temperature: scores must be logits");
  }
  if (!(t_min > 0.0 && t_min < t_max)) {
    throw std::invalid_argument("fit_temperature: need 0 < t_min < t_max");
  }
  if (logits.n_samples() != labels.size() || logits.n_classes() != labels.n_classes()) {
    throw std::invalid_argument("fit_temperature: shape mismatch");
  }
  if (labels.ood_count() > 0) {
    throw std::invalid_argument("fit_temperature: labels must be in-distribution");
  }

  constexpr double kTolerance = 1e-4;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto f = [&](double t) { return mean_nll(logits, labels, t); };

  double a = t_min, b = t_max;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > kTolerance) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    }
  }
  double best = (a + b) / 2.0;
  double f_best = f(best);
  // Monotone objectives end at a bound.
  for (double edge : {t_min, t_max}) {
    const double fe = f(edge);
    if (fe < f_best) {
      best = edge;
      f_best = fe;
    }
  }
  return best;
}

}  // namespace binheads
