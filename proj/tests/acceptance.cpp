// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
//
// usage: acceptance <experiment config>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "binheads/calibrate.hpp"
#include "binheads/config.hpp"
#include "binheads/csv.hpp"
#include "binheads/decision.hpp"
#include "binheads/harness.hpp"
#include "binheads/reference.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace binheads;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::vector<double> column(const ScoreMatrix& s, std::size_t j) {
  std::vector<double> c;
  for (std::size_t i = 0; i < s.n_samples(); ++i) c.push_back(s.at(i, j));
  return c;
}

void gated_product_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> q(0, 10);
  std::size_t mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t c = 1 + static_cast<std::size_t>(i % 8);
    const bool coarse = i % 2 == 0;  // coarse values make ties and equalities common
    std::vector<double> p(c), t(c);
    for (std::size_t k = 0; k < c; ++k) {
      p[k] = coarse ? q(gen) / 10.0 : u(gen);
      t[k] = coarse ? q(gen) / 10.0 : u(gen);
    }
    if (!(bh_predict(p, ThresholdVector(t)) == oracle::bh(p, t))) ++mismatches;
  }
  const double secs = seconds_since(t0);
  report(1, "gated-product rule vs brute-force oracle", mismatches == 0 && secs < 5.0,
         fmt::format("{} mismatches over 10000 pairs, {:.3f} s", mismatches, secs));
}

void coordinate_descent_suite() {
  const auto t0 = Clock::now();
  std::size_t trace_violations = 0, improvable = 0, unconverged = 0, below_vanilla = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 gen(1000 + seed);
    const std::size_t c = 1 + gen() % 5;
    const std::size_t n = c + gen() % (301 - c);
    const int levels = 5 + static_cast<int>(gen() % 200);
    const auto [s, l] = oracle::random_scores(gen, n, c, 0.25, levels);
    const auto conv = OodConvention::AssumeZeroWhenAbsent;
    const auto r = coordinate_descent(s, l, ThresholdVector::constant(c, 0.0), seed, 1000, conv);
    double prev = r.trace.initial_objective;
    for (const auto& step : r.trace.steps) {
      if (step.objective < prev) ++trace_violations;
      prev = step.objective;
    }
    if (!r.trace.converged) ++unconverged;
    for (std::size_t j = 0; j < c; ++j) {
      for (double v : reference::evaluate_candidates(s, l, r.thresholds, j, candidate_thresholds(column(s, j)), conv)) {
        if (v > r.objective) ++improvable;
      }
    }
    const auto vanilla = evaluate(predict_all(s, DetectorConfig::vanilla()), l).balanced_accuracy;
    if (!(r.objective >= vanilla)) ++below_vanilla;
  }
  const double secs = seconds_since(t0);
  report(2, "coordinate descent monotone and locally optimal",
         trace_violations == 0 && improvable == 0 && unconverged == 0 && secs < 60.0,
         fmt::format("100 sets: {} trace decreases, {} improving single-class moves at the fixed point, "
                     "{} unconverged, {:.2f} s",
                     trace_violations, improvable, unconverged, secs));
  report(3, "calibrated BH >= vanilla argmax on calibration set", below_vanilla == 0,
         fmt::format("{} of 100 sets below vanilla", below_vanilla));
}

struct GridAgreement {
  int matched = 0;
  int exceeded = 0;
};

GridAgreement grid_agreement(double ood_frac) {
  GridAgreement g;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 gen(5000 + seed);
    const std::size_t n = 4 + gen() % 9;
    const auto [s, l] = oracle::bh_like_scores(gen, n, 2, ood_frac);
    const auto r = coordinate_descent(s, l, ThresholdVector::constant(2, 0.0), seed, 1000,
                                      OodConvention::AssumeZeroWhenAbsent);
    double best = -1.0;
    for (double a : candidate_thresholds(column(s, 0))) {
      for (double b : candidate_thresholds(column(s, 1))) best = std::max(best, oracle::bh_objective(s, l, {a, b}, true));
    }
    if (r.objective > best + 1e-12) ++g.exceeded;
    if (std::abs(r.objective - best) <= 1e-12) ++g.matched;
  }
  return g;
}

void product_grid_agreement() {
  const auto t0 = Clock::now();
  const auto with_ood = grid_agreement(0.3);
  const auto in_dist = grid_agreement(0.0);
  const double secs = seconds_since(t0);
  report(4, "C=2 exhaustive product-grid agreement",
         with_ood.matched >= 90 && with_ood.exceeded == 0 && in_dist.exceeded == 0 && secs < 30.0,
         fmt::format("sets with OOD rows: {}/100 reach the grid optimum, {} exceed it; "
                     "in-distribution-only sets: {}/100, {} exceed; {:.2f} s",
                     with_ood.matched, with_ood.exceeded, in_dist.matched, in_dist.exceeded, secs));
}

void gradient_checks() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::mt19937_64 gen(77);
  for (auto head : {HeadKind::BinaryHeads, HeadKind::Softmax}) {
    for (int i = 0; i < 50; ++i) {
      std::vector<std::size_t> hidden(1 + gen() % 2);
      for (auto& h : hidden) h = 2 + gen() % 6;
      const std::size_t d = 1 + gen() % 4, c = 1 + gen() % 5, n = 1 + gen() % 5;
      const auto p = oracle::random_model({d, hidden, c, head}, gen);
      worst = std::max(worst, oracle::gradient_error(p, oracle::random_matrix(n, d, gen), oracle::random_labels(n, c, gen)));
    }
  }
  const double secs = seconds_since(t0);
  report(5, "analytic vs finite-difference gradients", worst < 1e-4 && secs < 30.0,
         fmt::format("max relative error {:.3e} over 100 configurations, {:.2f} s", worst, secs));
}

void energy_closed_forms() {
  const double e0 = energy_score(std::vector<double>{0, 0, 0, 0}, 1.0);
  std::mt19937_64 gen(88);
  std::normal_distribution<double> n(0.0, 5.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> z(1 + gen() % 10), zc;
    for (double& v : z) v = n(gen);
    const double c = n(gen);
    for (double v : z) zc.push_back(v + c);
    worst = std::max(worst, std::abs(energy_score(zc, 1.0) - (energy_score(z, 1.0) - c)));
  }
  const double err0 = std::abs(e0 + std::log(4.0));
  report(6, "energy closed forms", err0 < 1e-9 && worst < 1e-9,
         fmt::format("|E(0000) + ln 4| = {:.1e}, max shift error {:.1e}", err0, worst));
}

void metric_convention() {
  const LabelVector labels({0, 1, 0, 1}, {"a", "b"});
  const std::vector<Prediction> preds{{0, 1.0}, {1, 1.0}, {0, 1.0}, {1, 1.0}};
  const double ba = evaluate(preds, labels).balanced_accuracy;
  report(7, "zero-OOD balanced accuracy convention", std::abs(ba - 2.0 / 3.0) < 1e-12,
         fmt::format("perfect 2-class classifier without OOD rows: {:.15f}", ba));
}

double ba_at(const SweepResult& r, const std::string& m, std::size_t k) {
  for (const auto& row : r.rows) {
    if (row.method == m && row.ood_count == k && row.repetition == 0) return row.report.balanced_accuracy;
  }
  throw std::runtime_error("missing sweep row " + m);
}

void end_to_end(const ExperimentConfig& base) {
  const auto t0 = Clock::now();
  const int seeds = 5;
  int vanilla_in_band = 0, beats_msp = 0, decreasing = 0, within_no_ood = 0;
  double gain_sum = 0.0;
  std::string per_seed;
  for (int seed = 1; seed <= seeds; ++seed) {
    auto cfg = base;
    cfg.override_seed(static_cast<std::uint64_t>(seed));
    const auto r = run_pipeline(cfg);
    std::size_t k_max = 0;
    for (const auto& row : r.sweep.rows) k_max = std::max(k_max, row.ood_count);

    std::vector<std::size_t> ks;
    std::vector<double> vanilla_acc;
    double vanilla_in = 0.0;
    for (const auto& row : r.sweep.rows) {
      if (row.method != "bh_vanilla") continue;
      ks.push_back(row.ood_count);
      vanilla_acc.push_back(row.report.accuracy);
      if (row.ood_count == 0) vanilla_in = balanced_accuracy(row.report.confusion, OodConvention::InDistOnly);
    }
    bool strictly = ks.size() > 1;
    for (std::size_t i = 1; i < vanilla_acc.size(); ++i) strictly = strictly && vanilla_acc[i] < vanilla_acc[i - 1];

    const double bh = ba_at(r.sweep, "bh", k_max), van = ba_at(r.sweep, "bh_vanilla", k_max);
    const double msp = ba_at(r.sweep, "msp", k_max), no_ood = ba_at(r.sweep, "bh_no_ood", k_max);
    vanilla_in_band += vanilla_in >= 0.80 && vanilla_in <= 0.95;
    beats_msp += bh >= msp;
    decreasing += strictly;
    within_no_ood += bh - no_ood < 0.05;
    gain_sum += bh - van;
    per_seed += fmt::format("\n       seed {}: k_max={} vanilla_in={:.4f} bh={:.4f} vanilla={:.4f} msp={:.4f} "
                            "energy={:.4f} bh_no_ood={:.4f}",
                            seed, k_max, vanilla_in, bh, van, msp, ba_at(r.sweep, "energy", k_max), no_ood);
  }
  const double secs = seconds_since(t0);
  const double gain = gain_sum / seeds;
  fmt::print("       end-to-end runs ({} seeds, {:.1f} s):{}\n", seeds, secs, per_seed);
  const bool in_time = secs < 600.0;
  report(8, "synthetic experiment: vanilla in-distribution BA within [0.80, 0.95]", vanilla_in_band == seeds,
         fmt::format("{}/{} seeds", vanilla_in_band, seeds));
  report(8, "(a) calibrated BH exceeds vanilla BH by >= 0.05 at max OOD count", gain >= 0.05,
         fmt::format("mean gain {:.4f} over {} seeds", gain, seeds));
  report(8, "(b) calibrated BH >= max-softmax baseline at max OOD count", beats_msp >= 3,
         fmt::format("{}/{} seeds", beats_msp, seeds));
  report(8, "(c) vanilla accuracy strictly decreasing in OOD count", decreasing == seeds,
         fmt::format("{}/{} seeds", decreasing, seeds));
  report(8, "runtime", in_time, fmt::format("{:.1f} s for {} seeds x 2 networks", secs, seeds));
  report(9, "in-distribution-only calibration loses < 0.05 BA", within_no_ood >= 3,
         fmt::format("{}/{} seeds within tolerance", within_no_ood, seeds));
}

void determinism(const ExperimentConfig& cfg) {
  const auto root = fs::temp_directory_path() / "binheads_acceptance";
  fs::remove_all(root);
  run_experiment(cfg, root / "a");
  run_experiment(cfg, root / "b");
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    if (e.path().extension() != ".csv") continue;
    ++files;
    const auto other = root / "b" / e.path().filename();
    if (!fs::exists(other) || read_text_file(e.path()) != read_text_file(other)) ++differ;
  }
  report(10, "repeated runs give byte-identical CSV artifacts", files > 0 && differ == 0,
         fmt::format("{} CSV files compared, {} differ", files, differ));
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <experiment config>\n");
    return 2;
  }
  const auto cfg = load_config(argv[1]);
  gated_product_oracle();
  coordinate_descent_suite();
  product_grid_agreement();
  gradient_checks();
  energy_closed_forms();
  metric_convention();
  end_to_end(cfg);
  determinism(cfg);
  std::printf("%d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
