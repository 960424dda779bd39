#include <algorithm>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "binheads/csv.hpp"
#include "binheads/errors.hpp"
#include "binheads/harness.hpp"
#include "binheads/reference.hpp"
#include "oracles.hpp"

using namespace binheads;
namespace fs = std::filesystem;

namespace {

struct SweepFixture {
  LabelVector in_labels;
  std::vector<SweepDetector> detectors;
};

SweepFixture fixture(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto [in, in_labels] = oracle::random_scores(gen, 200, 4, 0.0);
  auto [ood, ood_labels] = oracle::random_scores(gen, 60, 4, 0.0);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> li(200 * 4), lo(60 * 4);
  for (double& v : li) v = n(gen);
  for (double& v : lo) v = n(gen);
  const ScoreMatrix logit_in(200, 4, ScoreKind::Logit, li), logit_ood(60, 4, ScoreKind::Logit, lo);
  SweepFixture f;
  f.in_labels = in_labels;
  f.detectors = {
      {"vanilla", DetectorConfig::vanilla(), in, ood},
      {"bh", DetectorConfig::bh(ThresholdVector({0.3, 0.5, 0.4, 0.6})), in, ood},
      {"reject_all", DetectorConfig::bh(ThresholdVector::constant(4, 1.0)), in, ood},
      {"energy", DetectorConfig::energy(-1.5, 1.0), logit_in, logit_ood},
  };
  return f;
}

const SweepRow& row(const SweepResult& r, const std::string& m, std::size_t k) {
  return *std::find_if(r.rows.begin(), r.rows.end(),
                       [&](const SweepRow& x) { return x.method == m && x.ood_count == k && x.repetition == 0; });
}

ExperimentConfig small_config() {
  auto cfg = parse_config(R"(
[data]
total_samples = 3000
cluster_separation = 3.5
groups_per_class = 20
[model]
hidden_dims = 8
[train]
max_epochs = 3
feature_noise = 0.5
)");
  cfg.override_seed(5);
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("binheads_test_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(Grid, Default) {
  EXPECT_EQ(default_ood_grid(0), (std::vector<std::size_t>{0}));
  EXPECT_EQ(default_ood_grid(16, 8), (std::vector<std::size_t>{0, 2, 4, 6, 8, 10, 12, 14, 16}));
  EXPECT_EQ(default_ood_grid(3, 8), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Sweep, ShapeAndReference) {
  const auto f = fixture(1);
  SweepConfig cfg{{0, 7, 30, 60}, 3, 11};
  const auto r = ood_sweep(f.in_labels, f.detectors, cfg);
  EXPECT_EQ(r.rows.size(), 4u * 4 * 3);
  const auto slow = reference::ood_sweep(f.in_labels, f.detectors, cfg);
  ASSERT_EQ(slow.rows.size(), r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(r.rows[i].method, slow.rows[i].method);
    EXPECT_EQ(r.rows[i].ood_count, slow.rows[i].ood_count);
    EXPECT_EQ(r.rows[i].report.confusion, slow.rows[i].report.confusion);
    EXPECT_EQ(r.rows[i].report.balanced_accuracy, slow.rows[i].report.balanced_accuracy);
  }
}

TEST(Sweep, VanillaAccuracyClosedForm) {
  const auto f = fixture(2);
  SweepConfig cfg{{0, 1, 5, 20, 40, 60}, 1, 3};
  const auto r = ood_sweep(f.in_labels, f.detectors, cfg);
  const auto& base = row(r, "vanilla", 0).report;
  const double c = static_cast<double>(base.confusion.trace());
  double prev = 2.0;
  for (std::size_t k : cfg.ood_counts) {
    const auto& rep = row(r, "vanilla", k).report;
    EXPECT_EQ(rep.accuracy, c / static_cast<double>(200 + k));
    EXPECT_LT(rep.accuracy, prev);
    prev = rep.accuracy;
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(rep.per_class_recall[j], base.per_class_recall[j]);
  }
}

TEST(Sweep, RejectAllAndZeroPoint) {
  const auto f = fixture(3);
  const auto r = ood_sweep(f.in_labels, f.detectors, SweepConfig{{0, 10}, 1, 1});
  EXPECT_DOUBLE_EQ(row(r, "reject_all", 10).report.balanced_accuracy, 1.0 / 5.0);
  EXPECT_EQ(row(r, "reject_all", 0).report.balanced_accuracy, 0.0);
  EXPECT_EQ(row(r, "bh", 0).report.per_class_recall.back(), 0.0);

  // At k = 0 a detector whose OOD branch never fires equals plain argmax.
  auto g = fixture(3);
  g.detectors[1].config = DetectorConfig::bh(ThresholdVector::constant(4, 0.0));
  const auto a = ood_sweep(g.in_labels, std::span(g.detectors).subspan(0, 2), SweepConfig{{0}, 1, 1});
  EXPECT_EQ(a.rows[0].report.confusion, a.rows[1].report.confusion);
  EXPECT_EQ(a.rows[0].report.balanced_accuracy, a.rows[1].report.balanced_accuracy);
}

TEST(Sweep, NestedSubsetsAndDeterminism) {
  const auto order = ood_draw_order(50, 9, 0);
  EXPECT_EQ(order, ood_draw_order(50, 9, 0));
  EXPECT_NE(order, ood_draw_order(50, 9, 1));
  auto sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);

  const auto f = fixture(4);
  const auto r = ood_sweep(f.in_labels, f.detectors, SweepConfig{{10, 20}, 1, 9});
  // OOD verdict counts can only grow as the subset grows.
  const auto& small = row(r, "bh", 10).report.confusion;
  const auto& big = row(r, "bh", 20).report.confusion;
  for (std::size_t j = 0; j < small.dim(); ++j) EXPECT_LE(small.at(4, j), big.at(4, j));
}

TEST(Sweep, Errors) {
  const auto f = fixture(5);
  EXPECT_THROW(ood_sweep(f.in_labels, f.detectors, SweepConfig{{61}, 1, 1}), std::invalid_argument);
  EXPECT_THROW(ood_sweep(f.in_labels, f.detectors, SweepConfig{{0}, 0, 1}), std::invalid_argument);
  EXPECT_THROW(ood_sweep(f.in_labels, std::span<const SweepDetector>{}, SweepConfig{{0}, 1, 1}),
               std::invalid_argument);
}

TEST(Compare, RecomputedFromConfusionMatrices) {
  const auto f = fixture(6);
  const auto r = ood_sweep(f.in_labels, f.detectors, SweepConfig{{0, 30}, 2, 1});
  const auto rows = compare_report(r);
  EXPECT_EQ(rows.size(), 2u * 4);
  for (const auto& c : rows) {
    double acc = 0.0, ba = 0.0;
    int n = 0;
    for (const auto& s : r.rows) {
      if (s.method != c.method || s.ood_count != c.ood_count) continue;
      acc += accuracy(s.report.confusion);
      ba += balanced_accuracy(s.report.confusion, OodConvention::AssumeZeroWhenAbsent);
      ++n;
    }
    EXPECT_EQ(n, 2);
    EXPECT_NEAR(c.accuracy, acc / n, 1e-15);
    EXPECT_NEAR(c.balanced_accuracy, ba / n, 1e-15);
    EXPECT_EQ(c.ood_recall.has_value(), c.ood_count > 0);
  }
}

TEST(Compare, SingleRowAndEmptyPrecisionCell) {
  const auto f = fixture(7);
  const auto r = ood_sweep(f.in_labels, std::span(f.detectors).subspan(0, 1), SweepConfig{{0}, 1, 1});
  const auto rows = compare_report(r);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].ood_precision.has_value());
  const auto csv = format_compare_csv(rows);
  const auto lines = split_lines(csv);
  EXPECT_EQ(lines[0], "ood_count,method,accuracy,balanced_accuracy,ood_recall,ood_precision");
  EXPECT_EQ(lines[1].substr(lines[1].size() - 2), ",,");
}

TEST(SweepCsv, RoundTrip) {
  const auto f = fixture(8);
  const auto r = ood_sweep(f.in_labels, f.detectors, SweepConfig{{0, 25, 60}, 2, 4});
  const auto text = format_sweep_csv(r);
  const auto back = parse_sweep_csv(text);
  ASSERT_EQ(back.rows.size(), r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].report.confusion, r.rows[i].report.confusion);
    EXPECT_EQ(back.rows[i].report.accuracy, r.rows[i].report.accuracy);
  }
  EXPECT_EQ(format_sweep_csv(back), text);
  auto broken = text;
  broken.replace(broken.find("\n") + 1, 3, "zz,");
  EXPECT_THROW(parse_sweep_csv(broken), ParseError);
}

TEST(Reports, ConfusionAndSvg) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 3);
  cm.add(kOod, 1, 2);
  const std::vector<std::string> names{"a", "b"};
  const auto csv = format_confusion_csv(cm, names);
  EXPECT_EQ(split_lines(csv)[0], "true\\predicted,a,b,OOD");
  EXPECT_EQ(split_lines(csv)[3], "OOD,0,2,0");

  const auto f = fixture(9);
  const auto rows = compare_report(ood_sweep(f.in_labels, f.detectors, SweepConfig{{0, 30, 60}, 1, 1}));
  const auto svg = format_svg_chart(rows, ChartMetric::BalancedAccuracy);
  EXPECT_NE(svg.find("viewBox=\"0 0 800 500\""), std::string::npos);
  std::size_t lines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  EXPECT_EQ(lines, 4u);
  for (const auto& d : f.detectors) EXPECT_NE(svg.find(">" + d.name + "<"), std::string::npos);
}

TEST(Thresholds, CsvRoundTrip) {
  Calibration cal;
  cal.bh = ThresholdVector({0.1, 0.123456789012345678, 1.0});
  cal.bh_no_ood = ThresholdVector({0.0, 0.5, 0.25});
  cal.msp_threshold = 0.7;
  cal.energy_temperature = 1.3;
  cal.energy_threshold = -3.25;
  const std::vector<std::string> names{"a", "b", "c"};
  const auto back = parse_thresholds_csv(format_thresholds_csv(cal, names), names);
  EXPECT_EQ(back.bh, cal.bh);
  EXPECT_EQ(back.bh_no_ood, cal.bh_no_ood);
  EXPECT_EQ(back.energy_threshold, cal.energy_threshold);
  EXPECT_THROW(parse_thresholds_csv("detector,class,value\nbh,a,0.1\n", names), ParseError);
}

TEST(Experiment, ByteIdenticalReruns) {
  const auto cfg = small_config();
  const auto a = fresh_dir("run_a"), b = fresh_dir("run_b");
  run_experiment(cfg, a);
  run_experiment(cfg, b);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    ASSERT_TRUE(fs::exists(b / name)) << name;
    EXPECT_EQ(read_text_file(e.path()), read_text_file(b / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 20u);
  for (const char* f : {"scores_bh_test.csv", "thresholds.csv", "sweep.csv", "compare.csv", "confusion_bh.csv",
                        "accuracy.svg", "manifest.txt", "config.ini"}) {
    EXPECT_TRUE(fs::exists(a / f)) << f;
  }
  // The stored config reproduces the run.
  EXPECT_EQ(to_config_text(load_config(a / "config.ini")), to_config_text(cfg));
}

TEST(Experiment, StagesMatchInMemoryPipeline) {
  const auto cfg = small_config();
  const auto dir = fresh_dir("stages");
  run_experiment(cfg, dir);
  const auto mem = run_pipeline(cfg);
  EXPECT_EQ(read_text_file(dir / "sweep.csv"), format_sweep_csv(mem.sweep));
}

TEST(Experiment, NoHeldOutClassGivesSinglePoint) {
  auto cfg = small_config();
  cfg.data.ood_class_index.reset();
  const auto r = run_pipeline(cfg);
  for (const auto& row : r.sweep.rows) EXPECT_EQ(row.ood_count, 0u);
  EXPECT_EQ(r.sweep.rows.size(), cfg.sweep.methods.size());
}

TEST(Experiment, StageErrorsAreTagged) {
  const auto dir = fresh_dir("missing");
  try {
    stage_calibrate(small_config(), dir);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "calibrate");
    EXPECT_EQ(e.exit_code(), kExitData);
  }
  auto cfg = small_config();
  cfg.sweep.ood_counts = {0, 100000};
  const auto d2 = fresh_dir("too_many");
  try {
    run_experiment(cfg, d2);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "sweep");
    EXPECT_EQ(e.exit_code(), kExitConfig);
  }
  // Earlier artifacts are kept.
  EXPECT_TRUE(fs::exists(d2 / "thresholds.csv"));
}
