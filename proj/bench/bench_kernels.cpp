// Parallel kernels against their serial counterparts in binheads::reference.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "binheads/calibrate.hpp"
#include "binheads/decision.hpp"
#include "binheads/harness.hpp"
#include "binheads/nnet.hpp"
#include "binheads/reference.hpp"

using namespace binheads;

namespace {

constexpr std::size_t kClasses = 7;

std::vector<std::string> class_names(std::size_t c) {
  std::vector<std::string> v;
  for (std::size_t k = 0; k < c; ++k) v.push_back("c" + std::to_string(k));
  return v;
}

struct Scored {
  ScoreMatrix scores;
  LabelVector labels;
};

// Sigmoid-like scores on a 0.001 grid; about a tenth of the rows are OOD.
Scored make_scores(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n * kClasses);
  std::vector<ClassIndex> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = u(gen) < 0.1 ? kOod : static_cast<ClassIndex>(gen() % kClasses);
    for (std::size_t k = 0; k < kClasses; ++k) {
      double p = 0.6 * u(gen);
      if (y[i] == static_cast<ClassIndex>(k)) p += 0.4;
      v[i * kClasses + k] = std::round(p * 1000.0) / 1000.0;
    }
  }
  return {ScoreMatrix(n, kClasses, ScoreKind::Probability, std::move(v)),
          LabelVector(std::move(y), class_names(kClasses))};
}

struct Net {
  ModelParams params;
  Matrix features;
  std::vector<ClassIndex> labels;
  std::vector<std::size_t> batch;
};

Net make_net(std::size_t n) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> g(0.0, 1.0);
  Net net;
  net.params = ModelParams::glorot_uniform({16, {32}, kClasses, HeadKind::BinaryHeads}, 9);
  net.features = Matrix(n, 16);
  net.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& x : net.features.row(i)) x = g(gen);
    net.labels[i] = static_cast<ClassIndex>(gen() % kClasses);
  }
  net.batch.resize(n);
  std::iota(net.batch.begin(), net.batch.end(), std::size_t{0});
  return net;
}

const ThresholdVector& thresholds() {
  static const ThresholdVector t({0.5, 0.45, 0.55, 0.5, 0.6, 0.4, 0.5});
  return t;
}

void BM_PredictAll(benchmark::State& state) {
  const auto s = make_scores(static_cast<std::size_t>(state.range(0)), 1);
  const auto cfg = DetectorConfig::bh(thresholds());
  for (auto _ : state) benchmark::DoNotOptimize(predict_all(s.scores, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PredictAllReference(benchmark::State& state) {
  const auto s = make_scores(static_cast<std::size_t>(state.range(0)), 1);
  const auto cfg = DetectorConfig::bh(thresholds());
  for (auto _ : state) benchmark::DoNotOptimize(reference::predict_all(s.scores, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScoreDataset(benchmark::State& state) {
  const auto net = make_net(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(score_dataset(net.params, net.features));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScoreDatasetReference(benchmark::State& state) {
  const auto net = make_net(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::score_dataset(net.params, net.features));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Gradients(benchmark::State& state) {
  const auto net = make_net(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(gradients(net.params, net.features, net.labels, net.batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GradientsReference(benchmark::State& state) {
  const auto net = make_net(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::gradients(net.params, net.features, net.labels, net.batch));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_OptimizeThreshold(benchmark::State& state) {
  const auto s = make_scores(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        optimize_threshold_1d(s.scores, s.labels, thresholds(), 2, OodConvention::AssumeZeroWhenAbsent));
  }
}

void BM_OptimizeThresholdReference(benchmark::State& state) {
  const auto s = make_scores(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reference::optimize_threshold_1d(s.scores, s.labels, thresholds(), 2,
                                                              OodConvention::AssumeZeroWhenAbsent));
  }
}

struct SweepSetup {
  LabelVector labels;
  std::vector<SweepDetector> detectors;
  SweepConfig cfg;
};

SweepSetup make_sweep(std::size_t n) {
  auto in = make_scores(n, 4);
  auto y = in.labels.labels;
  for (auto& v : y) {
    if (v == kOod) v = 0;
  }
  const auto ood = make_scores(n / 4, 5);
  SweepSetup s;
  s.labels = LabelVector(std::move(y), class_names(kClasses));
  s.detectors = {
      {"vanilla", DetectorConfig::vanilla(), in.scores, ood.scores},
      {"bh", DetectorConfig::bh(thresholds()), in.scores, ood.scores},
  };
  s.cfg = SweepConfig{default_ood_grid(n / 4, 8), 3, 7};
  return s;
}

void BM_OodSweep(benchmark::State& state) {
  const auto s = make_sweep(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ood_sweep(s.labels, s.detectors, s.cfg));
}

void BM_OodSweepReference(benchmark::State& state) {
  const auto s = make_sweep(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::ood_sweep(s.labels, s.detectors, s.cfg));
}

}  // namespace

BENCHMARK(BM_PredictAll)->Arg(1 << 14)->Arg(1 << 17);
BENCHMARK(BM_PredictAllReference)->Arg(1 << 14)->Arg(1 << 17);
BENCHMARK(BM_ScoreDataset)->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_ScoreDatasetReference)->Arg(1 << 12)->Arg(1 << 15);
BENCHMARK(BM_Gradients)->Arg(64)->Arg(1 << 12);
BENCHMARK(BM_GradientsReference)->Arg(64)->Arg(1 << 12);
BENCHMARK(BM_OptimizeThreshold)->Arg(1 << 10)->Arg(1 << 13);
BENCHMARK(BM_OptimizeThresholdReference)->Arg(1 << 10)->Arg(1 << 13);
BENCHMARK(BM_OodSweep)->Arg(1 << 12)->Arg(1 << 14);
BENCHMARK(BM_OodSweepReference)->Arg(1 << 12)->Arg(1 << 14);

BENCHMARK_MAIN();
