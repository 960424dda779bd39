#include "binheads/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "binheads/csv.hpp"
#include "binheads/errors.hpp"
#include "binheads/rng.hpp"

namespace binheads {

namespace fs = std::filesystem;

namespace {

// Sub-stream identifiers for derive_seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kSweepStream = 2;

std::vector<std::size_t> rows_where(const LabelVector& labels, bool ood) {
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if ((labels.labels[s] == kOod) == ood) rows.push_back(s);
  }
  return rows;
}

}  // namespace

std::vector<std::size_t> default_ood_grid(std::size_t available, std::size_t points) {
  std::vector<std::size_t> grid{0};
  for (std::size_t i = 1; i <= points; ++i) {
    const auto k = static_cast<std::size_t>(
        std::llround(static_cast<double>(available) * static_cast<double>(i) / static_cast<double>(points)));
    if (k != grid.back()) grid.push_back(k);
  }
  return grid;
}

std::vector<std::size_t> ood_draw_order(std::size_t available, std::uint64_t seed, std::size_t repetition) {
  std::vector<std::size_t> order(available);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, repetition));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

SweepResult ood_sweep(const LabelVector& in_dist_labels, std::span<const SweepDetector> detectors,
                      const SweepConfig& cfg) {
  if (detectors.empty()) throw std::invalid_argument("ood_sweep: no detectors");
  if (cfg.repetitions < 1) throw std::invalid_argument("ood_sweep: repetitions must be >= 1");
  if (cfg.ood_counts.empty()) throw std::invalid_argument("ood_sweep: no OOD counts");
  if (in_dist_labels.ood_count() > 0) {
    throw std::invalid_argument("ood_sweep: in-distribution labels contain OOD samples");
  }
  const std::size_t available = detectors.front().ood.n_samples();
  for (const auto& d : detectors) {
    if (d.in_dist.n_samples() != in_dist_labels.size()) {
      throw std::invalid_argument("ood_sweep: detector '" + d.name + "' in-distribution rows differ from labels");
    }
    if (d.ood.n_samples() != available) {
      throw std::invalid_argument("ood_sweep: detectors disagree on the OOD row count");
    }
  }
  for (std::size_t k : cfg.ood_counts) {
    if (k > available) {
      throw std::invalid_argument("ood_sweep: ood count " + std::to_string(k) + " exceeds the " +
                                  std::to_string(available) + " available OOD samples");
    }
  }

  // Verdicts are per-row, so each detector is scored once on both parts.
  std::vector<ConfusionMatrix> base;
  std::vector<std::vector<Prediction>> ood_preds;
  for (const auto& d : detectors) {
    const auto in_preds = predict_all(d.in_dist, d.config);
    base.push_back(confusion_matrix(in_preds, in_dist_labels));
    balanced_accuracy(base.back(), OodConvention::AssumeZeroWhenAbsent);  // class support check
    ood_preds.push_back(predict_all(d.ood, d.config));
  }
  std::vector<std::vector<std::size_t>> orders;
  for (std::size_t r = 0; r < cfg.repetitions; ++r) orders.push_back(ood_draw_order(available, cfg.seed, r));

  const std::size_t n_k = cfg.ood_counts.size();
  SweepResult result;
  result.rows.resize(detectors.size() * n_k * cfg.repetitions);
  const auto tasks = static_cast<std::ptrdiff_t>(result.rows.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const auto u = static_cast<std::size_t>(t);
    const std::size_t d = u / (n_k * cfg.repetitions);
    const std::size_t ki = (u / cfg.repetitions) % n_k;
    const std::size_t r = u % cfg.repetitions;
    ConfusionMatrix cm = base[d];
    const auto& order = orders[r];
    for (std::size_t i = 0; i < cfg.ood_counts[ki]; ++i) cm.add(kOod, ood_preds[d][order[i]].verdict);
    auto& row = result.rows[u];
    row.method = detectors[d].name;
    row.ood_count = cfg.ood_counts[ki];
    row.repetition = r;
    row.report = make_report(std::move(cm));
  }
  return result;
}

DatasetBundle generate_bundle(const ExperimentConfig& cfg) {
  const auto data = generate_synthetic(cfg.data);
  return split_dataset(data.features, data.labels, data.groups, cfg.train_frac,
                       derive_seed(cfg.data.seed, kSplitStream));
}

TrainedModels train_models(const ExperimentConfig& cfg, const DatasetBundle& bundle) {
  TrainedModels m;
  m.bh = train(bundle.train.features, bundle.train.labels, bundle.val.features, bundle.val.labels,
               cfg.mlp(HeadKind::BinaryHeads), cfg.train);
  m.softmax = train(bundle.train.features, bundle.train.labels, bundle.val.features, bundle.val.labels,
                    cfg.mlp(HeadKind::Softmax), cfg.train);
  return m;
}

ModelScores score_splits(const TrainedModels& models, const FeaturesFile& val, const FeaturesFile& test) {
  auto score = [](const ModelParams& p, const FeaturesFile& f) {
    return ScoresFile{f.ids, score_dataset(p, f.features), f.labels};
  };
  return {score(models.bh.params, val), score(models.bh.params, test), score(models.softmax.params, val),
          score(models.softmax.params, test)};
}

Calibration calibrate_detectors(const ExperimentConfig& cfg, const ScoresFile& bh_val,
                                const ScoresFile& softmax_val) {
  Calibration cal;
  const std::size_t c = bh_val.scores.n_classes();
  // A head left at zero accepts every sample, so from all zeros no single
  // move can produce an OOD verdict. The second start escapes that.
  auto search = [&](const ScoreMatrix& scores, const LabelVector& labels, OodConvention conv) {
    auto best = coordinate_descent(scores, labels, ThresholdVector::constant(c, 0.0), cfg.calibrate.seed,
                                   cfg.calibrate.max_rounds, conv);
    if (cfg.calibrate.init_threshold > 0.0) {
      auto alt = coordinate_descent(scores, labels, ThresholdVector::constant(c, cfg.calibrate.init_threshold),
                                    cfg.calibrate.seed, cfg.calibrate.max_rounds, conv);
      if (alt.objective > best.objective) best = std::move(alt);
    }
    return best;
  };

  auto with_ood = search(bh_val.scores, bh_val.labels, OodConvention::AssumeZeroWhenAbsent);
  cal.bh = with_ood.thresholds;
  cal.bh_trace = std::move(with_ood.trace);

  const auto in_rows = rows_where(bh_val.labels, false);
  auto no_ood = search(bh_val.scores.select_rows(in_rows), bh_val.labels.select(in_rows), OodConvention::InDistOnly);
  cal.bh_no_ood = no_ood.thresholds;
  cal.bh_no_ood_trace = std::move(no_ood.trace);

  const auto& logits = softmax_val.scores;
  if (logits.kind() != ScoreKind::Logit) throw DataError("softmax validation scores must be logits");
  std::vector<double> max_prob(logits.n_samples());
  std::vector<Prediction> argmax_preds(logits.n_samples());
  for (std::size_t s = 0; s < logits.n_samples(); ++s) {
    const auto probs = softmax(logits.row(s));
    argmax_preds[s] = vanilla_predict(probs);
    max_prob[s] = argmax_preds[s].confidence;
  }
  cal.msp_threshold = calibrate_global_threshold(max_prob, argmax_preds, softmax_val.labels,
                                                 RejectDirection::RejectBelow,
                                                 OodConvention::AssumeZeroWhenAbsent)
                          .threshold;

  const auto soft_in = rows_where(softmax_val.labels, false);
  cal.energy_temperature = fit_temperature(logits.select_rows(soft_in), softmax_val.labels.select(soft_in),
                                           cfg.calibrate.t_min, cfg.calibrate.t_max);
  std::vector<double> energies(logits.n_samples());
  for (std::size_t s = 0; s < logits.n_samples(); ++s) {
    energies[s] = energy_score(logits.row(s), cal.energy_temperature);
  }
  cal.energy_threshold = calibrate_global_threshold(energies, argmax_preds, softmax_val.labels,
                                                    RejectDirection::RejectAbove,
                                                    OodConvention::AssumeZeroWhenAbsent)
                             .threshold;
  return cal;
}

SweepInputs build_sweep_inputs(const ExperimentConfig& cfg, const Calibration& cal, const ScoresFile& bh_test,
                               const ScoresFile& softmax_test) {
  if (bh_test.ids != softmax_test.ids || bh_test.labels != softmax_test.labels) {
    throw DataError("binary-head and softmax test scores cover different samples");
  }
  const auto in_rows = rows_where(bh_test.labels, false);
  const auto ood_rows = rows_where(bh_test.labels, true);
  SweepInputs in;
  in.in_dist_labels = bh_test.labels.select(in_rows);
  auto add = [&](const std::string& name, DetectorConfig config, const ScoreMatrix& scores) {
    in.detectors.push_back({name, std::move(config), scores.select_rows(in_rows), scores.select_rows(ood_rows)});
  };
  for (const auto& m : cfg.sweep.methods) {
    if (m == "bh") {
      add(m, DetectorConfig::bh(cal.bh), bh_test.scores);
    } else if (m == "bh_no_ood") {
      add(m, DetectorConfig::bh(cal.bh_no_ood), bh_test.scores);
    } else if (m == "bh_vanilla") {
      add(m, DetectorConfig::vanilla(), bh_test.scores);
    } else if (m == "msp") {
      add(m, DetectorConfig::msp(cal.msp_threshold), softmax_test.scores);
    } else if (m == "energy") {
      add(m, DetectorConfig::energy(cal.energy_threshold, cal.energy_temperature), softmax_test.scores);
    } else if (m == "softmax_vanilla") {
      add(m, DetectorConfig::msp(0.0), softmax_test.scores);
    } else {
      throw ConfigError("unknown method '" + m + "'");
    }
  }
  return in;
}

std::vector<std::pair<std::string, EvalReport>> evaluate_full(const SweepInputs& inputs) {
  std::vector<std::pair<std::string, EvalReport>> out;
  for (const auto& d : inputs.detectors) {
    auto cm = confusion_matrix(predict_all(d.in_dist, d.config), inputs.in_dist_labels);
    for (const auto& p : predict_all(d.ood, d.config)) cm.add(kOod, p.verdict);
    out.emplace_back(d.name, make_report(std::move(cm)));
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const SweepInputs& inputs) {
  const std::size_t available = inputs.detectors.empty() ? 0 : inputs.detectors.front().ood.n_samples();
  SweepConfig sc;
  sc.repetitions = cfg.sweep.repetitions;
  sc.seed = derive_seed(cfg.sweep.seed, kSweepStream);
  sc.ood_counts = cfg.sweep.ood_counts.empty() ? default_ood_grid(available, cfg.sweep.points) : cfg.sweep.ood_counts;
  for (std::size_t k : sc.ood_counts) {
    if (k > available) {
      throw ConfigError("sweep.ood_counts: " + std::to_string(k) + " exceeds the " + std::to_string(available) +
                        " OOD test samples");
    }
  }
  return ood_sweep(inputs.in_dist_labels, inputs.detectors, sc);
}

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  PipelineResult r;
  r.bundle = generate_bundle(cfg);
  r.models = train_models(cfg, r.bundle);
  r.scores = score_splits(r.models, features_file_from_split(r.bundle.val), features_file_from_split(r.bundle.test));
  r.calibration = calibrate_detectors(cfg, r.scores.bh_val, r.scores.softmax_val);
  const auto inputs = build_sweep_inputs(cfg, r.calibration, r.scores.bh_test, r.scores.softmax_test);
  r.full_test = evaluate_full(inputs);
  r.sweep = run_sweep(cfg, inputs);
  return r;
}

std::string format_thresholds_csv(const Calibration& cal, std::span<const std::string> class_names) {
  if (cal.bh.size() != class_names.size() || cal.bh_no_ood.size() != class_names.size()) {
    throw std::invalid_argument("format_thresholds_csv: threshold count mismatch");
  }
  std::string out = "detector,class,value\n";
  for (std::size_t k = 0; k < class_names.size(); ++k) out += "bh," + class_names[k] + "," + format_real(cal.bh[k]) + "\n";
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    out += "bh_no_ood," + class_names[k] + "," + format_real(cal.bh_no_ood[k]) + "\n";
  }
  out += "msp,," + format_real(cal.msp_threshold) + "\n";
  out += "energy_temperature,," + format_real(cal.energy_temperature) + "\n";
  out += "energy,," + format_real(cal.energy_threshold) + "\n";
  return out;
}

Calibration parse_thresholds_csv(std::string_view text, std::span<const std::string> class_names,
                                 const std::string& source) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "detector,class,value") throw ParseError(source, 1, "unexpected header");
  const std::size_t c = class_names.size();
  std::vector<double> bh(c, -1.0), no_ood(c, -1.0);
  std::optional<double> msp, temp, energy;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_fields(lines[i]);
    if (f.size() != 3) throw ParseError(source, i + 1, "expected 3 fields");
    double v;
    try {
      v = parse_real(f[2]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, i + 1, e.what());
    }
    if (f[0] == "bh" || f[0] == "bh_no_ood") {
      const auto it = std::find(class_names.begin(), class_names.end(), f[1]);
      if (it == class_names.end()) throw ParseError(source, i + 1, "unknown class '" + std::string(f[1]) + "'");
      (f[0] == "bh" ? bh : no_ood)[static_cast<std::size_t>(it - class_names.begin())] = v;
    } else if (f[0] == "msp") {
      msp = v;
    } else if (f[0] == "energy_temperature") {
      temp = v;
    } else if (f[0] == "energy") {
      energy = v;
    } else {
      throw ParseError(source, i + 1, "unknown detector '" + std::string(f[0]) + "'");
    }
  }
  if (!msp || !temp || !energy || std::count(bh.begin(), bh.end(), -1.0) ||
      std::count(no_ood.begin(), no_ood.end(), -1.0)) {
    throw ParseError(source, lines.size(), "incomplete thresholds file");
  }
  Calibration cal;
  try {
    cal.bh = ThresholdVector(bh);
    cal.bh_no_ood = ThresholdVector(no_ood);
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
  cal.msp_threshold = *msp;
  cal.energy_temperature = *temp;
  cal.energy_threshold = *energy;
  return cal;
}

// ---------------------------------------------------------------------------

namespace {

template <typename F>
void run_stage(const char* name, F&& body) {
  try {
    body();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError& e) {
    throw StageError(name, kExitConfig, e.what());
  } catch (const NumericError& e) {
    throw StageError(name, kExitNumeric, e.what());
  } catch (const std::exception& e) {
    throw StageError(name, kExitData, e.what());
  }
}

std::string history_csv(const TrainResult& r) {
  std::string out = "epoch,learning_rate,train_loss,val_loss,train_balanced_accuracy,val_balanced_accuracy\n";
  for (const auto& e : r.history) {
    out += fmt::format("{},{},{},{},{},{}\n", e.epoch, format_real(e.learning_rate), format_real(e.train_loss),
                       format_real(e.val_loss), format_real(e.train_balanced_accuracy),
                       format_real(e.val_balanced_accuracy));
  }
  return out;
}

std::string trace_csv(const Calibration& cal) {
  std::string out = "detector,step,class,threshold,objective,accepted\n";
  auto emit = [&](const char* name, const CalibrationTrace& t) {
    out += fmt::format("{},0,,,{},\n", name, format_real(t.initial_objective));
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      const auto& s = t.steps[i];
      out += fmt::format("{},{},{},{},{},{}\n", name, i + 1, s.class_index, format_real(s.threshold),
                         format_real(s.objective), s.accepted ? 1 : 0);
    }
  };
  emit("bh", cal.bh_trace);
  emit("bh_no_ood", cal.bh_no_ood_trace);
  return out;
}

std::string eval_csv(const std::vector<std::pair<std::string, EvalReport>>& reports,
                     std::span<const std::string> class_names) {
  std::string out = "method,accuracy,balanced_accuracy,ood_recall,ood_precision";
  for (const auto& n : class_names) out += ",recall_" + n;
  out += ",recall_OOD\n";
  for (const auto& [name, r] : reports) {
    const auto rec = ood_recall(r.confusion);
    const auto prec = ood_precision(r.confusion);
    out += fmt::format("{},{},{},{},{}", name, format_real(r.accuracy), format_real(r.balanced_accuracy),
                       rec ? format_real(*rec) : "", prec ? format_real(*prec) : "");
    for (double v : r.per_class_recall) out += "," + format_real(v);
    out += '\n';
  }
  return out;
}

SweepInputs load_sweep_inputs(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto bh_test = load_scores_csv(dir / "scores_bh_test.csv");
  const auto softmax_test = load_scores_csv(dir / "scores_softmax_test.csv");
  const auto cal = parse_thresholds_csv(read_text_file(dir / "thresholds.csv"), bh_test.labels.class_names,
                                        (dir / "thresholds.csv").string());
  return build_sweep_inputs(cfg, cal, bh_test, softmax_test);
}

}  // namespace

void stage_gen_data(const ExperimentConfig& cfg, const fs::path& dir) {
  run_stage("gen-data", [&] {
    fs::create_directories(dir);
    const auto bundle = generate_bundle(cfg);
    save_features_csv(dir / "features_train.csv", features_file_from_split(bundle.train));
    save_features_csv(dir / "features_val.csv", features_file_from_split(bundle.val));
    save_features_csv(dir / "features_test.csv", features_file_from_split(bundle.test));
  });
}

void stage_train(const ExperimentConfig& cfg, const fs::path& dir) {
  run_stage("train", [&] {
    const auto tr = load_features_csv(dir / "features_train.csv");
    const auto val = load_features_csv(dir / "features_val.csv");
    const auto test = load_features_csv(dir / "features_test.csv");
    TrainedModels m;
    m.bh = train(tr.features, tr.labels, val.features, val.labels, cfg.mlp(HeadKind::BinaryHeads), cfg.train);
    m.softmax = train(tr.features, tr.labels, val.features, val.labels, cfg.mlp(HeadKind::Softmax), cfg.train);
    save_model(m.bh.params, dir / "model_bh.bin");
    save_model(m.softmax.params, dir / "model_softmax.bin");
    write_file_atomic(dir / "history_bh.csv", history_csv(m.bh));
    write_file_atomic(dir / "history_softmax.csv", history_csv(m.softmax));
    const auto s = score_splits(m, val, test);
    save_scores_csv(dir / "scores_bh_val.csv", s.bh_val);
    save_scores_csv(dir / "scores_bh_test.csv", s.bh_test);
    save_scores_csv(dir / "scores_softmax_val.csv", s.softmax_val);
    save_scores_csv(dir / "scores_softmax_test.csv", s.softmax_test);
  });
}

void stage_calibrate(const ExperimentConfig& cfg, const fs::path& dir) {
  run_stage("calibrate", [&] {
    const auto bh_val = load_scores_csv(dir / "scores_bh_val.csv");
    const auto softmax_val = load_scores_csv(dir / "scores_softmax_val.csv");
    const auto cal = calibrate_detectors(cfg, bh_val, softmax_val);
    write_file_atomic(dir / "thresholds.csv", format_thresholds_csv(cal, bh_val.labels.class_names));
    write_file_atomic(dir / "calibration_trace.csv", trace_csv(cal));
  });
}

void stage_eval(const ExperimentConfig& cfg, const fs::path& dir) {
  run_stage("eval", [&] {
    const auto inputs = load_sweep_inputs(cfg, dir);
    const auto reports = evaluate_full(inputs);
    const auto& names = inputs.in_dist_labels.class_names;
    write_file_atomic(dir / "eval.csv", eval_csv(reports, names));
    for (const auto& [name, r] : reports) {
      write_file_atomic(dir / ("confusion_" + name + ".csv"), format_confusion_csv(r.confusion, names));
    }
  });
}

void stage_sweep(const ExperimentConfig& cfg, const fs::path& dir) {
  run_stage("sweep", [&] {
    const auto inputs = load_sweep_inputs(cfg, dir);
    write_file_atomic(dir / "sweep.csv", format_sweep_csv(run_sweep(cfg, inputs)));
  });
}

void stage_report(const ExperimentConfig&, const fs::path& dir) {
  run_stage("report", [&] {
    const auto path = dir / "sweep.csv";
    const auto rows = compare_report(parse_sweep_csv(read_text_file(path), path.string()));
    write_file_atomic(dir / "compare.csv", format_compare_csv(rows));
    write_file_atomic(dir / "accuracy.svg", format_svg_chart(rows, ChartMetric::Accuracy));
    write_file_atomic(dir / "balanced_accuracy.svg", format_svg_chart(rows, ChartMetric::BalancedAccuracy));
  });
}

void run_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
  run_stage("config", [&] { cfg.validate(); });
  run_stage("setup", [&] { fs::create_directories(dir); });
  const auto config_text = to_config_text(cfg);
  run_stage("setup", [&] { write_file_atomic(dir / "config.ini", config_text); });
  stage_gen_data(cfg, dir);
  stage_train(cfg, dir);
  stage_calibrate(cfg, dir);
  stage_eval(cfg, dir);
  stage_sweep(cfg, dir);
  stage_report(cfg, dir);
  run_stage("manifest", [&] {
    std::string m;
    m += "config_hash = " + fnv1a_hex(config_text) + "\n";
    m += "seed.data = " + std::to_string(cfg.data.seed) + "\n";
    m += "seed.train = " + std::to_string(cfg.train.seed) + "\n";
    m += "seed.calibrate = " + std::to_string(cfg.calibrate.seed) + "\n";
    m += "seed.sweep = " + std::to_string(cfg.sweep.seed) + "\n";
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name != "manifest.txt" && e.path().extension() != ".tmp") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) m += "artifact " + f.filename().string() + " " + fnv1a_hex(read_text_file(f)) + "\n";
    write_file_atomic(dir / "manifest.txt", m);
  });
}

}  // namespace binheads
