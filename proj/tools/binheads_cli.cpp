#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "binheads/config.hpp"
#include "binheads/csv.hpp"
#include "binheads/errors.hpp"
#include "binheads/harness.hpp"

namespace fs = std::filesystem;
using namespace binheads;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config, "Experiment config file (defaults apply when omitted)");
  cmd->add_option("--seed", opts.seed, "Override every seed in the config");
  cmd->add_option("--out", opts.out, "Artifact directory")->capture_default_str();
}

ExperimentConfig resolve_config(const CommonOptions& opts) {
  ExperimentConfig cfg = opts.config.empty() ? ExperimentConfig{} : load_config(opts.config);
  if (opts.seed) cfg.override_seed(*opts.seed);
  cfg.validate();
  return cfg;
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binary-head OOD detection experiments"};
  app.require_subcommand(1);

  using Stage = void (*)(const ExperimentConfig&, const fs::path&);
  struct Entry {
    const char* name;
    const char* help;
    Stage stage;
  };
  const Entry entries[] = {
      {"gen-data", "Generate synthetic features and the train/val/test split", stage_gen_data},
      {"train", "Train the binary-head and softmax networks and score val/test", stage_train},
      {"calibrate", "Fit per-class and global thresholds on the validation scores", stage_calibrate},
      {"eval", "Evaluate every method on the full test set", stage_eval},
      {"sweep", "Evaluate every method across OOD counts", stage_sweep},
      {"report", "Aggregate the sweep into compare.csv and charts", stage_report},
      {"run", "Run all stages and write a manifest", run_experiment},
  };

  CommonOptions opts;
  int code = kExitOk;
  for (const auto& e : entries) {
    auto* cmd = app.add_subcommand(e.name, e.help);
    add_common(cmd, opts);
    const Entry* entry = &e;
    cmd->callback([&, entry] {
      code = run_guarded([&] {
        const auto cfg = resolve_config(opts);
        entry->stage(cfg, opts.out);
        if (std::string(entry->name) == "report" || std::string(entry->name) == "run") {
          std::cout << format_compare_table(
              compare_report(parse_sweep_csv(read_text_file(fs::path(opts.out) / "sweep.csv"))));
        }
      });
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  return code;
}
