#include "binheads/config.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <stdexcept>

#include "binheads/csv.hpp"
#include "binheads/errors.hpp"

namespace binheads {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> parse_list(std::string_view v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (auto f : split_fields(v)) out.emplace_back(trim(f));
  return out;
}

std::size_t parse_count(std::string_view v) {
  const auto x = parse_integer(v);
  if (x < 0) throw std::invalid_argument("expected a non-negative integer");
  return static_cast<std::size_t>(x);
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true or false");
}

template <typename T, typename F>
std::vector<T> map_list(std::string_view v, F f) {
  std::vector<T> out;
  for (const auto& s : parse_list(v)) out.push_back(f(s));
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

template <typename T, typename F>
std::string join_with(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

std::string count_text(std::size_t v) { return std::to_string(v); }

}  // namespace

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names = {"bh", "bh_no_ood", "bh_vanilla", "msp", "energy",
                                                 "softmax_vanilla"};
  return names;
}

MlpConfig ExperimentConfig::mlp(HeadKind head) const {
  MlpConfig m;
  m.input_dim = data.feature_dim;
  m.hidden_dims = hidden_dims;
  m.n_classes = data.n_classes_total() - (data.ood_class_index ? 1 : 0);
  m.head = head;
  return m;
}

void ExperimentConfig::validate() const {
  try {
    data.validate();
    train.validate();
    mlp(HeadKind::BinaryHeads).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train_frac must be in (0, 1)");
  if (!(calibrate.init_threshold >= 0.0 && calibrate.init_threshold <= 1.0)) {
    throw ConfigError("calibrate.init_threshold must lie in [0, 1]");
  }
  if (calibrate.max_rounds < 1) throw ConfigError("calibrate.max_rounds must be >= 1");
  if (!(calibrate.t_min > 0.0 && calibrate.t_min < calibrate.t_max)) {
    throw ConfigError("calibrate: need 0 < t_min < t_max");
  }
  if (sweep.repetitions < 1) throw ConfigError("sweep.repetitions must be >= 1");
  if (sweep.points < 1) throw ConfigError("sweep.points must be >= 1");
  if (sweep.methods.empty()) throw ConfigError("sweep.methods must not be empty");
  for (const auto& m : sweep.methods) {
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
      throw ConfigError("unknown method '" + m + "'");
    }
  }
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  data.seed = seed;
  train.seed = seed;
  calibrate.seed = seed;
  sweep.seed = seed;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::string pending_ood;  // resolved after class names are known
  bool ood_set = false;
  bool classes_set = false;

  using Setter = std::function<void(std::string_view)>;
  auto seed_of = [](std::string_view v) { return static_cast<std::uint64_t>(parse_count(v)); };
  const std::map<std::string, std::map<std::string, Setter>> table = {
      {"data",
       {
           {"classes", [&](auto v) { cfg.data.class_names = parse_list(v); classes_set = true; }},
           {"proportions", [&](auto v) { cfg.data.class_proportions = map_list<double>(v, [](const std::string& s) { return parse_real(s); }); }},
           {"total_samples", [&](auto v) { cfg.data.total_samples = parse_count(v); }},
           {"feature_dim", [&](auto v) { cfg.data.feature_dim = parse_count(v); }},
           {"cluster_separation", [&](auto v) { cfg.data.cluster_separation = parse_real(v); }},
           {"cluster_scale", [&](auto v) { cfg.data.cluster_scale = parse_real(v); }},
           {"ood_class", [&](auto v) { pending_ood = std::string(v); ood_set = true; }},
           {"groups_per_class", [&](auto v) { cfg.data.groups_per_class = parse_count(v); }},
           {"train_frac", [&](auto v) { cfg.train_frac = parse_real(v); }},
           {"seed", [&](auto v) { cfg.data.seed = seed_of(v); }},
       }},
      {"model",
       {
           {"hidden_dims", [&](auto v) { cfg.hidden_dims = map_list<std::size_t>(v, [](const std::string& s) { return parse_count(s); }); }},
       }},
      {"train",
       {
           {"learning_rate", [&](auto v) { cfg.train.learning_rate = parse_real(v); }},
           {"batch_size", [&](auto v) { cfg.train.batch_size = parse_count(v); }},
           {"max_epochs", [&](auto v) { cfg.train.max_epochs = parse_count(v); }},
           {"plateau_patience", [&](auto v) { cfg.train.plateau_patience = parse_count(v); }},
           {"lr_decay_factor", [&](auto v) { cfg.train.lr_decay_factor = parse_real(v); }},
           {"weighted_sampling", [&](auto v) { cfg.train.weighted_sampling = parse_bool(v); }},
           {"feature_noise", [&](auto v) { cfg.train.feature_noise = parse_real(v); }},
           {"seed", [&](auto v) { cfg.train.seed = seed_of(v); }},
       }},
      {"calibrate",
       {
           {"max_rounds", [&](auto v) { cfg.calibrate.max_rounds = parse_count(v); }},
           {"init_threshold", [&](auto v) { cfg.calibrate.init_threshold = parse_real(v); }},
           {"seed", [&](auto v) { cfg.calibrate.seed = seed_of(v); }},
           {"t_min", [&](auto v) { cfg.calibrate.t_min = parse_real(v); }},
           {"t_max", [&](auto v) { cfg.calibrate.t_max = parse_real(v); }},
       }},
      {"sweep",
       {
           {"ood_counts", [&](auto v) { cfg.sweep.ood_counts = map_list<std::size_t>(v, [](const std::string& s) { return parse_count(s); }); }},
           {"points", [&](auto v) { cfg.sweep.points = parse_count(v); }},
           {"repetitions", [&](auto v) { cfg.sweep.repetitions = parse_count(v); }},
           {"seed", [&](auto v) { cfg.sweep.seed = seed_of(v); }},
           {"methods", [&](auto v) { cfg.sweep.methods = parse_list(v); }},
       }},
  };

  const std::map<std::string, Setter>* section = nullptr;
  std::string section_name;
  std::size_t line_no = 0;
  for (auto raw : split_lines(text)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section_name = std::string(trim(line.substr(1, line.size() - 2)));
      const auto it = table.find(section_name);
      if (it == table.end()) throw ConfigError(where + "unknown section [" + section_name + "]");
      section = &it->second;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = std::string(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    if (section == nullptr) throw ConfigError(where + "key '" + key + "' outside a section");
    const auto it = section->find(key);
    if (it == section->end()) {
      throw ConfigError(where + "unknown key '" + key + "' in [" + section_name + "]");
    }
    try {
      it->second(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }

  if (ood_set) {
    if (pending_ood == "none") {
      cfg.data.ood_class_index.reset();
    } else {
      const auto& names = cfg.data.class_names;
      const auto it = std::find(names.begin(), names.end(), pending_ood);
      if (it == names.end()) throw ConfigError("ood_class '" + pending_ood + "' is not a listed class");
      cfg.data.ood_class_index = static_cast<std::size_t>(it - names.begin());
    }
  } else if (classes_set) {
    throw ConfigError("[data] ood_class is required when classes are listed (use 'none' for no held-out class)");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

std::string to_config_text(const ExperimentConfig& c) {
  auto real = [](double v) { return format_real(v); };
  std::string s;
  s += "[data]\n";
  s += "classes = " + join(c.data.class_names) + "\n";
  s += "proportions = " + join_with(c.data.class_proportions, real) + "\n";
  s += "total_samples = " + std::to_string(c.data.total_samples) + "\n";
  s += "feature_dim = " + std::to_string(c.data.feature_dim) + "\n";
  s += "cluster_separation = " + real(c.data.cluster_separation) + "\n";
  s += "cluster_scale = " + real(c.data.cluster_scale) + "\n";
  s += "ood_class = " +
       (c.data.ood_class_index ? c.data.class_names.at(*c.data.ood_class_index) : std::string("none")) +
       "\n";
  s += "groups_per_class = " + std::to_string(c.data.groups_per_class) + "\n";
  s += "train_frac = " + real(c.train_frac) + "\n";
  s += "seed = " + std::to_string(c.data.seed) + "\n";
  s += "\n[model]\n";
  s += "hidden_dims = " + join_with(c.hidden_dims, count_text) + "\n";
  s += "\n[train]\n";
  s += "learning_rate = " + real(c.train.learning_rate) + "\n";
  s += "batch_size = " + std::to_string(c.train.batch_size) + "\n";
  s += "max_epochs = " + std::to_string(c.train.max_epochs) + "\n";
  s += "plateau_patience = " + std::to_string(c.train.plateau_patience) + "\n";
  s += "lr_decay_factor = " + real(c.train.lr_decay_factor) + "\n";
  s += std::string("weighted_sampling = ") + (c.train.weighted_sampling ? "true" : "false") + "\n";
  s += "feature_noise = " + real(c.train.feature_noise) + "\n";
  s += "seed = " + std::to_string(c.train.seed) + "\n";
  s += "\n[calibrate]\n";
  s += "max_rounds = " + std::to_string(c.calibrate.max_rounds) + "\n";
  s += "init_threshold = " + real(c.calibrate.init_threshold) + "\n";
  s += "seed = " + std::to_string(c.calibrate.seed) + "\n";
  s += "t_min = " + real(c.calibrate.t_min) + "\n";
  s += "t_max = " + real(c.calibrate.t_max) + "\n";
  s += "\n[sweep]\n";
  s += "ood_counts = " + join_with(c.sweep.ood_counts, count_text) + "\n";
  s += "points = " + std::to_string(c.sweep.points) + "\n";
  s += "repetitions = " + std::to_string(c.sweep.repetitions) + "\n";
  s += "seed = " + std::to_string(c.sweep.seed) + "\n";
  s += "methods = " + join(c.sweep.methods) + "\n";
  return s;
}

}  // namespace binheads
