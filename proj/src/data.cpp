#include "binheads/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "binheads/csv.hpp"
#include "binheads/errors.hpp"
#include "binheads/rng.hpp"

namespace binheads {

void validate_class_names(std::span<const std::string> names) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty() || n == kOodLabel || n.find_first_of(",\n\r") != std::string::npos) {
      throw std::invalid_argument("invalid class name '" + n + "'");
    }
    if (!seen.insert(n).second) throw std::invalid_argument("duplicate class name '" + n + "'");
  }
}

void SyntheticSpec::validate() const {
  const std::size_t k = n_classes_total();
  if (k < 1) throw std::invalid_argument("SyntheticSpec: no classes");
  validate_class_names(class_names);
  if (class_proportions.size() != k) {
    throw std::invalid_argument("SyntheticSpec: one proportion per class required");
  }
  double sum = 0.0;
  for (double p : class_proportions) {
    if (!(p > 0.0)) throw std::invalid_argument("SyntheticSpec: proportions must be positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("SyntheticSpec: proportions must sum to 1");
  if (feature_dim < 1) throw std::invalid_argument("SyntheticSpec: feature_dim must be >= 1");
  if (!(cluster_separation >= 0.0) || !(cluster_scale > 0.0)) {
    throw std::invalid_argument("SyntheticSpec: need separation >= 0 and scale > 0");
  }
  if (ood_class_index && *ood_class_index >= k) {
    throw std::invalid_argument("SyntheticSpec: ood_class_index out of range");
  }
  if (ood_class_index && k < 2) {
    throw std::invalid_argument("SyntheticSpec: need an in-distribution class besides the OOD one");
  }
  if (groups_per_class < 1) throw std::invalid_argument("SyntheticSpec: groups_per_class must be >= 1");
}

SyntheticSpec SyntheticSpec::imbalanced_default() {
  SyntheticSpec s;
  s.class_names = {"NV", "MEL", "BCC", "BKL", "SCC", "DF", "VASC", "AK"};
  s.class_proportions = {0.50, 0.15, 0.09, 0.08, 0.02, 0.01, 0.01, 0.14};
  s.ood_class_index = 7;
  return s;
}

std::vector<std::size_t> largest_remainder_counts(std::span<const double> proportions,
                                                  std::size_t total) {
  std::vector<std::size_t> counts(proportions.size());
  std::vector<double> frac(proportions.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < proportions.size(); ++k) {
    const double exact = proportions[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  std::vector<std::size_t> order(proportions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total && !order.empty(); i = (i + 1) % order.size()) {
    ++counts[order[i]];
    ++assigned;
  }
  return counts;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t k_total = spec.n_classes_total();
  const auto counts = largest_remainder_counts(spec.class_proportions, spec.total_samples);
  for (std::size_t k = 0; k < k_total; ++k) {
    if (counts[k] == 0) {
      throw std::invalid_argument("generate_synthetic: class '" + spec.class_names[k] +
                                  "' rounds to zero samples");
    }
  }

  std::vector<std::string> in_names;
  std::vector<ClassIndex> remap(k_total, kOod);
  for (std::size_t k = 0; k < k_total; ++k) {
    if (spec.ood_class_index && *spec.ood_class_index == k) continue;
    remap[k] = static_cast<ClassIndex>(in_names.size());
    in_names.push_back(spec.class_names[k]);
  }

  Rng rng(spec.seed);
  const std::size_t d = spec.feature_dim;
  std::vector<double> means(k_total * d);
  for (std::size_t k = 0; k < k_total; ++k) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        means[k * d + i] = rng.normal();
        norm += means[k * d + i] * means[k * d + i];
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) means[k * d + i] *= spec.cluster_separation / norm;
  }

  SyntheticData out;
  out.features = Matrix(spec.total_samples, d);
  std::vector<ClassIndex> labels;
  labels.reserve(spec.total_samples);
  out.groups.reserve(spec.total_samples);
  std::size_t row = 0;
  for (std::size_t k = 0; k < k_total; ++k) {
    const auto gpc = static_cast<std::int64_t>(spec.groups_per_class);
    for (std::size_t i = 0; i < counts[k]; ++i, ++row) {
      out.groups.push_back(static_cast<std::int64_t>(k) * gpc +
                           static_cast<std::int64_t>(rng.index(spec.groups_per_class)));
      labels.push_back(remap[k]);
      auto x = out.features.row(row);
      for (std::size_t j = 0; j < d; ++j) x[j] = means[k * d + j] + spec.cluster_scale * rng.normal();
    }
  }
  out.labels = LabelVector(std::move(labels), std::move(in_names));
  return out;
}

DatasetBundle split_dataset(const Matrix& features, const LabelVector& labels,
                            std::span<const std::int64_t> groups, double train_frac,
                            std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw std::invalid_argument("split_dataset: train_frac must be in (0, 1)");
  }
  if (features.rows() != labels.size() || groups.size() != labels.size()) {
    throw std::invalid_argument("split_dataset: features, labels and groups differ in length");
  }

  std::map<std::int64_t, ClassIndex> group_label;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const auto [it, inserted] = group_label.emplace(groups[s], labels.labels[s]);
    if (!inserted && it->second != labels.labels[s]) {
      throw std::invalid_argument("split_dataset: group " + std::to_string(groups[s]) +
                                  " mixes labels");
    }
  }
  const std::size_t c = labels.n_classes();
  std::vector<std::vector<std::int64_t>> by_class(c + 1);  // OOD last
  for (const auto& [g, l] : group_label) by_class[l == kOod ? c : static_cast<std::size_t>(l)].push_back(g);

  enum Part : int { kTrain, kVal, kTest };
  std::map<std::int64_t, Part> assignment;
  Rng rng(seed);
  for (std::size_t k = 0; k <= c; ++k) {
    auto& gs = by_class[k];
    rng.shuffle(std::span<std::int64_t>(gs));
    const std::size_t g = gs.size();
    std::size_t n_train = 0;
    if (k < c) {
      if (g < 3) {
        throw std::invalid_argument("split_dataset: class '" + labels.class_names[k] + "' has " +
                                    std::to_string(g) + " groups, need at least 3");
      }
      n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(g)));
      n_train = std::clamp<std::size_t>(n_train, 1, g - 2);
    }
    const std::size_t n_val = (g - n_train + 1) / 2;
    for (std::size_t i = 0; i < g; ++i) {
      assignment[gs[i]] = i < n_train ? kTrain : (i < n_train + n_val ? kVal : kTest);
    }
  }

  std::vector<std::size_t> rows[3];
  for (std::size_t s = 0; s < labels.size(); ++s) rows[assignment.at(groups[s])].push_back(s);

  auto make = [&](const std::vector<std::size_t>& r) {
    Split sp;
    sp.features = features.select_rows(r);
    sp.labels = labels.select(r);
    for (std::size_t s : r) sp.groups.push_back(groups[s]);
    sp.source_rows = r;
    return sp;
  };
  DatasetBundle b;
  b.train = make(rows[kTrain]);
  b.val = make(rows[kVal]);
  b.test = make(rows[kTest]);
  b.class_names = labels.class_names;
  return b;
}

namespace {

struct Preamble {
  std::vector<std::pair<std::string, std::string>> directives;  // "# key: value"
  std::size_t header_line = 0;  // index into lines
};

Preamble read_preamble(const std::vector<std::string_view>& lines) {
  Preamble p;
  std::size_t i = 0;
  for (; i < lines.size() && (lines[i].empty() || lines[i].front() == '#'); ++i) {
    if (lines[i].empty()) continue;
    auto body = lines[i].substr(1);
    const auto colon = body.find(':');
    if (colon == std::string_view::npos) continue;
    auto trim = [](std::string_view s) {
      while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
      while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
      return std::string(s);
    };
    p.directives.emplace_back(trim(body.substr(0, colon)), trim(body.substr(colon + 1)));
  }
  p.header_line = i;
  return p;
}

std::map<std::string, ClassIndex, std::less<>> label_lookup(const std::vector<std::string>& names) {
  std::map<std::string, ClassIndex, std::less<>> m;
  for (std::size_t k = 0; k < names.size(); ++k) m.emplace(names[k], static_cast<ClassIndex>(k));
  m.emplace(std::string(kOodLabel), kOod);
  return m;
}

std::string label_name(ClassIndex l, const std::vector<std::string>& names) {
  return l == kOod ? std::string(kOodLabel) : names.at(static_cast<std::size_t>(l));
}

}  // namespace

ScoresFile parse_scores_csv(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  const auto pre = read_preamble(lines);
  ScoreKind kind = ScoreKind::Probability;
  for (const auto& [key, value] : pre.directives) {
    if (key != "kind") continue;
    if (value == "Probability") {
      kind = ScoreKind::Probability;
    } else if (value == "Logit") {
      kind = ScoreKind::Logit;
    } else {
      throw ParseError(source, pre.header_line, "unknown score kind '" + value + "'");
    }
  }
  if (pre.header_line >= lines.size()) throw ParseError(source, lines.size(), "missing header");
  const auto header = split_fields(lines[pre.header_line]);
  const std::size_t header_no = pre.header_line + 1;
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw ParseError(source, header_no, "header must be 'id,label,<class names...>'");
  }
  std::vector<std::string> names(header.begin() + 2, header.end());
  try {
    validate_class_names(names);
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, header_no, e.what());
  }
  const auto lookup = label_lookup(names);
  const std::size_t c = names.size();

  ScoresFile out;
  std::vector<double> values;
  std::vector<ClassIndex> labels;
  for (std::size_t i = pre.header_line + 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::size_t line_no = i + 1;
    const auto fields = split_fields(lines[i]);
    if (fields.size() != c + 2) {
      throw ParseError(source, line_no, "expected " + std::to_string(c + 2) + " fields, got " +
                                            std::to_string(fields.size()));
    }
    const auto it = lookup.find(fields[1]);
    if (it == lookup.end()) {
      throw ParseError(source, line_no, "unknown label '" + std::string(fields[1]) + "'");
    }
    out.ids.emplace_back(fields[0]);
    labels.push_back(it->second);
    for (std::size_t k = 0; k < c; ++k) {
      double v;
      try {
        v = parse_real(fields[k + 2]);
      } catch (const std::invalid_argument& e) {
        throw ParseError(source, line_no, e.what());
      }
      if (kind == ScoreKind::Probability && (v < 0.0 || v > 1.0)) {
        throw ParseError(source, line_no, "probability outside [0, 1]");
      }
      values.push_back(v);
    }
  }
  out.scores = ScoreMatrix(labels.size(), c, kind, std::move(values));
  out.labels = LabelVector(std::move(labels), std::move(names));
  return out;
}

ScoresFile load_scores_csv(const std::filesystem::path& path) {
  return parse_scores_csv(read_text_file(path), path.string());
}

std::string format_scores_csv(const ScoresFile& file) {
  const auto& names = file.labels.class_names;
  validate_class_names(names);
  if (file.ids.size() != file.scores.n_samples() || file.labels.size() != file.scores.n_samples() ||
      names.size() != file.scores.n_classes()) {
    throw std::invalid_argument("format_scores_csv: inconsistent ids, scores and labels");
  }
  std::string out = std::string("# kind: ") + to_string(file.scores.kind()) + "\nid,label";
  for (const auto& n : names) out += "," + n;
  out += '\n';
  for (std::size_t s = 0; s < file.scores.n_samples(); ++s) {
    out += file.ids[s];
    out += ',';
    out += label_name(file.labels.labels[s], names);
    for (double v : file.scores.row(s)) {
      out += ',';
      out += format_real(v);
    }
    out += '\n';
  }
  return out;
}

void save_scores_csv(const std::filesystem::path& path, const ScoresFile& file) {
  write_file_atomic(path, format_scores_csv(file));
}

FeaturesFile features_file_from_split(const Split& split) {
  FeaturesFile f;
  for (std::size_t r : split.source_rows) f.ids.push_back("s" + std::to_string(r));
  f.groups = split.groups;
  f.features = split.features;
  f.labels = split.labels;
  return f;
}

FeaturesFile parse_features_csv(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  const auto pre = read_preamble(lines);
  std::vector<std::string> names;
  bool have_classes = false;
  for (const auto& [key, value] : pre.directives) {
    if (key != "classes") continue;
    have_classes = true;
    for (auto f : split_fields(value)) names.emplace_back(f);
  }
  if (!have_classes) throw ParseError(source, 1, "missing '# classes:' line");
  try {
    validate_class_names(names);
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 1, e.what());
  }
  if (pre.header_line >= lines.size()) throw ParseError(source, lines.size(), "missing header");
  const auto header = split_fields(lines[pre.header_line]);
  const std::size_t header_no = pre.header_line + 1;
  if (header.size() < 4 || header[0] != "id" || header[1] != "group" || header[2] != "label") {
    throw ParseError(source, header_no, "header must be 'id,group,label,f0,...'");
  }
  const std::size_t d = header.size() - 3;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 3] != "f" + std::to_string(j)) {
      throw ParseError(source, header_no, "feature column " + std::to_string(j) + " must be named f" +
                                              std::to_string(j));
    }
  }
  const auto lookup = label_lookup(names);

  FeaturesFile out;
  std::vector<double> values;
  std::vector<ClassIndex> labels;
  for (std::size_t i = pre.header_line + 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::size_t line_no = i + 1;
    const auto fields = split_fields(lines[i]);
    if (fields.size() != d + 3) {
      throw ParseError(source, line_no, "expected " + std::to_string(d + 3) + " fields, got " +
                                            std::to_string(fields.size()));
    }
    const auto it = lookup.find(fields[2]);
    if (it == lookup.end()) {
      throw ParseError(source, line_no, "unknown label '" + std::string(fields[2]) + "'");
    }
    try {
      out.groups.push_back(parse_integer(fields[1]));
      for (std::size_t j = 0; j < d; ++j) values.push_back(parse_real(fields[j + 3]));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
    out.ids.emplace_back(fields[0]);
    labels.push_back(it->second);
  }
  out.features = Matrix(labels.size(), d, std::move(values));
  out.labels = LabelVector(std::move(labels), std::move(names));
  return out;
}

FeaturesFile load_features_csv(const std::filesystem::path& path) {
  return parse_features_csv(read_text_file(path), path.string());
}

std::string format_features_csv(const FeaturesFile& file) {
  const auto& names = file.labels.class_names;
  validate_class_names(names);
  const std::size_t n = file.features.rows();
  if (file.ids.size() != n || file.groups.size() != n || file.labels.size() != n) {
    throw std::invalid_argument("format_features_csv: inconsistent columns");
  }
  std::string out = "# classes: ";
  for (std::size_t k = 0; k < names.size(); ++k) out += (k ? "," : "") + names[k];
  out += "\nid,group,label";
  for (std::size_t j = 0; j < file.features.cols(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t s = 0; s < n; ++s) {
    out += file.ids[s] + "," + std::to_string(file.groups[s]) + "," +
           label_name(file.labels.labels[s], names);
    for (double v : file.features.row(s)) {
      out += ',';
      out += format_real(v);
    }
    out += '\n';
  }
  return out;
}

void save_features_csv(const std::filesystem::path& path, const FeaturesFile& file) {
  write_file_atomic(path, format_features_csv(file));
}

}  // namespace binheads
