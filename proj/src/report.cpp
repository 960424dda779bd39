#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

#include "binheads/csv.hpp"
#include "binheads/errors.hpp"
#include "binheads/harness.hpp"

namespace binheads {

namespace {

std::string optional_cell(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::vector<CompareRow> compare_report(const SweepResult& sweep) {
  if (sweep.rows.empty()) throw std::invalid_argument("compare_report: empty sweep");
  std::vector<std::string> methods;
  for (const auto& r : sweep.rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  struct Acc {
    std::vector<double> acc, ba, recall, precision;
  };
  std::map<std::pair<std::size_t, std::size_t>, Acc> groups;  // (ood_count, method order)
  for (const auto& r : sweep.rows) {
    const auto m = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), r.method) - methods.begin());
    auto& g = groups[{r.ood_count, m}];
    const auto& cm = r.report.confusion;
    g.acc.push_back(accuracy(cm));
    g.ba.push_back(balanced_accuracy(cm, OodConvention::AssumeZeroWhenAbsent));
    if (auto v = ood_recall(cm)) g.recall.push_back(*v);
    if (auto v = ood_precision(cm)) g.precision.push_back(*v);
  }
  std::vector<CompareRow> out;
  for (const auto& [key, g] : groups) {
    CompareRow row;
    row.ood_count = key.first;
    row.method = methods[key.second];
    row.accuracy = *mean_of(g.acc);
    row.balanced_accuracy = *mean_of(g.ba);
    row.ood_recall = mean_of(g.recall);
    row.ood_precision = mean_of(g.precision);
    out.push_back(std::move(row));
  }
  return out;
}

std::string format_compare_csv(std::span<const CompareRow> rows) {
  std::string out = "ood_count,method,accuracy,balanced_accuracy,ood_recall,ood_precision\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.ood_count, r.method, format_real(r.accuracy),
                       format_real(r.balanced_accuracy), optional_cell(r.ood_recall),
                       optional_cell(r.ood_precision));
  }
  return out;
}

std::string format_compare_table(std::span<const CompareRow> rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("-"); };
  std::string out = fmt::format("{:>9}  {:<{}}  {:>8}  {:>8}  {:>10}  {:>13}\n", "ood_count", "method",
                                width, "accuracy", "bal_acc", "ood_recall", "ood_precision");
  for (const auto& r : rows) {
    out += fmt::format("{:>9}  {:<{}}  {:>8.4f}  {:>8.4f}  {:>10}  {:>13}\n", r.ood_count, r.method,
                       width, r.accuracy, r.balanced_accuracy, opt(r.ood_recall), opt(r.ood_precision));
  }
  return out;
}

std::string format_sweep_csv(const SweepResult& sweep) {
  std::string out =
      "method,ood_count,repetition,accuracy,balanced_accuracy,ood_recall,ood_precision,confusion\n";
  for (const auto& r : sweep.rows) {
    const auto& cm = r.report.confusion;
    std::string counts;
    for (std::size_t i = 0; i < cm.dim(); ++i) {
      for (std::size_t j = 0; j < cm.dim(); ++j) {
        if (!counts.empty()) counts += ' ';
        counts += std::to_string(cm.at(i, j));
      }
    }
    out += fmt::format("{},{},{},{},{},{},{},{}\n", r.method, r.ood_count, r.repetition,
                       format_real(r.report.accuracy), format_real(r.report.balanced_accuracy),
                       optional_cell(ood_recall(cm)), optional_cell(ood_precision(cm)), counts);
  }
  return out;
}

SweepResult parse_sweep_csv(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  if (lines.empty() ||
      lines[0] != "method,ood_count,repetition,accuracy,balanced_accuracy,ood_recall,ood_precision,confusion") {
    throw ParseError(source, 1, "unexpected sweep header");
  }
  SweepResult out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::size_t line_no = i + 1;
    const auto f = split_fields(lines[i]);
    if (f.size() != 8) throw ParseError(source, line_no, "expected 8 fields");
    SweepRow row;
    row.method = std::string(f[0]);
    std::vector<std::uint64_t> counts;
    try {
      row.ood_count = static_cast<std::size_t>(parse_integer(f[1]));
      row.repetition = static_cast<std::size_t>(parse_integer(f[2]));
      for (auto c : split_fields(f[7], ' ')) {
        const auto v = parse_integer(c);
        if (v < 0) throw std::invalid_argument("negative count");
        counts.push_back(static_cast<std::uint64_t>(v));
      }
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
    const auto dim = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(counts.size()))));
    if (dim < 2 || dim * dim != counts.size()) throw ParseError(source, line_no, "confusion is not square");
    ConfusionMatrix cm(dim - 1);
    auto cls = [&](std::size_t k) { return k + 1 == dim ? kOod : static_cast<ClassIndex>(k); };
    for (std::size_t a = 0; a < dim; ++a) {
      for (std::size_t b = 0; b < dim; ++b) cm.add(cls(a), cls(b), counts[a * dim + b]);
    }
    try {
      row.report = make_report(std::move(cm));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
    const auto& rc = row.report.confusion;
    if (format_real(row.report.accuracy) != f[3] || format_real(row.report.balanced_accuracy) != f[4] ||
        optional_cell(ood_recall(rc)) != f[5] || optional_cell(ood_precision(rc)) != f[6]) {
      throw ParseError(source, line_no, "metrics disagree with the confusion matrix");
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string format_confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> class_names) {
  if (class_names.size() != cm.n_classes()) {
    throw std::invalid_argument("format_confusion_csv: class name count mismatch");
  }
  auto name = [&](std::size_t k) { return k == cm.ood_index() ? std::string(kOodLabel) : class_names[k]; };
  std::string out = "true\\predicted";
  for (std::size_t j = 0; j < cm.dim(); ++j) out += "," + name(j);
  out += '\n';
  for (std::size_t i = 0; i < cm.dim(); ++i) {
    out += name(i);
    for (std::size_t j = 0; j < cm.dim(); ++j) out += "," + std::to_string(cm.at(i, j));
    out += '\n';
  }
  return out;
}

std::string format_svg_chart(std::span<const CompareRow> rows, ChartMetric metric) {
  constexpr double kLeft = 70, kRight = 610, kTop = 50, kBottom = 440;
  static constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const char* title = metric == ChartMetric::Accuracy ? "Accuracy" : "Balanced accuracy";

  std::vector<std::string> methods;
  std::size_t max_k = 0;
  std::vector<std::size_t> ks;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(ks.begin(), ks.end(), r.ood_count) == ks.end()) ks.push_back(r.ood_count);
    max_k = std::max(max_k, r.ood_count);
  }
  std::sort(ks.begin(), ks.end());
  auto px = [&](std::size_t k) {
    return max_k == 0 ? (kLeft + kRight) / 2 : kLeft + (kRight - kLeft) * static_cast<double>(k) / static_cast<double>(max_k);
  };
  auto py = [&](double v) { return kBottom - (kBottom - kTop) * std::clamp(v, 0.0, 1.0); };

  std::string s =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" width=\"800\" height=\"500\">\n"
      "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  s += fmt::format(
      "<text x=\"400\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{} vs "
      "OOD samples in test set</text>\n",
      title);
  s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n",
                   kLeft, kBottom, kRight);
  s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n",
                   kLeft, kBottom, kTop);
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    s += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"#dddddd\"/>\n"
        "<text x=\"{3:.2f}\" y=\"{4:.2f}\" text-anchor=\"end\" font-family=\"sans-serif\" "
        "font-size=\"11\">{5:.1f}</text>\n",
        kLeft, py(v), kRight, kLeft - 6, py(v) + 4, v);
  }
  for (std::size_t k : ks) {
    s += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"11\">{}</text>\n",
        px(k), kBottom + 16, k);
  }
  s += fmt::format(
      "<text x=\"{:.2f}\" y=\"480\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      "font-size=\"12\">OOD samples in test set</text>\n",
      (kLeft + kRight) / 2);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* color = kPalette[m % std::size(kPalette)];
    std::string points;
    for (const auto& r : rows) {
      if (r.method != methods[m]) continue;
      const double v = metric == ChartMetric::Accuracy ? r.accuracy : r.balanced_accuracy;
      points += fmt::format("{}{:.2f},{:.2f}", points.empty() ? "" : " ", px(r.ood_count), py(v));
    }
    s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, points);
    const double ly = kTop + 20.0 * static_cast<double>(m);
    s += fmt::format(
        "<line x1=\"630\" y1=\"{0:.2f}\" x2=\"660\" y2=\"{0:.2f}\" stroke=\"{1}\" stroke-width=\"2\"/>\n"
        "<text x=\"668\" y=\"{2:.2f}\" font-family=\"sans-serif\" font-size=\"12\">{3}</text>\n",
        ly, color, ly + 4, xml_escape(methods[m]));
  }
  s += "</svg>\n";
  return s;
}

}  // namespace binheads
