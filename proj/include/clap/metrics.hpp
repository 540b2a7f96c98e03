// Confusion matrices, per-class precision/recall/F1, and report rendering.
#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "clap/errors.hpp"

namespace clap {

using ConfusionMatrix = std::vector<std::vector<std::uint64_t>>;  // [true][predicted]

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::uint64_t support = 0;
  bool degenerate = false;  // some ratio had a zero denominator and was reported as 0
};

struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  std::uint64_t total = 0;
  double loss = 0;  // mean cross-entropy when produced by an evaluation pass
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& truths,
                                        const std::vector<std::size_t>& preds, std::size_t k) {
  if (truths.size() != preds.size()) {
    throw InvalidLabel("truths and predictions differ in length (" + std::to_string(truths.size()) + " vs " +
                       std::to_string(preds.size()) + ")");
  }
  ConfusionMatrix m(k, std::vector<std::uint64_t>(k, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= k || preds[i] >= k) {
      throw InvalidLabel("label pair (" + std::to_string(truths[i]) + ", " + std::to_string(preds[i]) +
                         ") out of range for " + std::to_string(k) + " classes");
    }
    ++m[truths[i]][preds[i]];
  }
  return m;
}

// F1 as the harmonic mean of precision and recall.
inline double f1_score(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

inline EvalReport metrics_from_confusion(const ConfusionMatrix& m) {
  const std::size_t k = m.size();
  if (k == 0) throw EmptyMatrix("confusion matrix has no classes");
  for (const auto& row : m) {
    if (row.size() != k) throw EmptyMatrix("confusion matrix is not square");
  }
  EvalReport r;
  r.confusion = m;
  std::vector<std::uint64_t> col(k, 0), row(k, 0);
  std::uint64_t diag = 0;
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      row[t] += m[t][p];
      col[p] += m[t][p];
      r.total += m[t][p];
    }
    diag += m[t][t];
  }
  if (r.total == 0) throw EmptyMatrix("confusion matrix has no samples");
  r.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    auto& cm = r.per_class[c];
    const std::uint64_t tp = m[c][c];
    cm.support = row[c];
    cm.degenerate = col[c] == 0 || row[c] == 0;
    cm.precision = col[c] ? static_cast<double>(tp) / static_cast<double>(col[c]) : 0.0;
    cm.recall = row[c] ? static_cast<double>(tp) / static_cast<double>(row[c]) : 0.0;
    cm.f1 = f1_score(cm.precision, cm.recall);
    const double w = static_cast<double>(cm.support) / static_cast<double>(r.total);
    r.weighted_precision += w * cm.precision;
    r.weighted_recall += w * cm.recall;
    r.weighted_f1 += w * cm.f1;
  }
  r.accuracy = static_cast<double>(diag) / static_cast<double>(r.total);
  return r;
}

enum class ReportStyle { text, csv };

inline ReportStyle parse_report_style(const std::string& s) {
  if (s == "text") return ReportStyle::text;
  if (s == "csv") return ReportStyle::csv;
  throw InvalidConfig("unknown report format '" + s + "' (expected text or csv)");
}

// Text: percentages at two decimals in aligned columns. CSV: fractions at full
// precision with header class,precision,recall,f1,support. The weighted
// average row is last in both.
inline std::string render_report(const EvalReport& r, const std::vector<std::string>& names, ReportStyle style) {
  if (names.size() != r.per_class.size()) {
    throw InvalidConfig("report has " + std::to_string(r.per_class.size()) + " classes but " +
                        std::to_string(names.size()) + " names");
  }
  std::ostringstream out;
  if (style == ReportStyle::csv) {
    out << std::setprecision(17);
    out << "class,precision,recall,f1,support\n";
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto& m = r.per_class[c];
      out << names[c] << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',' << m.support << '\n';
    }
    out << "weighted_avg," << r.weighted_precision << ',' << r.weighted_recall << ',' << r.weighted_f1 << ','
        << r.total << '\n';
    return out.str();
  }
  std::size_t width = std::string("Weighted Average").size();
  for (const auto& n : names) width = std::max(width, n.size());
  auto line = [&](const std::string& name, double p, double rc, double f, std::uint64_t support, bool flag) {
    out << std::left << std::setw(static_cast<int>(width)) << name << std::right << std::fixed << std::setprecision(2)
        << std::setw(11) << 100 * p << std::setw(11) << 100 * rc << std::setw(11) << 100 * f << std::setw(9)
        << support << (flag ? "  *" : "") << '\n';
  };
  out << std::left << std::setw(static_cast<int>(width)) << "Class" << std::right << std::setw(11) << "Precision"
      << std::setw(11) << "Recall" << std::setw(11) << "F1" << std::setw(9) << "Support" << '\n';
  bool any_degenerate = false;
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto& m = r.per_class[c];
    any_degenerate |= m.degenerate;
    line(names[c], m.precision, m.recall, m.f1, m.support, m.degenerate);
  }
  line("Weighted Average", r.weighted_precision, r.weighted_recall, r.weighted_f1, r.total, false);
  out << "Accuracy " << std::fixed << std::setprecision(2) << 100 * r.accuracy << '\n';
  if (any_degenerate) out << "* zero denominator, reported as 0\n";
  return out.str();
}

// K rows, each prefixed with the true class name; header lists predicted names.
inline std::string render_confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "true\\pred";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < m.size(); ++t) {
    out << names.at(t);
    for (auto v : m[t]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

struct CsvReportRow {
  std::string name;
  double precision = 0, recall = 0, f1 = 0;
  std::uint64_t support = 0;
};

inline std::vector<CsvReportRow> parse_csv_report(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "class,precision,recall,f1,support") {
    throw InvalidConfig("csv report header mismatch");
  }
  std::vector<CsvReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CsvReportRow row;
    std::string p, rc, f, s;
    if (!std::getline(ls, row.name, ',') || !std::getline(ls, p, ',') || !std::getline(ls, rc, ',') ||
        !std::getline(ls, f, ',') || !std::getline(ls, s)) {
      throw InvalidConfig("malformed csv report line '" + line + "'");
    }
    row.precision = std::stod(p);
    row.recall = std::stod(rc);
    row.f1 = std::stod(f);
    row.support = std::stoull(s);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace clap
