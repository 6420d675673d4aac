#include "ende/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "ende/error.hpp"

namespace ende {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

EvalReport score(const SpanSets& gold, const SpanSets& pred) {
  for (const auto& [id, spans] : pred) {
    if (gold.find(id) == gold.end()) throw DataError("prediction for unknown sentence id '" + id + "'");
  }
  std::map<std::string, MatchCounts> by_label;
  EvalReport report;
  static const std::vector<EntitySpan> kNone;
  for (const auto& [id, gold_spans] : gold) {
    auto it = pred.find(id);
    const auto& pred_spans = it == pred.end() ? kNone : it->second;
    const std::set<EntitySpan> g(gold_spans.begin(), gold_spans.end());
    const std::set<EntitySpan> p(pred_spans.begin(), pred_spans.end());
    for (const auto& s : g) ++by_label[s.label].gold;
    for (const auto& s : p) {
      ++by_label[s.label].predicted;
      if (g.count(s) != 0) ++by_label[s.label].matched;
    }
    report.counts.gold += g.size();
    report.counts.predicted += p.size();
  }
  double f1_sum = 0.0;
  for (const auto& [label, c] : by_label) {
    report.counts.matched += c.matched;
    LabelScore ls{label, c, ratio(c.matched, c.predicted), ratio(c.matched, c.gold), 0.0};
    ls.f1 = harmonic(ls.precision, ls.recall);
    f1_sum += ls.f1;
    report.per_label.push_back(ls);
  }
  report.precision = ratio(report.counts.matched, report.counts.predicted);
  report.recall = ratio(report.counts.matched, report.counts.gold);
  report.f1 = harmonic(report.precision, report.recall);
  report.macro_f1 = by_label.empty() ? 0.0 : f1_sum / static_cast<double>(by_label.size());
  return report;
}

RunSummary aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw DataError("cannot aggregate zero reports");
  RunSummary s;
  s.reports = reports;
  const auto n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    s.mean_precision += r.precision;
    s.mean_recall += r.recall;
    s.mean_f1 += r.f1;
  }
  s.mean_precision /= n;
  s.mean_recall /= n;
  s.mean_f1 /= n;
  const auto [lo, hi] = std::minmax_element(reports.begin(), reports.end(),
                                            [](const EvalReport& a, const EvalReport& b) { return a.f1 < b.f1; });
  if (lo->f1 == hi->f1) {
    s.mean_f1 = lo->f1;
  } else {
    double ss = 0.0;
    for (const auto& r : reports) ss += (r.f1 - s.mean_f1) * (r.f1 - s.mean_f1);
    s.sd_f1 = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json per_label = nlohmann::json::array();
  for (const auto& l : report.per_label) {
    per_label.push_back({{"label", l.label},
                         {"gold", l.counts.gold},
                         {"predicted", l.counts.predicted},
                         {"matched", l.counts.matched},
                         {"precision", l.precision},
                         {"recall", l.recall},
                         {"f1", l.f1}});
  }
  return {{"precision", report.precision},
          {"recall", report.recall},
          {"f1", report.f1},
          {"gold", report.counts.gold},
          {"predicted", report.counts.predicted},
          {"matched", report.counts.matched},
          {"macro_f1", report.macro_f1},
          {"per_label", per_label}};
}

nlohmann::json to_json(const RunSummary& summary) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : summary.reports) reports.push_back(to_json(r));
  return {{"runs", summary.reports.size()},
          {"mean_precision", summary.mean_precision},
          {"mean_recall", summary.mean_recall},
          {"mean_f1", summary.mean_f1},
          {"sd_f1", summary.sd_f1},
          {"reports", reports}};
}

namespace {

std::string pct(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << 100.0 * v;
  return out.str();
}

std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[c];
      }
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : rows) line(row);
  return out.str();
}

}  // namespace

std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& [name, r] : rows) cells.push_back({name, pct(r.precision), pct(r.recall), pct(r.f1)});
  return render({"run", "P", "R", "F1"}, cells);
}

std::string format_summary_table(const std::vector<std::pair<std::string, RunSummary>>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& [name, s] : rows) {
    cells.push_back({name, pct(s.mean_precision), pct(s.mean_recall), pct(s.mean_f1), pct(s.sd_f1),
                     std::to_string(s.reports.size())});
  }
  return render({"setting", "P", "R", "F1", "sd(F1)", "runs"}, cells);
}

}  // namespace ende
