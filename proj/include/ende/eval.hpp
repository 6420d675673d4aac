#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ende/corpus.hpp"

namespace ende {

// Span sets keyed by sentence id.
using SpanSets = std::map<std::string, std::vector<EntitySpan>>;

struct MatchCounts {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t matched = 0;
};

struct LabelScore {
  std::string label;
  MatchCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  MatchCounts counts;
  std::vector<LabelScore> per_label;  // sorted by label
  double macro_f1 = 0.0;              // mean of per-label F1
};

// Strict matching: a prediction is correct iff (start, end, label) equals a
// gold span. Spans are treated as sets. Sentences missing from `pred` count
// as empty predictions; a pred id unknown to `gold` throws DataError.
EvalReport score(const SpanSets& gold, const SpanSets& pred);

struct RunSummary {
  std::vector<EvalReport> reports;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_f1 = 0.0;
  double sd_f1 = 0.0;  // sample standard deviation, 0 when n = 1
};

RunSummary aggregate(const std::vector<EvalReport>& reports);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const RunSummary& summary);

// Aligned plain-text table, one row per (name, report), values in percent.
std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows);
// Same layout for summaries; adds the F1 standard deviation column.
std::string format_summary_table(const std::vector<std::pair<std::string, RunSummary>>& rows);

}  // namespace ende
