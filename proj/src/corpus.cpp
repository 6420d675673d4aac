#include "ende/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ende/error.hpp"
#include "ende/rng.hpp"
#include "ende/serialize.hpp"

namespace ende {

std::string Sentence::text() const { return text(0, size()); }

std::string Sentence::text(int start, int end) const {
  std::string out;
  for (int i = start; i < end; ++i) {
    if (i > start) out += ' ';
    out += tokens[static_cast<std::size_t>(i)];
  }
  return out;
}

LabelSet::LabelSet(std::vector<std::string> labels) {
  for (auto& label : labels) {
    if (label.empty()) throw DataError("label set contains an empty label");
    if (contains(label)) throw DataError("label set contains duplicate label '" + label + "'");
    labels_.push_back(std::move(label));
  }
}

bool LabelSet::contains(std::string_view label) const { return index_of(label) >= 0; }

int LabelSet::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return static_cast<int>(i);
  }
  return -1;
}

void LabelSet::add(const std::string& label) {
  if (label.empty()) throw DataError("empty label");
  if (!contains(label)) labels_.push_back(label);
}

void validate_example(AnnotatedExample& example, const LabelSet* labels) {
  const auto& id = example.sentence.id;
  if (id.empty()) throw DataError("example has an empty id");
  const int n = example.sentence.size();
  if (n < 1) throw DataError("example " + id + ": sentence has no tokens");
  for (int i = 0; i < n; ++i) {
    const auto& token = example.sentence.tokens[static_cast<std::size_t>(i)];
    if (token.empty()) throw DataError("example " + id + ": token " + std::to_string(i) + " is empty");
    if (token.find('\n') != std::string::npos || token.find('\r') != std::string::npos) {
      throw DataError("example " + id + ": token " + std::to_string(i) + " contains a newline");
    }
  }
  for (const auto& span : example.entities) {
    if (span.start < 0) {
      throw DataError("example " + id + ": span start " + std::to_string(span.start) + " < 0");
    }
    if (span.end > n) {
      throw DataError("example " + id + ": span end " + std::to_string(span.end) +
                      " > sentence length " + std::to_string(n));
    }
    if (span.start >= span.end) {
      throw DataError("example " + id + ": empty span [" + std::to_string(span.start) + "," +
                      std::to_string(span.end) + ")");
    }
    if (span.label.empty()) throw DataError("example " + id + ": span with empty label");
    if (labels != nullptr && !labels->contains(span.label)) {
      throw DataError("example " + id + ": unknown label '" + span.label + "'");
    }
  }
  std::sort(example.entities.begin(), example.entities.end());
  auto dup = std::adjacent_find(example.entities.begin(), example.entities.end());
  if (dup != example.entities.end()) {
    throw DataError("example " + id + ": duplicate span [" + std::to_string(dup->start) + "," +
                    std::to_string(dup->end) + "," + dup->label + "]");
  }
  if (example.boundary) {
    try {
      validate_boundary(*example.boundary, example.sentence.tokens);
    } catch (const DataError& e) {
      throw DataError("example " + id + ": " + e.what());
    }
  }
}

Json span_to_json(const EntitySpan& span) {
  return Json{{"start", span.start}, {"end", span.end}, {"label", span.label}};
}

EntitySpan span_from_json(const Json& j) {
  return EntitySpan{j.at("start").get<int>(), j.at("end").get<int>(), j.at("label").get<std::string>()};
}

Json spans_to_json(const std::vector<EntitySpan>& spans) {
  Json out = Json::array();
  for (const auto& s : spans) out.push_back(span_to_json(s));
  return out;
}

std::vector<EntitySpan> spans_from_json(const Json& j) {
  std::vector<EntitySpan> out;
  for (const auto& item : j) out.push_back(span_from_json(item));
  return out;
}

Json example_to_json(const AnnotatedExample& example) {
  Json j{{"id", example.sentence.id},
         {"tokens", example.sentence.tokens},
         {"entities", spans_to_json(example.entities)}};
  if (example.boundary) {
    j["pos"] = example.boundary->pos;
    j["constituency"] = render_bracketed_tree(example.boundary->tree);
  }
  return j;
}

AnnotatedExample example_from_json(const Json& j) {
  AnnotatedExample ex;
  ex.sentence.id = j.at("id").get<std::string>();
  ex.sentence.tokens = j.at("tokens").get<std::vector<std::string>>();
  if (j.contains("entities")) ex.entities = spans_from_json(j.at("entities"));
  const bool has_pos = j.contains("pos") && !j.at("pos").is_null();
  const bool has_tree = j.contains("constituency") && !j.at("constituency").is_null();
  if (has_pos != has_tree) {
    throw DataError("example " + ex.sentence.id + ": 'pos' and 'constituency' must be given together");
  }
  if (has_pos) {
    BoundaryAnnotation boundary;
    boundary.pos = j.at("pos").get<std::vector<std::string>>();
    try {
      boundary.tree = parse_bracketed_tree(j.at("constituency").get<std::string>(), ex.sentence.tokens);
    } catch (const Error& e) {
      throw DataError("example " + ex.sentence.id + ": " + e.what());
    }
    ex.boundary = std::move(boundary);
  }
  return ex;
}

Dataset read_dataset(std::istream& in, const std::string& origin) {
  Dataset ds;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  bool first_record = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": record is not a JSON object");
    if (j.contains("label_set")) {
      if (!first_record) throw DataError(where + ": label_set header must be the first record");
      try {
        ds.labels = LabelSet(j.at("label_set").get<std::vector<std::string>>());
      } catch (const Json::exception& e) {
        throw DataError(where + ": bad label_set: " + e.what());
      }
      ds.explicit_labels = true;
      first_record = false;
      continue;
    }
    first_record = false;
    AnnotatedExample ex;
    try {
      ex = example_from_json(j);
    } catch (const Json::exception& e) {
      throw DataError(where + ": bad record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    try {
      validate_example(ex, ds.explicit_labels ? &ds.labels : nullptr);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!ids.insert(ex.sentence.id).second) {
      throw DataError(where + ": duplicate example id '" + ex.sentence.id + "'");
    }
    if (!ds.explicit_labels) {
      for (const auto& span : ex.entities) ds.labels.add(span.label);
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in, path.string());
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  if (dataset.explicit_labels) out << Json{{"label_set", dataset.labels.labels()}}.dump() << '\n';
  for (const auto& ex : dataset.examples) out << example_to_json(ex).dump() << '\n';
}

std::vector<AnnotatedExample> sample_k_shot(const std::vector<AnnotatedExample>& pool,
                                            const LabelSet& labels, const KShotConfig& cfg) {
  if (cfg.k < 1) throw DataError("k must be positive");
  const std::size_t n_labels = labels.size();

  // Per-sentence label counts, indexed by label position.
  std::vector<std::vector<int>> counts(pool.size(), std::vector<int>(n_labels, 0));
  std::vector<int> available(n_labels, 0);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (const auto& span : pool[i].entities) {
      const int l = labels.index_of(span.label);
      if (l < 0) continue;
      ++counts[i][l];
      ++available[l];
    }
  }
  std::string deficient;
  for (std::size_t l = 0; l < n_labels; ++l) {
    if (available[l] < cfg.k) {
      if (!deficient.empty()) deficient += ", ";
      deficient += labels.labels()[l] + ": " + std::to_string(available[l]) + " < " + std::to_string(cfg.k);
    }
  }
  if (!deficient.empty()) throw DataError("not enough entity instances for k-shot sampling (" + deficient + ")");

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(cfg.seed);
  rng.shuffle(order);

  std::vector<int> covered(n_labels, 0);
  std::vector<std::size_t> chosen;
  for (std::size_t i : order) {
    bool useful = false;
    for (std::size_t l = 0; l < n_labels && !useful; ++l) {
      useful = counts[i][l] > 0 && covered[l] < cfg.k;
    }
    if (!useful) continue;
    chosen.push_back(i);
    for (std::size_t l = 0; l < n_labels; ++l) covered[l] += counts[i][l];
    if (std::all_of(covered.begin(), covered.end(), [&](int c) { return c >= cfg.k; })) break;
  }

  // Pruning pass in selection order: a sentence whose removal keeps every
  // label at >= k is redundant.
  std::vector<char> keep(chosen.size(), 1);
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    const auto& row = counts[chosen[c]];
    bool removable = true;
    for (std::size_t l = 0; l < n_labels && removable; ++l) {
      removable = covered[l] - row[l] >= cfg.k;
    }
    if (removable) {
      keep[c] = 0;
      for (std::size_t l = 0; l < n_labels; ++l) covered[l] -= row[l];
    }
  }

  std::vector<std::size_t> result;
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    if (keep[c]) result.push_back(chosen[c]);
  }
  std::sort(result.begin(), result.end());
  std::vector<AnnotatedExample> support;
  support.reserve(result.size());
  for (std::size_t i : result) support.push_back(pool[i]);
  return support;
}

NestingStats nesting_stats(const std::vector<AnnotatedExample>& examples, const LabelSet& labels) {
  NestingStats stats;
  std::map<std::string, std::size_t> by_label;
  for (const auto& ex : examples) {
    ++stats.sentences;
    stats.tokens += ex.sentence.tokens.size();
    stats.entities += ex.entities.size();
    bool nested_here = false;
    const auto& spans = ex.entities;
    for (std::size_t a = 0; a < spans.size(); ++a) {
      ++by_label[spans[a].label];
      for (std::size_t b = a + 1; b < spans.size(); ++b) {
        const auto& x = spans[a];
        const auto& y = spans[b];
        if (!x.overlaps(y)) {
          ++stats.disjoint_pairs;
        } else if (x.contains(y) || y.contains(x)) {
          ++stats.nested_pairs;
          nested_here = true;
        } else {
          ++stats.overlapping_pairs;
          nested_here = true;
        }
      }
    }
    if (nested_here) ++stats.sentences_with_overlap;
  }
  for (const auto& label : labels.labels()) {
    auto it = by_label.find(label);
    stats.label_counts.emplace_back(label, it == by_label.end() ? 0 : it->second);
    if (it != by_label.end()) by_label.erase(it);
  }
  for (const auto& [label, count] : by_label) stats.label_counts.emplace_back(label, count);
  return stats;
}

}  // namespace ende
