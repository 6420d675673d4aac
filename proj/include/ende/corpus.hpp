#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ende/boundary.hpp"

namespace ende {

struct Sentence {
  std::string id;
  std::vector<std::string> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  // Tokens joined by single spaces.
  std::string text() const;
  std::string text(int start, int end) const;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

// Half-open token range [start, end) with a label. Ordered by (start, end,
// label), which is also the rendering order in prompts.
struct EntitySpan {
  int start = 0;
  int end = 0;
  std::string label;

  int length() const { return end - start; }
  bool overlaps(const EntitySpan& o) const { return start < o.end && o.start < end; }
  bool contains(const EntitySpan& o) const { return start <= o.start && o.end <= end; }

  friend auto operator<=>(const EntitySpan&, const EntitySpan&) = default;
};

class LabelSet {
 public:
  LabelSet() = default;
  // Throws DataError on duplicates or empty labels.
  explicit LabelSet(std::vector<std::string> labels);

  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  bool contains(std::string_view label) const;
  // Position in the set or -1.
  int index_of(std::string_view label) const;
  // Appends if absent.
  void add(const std::string& label);

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<std::string> labels_;
};

struct AnnotatedExample {
  Sentence sentence;
  std::vector<EntitySpan> entities;  // sorted, unique
  std::optional<BoundaryAnnotation> boundary;

  const std::string& id() const { return sentence.id; }

  friend bool operator==(const AnnotatedExample&, const AnnotatedExample&) = default;
};

struct Dataset {
  LabelSet labels;
  std::vector<AnnotatedExample> examples;
  // True when the label set came from a header record.
  bool explicit_labels = false;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Sorts the example's spans and checks every AnnotatedExample invariant.
// Throws DataError naming the example id.
void validate_example(AnnotatedExample& example, const LabelSet* labels);

Dataset load_dataset(const std::filesystem::path& path);
// `origin` is used in error messages.
Dataset read_dataset(std::istream& in, const std::string& origin = "<stream>");
void write_dataset(std::ostream& out, const Dataset& dataset);

struct KShotConfig {
  int k = 5;
  std::uint64_t seed = 0;
};

// Greedy seeded sampling: visit the pool in a seeded order and keep every
// sentence that still contributes an under-covered label, then drop
// sentences that turned out redundant. Every label ends up with >= k
// instances. Returned in pool order.
std::vector<AnnotatedExample> sample_k_shot(const std::vector<AnnotatedExample>& pool,
                                            const LabelSet& labels,
                                            const KShotConfig& cfg);

// Pair counts over spans within the same sentence.
struct NestingStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t entities = 0;
  std::size_t disjoint_pairs = 0;
  std::size_t overlapping_pairs = 0;
  std::size_t nested_pairs = 0;
  std::size_t sentences_with_overlap = 0;
  std::vector<std::pair<std::string, std::size_t>> label_counts;
};

NestingStats nesting_stats(const std::vector<AnnotatedExample>& examples,
                           const LabelSet& labels = {});

}  // namespace ende
