#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ende/corpus.hpp"

namespace ende {

// The instruction sentence every prompt opens with.
inline constexpr std::string_view kDefaultInstruction =
    "extracting entity and their types from a given sentence based on your knowledge";

enum class DemoOrder { kBestLast, kBestFirst };

std::string to_string(DemoOrder order);
DemoOrder demo_order_from_string(std::string_view s);

// Layout of a prompt. `body` holds the four blocks as named placeholders:
// {instruction}, {demonstrations}, {labels}, {sentence}.
struct PromptTemplate {
  std::string version = "ende-prompt-v1";
  std::string instruction = std::string(kDefaultInstruction);
  std::string body = "{instruction}\n\n{demonstrations}Labels: {labels}\n\nSentence: {sentence}\nEntities:";
  bool include_pos = true;
  bool include_tree = true;
  DemoOrder demo_order = DemoOrder::kBestLast;

  // Text file: `key = value` header lines, a `---` line, then the body.
  static PromptTemplate load(const std::filesystem::path& path);
  static PromptTemplate parse(std::string_view text);
  std::string serialize() const;
};

struct PromptBundle {
  std::string text;
  std::vector<std::string> demo_ids;  // in rendered order
  LabelSet labels;
  std::string test_id;
};

// `"text" (label)` items in span order joined by ", ", or "none".
std::string render_entities(const Sentence& sentence, const std::vector<EntitySpan>& spans);

// `demos` arrive best first (retrieval rank); the template decides the
// rendered order. Throws DataError if a boundary line is requested for a demo
// without annotation or a demo uses a label outside `labels`.
PromptBundle render_prompt(const PromptTemplate& tmpl, const std::vector<AnnotatedExample>& demos,
                           const LabelSet& labels, const Sentence& test);

enum class ReplyGrammar { kNone, kJson, kLines, kEmptyAnswer };

std::string to_string(ReplyGrammar g);

struct PredictedItem {
  std::string text;
  std::string label;
};

struct ParsedPrediction {
  ReplyGrammar grammar = ReplyGrammar::kNone;
  std::vector<PredictedItem> items;
  std::vector<EntitySpan> spans;  // sorted, unique
  std::vector<std::string> diagnostics;
};

// Reads a JSON array of {"text", "label"} objects, falling back to
// `"text" (label)` items anywhere in the text. Each item is aligned to the
// first not-yet-consumed exact token match of its (text, label). Never throws
// on content.
ParsedPrediction parse_lm_output(std::string_view text, const Sentence& sentence, const LabelSet& labels);

}  // namespace ende
