#include "ende/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "ende/error.hpp"
#include "ende/serialize.hpp"

namespace ende {

std::string to_string(DemoOrder order) { return order == DemoOrder::kBestLast ? "best_last" : "best_first"; }

DemoOrder demo_order_from_string(std::string_view s) {
  if (s == "best_last") return DemoOrder::kBestLast;
  if (s == "best_first") return DemoOrder::kBestFirst;
  throw ConfigError("unknown demo order '" + std::string(s) + "'");
}

std::string to_string(ReplyGrammar g) {
  switch (g) {
    case ReplyGrammar::kJson:
      return "json";
    case ReplyGrammar::kLines:
      return "lines";
    case ReplyGrammar::kEmptyAnswer:
      return "empty";
    case ReplyGrammar::kNone:
      break;
  }
  return "none";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("template key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string quote(std::string_view text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

std::string unquote(std::string_view text) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\\' && i + 1 < text.size()) ++i;
    out += text[i];
  }
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

void replace_all(std::string& text, std::string_view key, std::string_view value) {
  std::string out;
  std::size_t from = 0;
  for (std::size_t at; (at = text.find(key, from)) != std::string::npos; from = at + key.size()) {
    out.append(text, from, at - from);
    out.append(value);
  }
  out.append(text, from);
  text = std::move(out);
}

constexpr std::string_view kPlaceholders[] = {"{instruction}", "{demonstrations}", "{labels}", "{sentence}"};

}  // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
  PromptTemplate t;
  const auto sep = text.find("\n---\n");
  std::string_view header = text;
  if (text.rfind("---\n", 0) == 0) {
    header = {};
    t.body = std::string(text.substr(4));
  } else if (sep != std::string_view::npos) {
    header = text.substr(0, sep);
    t.body = std::string(text.substr(sep + 5));
  } else {
    throw ConfigError("prompt template lacks the '---' line separating header and body");
  }
  while (!t.body.empty() && (t.body.back() == '\n' || t.body.back() == '\r')) t.body.pop_back();

  std::istringstream lines{std::string(header)};
  std::string line;
  while (std::getline(lines, line)) {
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw ConfigError("template header line without '=': " + stripped);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key == "version") {
      t.version = value;
    } else if (key == "instruction") {
      t.instruction = value;
    } else if (key == "include_pos") {
      t.include_pos = parse_bool(key, value);
    } else if (key == "include_tree") {
      t.include_tree = parse_bool(key, value);
    } else if (key == "demo_order") {
      t.demo_order = demo_order_from_string(value);
    } else {
      throw ConfigError("unknown template key '" + key + "'");
    }
  }
  std::size_t last = 0;
  for (auto placeholder : kPlaceholders) {
    const auto at = t.body.find(placeholder);
    if (at == std::string::npos) {
      throw ConfigError("template body is missing " + std::string(placeholder));
    }
    if (at < last) throw ConfigError("template body places " + std::string(placeholder) + " out of order");
    last = at;
  }
  return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prompt template " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string PromptTemplate::serialize() const {
  std::ostringstream out;
  out << "version = " << version << '\n'
      << "instruction = " << instruction << '\n'
      << "include_pos = " << (include_pos ? "true" : "false") << '\n'
      << "include_tree = " << (include_tree ? "true" : "false") << '\n'
      << "demo_order = " << to_string(demo_order) << '\n'
      << "---\n"
      << body << '\n';
  return out.str();
}

std::string render_entities(const Sentence& sentence, const std::vector<EntitySpan>& spans) {
  if (spans.empty()) return "none";
  std::vector<EntitySpan> ordered = spans;
  std::sort(ordered.begin(), ordered.end());
  std::vector<std::string> items;
  for (const auto& s : ordered) items.push_back(quote(sentence.text(s.start, s.end)) + " (" + s.label + ")");
  return join(items, ", ");
}

PromptBundle render_prompt(const PromptTemplate& tmpl, const std::vector<AnnotatedExample>& demos,
                           const LabelSet& labels, const Sentence& test) {
  PromptBundle bundle;
  bundle.labels = labels;
  bundle.test_id = test.id;

  std::vector<const AnnotatedExample*> ordered;
  for (const auto& d : demos) ordered.push_back(&d);
  if (tmpl.demo_order == DemoOrder::kBestLast) std::reverse(ordered.begin(), ordered.end());

  std::string blocks;
  for (const AnnotatedExample* demo : ordered) {
    if ((tmpl.include_pos || tmpl.include_tree) && !demo->boundary) {
      throw DataError("demonstration " + demo->id() + " has no boundary annotation");
    }
    for (const auto& span : demo->entities) {
      if (!labels.contains(span.label)) {
        throw DataError("demonstration " + demo->id() + " uses label '" + span.label + "' outside the label set");
      }
    }
    blocks += "Sentence: " + demo->sentence.text() + "\n";
    if (tmpl.include_pos) blocks += "POS: " + join(demo->boundary->pos, " ") + "\n";
    if (tmpl.include_tree) blocks += "Tree: " + render_bracketed_tree(demo->boundary->tree) + "\n";
    blocks += "Entities: " + render_entities(demo->sentence, demo->entities) + "\n\n";
    bundle.demo_ids.push_back(demo->id());
  }

  // Substitute the instruction last so placeholder-like text inside data is
  // never expanded twice.
  std::string text = tmpl.body;
  const std::string marker = "\x01";
  replace_all(text, "{instruction}", marker + "I" + marker);
  replace_all(text, "{demonstrations}", marker + "D" + marker);
  replace_all(text, "{labels}", marker + "L" + marker);
  replace_all(text, "{sentence}", marker + "S" + marker);
  replace_all(text, marker + "D" + marker, blocks);
  replace_all(text, marker + "L" + marker, "[" + join(labels.labels(), ", ") + "]");
  replace_all(text, marker + "S" + marker, test.text());
  replace_all(text, marker + "I" + marker, tmpl.instruction);
  bundle.text = std::move(text);
  return bundle;
}

namespace {

std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

bool try_json(const std::string& text, ParsedPrediction& out) {
  const auto open = text.find('[');
  const auto close = text.rfind(']');
  if (open == std::string::npos || close == std::string::npos || close < open) return false;
  Json j;
  try {
    j = Json::parse(text.substr(open, close - open + 1));
  } catch (const Json::parse_error&) {
    return false;
  }
  if (!j.is_array()) return false;
  out.grammar = ReplyGrammar::kJson;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto& item = j[k];
    if (!item.is_object() || !item.contains("text") || !item.contains("label") || !item["text"].is_string() ||
        !item["label"].is_string()) {
      out.diagnostics.push_back("item " + std::to_string(k) + " is not a {text, label} object; dropped");
      continue;
    }
    out.items.push_back({item["text"].get<std::string>(), item["label"].get<std::string>()});
  }
  return true;
}

bool try_lines(const std::string& text, ParsedPrediction& out) {
  static const std::regex item(R"re("((?:[^"\\]|\\.)*)"\s*\(([^()\n]*)\))re");
  bool any = false;
  for (std::sregex_iterator it(text.begin(), text.end(), item), end; it != end; ++it) {
    out.items.push_back({unquote((*it)[1].str()), trim((*it)[2].str())});
    any = true;
  }
  if (any) out.grammar = ReplyGrammar::kLines;
  return any;
}

}  // namespace

ParsedPrediction parse_lm_output(std::string_view raw, const Sentence& sentence, const LabelSet& labels) {
  ParsedPrediction out;
  const std::string text = trim(raw);
  // A bracketed fragment inside free text can parse as JSON without holding
  // any item; the line grammar gets a chance before such a result is kept.
  ParsedPrediction json;
  const bool json_ok = try_json(text, json);
  const bool bare_json = !text.empty() && text.front() == '[' && text.back() == ']';
  bool matched = false;
  if (json_ok && (!json.items.empty() || bare_json)) {
    out = std::move(json);
    matched = true;
  } else if (try_lines(text, out)) {
    matched = true;
  } else if (json_ok) {
    out = std::move(json);
    matched = true;
  }
  if (!matched) {
    std::string lowered = text;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lowered == "none" || lowered == "none." || lowered == "entities: none") {
      out.grammar = ReplyGrammar::kEmptyAnswer;
    } else {
      out.diagnostics.push_back(text.empty() ? "empty reply" : "no grammar matched");
    }
    return out;
  }

  const auto& tokens = sentence.tokens;
  std::map<std::pair<std::vector<std::string>, std::string>, std::set<int>> consumed;
  for (const auto& item : out.items) {
    const auto needle = split_ws(item.text);
    if (needle.empty()) {
      out.diagnostics.push_back("empty mention text (" + item.label + "); dropped");
      continue;
    }
    if (!labels.contains(item.label)) {
      out.diagnostics.push_back("unknown label '" + item.label + "' for \"" + item.text + "\"; dropped");
      continue;
    }
    auto& used = consumed[{needle, item.label}];
    int found = -1;
    const int width = static_cast<int>(needle.size());
    for (int s = 0; s + width <= static_cast<int>(tokens.size()) && found < 0; ++s) {
      if (used.count(s) != 0) continue;
      if (std::equal(needle.begin(), needle.end(), tokens.begin() + s)) found = s;
    }
    if (found < 0) {
      out.diagnostics.push_back("\"" + item.text + "\" (" + item.label + ") has no unconsumed occurrence; dropped");
      continue;
    }
    used.insert(found);
    out.spans.push_back({found, found + width, item.label});
  }
  std::sort(out.spans.begin(), out.spans.end());
  out.spans.erase(std::unique(out.spans.begin(), out.spans.end()), out.spans.end());
  return out;
}

}  // namespace ende
