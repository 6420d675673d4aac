#include "ende/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ende/annotator.hpp"
#include "ende/error.hpp"
#include "ende/serialize.hpp"

namespace ende {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kPathKeys = {"train",     "test",       "template", "checkpoint", "semantic_vectors",
                                         "cache_dir", "transcript", "out"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

// ------------------------------------------------------------------ config

ExperimentConfig::ExperimentConfig() {
  values_ = {
      {"train", ""},
      {"test", ""},
      {"out", "out"},
      {"k", "5"},
      {"seeds", "1"},
      {"m", "5"},
      {"weights", "0.5,0.25,0.25"},
      {"template", ""},
      {"include_pos", "true"},
      {"include_tree", "true"},
      {"demo_order", "best_last"},
      {"checkpoint", ""},
      {"annotator", ""},
      {"semantic_mode", "trainable-bag"},
      {"semantic_vectors", ""},
      {"dim", "64"},
      {"token_dim", "32"},
      {"pos_dim", "16"},
      {"hidden", "32"},
      {"node_dim", "16"},
      {"gcn_layers", "2"},
      {"epochs", "30"},
      {"batch_size", "8"},
      {"learning_rate", "0.1"},
      {"tau", "0.1"},
      {"lambda_semantic", "1"},
      {"lambda_boundary", "1"},
      {"lambda_label", "1"},
      {"threshold", "0.5"},
      {"negatives_per_pair", "4"},
      {"max_positives", "8"},
      {"train_seed", "0"},
      {"backend", "mock-oracle"},
      {"model", ""},
      {"endpoint", ""},
      {"http_path", "/v1/completions"},
      {"response_pointer", "/choices/0/text"},
      {"auth_env", ""},
      {"timeout_ms", "60000"},
      {"max_attempts", "3"},
      {"backoff_ms", "500"},
      {"max_parallel", "4"},
      {"max_tokens", "256"},
      {"temperature", "0"},
      {"stop", ""},
      {"cache_dir", ""},
      {"transcript", ""},
  };
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const fs::path& base_dir) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not `key = value`");
    }
    cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)), base_dir);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

void ExperimentConfig::set(const std::string& key, const std::string& value, const fs::path& base_dir) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  if (kPathKeys.count(key) != 0 && !value.empty() && !base_dir.empty() && fs::path(value).is_relative()) {
    it->second = (base_dir / value).lexically_normal().string();
  } else {
    it->second = value;
  }
}

void ExperimentConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

fs::path ExperimentConfig::path(const std::string& key) const { return fs::path(get(key)); }

int ExperimentConfig::integer(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
}

double ExperimentConfig::real(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
}

bool ExperimentConfig::boolean(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(get("seeds"))) {
    try {
      std::size_t used = 0;
      const auto seed = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(seed);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("seeds must list at least one seed");
  return out;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.encoder.dim = integer("dim");
  t.encoder.token_dim = integer("token_dim");
  t.encoder.pos_dim = integer("pos_dim");
  t.encoder.hidden = integer("hidden");
  t.encoder.node_dim = integer("node_dim");
  t.encoder.gcn_layers = integer("gcn_layers");
  t.encoder.semantic_mode = semantic_mode_from_string(get("semantic_mode"));
  t.epochs = integer("epochs");
  t.batch_size = integer("batch_size");
  t.learning_rate = real("learning_rate");
  t.tau = real("tau");
  t.lambda_semantic = real("lambda_semantic");
  t.lambda_boundary = real("lambda_boundary");
  t.lambda_label = real("lambda_label");
  t.threshold = real("threshold");
  t.negatives_per_pair = integer("negatives_per_pair");
  t.max_positives = integer("max_positives");
  t.seed = std::stoull(get("train_seed"));
  return t;
}

ScoringWeights ExperimentConfig::weights() const {
  const auto parts = split_list(get("weights"));
  if (parts.size() != 3) throw ConfigError("weights expects three comma-separated numbers");
  ScoringWeights w{std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
  w.validate();
  return w;
}

PromptTemplate ExperimentConfig::prompt_template() const {
  PromptTemplate t = get("template").empty() ? PromptTemplate{} : PromptTemplate::load(path("template"));
  t.include_pos = boolean("include_pos");
  t.include_tree = boolean("include_tree");
  t.demo_order = demo_order_from_string(get("demo_order"));
  return t;
}

BackendConfig ExperimentConfig::backend_config() const {
  BackendConfig b;
  b.kind = backend_kind_from_string(get("backend"));
  b.model = get("model");
  b.endpoint = get("endpoint");
  b.path = get("http_path");
  b.response_pointer = get("response_pointer");
  b.auth_env = get("auth_env");
  b.timeout_ms = integer("timeout_ms");
  b.retry.max_attempts = integer("max_attempts");
  b.retry.base_backoff_ms = integer("backoff_ms");
  b.max_parallel = integer("max_parallel");
  b.cache_dir = path("cache_dir");
  b.transcript = path("transcript");
  b.decoding.max_tokens = integer("max_tokens");
  b.decoding.temperature = real("temperature");
  b.decoding.stop = split_list(get("stop"));
  return b;
}

fs::path ExperimentConfig::out_dir() const {
  if (get("out").empty()) throw ConfigError("out must name an output directory");
  return path("out");
}

fs::path ExperimentConfig::checkpoint_path() const {
  return get("checkpoint").empty() ? out_dir() / "checkpoint.json" : path("checkpoint");
}

std::string ExperimentConfig::render() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

// -------------------------------------------------------------------- lock

OutputLock::OutputLock(const fs::path& dir) {
  fs::create_directories(dir);
  file_ = dir / ".ende.lock";
  const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw Error("output directory " + dir.string() + " is locked by another experiment (" + file_.string() + ")");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(file_, ec);
}

// ---------------------------------------------------------------- commands

namespace {

Dataset load_input(const ExperimentConfig& cfg, const std::string& key, ExternalAnnotator* annotator) {
  if (cfg.get(key).empty()) throw ConfigError("config key '" + key + "' must name a dataset");
  const fs::path p = cfg.path(key);
  if (!fs::exists(p)) throw ConfigError("dataset " + p.string() + " does not exist");
  Dataset ds = load_dataset(p);
  if (annotator != nullptr) annotate_missing(ds.examples, *annotator);
  return ds;
}

std::unique_ptr<ExternalAnnotator> make_annotator(const ExperimentConfig& cfg) {
  if (cfg.get("annotator").empty()) return nullptr;
  return std::make_unique<ExternalAnnotator>(cfg.get("annotator"));
}

void attach_external(const ExperimentConfig& cfg, EncoderStack& stack) {
  if (stack.semantic.mode() != SemanticMode::kExternal) return;
  if (cfg.get("semantic_vectors").empty()) {
    throw ConfigError("semantic_mode = external needs semantic_vectors");
  }
  stack.semantic.set_external_vectors(load_external_vectors(cfg.path("semantic_vectors")));
}

Json loss_json(const LossReport& r) {
  return {{"epoch", r.epoch},          {"semantic", r.semantic}, {"boundary_pos", r.boundary_pos},
          {"boundary_con", r.boundary_con}, {"boundary", r.boundary()}, {"label", r.label},
          {"total", r.total},          {"steps", r.steps},       {"skipped_anchors", r.skipped_anchors}};
}

}  // namespace

std::vector<LossReport> run_training(const ExperimentConfig& cfg, std::ostream* log) {
  const fs::path out = cfg.out_dir();
  OutputLock lock(out);
  write_text(out / "effective_config.txt", cfg.render());
  auto annotator = make_annotator(cfg);
  const Dataset pool = load_input(cfg, "train", annotator.get());
  const TrainConfig tc = cfg.train_config();

  EncoderStack stack = EncoderStack::create(tc.encoder, Vocabularies::build(pool.examples), tc.seed);
  attach_external(cfg, stack);
  std::ofstream trace_out(out / "loss_trace.jsonl", std::ios::binary);
  auto trace = train(stack, pool.examples, tc, [&](const LossReport& r) {
    trace_out << loss_json(r).dump() << '\n';
    trace_out.flush();
    if (log != nullptr) {
      *log << "epoch " << r.epoch << " total " << r.total << " (sem " << r.semantic << ", bdy " << r.boundary()
           << ", lab " << r.label << ")\n";
    }
  });
  const fs::path ckpt = cfg.checkpoint_path();
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, stack);
  if (log != nullptr) *log << "checkpoint written to " << ckpt.string() << "\n";
  return trace;
}

namespace {

struct PreparedRun {
  Dataset pool;
  Dataset test;
  EncoderStack stack;
  PromptTemplate tmpl;
  ScoringWeights weights;
};

PreparedRun prepare_run(const ExperimentConfig& cfg) {
  PreparedRun p;
  auto annotator = make_annotator(cfg);
  p.pool = load_input(cfg, "train", annotator.get());
  p.test = load_input(cfg, "test", annotator.get());
  const fs::path ckpt = cfg.checkpoint_path();
  if (!fs::exists(ckpt)) {
    throw ConfigError("trained checkpoint " + ckpt.string() + " not found; run `ende train` first");
  }
  p.stack = load_checkpoint(ckpt);
  attach_external(cfg, p.stack);
  p.tmpl = cfg.prompt_template();
  p.weights = cfg.weights();
  return p;
}

SeedOutcome run_seed(const ExperimentConfig& cfg, const PreparedRun& p, LMClient& client, std::uint64_t seed,
                     const fs::path& seed_dir, std::ostream* log) {
  SeedOutcome outcome;
  outcome.seed = seed;
  const auto support = sample_k_shot(p.pool.examples, p.pool.labels, {cfg.integer("k"), seed});
  outcome.support_size = support.size();
  const RetrievalIndex index = build_index(support, p.stack, p.weights);
  const int m = cfg.integer("m");
  if (m < 1) throw ConfigError("m must be >= 1");
  outcome.effective_m = std::min<int>(m, static_cast<int>(index.size()));
  if (log != nullptr && outcome.effective_m < m) {
    *log << "seed " << seed << ": support set has " << index.size() << " sentences; using m = "
         << outcome.effective_m << "\n";
  }
  std::map<std::string, const AnnotatedExample*> by_id;
  for (const auto& ex : support) by_id[ex.id()] = &ex;

  const bool needs_boundary = p.weights.pos > 0.0 || p.weights.tree > 0.0;
  std::vector<LMRequest> requests;
  std::vector<PromptBundle> bundles;
  for (const auto& test : p.test.examples) {
    if (needs_boundary && !test.boundary) {
      throw DataError("test sentence " + test.id() + " has no boundary annotation");
    }
    const auto ranked = retrieve(index, p.stack, test.sentence,
                                 test.boundary ? &*test.boundary : nullptr, outcome.effective_m);
    std::vector<AnnotatedExample> demos;
    for (const auto& r : ranked) demos.push_back(*by_id.at(r.id));
    bundles.push_back(render_prompt(p.tmpl, demos, p.pool.labels, test.sentence));
    requests.push_back({bundles.back().text, client.config().decoding, test.id()});
  }
  const auto responses = client.complete_batch(requests);

  fs::create_directories(seed_dir);
  std::ofstream predictions(seed_dir / "predictions.jsonl", std::ios::binary);
  std::ofstream transcript(seed_dir / "transcript.jsonl", std::ios::binary);
  SpanSets gold;
  SpanSets pred;
  for (std::size_t i = 0; i < p.test.examples.size(); ++i) {
    const auto& test = p.test.examples[i];
    gold[test.id()] = test.entities;
    Json record{{"id", test.id()}};
    Json transcript_record{{"id", test.id()}, {"demos", bundles[i].demo_ids}, {"prompt", bundles[i].text}};
    if (responses[i].ok()) {
      const auto parsed = parse_lm_output(responses[i].response->text, test.sentence, p.pool.labels);
      pred[test.id()] = parsed.spans;
      record["entities"] = spans_to_json(parsed.spans);
      record["grammar"] = to_string(parsed.grammar);
      record["diagnostics"] = parsed.diagnostics;
      transcript_record["reply"] = responses[i].response->text;
    } else {
      ++outcome.failed_requests;
      pred[test.id()] = {};
      record["entities"] = Json::array();
      record["grammar"] = to_string(ReplyGrammar::kNone);
      record["diagnostics"] = {"transport: " + responses[i].error};
      transcript_record["reply"] = nullptr;
      transcript_record["error"] = responses[i].error;
    }
    record["demos"] = bundles[i].demo_ids;
    predictions << record.dump() << '\n';
    transcript << transcript_record.dump() << '\n';
  }
  outcome.report = score(gold, pred);

  std::vector<std::string> support_ids;
  for (const auto& ex : support) support_ids.push_back(ex.id());
  Json report{{"seed", seed},
              {"k", cfg.integer("k")},
              {"m", m},
              {"effective_m", outcome.effective_m},
              {"support", support_ids},
              {"failed_requests", outcome.failed_requests},
              {"report", to_json(outcome.report)}};
  write_text(seed_dir / "report.json", report.dump(2) + "\n");
  if (log != nullptr) {
    *log << "seed " << seed << ": F1 " << outcome.report.f1 << " (" << outcome.failed_requests
         << " failed requests)\n";
  }
  return outcome;
}

RunOutcome run_locked(const ExperimentConfig& cfg, std::ostream* log) {
  const fs::path out = cfg.out_dir();
  write_text(out / "effective_config.txt", cfg.render());
  const auto seeds = cfg.seeds();
  PreparedRun p = prepare_run(cfg);

  std::map<std::string, GoldEntry> gold;
  for (const auto& ex : p.test.examples) gold[ex.id()] = GoldEntry{ex.sentence, ex.entities};
  BackendConfig bc = cfg.backend_config();
  LMClient client(bc, std::move(gold));

  RunOutcome outcome;
  std::vector<EvalReport> reports;
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (auto seed : seeds) {
    auto s = run_seed(cfg, p, client, seed, out / ("seed_" + std::to_string(seed)), log);
    reports.push_back(s.report);
    rows.emplace_back("seed " + std::to_string(seed), s.report);
    outcome.seeds.push_back(std::move(s));
  }
  outcome.summary = aggregate(reports);

  Json summary = to_json(outcome.summary);
  summary["seeds"] = seeds;
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::string table = format_table(rows);
  table += "\n" + format_summary_table({{"mean over " + std::to_string(seeds.size()) + " seeds", outcome.summary}});
  write_text(out / "table.txt", table);
  return outcome;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  OutputLock lock(cfg.out_dir());
  return run_locked(cfg, log);
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                const std::vector<std::string>& values, std::ostream* log) {
  if (axis != "k" && axis != "m" && axis != "backend") {
    throw ConfigError("sweep axis must be one of k, m, backend (got '" + axis + "')");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::set<std::string> seen;
  for (const auto& v : values) {
    if (!seen.insert(v).second) throw ConfigError("duplicate sweep value '" + v + "'");
  }
  const fs::path out = cfg.out_dir();
  OutputLock lock(out);
  write_text(out / "effective_config.txt", cfg.render());

  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    SweepRow row{value, std::nullopt, {}};
    try {
      ExperimentConfig cell = cfg;
      // Cells share the top-level checkpoint.
      cell.set("checkpoint", cfg.checkpoint_path().string());
      std::string dir_name = axis + "_" + value;
      std::replace_if(dir_name.begin(), dir_name.end(), [](char c) { return c == '/' || c == '@' || c == ' '; }, '_');
      cell.set("out", (out / dir_name).string());
      if (axis == "backend") {
        const auto at = value.find('@');
        const std::string kind = value.substr(0, at);
        if (kind == "mock-scripted-empty") {
          cell.set("backend", "mock-scripted");
          cell.set("transcript", "");
        } else {
          cell.set("backend", kind);
          if (at != std::string::npos) {
            cell.set(kind == "http" ? "model" : "transcript", value.substr(at + 1));
          }
        }
      } else {
        cell.set(axis, value);
      }
      if (log != nullptr) *log << "sweep " << axis << " = " << value << "\n";
      fs::create_directories(cell.out_dir());
      row.summary = run_locked(cell, log).summary;
    } catch (const std::exception& e) {
      row.error = e.what();
      if (log != nullptr) *log << "sweep " << axis << " = " << value << " failed: " << e.what() << "\n";
    }
    rows.push_back(std::move(row));
  }

  Json j = Json::array();
  for (const auto& row : rows) {
    Json r{{"axis", axis}, {"value", row.value}};
    if (row.summary) {
      r["summary"] = to_json(*row.summary);
    } else {
      r["error"] = row.error;
    }
    j.push_back(std::move(r));
  }
  write_text(out / "sweep.json", j.dump(2) + "\n");
  write_text(out / "sweep.txt", format_sweep_table(axis, rows));
  return rows;
}

std::string format_sweep_table(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::vector<std::pair<std::string, RunSummary>> ok;
  std::string failures;
  for (const auto& row : rows) {
    if (row.summary) {
      ok.emplace_back(axis + "=" + row.value, *row.summary);
    } else {
      failures += axis + "=" + row.value + ": FAILED: " + row.error + "\n";
    }
  }
  std::string out = ok.empty() ? std::string() : format_summary_table(ok);
  return out + failures;
}

SpanSets load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path.string());
  SpanSets out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      auto& spans = out[j.at("id").get<std::string>()];
      for (auto& s : spans_from_json(j.at("entities"))) spans.push_back(std::move(s));
    } catch (const Json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ende
