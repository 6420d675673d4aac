#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ende/eval.hpp"
#include "ende/lmclient.hpp"
#include "ende/prompt.hpp"
#include "ende/retriever.hpp"

namespace ende {

// Key-value experiment configuration (`key = value`, `#` comments). Every key
// has a default; unknown keys are rejected. Relative paths in a config file
// resolve against the file's directory.
class ExperimentConfig {
 public:
  ExperimentConfig();
  static ExperimentConfig load(const std::filesystem::path& path);
  static ExperimentConfig parse(const std::string& text, const std::filesystem::path& base_dir = {});

  // `base_dir` anchors relative values of path-typed keys.
  void set(const std::string& key, const std::string& value, const std::filesystem::path& base_dir = {});
  // Applies "key=value".
  void set_assignment(const std::string& assignment);
  const std::string& get(const std::string& key) const;

  std::filesystem::path path(const std::string& key) const;
  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<std::uint64_t> seeds() const;

  TrainConfig train_config() const;
  ScoringWeights weights() const;
  PromptTemplate prompt_template() const;
  BackendConfig backend_config() const;
  std::filesystem::path out_dir() const;
  // `checkpoint` when set, else <out>/checkpoint.json.
  std::filesystem::path checkpoint_path() const;

  // Sorted `key = value` lines.
  std::string render() const;

 private:
  std::map<std::string, std::string> values_;
};

// Held for the lifetime of a command that writes into an output directory.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path file_;
};

// Trains the retriever on `train`; writes the checkpoint and loss_trace.jsonl.
std::vector<LossReport> run_training(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct SeedOutcome {
  std::uint64_t seed = 0;
  EvalReport report;
  std::size_t support_size = 0;
  int effective_m = 0;
  std::size_t failed_requests = 0;
};

struct RunOutcome {
  std::vector<SeedOutcome> seeds;
  RunSummary summary;
};

// For each seed: sample the support set, index it, retrieve demonstrations
// for every test sentence, prompt the LM, parse and score. Writes
// predictions, transcripts, and reports under the output directory.
RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct SweepRow {
  std::string value;
  std::optional<RunSummary> summary;
  std::string error;
};

// Axis is one of k, m, backend. Backend values are a backend kind, optionally
// `kind@arg` (model name for http, transcript path for mock-scripted), or
// `mock-scripted-empty`. Failing cells are recorded and the sweep continues.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                                const std::vector<std::string>& values, std::ostream* log = nullptr);
std::string format_sweep_table(const std::string& axis, const std::vector<SweepRow>& rows);

// Predictions JSONL: {"id": str, "entities": [{"start", "end", "label"}], ...}.
SpanSets load_predictions(const std::filesystem::path& path);

}  // namespace ende
