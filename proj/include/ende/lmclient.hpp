#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ende/corpus.hpp"

namespace ende {

struct DecodingParams {
  int max_tokens = 256;
  double temperature = 0.0;
  std::vector<std::string> stop;
};

struct LMRequest {
  std::string prompt;
  DecodingParams params;
  // Sentence id of the test sentence; only the oracle backend reads it.
  std::string tag;
};

struct LMResponse {
  std::string text;
  double latency_ms = 0.0;
  std::string backend;
  bool cache_hit = false;
  int attempts = 0;
};

enum class BackendKind { kMockOracle, kMockScripted, kHttp };

std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view s);

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 500;  // doubles after every failed attempt
};

struct BackendConfig {
  BackendKind kind = BackendKind::kMockOracle;
  std::string model;  // defaults to the backend kind name
  // http: base URL (scheme://host:port), request path, and a JSON pointer to
  // the completion text in the response body.
  std::string endpoint;
  std::string path = "/v1/completions";
  std::string response_pointer = "/choices/0/text";
  std::string auth_env;  // environment variable holding a bearer token
  int timeout_ms = 60000;
  RetryPolicy retry;
  int max_parallel = 4;
  std::filesystem::path cache_dir;   // empty: in-memory cache only
  std::filesystem::path transcript;  // mock-scripted replies, JSONL {"reply": str}
  DecodingParams decoding;

  std::string model_name() const { return model.empty() ? to_string(kind) : model; }
};

// Raised by backends for failures worth retrying (429, 5xx, timeouts).
class RetryableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  // Completion text. Throws RetryableError or TransportError.
  virtual std::string generate(const LMRequest& request) = 0;
};

struct GoldEntry {
  Sentence sentence;
  std::vector<EntitySpan> spans;
};

// Test-only backend answering with the gold entities of the tagged sentence
// in the JSON reply grammar.
class OracleBackend : public Backend {
 public:
  explicit OracleBackend(std::map<std::string, GoldEntry> gold) : gold_(std::move(gold)) {}
  std::string name() const override { return "mock-oracle"; }
  std::string generate(const LMRequest& request) override;

 private:
  std::map<std::string, GoldEntry> gold_;
};

// `[{"text": ..., "label": ...}]` for the spans, in span order.
std::string render_json_reply(const Sentence& sentence, const std::vector<EntitySpan>& spans);

// Replays replies in order; thread-safe.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies);
  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  std::string name() const override { return "mock-scripted"; }
  std::string generate(const LMRequest& request) override;

  // Prompts in dispatch order.
  std::vector<std::string> dispatched() const;

 private:
  mutable std::mutex mutex_;
  std::deque<std::string> replies_;
  std::vector<std::string> dispatched_;
};

// POSTs {"model", "prompt", "max_tokens", "temperature", "stop"} as JSON.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(const BackendConfig& config);
  std::string name() const override { return "http"; }
  std::string generate(const LMRequest& request) override;

 private:
  BackendConfig config_;
  std::string token_;
};

// Prompt-level response cache keyed by SHA-256 of the request parameters and
// model name. Mirrors to one JSON file per key when a directory is given.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir = {});

  static std::string key(const LMRequest& request, const std::string& model);
  std::optional<std::string> get(const std::string& key);
  void put(const std::string& key, const LMRequest& request, const std::string& model, const std::string& text);

 private:
  std::mutex mutex_;
  std::filesystem::path dir_;
  std::map<std::string, std::string> memory_;
};

struct BatchResult {
  std::optional<LMResponse> response;
  std::string error;

  bool ok() const { return response.has_value(); }
};

class LMClient {
 public:
  // Builds the configured backend. Missing auth variables and unreadable
  // transcripts fail here, before any request is sent.
  LMClient(BackendConfig config, std::map<std::string, GoldEntry> gold = {});
  LMClient(BackendConfig config, std::unique_ptr<Backend> backend);

  // Cache first, then the backend with exponential-backoff retries.
  LMResponse complete(const LMRequest& request);
  // Results in request order; at most max_parallel requests in flight.
  // Duplicate requests are dispatched once and served from the cache after.
  std::vector<BatchResult> complete_batch(const std::vector<LMRequest>& requests);

  const BackendConfig& config() const { return config_; }
  Backend& backend() { return *backend_; }

  // Hooks for tests and logging.
  void set_sleep(std::function<void(std::chrono::milliseconds)> sleep) { sleep_ = std::move(sleep); }
  void set_log(std::function<void(const std::string&)> log) { log_ = std::move(log); }

 private:
  LMResponse dispatch(const LMRequest& request, const std::string& key);

  BackendConfig config_;
  std::unique_ptr<Backend> backend_;
  ResponseCache cache_;
  std::function<void(std::chrono::milliseconds)> sleep_;
  std::function<void(const std::string&)> log_;
};

}  // namespace ende
