#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "ende/lmclient.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "ende/error.hpp"
#include "ende/serialize.hpp"

namespace ende {

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::kMockOracle:
      return "mock-oracle";
    case BackendKind::kMockScripted:
      return "mock-scripted";
    case BackendKind::kHttp:
      return "http";
  }
  return "unknown";
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "mock-oracle") return BackendKind::kMockOracle;
  if (s == "mock-scripted") return BackendKind::kMockScripted;
  if (s == "http") return BackendKind::kHttp;
  throw ConfigError("unknown LM backend '" + std::string(s) + "'");
}

// ------------------------------------------------------------------ oracle

std::string render_json_reply(const Sentence& sentence, const std::vector<EntitySpan>& spans) {
  std::vector<EntitySpan> ordered = spans;
  std::sort(ordered.begin(), ordered.end());
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& s : ordered) {
    out.push_back({{"text", sentence.text(s.start, s.end)}, {"label", s.label}});
  }
  return out.dump();
}

std::string OracleBackend::generate(const LMRequest& request) {
  auto it = gold_.find(request.tag);
  if (it == gold_.end()) throw TransportError("oracle has no gold entry for '" + request.tag + "'");
  return render_json_reply(it->second.sentence, it->second.spans);
}

// ---------------------------------------------------------------- scripted

ScriptedBackend::ScriptedBackend(std::vector<std::string> replies) : replies_(replies.begin(), replies.end()) {}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open transcript " + path.string());
  std::vector<std::string> replies;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      replies.push_back(j.contains("reply") ? j.at("reply").get<std::string>() : j.at("text").get<std::string>());
    } catch (const Json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return std::make_unique<ScriptedBackend>(std::move(replies));
}

std::string ScriptedBackend::generate(const LMRequest& request) {
  std::lock_guard lock(mutex_);
  dispatched_.push_back(request.prompt);
  if (replies_.empty()) throw TransportError("transcript exhausted");
  std::string reply = std::move(replies_.front());
  replies_.pop_front();
  return reply;
}

std::vector<std::string> ScriptedBackend::dispatched() const {
  std::lock_guard lock(mutex_);
  return dispatched_;
}

// -------------------------------------------------------------------- http

HttpBackend::HttpBackend(const BackendConfig& config) : config_(config) {
  if (config_.endpoint.empty()) throw ConfigError("http backend needs an endpoint");
  if (!config_.auth_env.empty()) {
    const char* value = std::getenv(config_.auth_env.c_str());
    if (value == nullptr || *value == '\0') {
      throw ConfigError("environment variable " + config_.auth_env + " is not set");
    }
    token_ = value;
  }
}

std::string HttpBackend::generate(const LMRequest& request) {
  httplib::Client client(config_.endpoint);
  const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  Json body{{"model", config_.model_name()},
            {"prompt", request.prompt},
            {"max_tokens", request.params.max_tokens},
            {"temperature", request.params.temperature}};
  if (!request.params.stop.empty()) body["stop"] = request.params.stop;

  auto res = client.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) throw RetryableError("request failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500) {
    throw RetryableError("HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    const Json reply = Json::parse(res->body);
    return reply.at(Json::json_pointer(config_.response_pointer)).get<std::string>();
  } catch (const Json::exception& e) {
    throw TransportError(std::string("unexpected completion response: ") + e.what());
  }
}

// ------------------------------------------------------------------- cache

namespace {

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

Json key_material(const LMRequest& request, const std::string& model) {
  return Json{{"model", model},
              {"prompt", request.prompt},
              {"max_tokens", request.params.max_tokens},
              {"temperature", request.params.temperature},
              {"stop", request.params.stop}};
}

}  // namespace

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::string ResponseCache::key(const LMRequest& request, const std::string& model) {
  return sha256_hex(key_material(request, model).dump());
}

std::optional<std::string> ResponseCache::get(const std::string& key) {
  std::lock_guard lock(mutex_);
  if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  if (dir_.empty()) return std::nullopt;
  std::ifstream in(dir_ / (key + ".json"));
  if (!in) return std::nullopt;
  try {
    const Json j = Json::parse(in);
    auto text = j.at("text").get<std::string>();
    memory_[key] = text;
    return text;
  } catch (const Json::exception&) {
    return std::nullopt;  // unreadable entries are treated as misses
  }
}

void ResponseCache::put(const std::string& key, const LMRequest& request, const std::string& model,
                        const std::string& text) {
  std::lock_guard lock(mutex_);
  memory_[key] = text;
  if (dir_.empty()) return;
  Json j{{"request", key_material(request, model)}, {"text", text}};
  const auto final_path = dir_ / (key + ".json");
  const auto tmp = dir_ / (key + ".json.tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write cache entry " + tmp.string());
    out << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, final_path);
}

// ------------------------------------------------------------------ client

namespace {

std::unique_ptr<Backend> make_backend(const BackendConfig& config, std::map<std::string, GoldEntry> gold) {
  switch (config.kind) {
    case BackendKind::kMockOracle:
      return std::make_unique<OracleBackend>(std::move(gold));
    case BackendKind::kMockScripted:
      if (config.transcript.empty()) return std::make_unique<ScriptedBackend>(std::vector<std::string>{});
      return ScriptedBackend::from_file(config.transcript);
    case BackendKind::kHttp:
      return std::make_unique<HttpBackend>(config);
  }
  throw ConfigError("unknown backend");
}

std::mutex log_mutex;

}  // namespace

LMClient::LMClient(BackendConfig config, std::map<std::string, GoldEntry> gold)
    : LMClient(config, make_backend(config, std::move(gold))) {}

LMClient::LMClient(BackendConfig config, std::unique_ptr<Backend> backend)
    : config_(std::move(config)), backend_(std::move(backend)), cache_(config_.cache_dir) {
  if (config_.retry.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (config_.max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

LMResponse LMClient::dispatch(const LMRequest& request, const std::string& key) {
  const auto started = std::chrono::steady_clock::now();
  LMResponse response;
  response.backend = backend_->name();
  for (int attempt = 1;; ++attempt) {
    response.attempts = attempt;
    try {
      response.text = backend_->generate(request);
      break;
    } catch (const RetryableError& e) {
      if (log_) {
        std::lock_guard lock(log_mutex);
        log_("attempt " + std::to_string(attempt) + " failed: " + e.what());
      }
      if (attempt >= config_.retry.max_attempts) {
        throw TransportError(std::string(e.what()) + " (gave up after " + std::to_string(attempt) + " attempts)");
      }
      sleep_(std::chrono::milliseconds(static_cast<long long>(config_.retry.base_backoff_ms) << (attempt - 1)));
    }
  }
  response.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  cache_.put(key, request, config_.model_name(), response.text);
  if (log_) {
    std::lock_guard lock(log_mutex);
    log_("completed in " + std::to_string(response.attempts) + " attempt(s)");
  }
  return response;
}

LMResponse LMClient::complete(const LMRequest& request) {
  const std::string key = ResponseCache::key(request, config_.model_name());
  if (auto hit = cache_.get(key)) {
    LMResponse r;
    r.text = std::move(*hit);
    r.backend = backend_->name();
    r.cache_hit = true;
    return r;
  }
  return dispatch(request, key);
}

std::vector<BatchResult> LMClient::complete_batch(const std::vector<LMRequest>& requests) {
  std::vector<BatchResult> results(requests.size());
  std::vector<std::string> keys;
  keys.reserve(requests.size());
  std::map<std::string, std::size_t> first_of;
  std::vector<std::size_t> to_send;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    keys.push_back(ResponseCache::key(requests[i], config_.model_name()));
    if (auto hit = cache_.get(keys[i])) {
      LMResponse r;
      r.text = std::move(*hit);
      r.backend = backend_->name();
      r.cache_hit = true;
      results[i].response = std::move(r);
    } else if (first_of.emplace(keys[i], i).second) {
      to_send.push_back(i);
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t slot; (slot = next.fetch_add(1)) < to_send.size();) {
      const std::size_t i = to_send[slot];
      try {
        results[i].response = dispatch(requests[i], keys[i]);
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config_.max_parallel), to_send.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Later duplicates of a dispatched request are cache hits of its reply.
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (results[i].ok()) continue;
    const std::size_t first = first_of.at(keys[i]);
    if (first == i) continue;
    if (results[first].ok()) {
      LMResponse r;
      r.text = results[first].response->text;
      r.backend = backend_->name();
      r.cache_hit = true;
      results[i].response = std::move(r);
    } else {
      results[i].error = results[first].error;
    }
  }
  return results;
}

}  // namespace ende
