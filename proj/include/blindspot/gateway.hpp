// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "blindspot/io.hpp"

namespace blindspot {

enum class ChatRole { kSystem, kUser, kAssistant };

std::string_view to_string(ChatRole role);

struct ChatMessage {
  ChatRole role = ChatRole::kUser;
  std::string content;
};

/// token -> natural-log probability at the first generated position.
using TokenLogprobs = std::map<std::string, double>;

struct GenerationRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  bool want_logprobs = false;
  int top_k_alternatives = 0;  // [0, 20]; > 0 requires want_logprobs
  std::optional<std::int64_t> seed;

  /// Throws InvalidArgument when an invariant is broken.
  void validate() const;
};

struct GenerationResult {
  std::string text;
  std::optional<TokenLogprobs> first_position_alternatives;
  std::string finish_reason;
  std::string endpoint_id;
  std::int64_t latency_ms = 0;
  // Not part of the cached transcript.
  int retries = 0;
  bool from_cache = false;
};

Json result_to_json(const GenerationResult& r);
GenerationResult result_from_json(const Json& j);

/// One served model role (student, teacher, auditor, judge).
struct EndpointProfile {
  std::string id;
  std::string base_url;
  std::string model_name;
  std::string auth_env_var;  // empty: no bearer token
  int max_parallel = 4;
  int retry_budget = 3;
};

struct CacheKey {
  std::string digest;
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

/// Digest over the canonical serialization of the request plus model name.
/// Message content is hashed byte-exact.
CacheKey request_fingerprint(const GenerationRequest& request, const std::string& endpoint_model);

/// What a transport returns for one attempt. Transports signal failures by
/// throwing Error with kTransport, kRateLimited, kSchema or kLogprobsUnsupported.
struct BackendReply {
  std::string text;
  std::optional<TokenLogprobs> alternatives;
  std::string finish_reason = "stop";
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendReply complete(const EndpointProfile& endpoint,
                                const GenerationRequest& request) = 0;
};

/// Append-only JSONL transcript cache. Each key is written at most once.
class TranscriptCache {
 public:
  /// In-memory only.
  TranscriptCache() = default;
  /// Loads existing entries from `path` and appends new ones to it.
  explicit TranscriptCache(std::filesystem::path path);

  std::optional<GenerationResult> get(const CacheKey& key) const;
  /// Returns false (and leaves the stored value alone) when `key` exists.
  bool put(const CacheKey& key, const GenerationResult& result);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Json> entries_;
};

struct RetryPolicy {
  std::chrono::milliseconds base_delay{250};
  std::chrono::milliseconds max_delay{8000};
};

struct GatewayStats {
  std::int64_t network_calls = 0;  // backend attempts, failed ones included
  std::int64_t cache_hits = 0;
  std::int64_t retries = 0;
};

/// Uniform client for all model roles: caching, retry with exponential
/// backoff and a per-endpoint in-flight limit.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<TranscriptCache> cache,
          RetryPolicy policy = {});
  ~Gateway();

  GenerationResult generate(const EndpointProfile& endpoint, const GenerationRequest& request);

  /// Alternatives at the first generated position with max_tokens = 1 and
  /// temperature = 0. Returns at most `top_k` entries (highest first).
  TokenLogprobs first_token_alternatives(const EndpointProfile& endpoint,
                                         std::vector<ChatMessage> prompt, int top_k,
                                         std::optional<std::int64_t> seed = std::nullopt);

  GatewayStats stats() const;

  class Slots;

 private:
  Slots& slots_for(const EndpointProfile& endpoint);

  std::shared_ptr<Backend> backend_;
  std::shared_ptr<TranscriptCache> cache_;
  RetryPolicy policy_;
  std::mutex slots_mu_;
  std::map<std::string, std::unique_ptr<Slots>> slots_;
  std::atomic<std::int64_t> network_calls_{0};
  std::atomic<std::int64_t> cache_hits_{0};
  std::atomic<std::int64_t> retries_{0};
};

}  // namespace blindspot
