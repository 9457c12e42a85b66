// SPDX-License-Identifier: Apache-2.0
#include "blindspot/gateway.hpp"

#include <algorithm>
#include <thread>

#include "blindspot/errors.hpp"
#include "blindspot/hashing.hpp"

namespace blindspot {

std::string_view to_string(ChatRole role) {
  switch (role) {
    case ChatRole::kSystem: return "system";
    case ChatRole::kUser: return "user";
    case ChatRole::kAssistant: return "assistant";
  }
  return "user";
}

void GenerationRequest::validate() const {
  if (messages.empty()) throw Error(ErrorCode::kInvalidArgument, "request has no messages");
  for (const auto& m : messages) {
    if (m.role != ChatRole::kAssistant && m.content.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "empty system/user message");
    }
  }
  if (!(temperature >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature < 0");
  if (max_tokens <= 0) throw Error(ErrorCode::kInvalidArgument, "max_tokens must be positive");
  if (top_k_alternatives < 0 || top_k_alternatives > 20) {
    throw Error(ErrorCode::kInvalidArgument, "top_k_alternatives outside [0, 20]");
  }
  if (top_k_alternatives > 0 && !want_logprobs) {
    throw Error(ErrorCode::kInvalidArgument, "top_k_alternatives requires want_logprobs");
  }
}

Json result_to_json(const GenerationResult& r) {
  Json j{{"text", r.text},
         {"finish_reason", r.finish_reason},
         {"endpoint_id", r.endpoint_id},
         {"latency_ms", r.latency_ms}};
  j["alternatives"] = r.first_position_alternatives ? Json(*r.first_position_alternatives)
                                                    : Json(nullptr);
  return j;
}

GenerationResult result_from_json(const Json& j) {
  GenerationResult r;
  r.text = j.at("text").get<std::string>();
  r.finish_reason = j.value("finish_reason", "");
  r.endpoint_id = j.value("endpoint_id", "");
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  if (auto it = j.find("alternatives"); it != j.end() && !it->is_null()) {
    r.first_position_alternatives = it->get<TokenLogprobs>();
  }
  return r;
}

CacheKey request_fingerprint(const GenerationRequest& request, const std::string& endpoint_model) {
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    messages.push_back(Json{{"role", std::string(to_string(m.role))}, {"content", m.content}});
  }
  // Json objects are key-sorted, so dump() is canonical.
  const Json canonical{
      {"model", endpoint_model},
      {"messages", messages},
      {"temperature", request.temperature},
      {"max_tokens", request.max_tokens},
      {"want_logprobs", request.want_logprobs},
      {"top_k_alternatives", request.top_k_alternatives},
      {"seed", request.seed ? Json(*request.seed) : Json(nullptr)},
  };
  return CacheKey{sha256_hex(canonical.dump())};
}

// ---------------------------------------------------------------------------

TranscriptCache::TranscriptCache(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    for (auto& row : read_jsonl(path_)) {
      const auto key = row.at("key").get<std::string>();
      entries_.emplace(key, std::move(row.at("result")));
    }
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
}

std::optional<GenerationResult> TranscriptCache::get(const CacheKey& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key.digest);
  if (it == entries_.end()) return std::nullopt;
  return result_from_json(it->second);
}

bool TranscriptCache::put(const CacheKey& key, const GenerationResult& result) {
  std::unique_lock lock(mu_);
  Json j = result_to_json(result);
  auto [it, inserted] = entries_.emplace(key.digest, j);
  if (!inserted) return false;
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::kIo, "cannot append to " + path_.string());
    out << Json{{"key", key.digest}, {"result", j}}.dump() << '\n';
  }
  return true;
}

std::size_t TranscriptCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------

class Gateway::Slots {
 public:
  explicit Slots(int n) : free_(std::max(1, n)) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int free_;
};

namespace {

class SlotGuard {
 public:
  explicit SlotGuard(Gateway::Slots& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  Gateway::Slots& s_;
};

}  // namespace

Gateway::Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<TranscriptCache> cache,
                 RetryPolicy policy)
    : backend_(std::move(backend)), cache_(std::move(cache)), policy_(policy) {
  if (!backend_) throw Error(ErrorCode::kInvalidArgument, "gateway needs a backend");
  if (!cache_) cache_ = std::make_shared<TranscriptCache>();
}

Gateway::~Gateway() = default;

Gateway::Slots& Gateway::slots_for(const EndpointProfile& endpoint) {
  std::lock_guard lock(slots_mu_);
  auto& s = slots_[endpoint.id];
  if (!s) s = std::make_unique<Slots>(endpoint.max_parallel);
  return *s;
}

GenerationResult Gateway::generate(const EndpointProfile& endpoint,
                                   const GenerationRequest& request) {
  request.validate();
  const CacheKey key = request_fingerprint(request, endpoint.model_name);
  if (auto hit = cache_->get(key)) {
    ++cache_hits_;
    hit->from_cache = true;
    return *hit;
  }

  Slots& slots = slots_for(endpoint);
  int attempt = 0;
  for (;;) {
    const auto start = std::chrono::steady_clock::now();
    BackendReply reply;
    try {
      SlotGuard guard(slots);
      ++network_calls_;
      reply = backend_->complete(endpoint, request);
    } catch (const Error& e) {
      const bool retryable =
          e.code() == ErrorCode::kTransport || e.code() == ErrorCode::kRateLimited;
      if (!retryable || attempt >= endpoint.retry_budget) throw;
      auto delay = policy_.base_delay * (1LL << std::min(attempt, 20));
      if (delay > policy_.max_delay) delay = policy_.max_delay;
      ++attempt;
      ++retries_;
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      continue;
    }

    GenerationResult result;
    result.text = std::move(reply.text);
    result.finish_reason = std::move(reply.finish_reason);
    result.endpoint_id = endpoint.id;
    result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    if (request.want_logprobs) {
      if (!reply.alternatives) {
        throw Error(ErrorCode::kLogprobsUnsupported,
                    "LogprobsUnsupported: endpoint " + endpoint.id + " returned no logprobs");
      }
      for (const auto& [tok, lp] : *reply.alternatives) {
        if (!(lp <= 0.0)) {
          throw Error(ErrorCode::kSchema, "logprob > 0 for token \"" + tok + "\"");
        }
      }
      result.first_position_alternatives = std::move(reply.alternatives);
    }
    cache_->put(key, result);
    result.retries = attempt;
    return result;
  }
}

TokenLogprobs Gateway::first_token_alternatives(const EndpointProfile& endpoint,
                                                std::vector<ChatMessage> prompt, int top_k,
                                                std::optional<std::int64_t> seed) {
  if (top_k < 2) throw Error(ErrorCode::kInvalidArgument, "top_k must be >= 2");
  GenerationRequest req;
  req.messages = std::move(prompt);
  req.temperature = 0.0;
  req.max_tokens = 1;
  req.want_logprobs = true;
  req.top_k_alternatives = std::min(top_k, 20);
  req.seed = seed;
  GenerationResult res = generate(endpoint, req);
  if (!res.first_position_alternatives || res.first_position_alternatives->empty()) {
    throw Error(ErrorCode::kLogprobsUnsupported,
                "LogprobsUnsupported: endpoint " + endpoint.id + " returned no alternatives");
  }
  auto& alts = *res.first_position_alternatives;
  if (static_cast<int>(alts.size()) <= top_k) return alts;

  std::vector<std::pair<std::string, double>> ranked(alts.begin(), alts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(static_cast<std::size_t>(top_k));
  return TokenLogprobs(ranked.begin(), ranked.end());
}

GatewayStats Gateway::stats() const {
  return GatewayStats{network_calls_.load(), cache_hits_.load(), retries_.load()};
}

}  // namespace blindspot
