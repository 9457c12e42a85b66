// SPDX-License-Identifier: Apache-2.0
#include "blindspot/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

#include "blindspot/errors.hpp"

namespace blindspot {

Json chat_completion_body(const EndpointProfile& endpoint, const GenerationRequest& request) {
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  }
  Json body{{"model", endpoint.model_name},
            {"messages", messages},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
  if (request.want_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = request.top_k_alternatives;
  }
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

BackendReply parse_chat_completion(const Json& body, bool want_logprobs) {
  const auto schema = [](const std::string& what) {
    return Error(ErrorCode::kSchema, "chat completion response: " + what);
  };
  if (!body.is_object()) throw schema("not an object");
  auto choices = body.find("choices");
  if (choices == body.end() || !choices->is_array() || choices->empty()) {
    throw schema("missing choices");
  }
  const Json& choice = choices->front();
  auto message = choice.find("message");
  if (message == choice.end() || !message->is_object()) throw schema("missing message");

  BackendReply reply;
  if (auto c = message->find("content"); c != message->end() && c->is_string()) {
    reply.text = c->get<std::string>();
  } else if (c == message->end() || !c->is_null()) {
    throw schema("message.content is not a string");
  }
  if (auto fr = choice.find("finish_reason"); fr != choice.end() && fr->is_string()) {
    reply.finish_reason = fr->get<std::string>();
  }
  if (!want_logprobs) return reply;

  auto lp = choice.find("logprobs");
  if (lp == choice.end() || !lp->is_object()) {
    throw Error(ErrorCode::kLogprobsUnsupported, "LogprobsUnsupported: response has no logprobs");
  }
  auto content = lp->find("content");
  if (content == lp->end() || !content->is_array() || content->empty()) {
    throw Error(ErrorCode::kLogprobsUnsupported,
                "LogprobsUnsupported: logprobs.content is empty");
  }
  const Json& first = content->front();
  TokenLogprobs alts;
  if (auto top = first.find("top_logprobs"); top != first.end() && top->is_array()) {
    for (const auto& entry : *top) {
      if (!entry.contains("token") || !entry.contains("logprob")) throw schema("bad top_logprobs");
      const auto tok = entry.at("token").get<std::string>();
      const double v = entry.at("logprob").get<double>();
      // Duplicate token strings keep the larger value.
      auto [it, inserted] = alts.emplace(tok, v);
      if (!inserted && v > it->second) it->second = v;
    }
  }
  if (alts.empty() && first.contains("token") && first.contains("logprob")) {
    alts.emplace(first.at("token").get<std::string>(), first.at("logprob").get<double>());
  }
  reply.alternatives = std::move(alts);
  return reply;
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kConfig, "URL needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::pair<std::string, std::string> chat_completion_target(const std::string& base_url) {
  auto [origin, prefix] = split_url(base_url);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  const bool has_v1 = prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0;
  return {origin, prefix + (has_v1 ? "/chat/completions" : "/v1/chat/completions")};
}

BackendReply HttpBackend::complete(const EndpointProfile& endpoint,
                                   const GenerationRequest& request) {
  const auto [origin, path] = chat_completion_target(endpoint.base_url);
  httplib::Client client(origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  httplib::Headers headers;
  if (!endpoint.auth_env_var.empty()) {
    const char* token = std::getenv(endpoint.auth_env_var.c_str());
    if (token == nullptr || *token == '\0') {
      throw Error(ErrorCode::kConfig,
                  "environment variable " + endpoint.auth_env_var + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  const std::string body = chat_completion_body(endpoint, request).dump();
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) {
    throw Error(ErrorCode::kTransport,
                endpoint.id + ": " + httplib::to_string(res.error()));
  }
  if (res->status == 429) throw Error(ErrorCode::kRateLimited, endpoint.id + ": HTTP 429");
  if (res->status >= 500) {
    throw Error(ErrorCode::kTransport, endpoint.id + ": HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kSchema,
                endpoint.id + ": HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  Json parsed;
  try {
    parsed = Json::parse(res->body);
  } catch (const Json::parse_error&) {
    throw Error(ErrorCode::kSchema, endpoint.id + ": response body is not JSON");
  }
  return parse_chat_completion(parsed, request.want_logprobs);
}

}  // namespace blindspot
