// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>

#include "blindspot/gateway.hpp"

namespace blindspot {

/// Request body for POST /v1/chat/completions.
Json chat_completion_body(const EndpointProfile& endpoint, const GenerationRequest& request);

/// Parses a chat-completions response body. Throws kSchema on malformed
/// bodies and kLogprobsUnsupported when logprobs were wanted but are absent.
BackendReply parse_chat_completion(const Json& body, bool want_logprobs);

/// ("http://host:port", "/path"); path is "/" when the URL has none.
std::pair<std::string, std::string> split_url(const std::string& url);

/// Splits "http://host:port/prefix" into origin ("http://host:port") and the
/// full chat-completions path ("/prefix/v1/chat/completions", or
/// "/v1/chat/completions" appended once when the prefix already ends in /v1).
std::pair<std::string, std::string> chat_completion_target(const std::string& base_url);

/// OpenAI-compatible transport over cpp-httplib. Bearer token is read from the
/// endpoint's auth_env_var at call time.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(std::chrono::seconds timeout = std::chrono::seconds(120))
      : timeout_(timeout) {}

  BackendReply complete(const EndpointProfile& endpoint,
                        const GenerationRequest& request) override;

 private:
  std::chrono::seconds timeout_;
};

}  // namespace blindspot
