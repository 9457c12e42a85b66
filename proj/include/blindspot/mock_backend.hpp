// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "blindspot/gateway.hpp"

namespace blindspot {

/// Scripted transport for tests and offline replay.
///
/// A script is JSONL; each line is one rule:
///
///   {"endpoint": "teacher",          // endpoint id; "*" or absent = any
///    "model": "ckpt-1",              // optional exact model_name
///    "match": ["substr", ...],       // all must occur in the joined messages
///    "responses": [ {...}, ... ]}    // consumed in order, last one sticks
///
/// A response is {"text": "..."} optionally with "alternatives" {token: logprob}
/// and "finish_reason", or {"error": "rate_limit" | "transport" | "schema"}.
/// Rules are tried in file order; the first match wins.
class MockBackend : public Backend {
 public:
  struct Rule {
    std::string endpoint = "*";
    std::string model;
    std::vector<std::string> match;
    std::vector<Json> responses;
    std::size_t cursor = 0;
  };

  MockBackend() = default;
  explicit MockBackend(std::vector<Rule> rules);
  static std::shared_ptr<MockBackend> from_file(const std::filesystem::path& path);
  static Rule rule_from_json(const Json& j);

  void add_rule(Rule rule);

  BackendReply complete(const EndpointProfile& endpoint,
                        const GenerationRequest& request) override;

  /// Attempts seen per endpoint id, failed ones included.
  std::int64_t calls(const std::string& endpoint_id) const;
  std::int64_t total_calls() const;

 private:
  mutable std::mutex mu_;
  std::vector<Rule> rules_;
  std::map<std::string, std::int64_t> calls_;
};

}  // namespace blindspot
