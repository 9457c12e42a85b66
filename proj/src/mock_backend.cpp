// SPDX-License-Identifier: Apache-2.0
#include "blindspot/mock_backend.hpp"

#include "blindspot/errors.hpp"

namespace blindspot {

MockBackend::MockBackend(std::vector<Rule> rules) : rules_(std::move(rules)) {}

MockBackend::Rule MockBackend::rule_from_json(const Json& j) {
  Rule r;
  r.endpoint = j.value("endpoint", "*");
  r.model = j.value("model", "");
  if (auto it = j.find("match"); it != j.end()) {
    if (it->is_string()) {
      r.match.push_back(it->get<std::string>());
    } else {
      r.match = it->get<std::vector<std::string>>();
    }
  }
  if (auto it = j.find("responses"); it != j.end()) {
    r.responses = it->get<std::vector<Json>>();
  } else if (auto single = j.find("response"); single != j.end()) {
    r.responses.push_back(*single);
  }
  if (r.responses.empty()) throw Error(ErrorCode::kConfig, "mock rule without responses");
  return r;
}

std::shared_ptr<MockBackend> MockBackend::from_file(const std::filesystem::path& path) {
  std::vector<Rule> rules;
  for (const auto& j : read_jsonl(path)) rules.push_back(rule_from_json(j));
  return std::make_shared<MockBackend>(std::move(rules));
}

void MockBackend::add_rule(Rule rule) {
  std::lock_guard lock(mu_);
  rules_.push_back(std::move(rule));
}

BackendReply MockBackend::complete(const EndpointProfile& endpoint,
                                   const GenerationRequest& request) {
  std::string joined;
  for (const auto& m : request.messages) {
    joined += m.content;
    joined += '\n';
  }

  std::lock_guard lock(mu_);
  ++calls_[endpoint.id];
  for (auto& rule : rules_) {
    if (rule.endpoint != "*" && rule.endpoint != endpoint.id) continue;
    if (!rule.model.empty() && rule.model != endpoint.model_name) continue;
    bool all = true;
    for (const auto& needle : rule.match) {
      if (joined.find(needle) == std::string::npos) {
        all = false;
        break;
      }
    }
    if (!all) continue;

    const Json& resp = rule.responses[std::min(rule.cursor, rule.responses.size() - 1)];
    ++rule.cursor;
    if (auto err = resp.find("error"); err != resp.end()) {
      const auto kind = err->get<std::string>();
      if (kind == "rate_limit") throw Error(ErrorCode::kRateLimited, "mock: 429 rate limited");
      if (kind == "schema") throw Error(ErrorCode::kSchema, "mock: malformed response body");
      throw Error(ErrorCode::kTransport, "mock: connection reset");
    }
    BackendReply reply;
    reply.text = resp.value("text", "");
    reply.finish_reason = resp.value("finish_reason", "stop");
    if (auto alts = resp.find("alternatives"); alts != resp.end() && request.want_logprobs) {
      reply.alternatives = alts->get<TokenLogprobs>();
    }
    return reply;
  }
  // A gap in the script is not a network fault, so it must not be retried.
  throw Error(ErrorCode::kSchema, "mock: no scripted response for endpoint " + endpoint.id +
                                      " (model " + endpoint.model_name + ")");
}

std::int64_t MockBackend::calls(const std::string& endpoint_id) const {
  std::lock_guard lock(mu_);
  auto it = calls_.find(endpoint_id);
  return it == calls_.end() ? 0 : it->second;
}

std::int64_t MockBackend::total_calls() const {
  std::lock_guard lock(mu_);
  std::int64_t n = 0;
  for (const auto& [_, c] : calls_) n += c;
  return n;
}

}  // namespace blindspot
