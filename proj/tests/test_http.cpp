// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "blindspot/errors.hpp"
#include "blindspot/http_backend.hpp"

namespace blindspot {
namespace {

class FakeServer {
 public:
  FakeServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      last_body_ = Json::parse(req.body);
      last_auth_ = req.get_header_value("Authorization");
      res.status = status_;
      res.set_content(reply_.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  void respond(int status, Json body) {
    std::lock_guard lock(mu_);
    status_ = status;
    reply_ = std::move(body);
  }
  Json last_body() {
    std::lock_guard lock(mu_);
    return last_body_;
  }
  std::string last_auth() {
    std::lock_guard lock(mu_);
    return last_auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  int status_ = 200;
  Json reply_;
  Json last_body_;
  std::string last_auth_;
};

Json completion(const std::string& text, Json top_logprobs = nullptr) {
  Json choice{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}},
              {"finish_reason", "stop"}};
  if (!top_logprobs.is_null()) {
    choice["logprobs"] = {{"content", {{{"token", "correct"}, {"logprob", -0.1},
                                        {"top_logprobs", top_logprobs}}}}};
  }
  return Json{{"id", "x"}, {"choices", {choice}}};
}

GenerationRequest simple_request() {
  GenerationRequest r;
  r.messages = {{ChatRole::kSystem, "s"}, {ChatRole::kUser, "u"}};
  r.temperature = 0.7;
  r.max_tokens = 64;
  r.seed = 9;
  return r;
}

TEST(ChatCompletionTarget, PathVariants) {
  EXPECT_EQ(chat_completion_target("http://h:1/v1"),
            std::make_pair(std::string("http://h:1"), std::string("/v1/chat/completions")));
  EXPECT_EQ(chat_completion_target("http://h:1/v1/").second, "/v1/chat/completions");
  EXPECT_EQ(chat_completion_target("http://h:1").second, "/v1/chat/completions");
  EXPECT_EQ(chat_completion_target("https://h/proxy").second, "/proxy/v1/chat/completions");
  EXPECT_THROW(chat_completion_target("h:1/v1"), Error);
  EXPECT_EQ(split_url("http://h:2/train").second, "/train");
  EXPECT_EQ(split_url("http://h:2").second, "/");
}

TEST(ChatCompletionBody, Shape) {
  EndpointProfile ep{"teacher", "http://x", "big-model", "", 1, 0};
  auto req = simple_request();
  Json body = chat_completion_body(ep, req);
  EXPECT_EQ(body["model"], "big-model");
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], "u");
  EXPECT_EQ(body["max_tokens"], 64);
  EXPECT_EQ(body["seed"], 9);
  EXPECT_FALSE(body.contains("logprobs"));
  req.want_logprobs = true;
  req.top_k_alternatives = 20;
  body = chat_completion_body(ep, req);
  EXPECT_EQ(body["logprobs"], true);
  EXPECT_EQ(body["top_logprobs"], 20);
}

TEST(ParseChatCompletion, Errors) {
  EXPECT_THROW(parse_chat_completion(Json::object(), false), Error);
  try {
    parse_chat_completion(completion("hi"), true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLogprobsUnsupported);
  }
}

TEST(HttpBackend, RoundTripWithLogprobsAndAuth) {
  FakeServer server;
  ::setenv("BLINDSPOT_TEST_TOKEN", "sekret", 1);
  server.respond(200, completion("correct", Json::array({{{"token", "correct"}, {"logprob", -0.1}},
                                                         {{"token", " incorrect"}, {"logprob", -2.4}}})));
  EndpointProfile ep{"student", server.base_url(), "ckpt-0", "BLINDSPOT_TEST_TOKEN", 1, 0};
  auto req = simple_request();
  req.want_logprobs = true;
  req.top_k_alternatives = 5;
  HttpBackend backend(std::chrono::seconds(5));
  const BackendReply reply = backend.complete(ep, req);
  EXPECT_EQ(reply.text, "correct");
  ASSERT_TRUE(reply.alternatives);
  EXPECT_DOUBLE_EQ(reply.alternatives->at(" incorrect"), -2.4);
  EXPECT_EQ(server.last_auth(), "Bearer sekret");
  EXPECT_EQ(server.last_body()["model"], "ckpt-0");
  EXPECT_EQ(server.last_body()["top_logprobs"], 5);
}

TEST(HttpBackend, StatusMapping) {
  FakeServer server;
  EndpointProfile ep{"teacher", server.base_url(), "m", "", 1, 0};
  HttpBackend backend(std::chrono::seconds(5));
  const auto code_for = [&](int status) {
    server.respond(status, Json{{"error", "x"}});
    try {
      backend.complete(ep, simple_request());
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  EXPECT_EQ(code_for(429), ErrorCode::kRateLimited);
  EXPECT_EQ(code_for(503), ErrorCode::kTransport);
  EXPECT_EQ(code_for(400), ErrorCode::kSchema);
}

TEST(HttpBackend, MissingTokenNamesVariable) {
  ::unsetenv("BLINDSPOT_ABSENT_TOKEN");
  EndpointProfile ep{"judge", "http://127.0.0.1:9", "m", "BLINDSPOT_ABSENT_TOKEN", 1, 0};
  HttpBackend backend(std::chrono::seconds(1));
  try {
    backend.complete(ep, simple_request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("BLINDSPOT_ABSENT_TOKEN"), std::string::npos);
  }
}

TEST(HttpBackend, ConnectionRefusedIsTransport) {
  httplib::Server probe;
  const int port = probe.bind_to_any_port("127.0.0.1");
  probe.stop();
  EndpointProfile ep{"judge", "http://127.0.0.1:" + std::to_string(port), "m", "", 1, 0};
  HttpBackend backend(std::chrono::seconds(1));
  try {
    backend.complete(ep, simple_request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTransport);
  }
}

}  // namespace
}  // namespace blindspot
