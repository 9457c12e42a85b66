// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <httplib.h>

#include <thread>

#include "blindspot/errors.hpp"
#include "blindspot/io.hpp"
#include "blindspot/trainer_hook.hpp"
#include "scenario.hpp"

namespace blindspot {
namespace {

TrainerRequest request(bool with_sft) {
  TrainerRequest r;
  if (with_sft) r.sft_path = "/runs/round-0/sft.jsonl";
  r.dpo_path = "/runs/round-0/dpo.jsonl";
  r.policy_checkpoint = "base";
  r.reference_checkpoint = "base";
  r.hparams = Json{{"beta", 0.1}};
  r.iteration = 0;
  return r;
}

TEST(TrainerRequest, Json) {
  const Json j = to_json(request(true));
  EXPECT_EQ(j.at("sft_path"), "/runs/round-0/sft.jsonl");
  EXPECT_EQ(j.at("dpo_path"), "/runs/round-0/dpo.jsonl");
  EXPECT_EQ(j.at("policy_checkpoint"), "base");
  EXPECT_EQ(j.at("reference_checkpoint"), "base");
  EXPECT_EQ(j.at("hparams").at("beta"), 0.1);
  EXPECT_EQ(j.at("iteration"), 0);
  EXPECT_TRUE(to_json(request(false)).at("sft_path").is_null());
}

TEST(ParseTrainerReply, LastValidLineWins) {
  EXPECT_EQ(parse_trainer_reply("{\"new_checkpoint\": \"a\"}"), "a");
  EXPECT_EQ(parse_trainer_reply("epoch 1 loss 0.6\n{\"new_checkpoint\":\"a\"}\n"
                                "{\"new_checkpoint\":\"b\",\"loss\":0.4}\nbye\n"),
            "b");
  for (const char* bad : {"", "done", "{\"new_checkpoint\": \"\"}", "{\"new_checkpoint\": 3}",
                          "[\"new_checkpoint\"]"}) {
    try {
      parse_trainer_reply(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kTrainer);
    }
  }
}

TEST(CommandTrainerHook, RunsScriptWithRequestFile) {
  testing::TempDir dir("trainer");
  write_text_atomic(dir / "train.sh",
                    "#!/bin/sh\ncp \"$1\" \"$(dirname \"$1\")/seen.json\"\n"
                    "echo 'training...'\necho '{\"new_checkpoint\": \"ckpt-1\"}'\n");
  CommandTrainerHook hook("sh " + (dir / "train.sh").string() + " {request_file}", dir.path());
  EXPECT_EQ(hook.train(request(true)), "ckpt-1");
  EXPECT_TRUE(std::filesystem::exists(dir / "train_request.round-0.json"));
  const Json seen = Json::parse(read_text_file(dir / "seen.json"));
  EXPECT_EQ(seen, to_json(request(true)));
}

TEST(CommandTrainerHook, AppendsPathWithoutPlaceholder) {
  testing::TempDir dir("trainer");
  CommandTrainerHook hook("python3 train.py --fast", dir.path());
  EXPECT_EQ(hook.command_for("/tmp/it's.json"), "python3 train.py --fast '/tmp/it'\\''s.json'");
  CommandTrainerHook templ("run {request_file} now", dir.path());
  EXPECT_EQ(templ.command_for("/tmp/r.json"), "run '/tmp/r.json' now");
}

TEST(CommandTrainerHook, FailuresAreTrainerErrors) {
  testing::TempDir dir("trainer");
  write_text_atomic(dir / "fail.sh", "echo '{\"new_checkpoint\": \"x\"}'\nexit 3\n");
  CommandTrainerHook failing("sh " + (dir / "fail.sh").string(), dir.path());
  try {
    failing.train(request(false));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTrainer);
  }
  CommandTrainerHook silent("true", dir.path());
  EXPECT_THROW(silent.train(request(false)), Error);
}

TEST(HttpTrainerHook, PostsRequestAndReadsReply) {
  httplib::Server server;
  Json received;
  server.Post("/train", [&](const httplib::Request& req, httplib::Response& res) {
    received = Json::parse(req.body);
    res.set_content(R"({"new_checkpoint": "ckpt-http"})", "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  HttpTrainerHook hook(base + "/train", std::chrono::seconds(5));
  EXPECT_EQ(hook.train(request(true)), "ckpt-http");
  EXPECT_EQ(received, to_json(request(true)));

  HttpTrainerHook broken(base + "/broken");
  EXPECT_THROW(broken.train(request(true)), Error);
  server.stop();
  t.join();

  HttpTrainerHook refused(base + "/train");
  EXPECT_THROW(refused.train(request(true)), Error);
}

TEST(MakeTrainerHook, Selection) {
  testing::TempDir dir("trainer");
  EXPECT_EQ(make_trainer_hook({}, dir.path()), nullptr);
  TrainerSettings cmd;
  cmd.command = "true";
  EXPECT_NE(dynamic_cast<CommandTrainerHook*>(make_trainer_hook(cmd, dir.path()).get()), nullptr);
  TrainerSettings http;
  http.url = "http://localhost:1/train";
  EXPECT_NE(dynamic_cast<HttpTrainerHook*>(make_trainer_hook(http, dir.path()).get()), nullptr);
}

}  // namespace
}  // namespace blindspot
