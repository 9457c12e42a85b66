// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "blindspot/errors.hpp"
#include "blindspot/hashing.hpp"
#include "blindspot/pipeline.hpp"
#include "blindspot/synthesis.hpp"
#include "blindspot/verification.hpp"
#include "scenario.hpp"

namespace blindspot {
namespace {

namespace fs = std::filesystem;

constexpr RetryPolicy kNoDelay{std::chrono::milliseconds(0), std::chrono::milliseconds(0)};

/// A scenario on disk plus a fresh mock backend and cache-backed gateway.
struct MockRun {
  MockRun(const testing::Scenario& s, const fs::path& dir, int k, int iterations,
      const std::string& extra = "")
      : config(load_config(testing::write_scenario(s, dir, k, iterations, extra))),
        backend(testing::make_backend(s)),
        gateway(backend, std::make_shared<TranscriptCache>(config.effective_cache_path()), kNoDelay) {}

  PipelineConfig config;
  std::shared_ptr<MockBackend> backend;
  Gateway gateway;
};

TEST(Stage, Names) {
  for (Stage s : kAllStages) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_FALSE(parse_stage("teach"));
}

TEST(State, RoundTripAndCursor) {
  PipelineConfig c;
  c.base_checkpoint = "b0";
  IterationState s = initial_state(c);
  EXPECT_EQ(s.policy_checkpoint, "b0");
  EXPECT_EQ(s.reference_checkpoint, "b0");
  EXPECT_EQ(s.next_stage(), Stage::kExplore);
  s.cursor = Stage::kVerify;
  EXPECT_TRUE(s.completed(Stage::kGenerate));
  EXPECT_FALSE(s.completed(Stage::kFilter));
  EXPECT_EQ(s.next_stage(), Stage::kFilter);
  s.manifests["pairs"] = Manifest{"pairs.jsonl", 3, "abc", 0, {"c", "b", ""}, "0.1.0", {}};

  testing::TempDir dir("state");
  save_state(dir / "state.json", s);
  const auto back = load_state(dir / "state.json");
  EXPECT_EQ(back.cursor, Stage::kVerify);
  EXPECT_EQ(back.manifests.at("pairs").content_hash, "abc");
  EXPECT_EQ(state_to_json(back), state_to_json(s));

  write_text_atomic(dir / "bad.json", "{");
  EXPECT_THROW(load_state(dir / "bad.json"), Error);
  write_text_atomic(dir / "bad.json", R"({"t": 0, "stage_cursor": "dance"})");
  try {
    load_state(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kState);
  }
}

TEST(State, RotationRequiresTraining) {
  IterationState s = initial_state(PipelineConfig{});
  for (std::optional<Stage> c : {std::optional<Stage>{}, std::optional<Stage>{Stage::kEmit}}) {
    s.cursor = c;
    try {
      rotate_reference(s);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kStageOrder);
      EXPECT_NE(std::string(e.what()).find("PrematureRotation"), std::string::npos);
    }
  }
  s.cursor = Stage::kEmit;
  s = record_trained_checkpoint(s, "ckpt-a");
  EXPECT_EQ(s.train_mode, "external");
  const auto r = rotate_reference(s);
  EXPECT_EQ(r.t, 1);
  EXPECT_EQ(r.reference_checkpoint, "ckpt-a");
  EXPECT_EQ(r.start_policy, "ckpt-a");
  EXPECT_FALSE(r.cursor);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].reference, "base");
  EXPECT_EQ(r.history[0].policy, "ckpt-a");
  EXPECT_THROW(record_trained_checkpoint(r, "x"), Error);
}

TEST(Pipeline, StudentModelBindsPolicy) {
  testing::TempDir dir("pipe");
  MockRun run(testing::make_scenario({.n = 2}), dir.path(), 1, 1, "[student]\nmodel = srv/{policy}\n");
  Pipeline p(run.config, run.gateway, nullptr);
  IterationState s = p.load_or_init();
  s.start_policy = "ckpt-9";
  EXPECT_EQ(p.student_for(s).model_name, "srv/ckpt-9");
}

TEST(Pipeline, StageOrderIsEnforced) {
  testing::TempDir dir("pipe");
  MockRun run(testing::make_scenario({.n = 2}), dir.path(), 1, 1);
  Pipeline p(run.config, run.gateway, nullptr);
  IterationState s = p.load_or_init();
  try {
    p.run_stage(s, Stage::kVerify);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kStageOrder);
    EXPECT_NE(std::string(e.what()).find("StageOrderViolation: cannot run verify in round 0 before explore"),
              std::string::npos);
  }
  s = p.run_stage(s, Stage::kExplore);
  EXPECT_EQ(s.cursor, Stage::kExplore);
  const auto calls = run.backend->total_calls();
  s = p.run_stage(s, Stage::kExplore);  // no-op
  EXPECT_EQ(run.backend->total_calls(), calls);
  EXPECT_THROW(p.run_stage(s, Stage::kGenerate), Error);
  EXPECT_EQ(load_state(p.state_path()).cursor, Stage::kExplore);
}

TEST(Pipeline, FullRoundArtifacts) {
  testing::TempDir dir("pipe");
  MockRun run(testing::make_scenario({.n = 5, .student_correct = {5}}), dir.path(), 2, 1);
  auto trainer = std::make_shared<testing::RecordingTrainer>();
  Pipeline p(run.config, run.gateway, trainer);
  const IterationState s = p.run(p.load_or_init());
  EXPECT_EQ(s.t, 1);
  ASSERT_EQ(s.history.size(), 1u);
  const auto& m = s.history[0].metrics;
  EXPECT_EQ(m["explore"]["responses"], 5);
  EXPECT_EQ(m["diagnose"]["bank_size"], 4);
  EXPECT_EQ(m["diagnose"]["correct"], 1);
  EXPECT_EQ(m["generate"]["pairs"], 10);
  EXPECT_EQ(m["filter"]["retained"], 10);
  EXPECT_EQ(m["emit"]["dpo_records"], 10);

  const fs::path round = p.round_dir(0);
  for (const char* name : {"responses", "reports", "bank", "pairs", "drops", "verification",
                           "filtered", "sft", "dpo"}) {
    EXPECT_TRUE(verify_manifest(round / (std::string(name) + ".jsonl"))) << name;
  }
  // Every pair traces back to its sample and instruction.
  Corpus c = load_corpus(run.config.corpus_path);
  const ErrorBank bank = bank_from_rows(read_jsonl(round / "bank.jsonl"));
  for (const auto& j : read_jsonl(round / "pairs.jsonl")) {
    const auto pr = pair_from_json(j);
    EXPECT_NE(c.find(pr.sample_id), nullptr);
    EXPECT_NE(bank.find(pr.instruction_id), nullptr);
  }
  ASSERT_EQ(trainer->requests.size(), 1u);
  EXPECT_TRUE(trainer->requests[0].sft_path);
  EXPECT_EQ(trainer->requests[0].reference_checkpoint, "base");
  EXPECT_EQ(read_manifest(round / "dpo.jsonl").source_hashes.bank,
            read_manifest(round / "bank.jsonl").content_hash);
}

TEST(Pipeline, ResumeAfterVerifyMakesNoCalls) {
  testing::TempDir dir("pipe");
  const auto sc = testing::make_scenario({.n = 3});
  IterationState mid;
  {
    MockRun first(sc, dir.path(), 2, 1);
    Pipeline p(first.config, first.gateway, nullptr);
    mid = p.run(p.load_or_init(), Stage::kVerify);
    EXPECT_EQ(mid.cursor, Stage::kVerify);
  }
  MockRun second(sc, dir.path(), 2, 1);
  Pipeline p(second.config, second.gateway, std::make_shared<testing::RecordingTrainer>());
  const IterationState resumed = p.load_or_init();
  EXPECT_EQ(resumed.cursor, Stage::kVerify);
  const IterationState done = p.run(resumed);
  EXPECT_EQ(done.t, 1);
  EXPECT_EQ(second.backend->total_calls(), 0);
  EXPECT_EQ(second.gateway.stats().network_calls, 0);
}

TEST(Pipeline, TamperedArtifactIsAStateError) {
  testing::TempDir dir("pipe");
  MockRun run(testing::make_scenario({.n = 2}), dir.path(), 1, 1);
  Pipeline p(run.config, run.gateway, nullptr);
  IterationState s = p.run(p.load_or_init(), Stage::kGenerate);
  write_text_atomic(p.round_dir(0) / "pairs.jsonl", "{}\n");
  try {
    p.run_stage(s, Stage::kVerify);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kState);
  }
}

TEST(Pipeline, WithoutTrainerStopsAfterEmit) {
  testing::TempDir dir("pipe");
  MockRun run(testing::make_scenario({.n = 2}), dir.path(), 1, 2);
  Pipeline p(run.config, run.gateway, nullptr);
  IterationState s = p.run(p.load_or_init());
  EXPECT_EQ(s.t, 0);
  EXPECT_EQ(s.cursor, Stage::kEmit);
  EXPECT_EQ(s.train_mode, "external");
  EXPECT_THROW(rotate_reference(s), Error);
  s = rotate_reference(record_trained_checkpoint(s, "ext-1"));
  EXPECT_EQ(s.reference_checkpoint, "ext-1");
}

TEST(Pipeline, ThreeRoundLineage) {
  testing::TempDir dir("pipe");
  MockRun run(testing::make_scenario({.n = 3}), dir.path(), 2, 3, "[student]\nmodel = {policy}\n");
  auto trainer = std::make_shared<testing::RecordingTrainer>();
  Pipeline p(run.config, run.gateway, trainer);
  const IterationState s = p.run(p.load_or_init());
  EXPECT_EQ(s.t, 3);
  ASSERT_EQ(s.history.size(), 3u);
  ASSERT_EQ(trainer->requests.size(), 3u);
  EXPECT_EQ(s.history[0].reference, "base");
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(s.history[t].policy, "ckpt-" + std::to_string(t));
    EXPECT_EQ(trainer->requests[t].iteration, t);
    EXPECT_EQ(trainer->requests[t].sft_path.has_value(), t == 0);
    EXPECT_EQ(fs::exists(p.round_dir(t) / "sft.jsonl"), t == 0);
    EXPECT_EQ(fs::exists(p.round_dir(t) / "sft.manifest.json"), t == 0);
    EXPECT_TRUE(verify_manifest(p.round_dir(t) / "dpo.jsonl"));
    if (t > 0) {
      EXPECT_EQ(s.history[t].reference, s.history[t - 1].policy);
      EXPECT_EQ(s.history[t].start_policy, s.history[t - 1].policy);
      EXPECT_EQ(trainer->requests[t].reference_checkpoint, "ckpt-" + std::to_string(t - 1));
    }
  }
  // Exploration and verification in round t use the round's starting policy.
  for (const auto& j : read_jsonl(p.round_dir(2) / "verification.jsonl")) {
    EXPECT_EQ(verification_from_json(j).checkpoint, "ckpt-1");
  }
  EXPECT_EQ(state_to_json(load_state(p.state_path()))["reference_lineage"],
            Json({"ckpt-0", "ckpt-1", "ckpt-2"}));
  EXPECT_THROW(p.run_stage(s, Stage::kExplore), Error);
}

TEST(Pipeline, BankAccumulatesAcrossRounds) {
  testing::TempDir dir("pipe");
  MockRun run(testing::make_scenario({.n = 3}), dir.path(), 1, 2);
  Pipeline p(run.config, run.gateway, std::make_shared<testing::RecordingTrainer>());
  p.run(p.load_or_init());
  const auto b0 = bank_from_rows(read_jsonl(p.round_dir(0) / "bank.jsonl"));
  const auto b1 = bank_from_rows(read_jsonl(p.round_dir(1) / "bank.jsonl"));
  ASSERT_GE(b1.size(), b0.size());
  for (const auto& e : b0.instructions()) EXPECT_NE(b1.find(e.id), nullptr);
}

}  // namespace
}  // namespace blindspot
