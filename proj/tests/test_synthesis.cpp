// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>

#include "blindspot/errors.hpp"
#include "blindspot/synthesis.hpp"
#include "scenario.hpp"

namespace blindspot {
namespace {

using testing::make_scenario;

constexpr RetryPolicy kNoDelay{std::chrono::milliseconds(0), std::chrono::milliseconds(0)};

struct Env {
  explicit Env(const testing::Scenario& s)
      : backend(testing::make_backend(s)),
        gateway(backend, std::make_shared<TranscriptCache>(), kNoDelay),
        forge(PromptForge::load(testing::prompts_dir(),
                                {{"error_taxonomy", taxonomy_bullets(kDefaultErrorTaxonomy)}})) {
    corpus.samples = s.samples;
    corpus.content_hash = corpus_content_hash(s.samples);
  }
  std::shared_ptr<MockBackend> backend;
  Gateway gateway;
  PromptForge forge;
  Corpus corpus;
  EndpointProfile student{"student", "", "base", "", 2, 0};
  EndpointProfile auditor{"auditor", "", "auditor", "", 2, 0};
  EndpointProfile teacher{"teacher", "", "teacher", "", 2, 0};
};

ErrorBank bank_of(int n) {
  ErrorBank b;
  for (int i = 1; i <= n; ++i) {
    ErrorInstruction e;
    e.text = testing::instruction_text(i);
    e.error_types = {"missing condition"};
    e.generic_summary = "Ignored a condition precedent.";
    e.source_sample_id = testing::sample_id(i);
    EXPECT_TRUE(b.add(e));
  }
  return b;
}

AuditReport report(AuditStatus status, const std::string& instruction, const std::string& src = "s001") {
  AuditReport r;
  r.status = status;
  r.reproduction_instruction = instruction;
  r.source_sample_id = src;
  return r;
}

// ---------------------------------------------------------------------------
// Audit parsing

TEST(AuditParse, FencedJson) {
  const auto r = parse_audit_output(
      "Here you go:\n```json\n{\"status\": \"FLAWED_REASONING\", \"error_types\": [\"Logical "
      "Leap\"], \"generic_summary\": \"s\", \"reproduction_instruction\": \"  do x  \"}\n```",
      {});
  EXPECT_EQ(r.status, AuditStatus::kFlawedReasoning);
  EXPECT_EQ(r.error_types, std::vector<std::string>{"logical leap"});
  EXPECT_EQ(r.reproduction_instruction, "do x");
}

TEST(AuditParse, CorrectAnswerNeedsNoInstruction) {
  const auto r = parse_audit_output(R"({"status":"CORRECT_ANSWER","error_types":[]})", {});
  EXPECT_EQ(r.status, AuditStatus::kCorrectAnswer);
  EXPECT_TRUE(r.reproduction_instruction.empty());
}

TEST(AuditParse, Rejections) {
  EXPECT_THROW(parse_audit_output("no json here", {}), Error);
  EXPECT_THROW(parse_audit_output("{\"status\": 3}", {}), Error);
  EXPECT_THROW(parse_audit_output("{\"status\": \"MAYBE\"}", {}), Error);
  EXPECT_THROW(parse_audit_output(R"({"status":"INCORRECT_ANSWER","reproduction_instruction":""})", {}),
               Error);
  EXPECT_THROW(parse_audit_output(R"({"status":"INCORRECT_ANSWER","error_types":"x",)"
                                  R"("reproduction_instruction":"y"})",
                                  {}),
               Error);
}

TEST(AuditParse, TaxonomyMappingAndStrictMode) {
  const std::string text =
      R"({"status":"INCORRECT_ANSWER","error_types":["missed condition"],"reproduction_instruction":"y"})";
  const auto lenient = parse_audit_output(text, {});
  EXPECT_EQ(lenient.error_types, std::vector<std::string>{"missing condition"});
  AuditOptions strict;
  strict.strict_taxonomy = true;
  try {
    parse_audit_output(text, strict);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("TaxonomyViolation"), std::string::npos);
  }
}

TEST(NearestTaxonomyLabel, Cases) {
  EXPECT_EQ(nearest_taxonomy_label("  Scope   OVERREACH ", kDefaultErrorTaxonomy), "scope overreach");
  EXPECT_EQ(nearest_taxonomy_label("clause hallucinated", kDefaultErrorTaxonomy), "hallucinated clause");
  EXPECT_FALSE(nearest_taxonomy_label("arithmetic", kDefaultErrorTaxonomy));
}

TEST(Audit, RepairThenSucceed) {
  testing::Scenario s = make_scenario({.n = 1});
  s.rules.insert(s.rules.begin(),
                 Json{{"match", {testing::kAuditMarker, testing::marker(1)}},
                      {"responses",
                       {{{"text", "I think the student is wrong."}},
                        {{"text", R"({"status":"INCORRECT_ANSWER","error_types":["logical leap"],)"
                                  R"("generic_summary":"g","reproduction_instruction":"Do y."})"}}}}});
  Env env(s);
  StudentResponse resp{"s001", "Final Answer: Yes", Verdict::kYes, 0};
  const auto r = audit(s.samples[0], resp, env.auditor, env.gateway, env.forge, {});
  EXPECT_EQ(r.repair_attempts, 1);
  EXPECT_EQ(r.reproduction_instruction, "Do y.");
  EXPECT_EQ(r.source_sample_id, "s001");
  EXPECT_EQ(env.backend->calls("auditor"), 2);
}

TEST(Audit, GivesUpAfterRetries) {
  testing::Scenario s = make_scenario({.n = 1});
  s.rules.insert(s.rules.begin(), Json{{"match", {testing::kAuditMarker}},
                                       {"responses", {{{"text", "not json"}}}}});
  Env env(s);
  StudentResponse resp{"s001", "Final Answer: Yes", Verdict::kYes, 0};
  try {
    audit(s.samples[0], resp, env.auditor, env.gateway, env.forge, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAudit);
    EXPECT_NE(std::string(e.what()).find("UnparseableAuditOutput"), std::string::npos);
  }
  EXPECT_EQ(env.backend->calls("auditor"), 3);
}

TEST(Diagnose, SkipsFailedAudits) {
  testing::Scenario s = make_scenario({.n = 3});
  s.rules.insert(s.rules.begin(), Json{{"match", {testing::kAuditMarker, testing::marker(2)}},
                                       {"responses", {{{"text", "???"}}}}});
  Env env(s);
  std::vector<StudentResponse> responses;
  for (const auto& x : s.samples) responses.push_back({x.id, "Final Answer: Yes", Verdict::kYes, 0});
  const auto d = diagnose(env.corpus, responses, env.auditor, env.gateway, env.forge, {});
  ASSERT_EQ(d.reports.size(), 2u);
  ASSERT_EQ(d.skips.size(), 1u);
  EXPECT_EQ(d.skips[0].sample_id, "s002");
}

// ---------------------------------------------------------------------------
// Bank

TEST(ContextAgnostic, SixWordWindow) {
  const std::string ctx = "The Supplier shall deliver the goods within ten days after payment.";
  EXPECT_FALSE(is_context_agnostic("Argue that the supplier shall deliver the goods within any time.", ctx));
  EXPECT_TRUE(is_context_agnostic("Argue that the supplier shall deliver the products.", ctx));
  EXPECT_TRUE(is_context_agnostic("short", ctx));
  EXPECT_TRUE(is_context_agnostic("the supplier shall deliver the goods", ctx, 7));
}

TEST(Bank, DedupByNormalizedText) {
  const std::vector<AuditReport> reports{
      report(AuditStatus::kIncorrectAnswer, "Ignore the  CONDITION."),
      report(AuditStatus::kFlawedReasoning, "ignore the condition."),
      report(AuditStatus::kCorrectAnswer, ""),
      report(AuditStatus::kIncorrectAnswer, "Invent a clause.")};
  const auto up = compile_bank(reports, std::nullopt, nullptr);
  EXPECT_EQ(up.bank.size(), 2u);
  EXPECT_EQ(up.added, 2u);
  EXPECT_EQ(up.duplicates, 1u);
  EXPECT_EQ(up.skipped_correct, 1u);
  EXPECT_EQ(up.bank.instructions()[0].id, instruction_id("ignore the condition."));
  EXPECT_EQ(instruction_id("Ignore the  CONDITION."), instruction_id("ignore the condition."));
}

TEST(Bank, MonotoneMerge) {
  const auto first = compile_bank({report(AuditStatus::kIncorrectAnswer, "A.")}, std::nullopt, nullptr);
  const auto second = compile_bank({report(AuditStatus::kIncorrectAnswer, "B."),
                                    report(AuditStatus::kIncorrectAnswer, "a.")},
                                   first.bank, nullptr);
  ASSERT_EQ(second.bank.size(), 2u);
  EXPECT_EQ(second.bank.instructions()[0].text, "A.");
  EXPECT_EQ(second.bank.instructions()[1].text, "B.");
}

TEST(Bank, RejectsContextBoundInstructions) {
  const auto s = make_scenario({.n = 1});
  Corpus c;
  c.samples = s.samples;
  const std::string copied = "Say The Supplier shall deliver the goods within 11 days regardless.";
  const auto up = compile_bank({report(AuditStatus::kIncorrectAnswer, copied),
                                report(AuditStatus::kIncorrectAnswer, testing::instruction_text(1))},
                               std::nullopt, &c);
  EXPECT_EQ(up.bank.size(), 1u);
  EXPECT_EQ(up.context_bound, std::vector<std::string>{"s001"});
}

TEST(Bank, RowsRoundTrip) {
  const auto b = bank_of(3);
  const auto back = bank_from_rows(bank_to_rows(b));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.instructions()[2].id, b.instructions()[2].id);
  EXPECT_NE(back.find(b.instructions()[1].id), nullptr);
  EXPECT_THROW(ErrorBank().add(ErrorInstruction{}), Error);
}

// ---------------------------------------------------------------------------
// Draws

TEST(Draw, DistinctDeterministicAndSeeded) {
  const auto bank = bank_of(10);
  const auto sc = make_scenario({.n = 2});
  const auto a = draw_instructions(bank, sc.samples[0], 4, 7);
  const auto b = draw_instructions(bank, sc.samples[0], 4, 7);
  ASSERT_EQ(a.instructions.size(), 4u);
  EXPECT_FALSE(a.shortfall);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < 4; ++i) {
    ids.insert(a.instructions[i].id);
    EXPECT_EQ(a.instructions[i].id, b.instructions[i].id);
  }
  EXPECT_EQ(ids.size(), 4u);
  bool differs = false;
  for (std::uint64_t seed = 8; seed < 20 && !differs; ++seed) {
    const auto c = draw_instructions(bank, sc.samples[0], 4, seed);
    for (std::size_t i = 0; i < 4; ++i) differs = differs || c.instructions[i].id != a.instructions[i].id;
  }
  EXPECT_TRUE(differs);
}

TEST(Draw, ShortfallAndEmpty) {
  const auto sc = make_scenario({.n = 1});
  const auto d = draw_instructions(bank_of(2), sc.samples[0], 4, 1);
  EXPECT_TRUE(d.shortfall);
  EXPECT_EQ(d.instructions.size(), 2u);
  EXPECT_THROW(draw_instructions(ErrorBank{}, sc.samples[0], 1, 1), Error);
  EXPECT_THROW(draw_instructions(bank_of(2), sc.samples[0], 0, 1), Error);
}

TEST(Draw, RoughlyUniform) {
  // 4000 draws of K=2 from a bank of 5: each instruction expected 1600 times.
  const auto bank = bank_of(5);
  std::map<std::string, int> counts;
  for (int i = 0; i < 4000; ++i) {
    LegalSample s{"sample-" + std::to_string(i), "c", "q", Verdict::kYes};
    for (const auto& e : draw_instructions(bank, s, 2, 99).instructions) counts[e.id]++;
  }
  double chi2 = 0.0;
  for (const auto& [_, c] : counts) chi2 += (c - 1600.0) * (c - 1600.0) / 1600.0;
  EXPECT_EQ(counts.size(), 5u);
  EXPECT_LT(chi2, 18.47);  // chi-square, 4 dof, p = 0.001
}

// ---------------------------------------------------------------------------
// Generation

TEST(SynthesizePair, RejectedThenChosen) {
  const auto s = make_scenario({.n = 2});
  Env env(s);
  const auto bank = bank_of(2);
  SynthesisOptions o;
  o.iteration = 3;
  const auto out = synthesize_pair(s.samples[1], bank.instructions()[0], 2, env.teacher, env.gateway,
                                   env.forge, o);
  const auto* p = std::get_if<PreferencePair>(&out);
  ASSERT_NE(p, nullptr);
  EXPECT_EQ(p->pair_id, "t3:s002:k2");
  EXPECT_EQ(p->instruction_id, bank.instructions()[0].id);
  EXPECT_NE(p->rejected.find("REJ-s002-INS-001"), std::string::npos);
  EXPECT_NE(p->chosen.find("CHO-s002-INS-001"), std::string::npos);
  EXPECT_EQ(env.backend->calls("teacher"), 2);
}

TEST(SynthesizePair, ChosenPromptCarriesRejectedText) {
  class Recorder : public Backend {
   public:
    BackendReply complete(const EndpointProfile&, const GenerationRequest& r) override {
      const std::string& user = r.messages.back().content;
      prompts.push_back(user);
      const bool rejected_side = r.messages.front().content.find(testing::kRejectedMarker) != std::string::npos;
      return {rejected_side ? "DRAFT-7731\nFinal Answer: Yes" : "sound\nFinal Answer: No", std::nullopt, "stop"};
    }
    std::vector<std::string> prompts;
  };
  auto rec = std::make_shared<Recorder>();
  Gateway gw(rec, std::make_shared<TranscriptCache>(), kNoDelay);
  const auto forge = PromptForge::load(testing::prompts_dir(), {{"error_taxonomy", "- x"}});
  const LegalSample sample{"a", "ctx", "q?", Verdict::kNo};
  const auto bank = bank_of(1);
  const auto out = synthesize_pair(sample, bank.instructions()[0], 1,
                                   EndpointProfile{"teacher", "", "t", "", 1, 0}, gw, forge, {});
  ASSERT_TRUE(std::holds_alternative<PreferencePair>(out));
  ASSERT_EQ(rec->prompts.size(), 2u);
  EXPECT_EQ(rec->prompts[0].find("DRAFT-7731"), std::string::npos);
  EXPECT_NE(rec->prompts[1].find("Rejected Response:\nDRAFT-7731\nFinal Answer: Yes"), std::string::npos);
}

TEST(SynthesizePair, RecoversAfterResample) {
  const auto s = make_scenario({.n = 1, .rejected_recovers = {{1, 1}}});
  Env env(s);
  const auto out = synthesize_pair(s.samples[0], bank_of(1).instructions()[0], 1, env.teacher,
                                   env.gateway, env.forge, {});
  EXPECT_TRUE(std::holds_alternative<PreferencePair>(out));
  EXPECT_EQ(env.backend->calls("teacher"), 3);
}

TEST(SynthesizePair, DropsPersistentMismatch) {
  const auto s = make_scenario({.n = 1, .rejected_mismatch = {{1, 1}}});
  Env env(s);
  const auto out = synthesize_pair(s.samples[0], bank_of(1).instructions()[0], 1, env.teacher,
                                   env.gateway, env.forge, {});
  const auto* d = std::get_if<DropRecord>(&out);
  ASSERT_NE(d, nullptr);
  EXPECT_EQ(d->reason, DropReason::kVerdictMismatchRejected);
  EXPECT_EQ(to_string(d->reason), "VerdictMismatch(rejected)");
  EXPECT_NE(d->detail.find("after 3 attempts"), std::string::npos);
  EXPECT_EQ(env.backend->calls("teacher"), 3);  // no chosen call
}

TEST(SynthesizePair, DropsChosenMismatch) {
  testing::Scenario s = make_scenario({.n = 1});
  s.rules.insert(s.rules.begin(), Json{{"match", {testing::kChosenMarker}},
                                       {"responses", {{{"text", "no conclusion"}}}}});
  Env env(s);
  const auto out = synthesize_pair(s.samples[0], bank_of(1).instructions()[0], 1, env.teacher,
                                   env.gateway, env.forge, {});
  ASSERT_TRUE(std::holds_alternative<DropRecord>(out));
  EXPECT_EQ(std::get<DropRecord>(out).reason, DropReason::kVerdictMismatchChosen);
}

TEST(SynthesizeDataset, ExpandsKTimesWithProvenance) {
  const auto s = make_scenario({.n = 5});
  Env env(s);
  const auto bank = bank_of(5);
  SynthesisOptions o;
  o.k = 3;
  const auto res = synthesize_dataset(env.corpus, bank, env.teacher, env.gateway, env.forge, o);
  EXPECT_EQ(res.pairs.size(), 15u);
  EXPECT_EQ(res.attempted, 15u);
  EXPECT_TRUE(res.drops.empty());
  std::set<std::string> ids;
  for (const auto& p : res.pairs) {
    ids.insert(p.pair_id);
    EXPECT_NE(env.corpus.find(p.sample_id), nullptr);
    EXPECT_NE(bank.find(p.instruction_id), nullptr);
    EXPECT_NE(p.rejected.find("REJ-" + p.sample_id), std::string::npos);
  }
  EXPECT_EQ(ids.size(), 15u);
  EXPECT_EQ(res.pairs.front().pair_id, "t0:s001:k1");
  EXPECT_EQ(res.pairs.back().pair_id, "t0:s005:k3");
}

TEST(SynthesizeDataset, AbortsAboveDropLimit) {
  std::set<std::pair<int, int>> bad;
  for (int j = 1; j <= 2; ++j) bad.insert({1, j}), bad.insert({2, j});
  const auto s = make_scenario({.n = 2, .rejected_mismatch = bad});
  Env env(s);
  SynthesisOptions o;
  o.k = 2;
  try {
    synthesize_dataset(env.corpus, bank_of(2), env.teacher, env.gateway, env.forge, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSynthesis);
  }
  o.drop_fraction_limit = 1.0;
  const auto res = synthesize_dataset(env.corpus, bank_of(2), env.teacher, env.gateway, env.forge, o);
  EXPECT_EQ(res.drops.size(), 4u);
}

TEST(SynthesizeDataset, Preconditions) {
  const auto s = make_scenario({.n = 1});
  Env env(s);
  SynthesisOptions o;
  o.k = 0;
  EXPECT_THROW(synthesize_dataset(env.corpus, bank_of(1), env.teacher, env.gateway, env.forge, o), Error);
  o.k = 1;
  EXPECT_THROW(synthesize_dataset(env.corpus, ErrorBank{}, env.teacher, env.gateway, env.forge, o), Error);
}

// ---------------------------------------------------------------------------
// Exploration

TEST(Explore, OneResponsePerSample) {
  const auto s = make_scenario({.n = 3, .student_correct = {2}});
  Env env(s);
  ExploreOptions o;
  o.iteration = 1;
  const auto res = explore(env.corpus, env.student, env.gateway, env.forge, o);
  ASSERT_EQ(res.responses.size(), 3u);
  EXPECT_EQ(res.responses[0].extracted_verdict, opposite(s.samples[0].gold));
  EXPECT_EQ(res.responses[1].extracted_verdict, s.samples[1].gold);
  EXPECT_EQ(res.responses[2].iteration, 1);
}

TEST(Explore, FlagsAndSkips) {
  testing::Scenario s = make_scenario({.n = 2});
  s.rules.insert(s.rules.begin(), Json{{"match", {testing::kStudentCotMarker, testing::marker(1)}},
                                       {"responses", {{{"text", "I am unsure."}}}}});
  s.rules.insert(s.rules.begin(), Json{{"match", {testing::kStudentCotMarker, testing::marker(2)}},
                                       {"responses", {{{"error", "schema"}}}}});
  Env env(s);
  const auto res = explore(env.corpus, env.student, env.gateway, env.forge, {});
  ASSERT_EQ(res.responses.size(), 1u);
  EXPECT_TRUE(res.responses[0].flagged());
  ASSERT_EQ(res.skips.size(), 1u);
  EXPECT_EQ(res.skips[0].sample_id, "s002");
}

TEST(ExplorationSubset, SizeOrderAndDeterminism) {
  const auto s = make_scenario({.n = 5});
  Corpus c;
  c.samples = s.samples;
  const auto a = exploration_subset(c, 0.4, 3);
  const auto b = exploration_subset(c, 0.4, 3);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_LT(a.samples[0].id, a.samples[1].id);
  EXPECT_EQ(exploration_subset(c, 1.0, 3).size(), 5u);
  EXPECT_EQ(exploration_subset(c, 0.01, 3).size(), 1u);
  EXPECT_THROW(exploration_subset(c, 0.0, 3), Error);
}

// ---------------------------------------------------------------------------

TEST(Serialization, RoundTrips) {
  const PreferencePair p{"t0:a:k1", "a", "ins-1", "c", "r", 0, 1};
  const auto p2 = pair_from_json(to_json(p));
  EXPECT_EQ(p2.pair_id, p.pair_id);
  EXPECT_EQ(p2.chosen, "c");
  const DropRecord d{"t0:a:k2", "a", "ins-2", 2, DropReason::kVerdictMismatchChosen, "why"};
  EXPECT_EQ(drop_from_json(to_json(d)).reason, DropReason::kVerdictMismatchChosen);
  const StudentResponse r{"a", "txt", std::nullopt, 2};
  const auto r2 = student_response_from_json(to_json(r));
  EXPECT_TRUE(r2.flagged());
  EXPECT_EQ(r2.iteration, 2);
  AuditReport ar = report(AuditStatus::kFlawedReasoning, "x");
  ar.error_types = {"logical leap"};
  const auto ar2 = audit_report_from_json(to_json(ar));
  EXPECT_EQ(ar2.status, AuditStatus::kFlawedReasoning);
  EXPECT_EQ(ar2.error_types, ar.error_types);
}

}  // namespace
}  // namespace blindspot
