// SPDX-License-Identifier: Apache-2.0
#include "blindspot/pipeline.hpp"

#include <spdlog/spdlog.h>

#include "blindspot/errors.hpp"
#include "blindspot/synthesis.hpp"
#include "blindspot/verification.hpp"

namespace blindspot {

namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kExplore: return "explore";
    case Stage::kDiagnose: return "diagnose";
    case Stage::kGenerate: return "generate";
    case Stage::kVerify: return "verify";
    case Stage::kFilter: return "filter";
    case Stage::kEmit: return "emit";
    case Stage::kTrain: return "train";
  }
  return "explore";
}

std::optional<Stage> parse_stage(std::string_view name) {
  for (auto s : kAllStages) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

bool IterationState::completed(Stage s) const {
  return cursor.has_value() && static_cast<int>(*cursor) >= static_cast<int>(s);
}

std::optional<Stage> IterationState::next_stage() const {
  if (!cursor) return Stage::kExplore;
  if (*cursor == Stage::kTrain) return std::nullopt;
  return static_cast<Stage>(static_cast<int>(*cursor) + 1);
}

namespace {

Json manifests_to_json(const std::map<std::string, Manifest>& m) {
  Json j = Json::object();
  for (const auto& [k, v] : m) j[k] = manifest_to_json(v);
  return j;
}

std::map<std::string, Manifest> manifests_from_json(const Json& j) {
  std::map<std::string, Manifest> m;
  for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = manifest_from_json(it.value());
  return m;
}

}  // namespace

Json state_to_json(const IterationState& s) {
  Json history = Json::array();
  for (const auto& r : s.history) {
    history.push_back(Json{{"t", r.t},
                           {"start_policy", r.start_policy},
                           {"reference", r.reference},
                           {"policy", r.policy},
                           {"manifests", manifests_to_json(r.manifests)},
                           {"metrics", r.metrics}});
  }
  Json lineage = Json::array();
  for (const auto& r : s.history) lineage.push_back(r.policy);
  return Json{{"t", s.t},
              {"stage_cursor", s.cursor ? Json(std::string(to_string(*s.cursor))) : Json(nullptr)},
              {"start_policy", s.start_policy},
              {"policy_checkpoint", s.policy_checkpoint},
              {"reference_checkpoint", s.reference_checkpoint},
              {"train_mode", s.train_mode},
              {"manifests", manifests_to_json(s.manifests)},
              {"metrics", s.metrics},
              {"history", history},
              {"reference_lineage", lineage}};
}

IterationState state_from_json(const Json& j) {
  IterationState s;
  try {
    s.t = j.at("t").get<int>();
    if (const auto& c = j.at("stage_cursor"); !c.is_null()) {
      s.cursor = parse_stage(c.get<std::string>());
      if (!s.cursor) throw Error(ErrorCode::kState, "unknown stage " + c.dump());
    }
    s.start_policy = j.at("start_policy").get<std::string>();
    s.policy_checkpoint = j.at("policy_checkpoint").get<std::string>();
    s.reference_checkpoint = j.at("reference_checkpoint").get<std::string>();
    s.train_mode = j.value("train_mode", "");
    s.manifests = manifests_from_json(j.value("manifests", Json::object()));
    s.metrics = j.value("metrics", Json::object());
    for (const auto& r : j.value("history", Json::array())) {
      RoundRecord rec;
      rec.t = r.at("t").get<int>();
      rec.start_policy = r.at("start_policy").get<std::string>();
      rec.reference = r.at("reference").get<std::string>();
      rec.policy = r.at("policy").get<std::string>();
      rec.manifests = manifests_from_json(r.value("manifests", Json::object()));
      rec.metrics = r.value("metrics", Json::object());
      s.history.push_back(std::move(rec));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kState, std::string("malformed state: ") + e.what());
  }
  return s;
}

void save_state(const fs::path& path, const IterationState& s) {
  write_text_atomic(path, state_to_json(s).dump(2) + "\n");
}

IterationState load_state(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kState, "state file " + path.string() + " is not JSON: " + e.what());
  }
  return state_from_json(j);
}

IterationState initial_state(const PipelineConfig& config) {
  IterationState s;
  s.start_policy = config.base_checkpoint;
  s.policy_checkpoint = config.base_checkpoint;
  s.reference_checkpoint = config.base_checkpoint;
  return s;
}

IterationState record_trained_checkpoint(IterationState state, const std::string& checkpoint) {
  if (state.cursor != Stage::kEmit) {
    throw Error(ErrorCode::kStageOrder,
                "StageOrderViolation: a trained checkpoint can only be recorded after emit");
  }
  if (checkpoint.empty()) throw Error(ErrorCode::kInvalidArgument, "empty checkpoint reference");
  state.policy_checkpoint = checkpoint;
  state.train_mode = "external";
  state.cursor = Stage::kTrain;
  return state;
}

IterationState rotate_reference(IterationState state) {
  if (state.cursor != Stage::kTrain) {
    throw Error(ErrorCode::kStageOrder, "PrematureRotation: round " + std::to_string(state.t) +
                                            " has not finished training");
  }
  RoundRecord rec;
  rec.t = state.t;
  rec.start_policy = state.start_policy;
  rec.reference = state.reference_checkpoint;
  rec.policy = state.policy_checkpoint;
  rec.manifests = std::move(state.manifests);
  rec.metrics = std::move(state.metrics);
  state.history.push_back(std::move(rec));

  state.reference_checkpoint = state.policy_checkpoint;
  state.start_policy = state.policy_checkpoint;
  state.t += 1;
  state.cursor.reset();
  state.train_mode.clear();
  state.manifests.clear();
  state.metrics = Json::object();
  return state;
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, Gateway& gateway, std::shared_ptr<TrainerHook> trainer)
    : config_(std::move(config)),
      gateway_(gateway),
      trainer_(std::move(trainer)),
      forge_(PromptForge::load(config_.prompts_dir,
                               {{"error_taxonomy", taxonomy_bullets(config_.taxonomy)}})),
      corpus_(load_corpus(config_.corpus_path)) {}

fs::path Pipeline::state_path() const { return config_.run_dir / "state.json"; }

fs::path Pipeline::round_dir(int t) const {
  return config_.run_dir / ("round-" + std::to_string(t));
}

IterationState Pipeline::load_or_init() const {
  if (fs::exists(state_path())) return load_state(state_path());
  return initial_state(config_);
}

EndpointProfile Pipeline::student_for(const IterationState& state) const {
  EndpointProfile e = config_.student;
  static constexpr std::string_view kPolicy = "{policy}";
  for (auto pos = e.model_name.find(kPolicy); pos != std::string::npos;
       pos = e.model_name.find(kPolicy, pos + state.start_policy.size())) {
    e.model_name.replace(pos, kPolicy.size(), state.start_policy);
  }
  return e;
}

fs::path Pipeline::artifact(const IterationState& state, const std::string& name) const {
  return round_dir(state.t) / (name + ".jsonl");
}

std::vector<Json> Pipeline::read_artifact(const IterationState& state, const std::string& key) const {
  const fs::path p = artifact(state, key);
  if (!verify_manifest(p)) {
    throw Error(ErrorCode::kState, "artifact " + p.string() + " is missing or does not match its manifest");
  }
  return read_jsonl(p);
}

Manifest Pipeline::write(IterationState& state, const std::string& key,
                         const std::vector<Json>& rows, SourceHashes sources) {
  if (sources.corpus.empty()) sources.corpus = corpus_.content_hash;
  fs::create_directories(round_dir(state.t));
  Manifest m = write_artifact(artifact(state, key), rows, state.t, sources);
  state.manifests[key] = m;
  return m;
}

void Pipeline::persist(const IterationState& state) const {
  fs::create_directories(config_.run_dir);
  save_state(state_path(), state);
}

void Pipeline::stage_explore(IterationState& state) {
  const std::int64_t seed = config_.seed + state.t;
  const auto subset_seed = static_cast<std::uint64_t>(config_.resample ? seed : config_.seed);
  const Corpus subset = exploration_subset(corpus_, config_.exploration_fraction, subset_seed);
  ExploreOptions opts;
  opts.temperature = config_.temperatures.exploration;
  opts.max_tokens = config_.max_tokens;
  opts.seed = seed;
  opts.iteration = state.t;
  const ExploreResult res = explore(subset, student_for(state), gateway_, forge_, opts);

  std::vector<Json> rows;
  std::size_t unparsed = 0;
  for (const auto& r : res.responses) {
    rows.push_back(to_json(r));
    unparsed += r.flagged() ? 1 : 0;
  }
  write(state, "responses", rows);
  std::vector<Json> skips;
  for (const auto& s : res.skips) skips.push_back(to_json(s));
  write_jsonl(round_dir(state.t) / "explore_skips.jsonl", skips);
  state.metrics["explore"] = {{"samples", subset.size()},
                              {"responses", res.responses.size()},
                              {"unparsed", unparsed},
                              {"skipped", res.skips.size()}};
  spdlog::info("round {} explore: {} responses ({} without a final answer), {} skipped", state.t,
               res.responses.size(), unparsed, res.skips.size());
}

void Pipeline::stage_diagnose(IterationState& state) {
  std::vector<StudentResponse> responses;
  for (const auto& j : read_artifact(state, "responses")) {
    responses.push_back(student_response_from_json(j));
  }
  AuditOptions opts;
  opts.retries = config_.audit_retries;
  opts.taxonomy = config_.taxonomy;
  opts.strict_taxonomy = config_.strict_taxonomy;
  opts.temperature = config_.temperatures.audit;
  opts.max_tokens = config_.max_tokens;
  opts.seed = config_.seed + state.t;
  const DiagnoseResult diag = diagnose(corpus_, responses, config_.auditor, gateway_, forge_, opts);

  std::vector<Json> report_rows;
  for (const auto& r : diag.reports) report_rows.push_back(to_json(r));
  write(state, "reports", report_rows);
  std::vector<Json> skips;
  for (const auto& s : diag.skips) skips.push_back(to_json(s));
  write_jsonl(round_dir(state.t) / "audit_skips.jsonl", skips);

  std::optional<ErrorBank> existing;
  if (!state.history.empty()) {
    const fs::path prev = round_dir(state.history.back().t) / "bank.jsonl";
    if (!verify_manifest(prev)) {
      throw Error(ErrorCode::kState, "previous bank " + prev.string() + " does not match its manifest");
    }
    existing = bank_from_rows(read_jsonl(prev));
  }
  BankOptions bopts;
  bopts.context_ngram = config_.context_ngram;
  bopts.iteration = state.t;
  const BankUpdate up = compile_bank(diag.reports, existing, &corpus_, bopts);
  write(state, "bank", bank_to_rows(up.bank));
  state.metrics["diagnose"] = {{"reports", diag.reports.size()},
                               {"audit_failures", diag.skips.size()},
                               {"bank_size", up.bank.size()},
                               {"bank_added", up.added},
                               {"bank_duplicates", up.duplicates},
                               {"context_bound", up.context_bound.size()},
                               {"correct", up.skipped_correct}};
  spdlog::info("round {} diagnose: {} reports, {} audit failures, bank size {} (+{}, {} duplicate, "
               "{} context-bound)",
               state.t, diag.reports.size(), diag.skips.size(), up.bank.size(), up.added,
               up.duplicates, up.context_bound.size());
}

void Pipeline::stage_generate(IterationState& state) {
  const ErrorBank bank = bank_from_rows(read_artifact(state, "bank"));
  SynthesisOptions opts;
  opts.k = config_.k;
  opts.seed = config_.seed + state.t;
  opts.iteration = state.t;
  opts.temperature = config_.temperatures.teacher;
  opts.max_tokens = config_.max_tokens;
  opts.retries = config_.synthesis_retries;
  opts.drop_fraction_limit = config_.drop_fraction_limit;
  const SynthesisResult res =
      synthesize_dataset(corpus_, bank, config_.teacher, gateway_, forge_, opts);

  const SourceHashes src{corpus_.content_hash, state.manifests.at("bank").content_hash, ""};
  std::vector<Json> pair_rows;
  for (const auto& p : res.pairs) pair_rows.push_back(to_json(p));
  write(state, "pairs", pair_rows, src);
  std::vector<Json> drop_rows;
  Json by_reason = Json::object();
  for (const auto& d : res.drops) {
    drop_rows.push_back(to_json(d));
    const std::string reason(to_string(d.reason));
    by_reason[reason] = by_reason.value(reason, 0) + 1;
  }
  write(state, "drops", drop_rows, src);
  state.metrics["generate"] = {{"attempted", res.attempted},
                               {"pairs", res.pairs.size()},
                               {"drops", res.drops.size()},
                               {"drop_reasons", by_reason},
                               {"shortfall_samples", res.shortfall_samples.size()}};
  spdlog::info("round {} generate: {} pairs from {} attempts, {} dropped {}", state.t,
               res.pairs.size(), res.attempted, res.drops.size(), by_reason.dump());
}

void Pipeline::stage_verify(IterationState& state) {
  std::vector<PreferencePair> pairs;
  for (const auto& j : read_artifact(state, "pairs")) pairs.push_back(pair_from_json(j));
  VerificationOptions opts;
  opts.top_k = config_.top_k;
  opts.floor = config_.label_floor;
  opts.seed = config_.seed + state.t;
  const auto records = verify_pairs(corpus_, pairs, student_for(state), gateway_, forge_, opts);
  std::vector<Json> rows;
  std::size_t determinable = 0;
  for (const auto& r : records) {
    rows.push_back(verification_to_json(r));
    determinable += r.determinable ? 1 : 0;
  }
  write(state, "verification", rows,
        {corpus_.content_hash, "", state.manifests.at("pairs").content_hash});
  state.metrics["verify"] = {{"scored", records.size()}, {"determinable", determinable}};
  spdlog::info("round {} verify: {} pairs scored, {} determinable", state.t, records.size(),
               determinable);
}

void Pipeline::stage_filter(IterationState& state) {
  std::vector<PreferencePair> pairs;
  for (const auto& j : read_artifact(state, "pairs")) pairs.push_back(pair_from_json(j));
  std::vector<VerificationRecord> records;
  for (const auto& j : read_artifact(state, "verification")) {
    records.push_back(verification_from_json(j));
  }
  const FilterResult res = filter_pairs(records, pairs, config_.tau);
  std::vector<Json> rows;
  for (const auto& p : res.retained) rows.push_back(to_json(p));
  write(state, "filtered", rows,
        {corpus_.content_hash, "", state.manifests.at("pairs").content_hash});
  state.metrics["filter"] = {{"tau", config_.tau},
                             {"retained", res.retained.size()},
                             {"indeterminable", res.indeterminable},
                             {"below_threshold", res.below_threshold}};
  spdlog::info("round {} filter: {} retained (tau {}), {} indeterminable, {} at or below tau",
               state.t, res.retained.size(), config_.tau, res.indeterminable, res.below_threshold);
}

void Pipeline::stage_emit(IterationState& state) {
  std::vector<PreferencePair> pairs;
  for (const auto& j : read_artifact(state, "filtered")) pairs.push_back(pair_from_json(j));
  EmitContext ctx;
  ctx.corpus = &corpus_;
  ctx.forge = &forge_;
  ctx.iteration = state.t;
  ctx.sources = {corpus_.content_hash, state.manifests.at("bank").content_hash,
                 state.manifests.at("pairs").content_hash};
  fs::create_directories(round_dir(state.t));
  if (state.t == 0) {
    state.manifests["sft"] = emit_sft(pairs, artifact(state, "sft"), ctx);
  }
  state.manifests["dpo"] = emit_dpo(pairs, artifact(state, "dpo"), ctx);
  const std::size_t sft = state.t == 0 ? state.manifests["sft"].record_count : 0;
  state.metrics["emit"] = {{"sft_records", sft},
                           {"dpo_records", state.manifests["dpo"].record_count}};
  spdlog::info("round {} emit: {} SFT records, {} DPO records", state.t, sft,
               state.manifests["dpo"].record_count);
  if (pairs.empty()) spdlog::warn("round {} emit: filtered set is empty", state.t);
}

bool Pipeline::stage_train(IterationState& state) {
  if (!trainer_) {
    state.train_mode = "external";
    spdlog::info("round {} train=external: datasets are in {}", state.t, round_dir(state.t).string());
    return false;
  }
  TrainerRequest req;
  if (state.t == 0) req.sft_path = fs::absolute(artifact(state, "sft"));
  req.dpo_path = fs::absolute(artifact(state, "dpo"));
  req.policy_checkpoint = state.policy_checkpoint;
  req.reference_checkpoint = state.reference_checkpoint;
  req.hparams = Json::parse(config_.trainer.hparams);
  req.iteration = state.t;
  const std::string ckpt = trainer_->train(req);
  state.policy_checkpoint = ckpt;
  state.train_mode = "hook";
  spdlog::info("round {} train: new policy {}", state.t, ckpt);
  return true;
}

void Pipeline::execute(IterationState& state, Stage stage) {
  switch (stage) {
    case Stage::kExplore: stage_explore(state); break;
    case Stage::kDiagnose: stage_diagnose(state); break;
    case Stage::kGenerate: stage_generate(state); break;
    case Stage::kVerify: stage_verify(state); break;
    case Stage::kFilter: stage_filter(state); break;
    case Stage::kEmit: stage_emit(state); break;
    case Stage::kTrain:
      if (!stage_train(state)) {
        persist(state);
        return;
      }
      break;
  }
  state.cursor = stage;
  persist(state);
}

IterationState Pipeline::run_stage(IterationState state, Stage stage) {
  if (state.t >= config_.iterations) {
    throw Error(ErrorCode::kStageOrder, "StageOrderViolation: all " +
                                            std::to_string(config_.iterations) +
                                            " rounds are complete");
  }
  if (state.completed(stage)) {
    spdlog::info("round {} {}: already complete", state.t, to_string(stage));
    return state;
  }
  const auto next = state.next_stage();
  if (next != stage) {
    throw Error(ErrorCode::kStageOrder, "StageOrderViolation: cannot run " +
                                            std::string(to_string(stage)) + " in round " +
                                            std::to_string(state.t) + " before " +
                                            std::string(to_string(*next)));
  }
  execute(state, stage);
  return state;
}

IterationState Pipeline::run_iteration(IterationState state, std::optional<Stage> stop_after) {
  if (state.t >= config_.iterations) return state;
  for (Stage s : kAllStages) {
    if (!state.completed(s)) {
      execute(state, s);
      if (!state.completed(s)) return state;  // untrained round
    }
    if (stop_after == s) return state;
  }
  return state;
}

IterationState Pipeline::run(IterationState state, std::optional<Stage> stop_after) {
  while (state.t < config_.iterations) {
    state = run_iteration(std::move(state), stop_after);
    if (!state.completed(Stage::kTrain) || stop_after) return state;
    state = rotate_reference(std::move(state));
    persist(state);
  }
  return state;
}

}  // namespace blindspot
