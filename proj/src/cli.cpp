// SPDX-License-Identifier: Apache-2.0
#include "blindspot/cli.hpp"

#include <filesystem>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "blindspot/config.hpp"
#include "blindspot/evaluation.hpp"
#include "blindspot/http_backend.hpp"
#include "blindspot/mock_backend.hpp"
#include "blindspot/pipeline.hpp"

namespace blindspot {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfig:
    case ErrorCode::kPrompt: return 2;
    case ErrorCode::kCorpus: return 3;
    case ErrorCode::kTransport:
    case ErrorCode::kRateLimited:
    case ErrorCode::kSchema: return 4;
    case ErrorCode::kStageOrder: return 5;
    case ErrorCode::kAudit:
    case ErrorCode::kSynthesis: return 6;
    case ErrorCode::kVerification:
    case ErrorCode::kLogprobsUnsupported: return 7;
    case ErrorCode::kState:
    case ErrorCode::kIo: return 8;
    case ErrorCode::kTrainer: return 9;
  }
  return 1;
}

std::string exit_code_help() {
  return "Exit status:\n"
         "  0  success\n"
         "  1  unexpected failure\n"
         "  2  usage, configuration or prompt template error\n"
         "  3  corpus error (malformed or invalid samples)\n"
         "  4  model transport error after retries (network, rate limit, bad response)\n"
         "  5  StageOrderViolation (stage run out of order, or round already complete)\n"
         "  6  audit or synthesis aborted (unparseable audits, drop fraction exceeded, empty bank)\n"
         "  7  verification error (endpoint returns no logprobs)\n"
         "  8  state or artifact I/O error\n"
         "  9  trainer hook failed\n";
}

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<int> iteration;
  std::string mock_transcripts;
  std::string stop_after;
  std::string checkpoint;
  std::string log_level = "info";
};

struct Session {
  PipelineConfig config;
  std::shared_ptr<Backend> backend;
  std::shared_ptr<TranscriptCache> cache;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<Pipeline> pipeline;
};

Session open_session(const Options& o) {
  if (o.config.empty()) throw Error(ErrorCode::kConfig, "--config is required");
  Session s;
  s.config = load_config(o.config, o.overrides);
  if (!o.mock_transcripts.empty()) s.config.mock_transcripts = fs::absolute(o.mock_transcripts);
  if (s.config.mock_transcripts) {
    s.backend = MockBackend::from_file(*s.config.mock_transcripts);
  } else {
    validate_environment(s.config);
    s.backend = std::make_shared<HttpBackend>();
  }
  fs::create_directories(s.config.run_dir);
  s.cache = std::make_shared<TranscriptCache>(s.config.effective_cache_path());
  s.gateway = std::make_unique<Gateway>(s.backend, s.cache);
  s.pipeline = std::make_unique<Pipeline>(
      s.config, *s.gateway, make_trainer_hook(s.config.trainer, s.config.run_dir));
  return s;
}

IterationState current_state(const Session& s, const Options& o) {
  IterationState state = s.pipeline->load_or_init();
  if (o.iteration && *o.iteration != state.t) {
    throw Error(ErrorCode::kStageOrder, "StageOrderViolation: --iteration " +
                                            std::to_string(*o.iteration) +
                                            " but the run is at round " + std::to_string(state.t));
  }
  return state;
}

void print_summary(std::ostream& out, const IterationState& state, const Session& s) {
  out << "round " << state.t << " of " << s.config.iterations << ", last completed stage: "
      << (state.cursor ? std::string(to_string(*state.cursor)) : std::string("none"));
  if (state.train_mode == "external" && !state.completed(Stage::kTrain)) {
    out << " (train=external: datasets in " << s.pipeline->round_dir(state.t).string() << ")";
  }
  out << "\npolicy " << state.policy_checkpoint << ", reference " << state.reference_checkpoint
      << "\n";
  const auto stats = s.gateway->stats();
  out << "model calls " << stats.network_calls << ", cache hits " << stats.cache_hits
      << ", retries " << stats.retries << "\n";
}

std::optional<Stage> stop_stage(const Options& o) {
  if (o.stop_after.empty()) return std::nullopt;
  auto s = parse_stage(o.stop_after);
  if (!s) throw Error(ErrorCode::kConfig, "unknown stage for --stop-after: " + o.stop_after);
  return s;
}

fs::path eval_report_path(const PipelineConfig& c) { return c.run_dir / "eval_report.json"; }

int cmd_stage(const Options& o, Stage stage, std::ostream& out) {
  Session s = open_session(o);
  IterationState state = current_state(s, o);
  state = s.pipeline->run_stage(std::move(state), stage);
  print_summary(out, state, s);
  return 0;
}

int cmd_run(const Options& o, bool resume, std::ostream& out) {
  Session s = open_session(o);
  if (resume && !fs::exists(s.pipeline->state_path())) {
    throw Error(ErrorCode::kState, "nothing to resume: " + s.pipeline->state_path().string() +
                                       " does not exist");
  }
  IterationState state = current_state(s, o);
  if (!o.checkpoint.empty()) {
    state = record_trained_checkpoint(std::move(state), o.checkpoint);
    save_state(s.pipeline->state_path(), state);
  }
  state = s.pipeline->run(std::move(state), stop_stage(o));
  print_summary(out, state, s);
  return 0;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  Session s = open_session(o);
  const IterationState state = current_state(s, o);
  std::vector<fs::path> paths = s.config.eval_paths;
  if (paths.empty()) paths.push_back(s.config.corpus_path);

  EvalOptions opts;
  opts.student_temperature = 0.0;
  opts.student_max_tokens = s.config.max_tokens;
  opts.seed = s.config.seed;
  opts.use_judge = s.config.use_judge;
  opts.judge.temperature = s.config.temperatures.judge;
  opts.judge.seed = s.config.seed;

  const EndpointProfile student = s.pipeline->student_for(state);
  std::vector<EvalReport> reports;
  Json rows = Json::array();
  for (const auto& p : paths) {
    const Corpus corpus = load_corpus(p);
    reports.push_back(evaluate_student(corpus, student, &s.config.judge, *s.gateway,
                                       s.pipeline->forge(), opts));
    rows.push_back(eval_report_to_json(reports.back()));
    spdlog::info("evaluate {}: accuracy {:.4f}, f1 {:.4f}", reports.back().dataset,
                 reports.back().metrics.accuracy, reports.back().metrics.f1);
  }
  write_text_atomic(eval_report_path(s.config),
                    Json{{"policy_checkpoint", student.model_name}, {"reports", rows}}.dump(2) + "\n");
  out << format_metrics_table(reports);
  return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.config.empty()) throw Error(ErrorCode::kConfig, "--config is required");
  const PipelineConfig c = load_config(o.config, o.overrides);
  const fs::path p = eval_report_path(c);
  if (!fs::exists(p)) {
    throw Error(ErrorCode::kIo, "no evaluation report at " + p.string() + "; run evaluate first");
  }
  Json j;
  try {
    j = Json::parse(read_text_file(p));
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kIo, "unreadable evaluation report: " + std::string(e.what()));
  }
  std::vector<EvalReport> reports;
  for (const auto& r : j.at("reports")) reports.push_back(eval_report_from_json(r));
  out << format_metrics_table(reports);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Preference-data pipeline for legal yes/no reasoning: explores a student model's "
               "mistakes, turns them into reusable error instructions, synthesizes and verifies "
               "preference pairs, and emits SFT/DPO training files.",
               "blindspot"};
  app.footer(exit_code_help());
  app.require_subcommand(1);

  Options o;
  app.add_option("--config", o.config, "INI configuration file");
  app.add_option("--set", o.overrides, "Override a config value, key=value or section.key=value")
      ->allow_extra_args(false);
  app.add_option("--iteration", o.iteration, "Expected current round; mismatch is an error");
  app.add_option("--mock-transcripts", o.mock_transcripts,
                 "Serve all model calls from a scripted JSONL file");
  app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off");

  struct Verb {
    const char* name;
    const char* help;
  };
  const std::vector<Verb> stage_verbs = {
      {"explore", "Sample one answer per training question from the student"},
      {"diagnose", "Audit student answers and update the error instruction bank"},
      {"generate", "Synthesize K rejected/chosen pairs per question with the teacher"},
      {"verify", "Score both sides of every pair with the student"},
      {"filter", "Keep pairs whose difficulty score exceeds tau"},
      {"emit", "Write sft.jsonl (round 0) and dpo.jsonl with manifests"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& v : stage_verbs) subs[v.name] = app.add_subcommand(v.name, v.help);
  subs["evaluate"] = app.add_subcommand("evaluate", "Evaluate the current student; writes eval_report.json");
  subs["run"] = app.add_subcommand("run", "Run all remaining stages and rounds");
  subs["resume"] = app.add_subcommand("resume", "Continue an interrupted run from state.json");
  subs["report"] = app.add_subcommand("report", "Print the Acc/F1/Judge table from eval_report.json");
  for (auto* sub : {subs["run"], subs["resume"]}) {
    sub->add_option("--stop-after", o.stop_after, "Stop after this stage of the current round");
    sub->add_option("--checkpoint", o.checkpoint,
                    "Record an externally trained checkpoint for the current round first");
  }
  for (auto& [name, sub] : subs) sub->fallthrough();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  spdlog::set_level(spdlog::level::from_str(o.log_level));
  try {
    for (const auto& v : stage_verbs) {
      if (subs[v.name]->parsed()) return cmd_stage(o, *parse_stage(v.name), out);
    }
    if (subs["evaluate"]->parsed()) return cmd_evaluate(o, out);
    if (subs["run"]->parsed()) return cmd_run(o, false, out);
    if (subs["resume"]->parsed()) return cmd_run(o, true, out);
    if (subs["report"]->parsed()) return cmd_report(o, out);
  } catch (const Error& e) {
    err << "error [" << error_code_name(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace blindspot
