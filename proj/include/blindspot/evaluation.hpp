// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blindspot/corpus.hpp"
#include "blindspot/gateway.hpp"
#include "blindspot/prompts.hpp"

namespace blindspot {

/// Verdict of the LAST "Final Answer: Yes|No" in `text` (case-insensitive,
/// markdown emphasis and trailing punctuation tolerated). nullopt if absent.
std::optional<Verdict> extract_verdict(std::string_view text);

enum class JudgeVerdict { kCorrect, kIncorrect };
std::string_view to_string(JudgeVerdict v);

struct EvalRecord {
  std::string sample_id;
  std::optional<Verdict> predicted;
  Verdict gold = Verdict::kYes;
  std::optional<JudgeVerdict> judge_verdict;
  std::string response_text;
  bool judge_unparseable = false;
};

/// Binary metrics with Yes as the positive class. An unparsed prediction is
/// scored as the label opposite to gold, so it lands in fn (gold Yes) or fp
/// (gold No) and never raises any metric; `unparsed` counts them separately.
struct MetricsReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> judge_accuracy;
  long tp = 0, fp = 0, fn = 0, tn = 0, unparsed = 0;
  bool precision_undefined = false;
  bool recall_undefined = false;

  long total() const { return tp + fp + fn + tn; }
};

MetricsReport score_binary(const std::vector<EvalRecord>& records);

/// Fraction of records judged correct. Every record must carry a verdict.
double judge_accuracy(const std::vector<EvalRecord>& records);

struct JudgeOptions {
  double temperature = 0.0;
  int max_tokens = 8;
  std::int64_t seed = 0;
};

struct JudgeOutcome {
  JudgeVerdict verdict = JudgeVerdict::kIncorrect;
  bool judge_called = false;
  bool unparseable = false;  // UnparseableJudge: both attempts unusable
};

/// Parses a one-word judge reply ("correct" / "incorrect").
std::optional<JudgeVerdict> parse_judge_word(std::string_view text);

/// Applies the answer-mismatch rule locally first: a response whose extracted
/// verdict differs from gold (or is missing) is incorrect without any call.
/// Otherwise asks the judge; an unparseable reply is retried once, then
/// treated as incorrect.
JudgeOutcome judge_response(const LegalSample& sample, std::string_view response,
                            const EndpointProfile& judge, Gateway& gateway,
                            const PromptForge& forge, const JudgeOptions& options = {});

struct EvalOptions {
  double student_temperature = 0.0;
  int student_max_tokens = 1024;
  std::int64_t seed = 0;
  bool use_judge = true;
  JudgeOptions judge;
};

struct EvalReport {
  std::string dataset;
  std::string policy_checkpoint;
  MetricsReport metrics;
  std::vector<EvalRecord> records;
};

/// Generates a CoT answer per sample with the student, extracts verdicts,
/// optionally judges them, and scores the lot.
EvalReport evaluate_student(const Corpus& corpus, const EndpointProfile& student,
                            const EndpointProfile* judge, Gateway& gateway,
                            const PromptForge& forge, const EvalOptions& options);

Json metrics_to_json(const MetricsReport& m);
Json eval_report_to_json(const EvalReport& r);
EvalReport eval_report_from_json(const Json& j);

/// Fixed-width Acc/F1/Judge table, one row per report.
std::string format_metrics_table(const std::vector<EvalReport>& reports);

}  // namespace blindspot
