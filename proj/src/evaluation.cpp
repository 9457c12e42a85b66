// SPDX-License-Identifier: Apache-2.0
#include "blindspot/evaluation.hpp"

#include <cstdio>
#include <regex>

#include "blindspot/errors.hpp"
#include "blindspot/parallel.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

std::optional<Verdict> extract_verdict(std::string_view text) {
  static const std::regex kPattern(R"(final[ \t]*answer[\s\*_]*[:：][\s\*_]*(yes|no)\b)",
                                   std::regex::ECMAScript | std::regex::icase);
  std::optional<Verdict> last;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kPattern); it != std::sregex_iterator();
       ++it) {
    last = parse_verdict((*it)[1].str());
  }
  return last;
}

std::string_view to_string(JudgeVerdict v) {
  return v == JudgeVerdict::kCorrect ? "correct" : "incorrect";
}

namespace {

double f1_from(long tp, long fp, long fn, bool& precision_undefined, bool& recall_undefined) {
  precision_undefined = (tp + fp) == 0;
  recall_undefined = (tp + fn) == 0;
  if (precision_undefined || recall_undefined || tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

MetricsReport score_binary(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::kInvalidArgument, "score_binary: empty input");
  MetricsReport m;
  for (const auto& r : records) {
    Verdict pred;
    if (r.predicted) {
      pred = *r.predicted;
    } else {
      ++m.unparsed;
      pred = opposite(r.gold);
    }
    const bool pred_yes = pred == Verdict::kYes;
    const bool gold_yes = r.gold == Verdict::kYes;
    if (pred_yes && gold_yes) ++m.tp;
    else if (pred_yes && !gold_yes) ++m.fp;
    else if (!pred_yes && gold_yes) ++m.fn;
    else ++m.tn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
  m.f1 = f1_from(m.tp, m.fp, m.fn, m.precision_undefined, m.recall_undefined);
  bool pu = false, ru = false;
  const double f1_no = f1_from(m.tn, m.fn, m.fp, pu, ru);
  m.macro_f1 = 0.5 * (m.f1 + f1_no);

  bool all_judged = true;
  for (const auto& r : records) all_judged = all_judged && r.judge_verdict.has_value();
  if (all_judged) m.judge_accuracy = judge_accuracy(records);
  return m;
}

double judge_accuracy(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::kInvalidArgument, "judge_accuracy: empty input");
  long correct = 0;
  for (const auto& r : records) {
    if (!r.judge_verdict) {
      throw Error(ErrorCode::kInvalidArgument, "judge_accuracy: record " + r.sample_id +
                                                   " has no judge verdict");
    }
    if (*r.judge_verdict == JudgeVerdict::kCorrect) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

std::optional<JudgeVerdict> parse_judge_word(std::string_view text) {
  std::string_view body = text;
  // Reasoning models may prepend a think block.
  if (auto close = body.rfind("</think>"); close != std::string_view::npos) {
    body = body.substr(close + 8);
  }
  const auto w = words(body);
  if (w.size() != 1) return std::nullopt;
  if (w[0] == "correct") return JudgeVerdict::kCorrect;
  if (w[0] == "incorrect") return JudgeVerdict::kIncorrect;
  return std::nullopt;
}

JudgeOutcome judge_response(const LegalSample& sample, std::string_view response,
                            const EndpointProfile& judge, Gateway& gateway,
                            const PromptForge& forge, const JudgeOptions& options) {
  JudgeOutcome out;
  const auto predicted = extract_verdict(response);
  if (!predicted || *predicted != sample.gold || trim(response).empty()) {
    out.verdict = JudgeVerdict::kIncorrect;
    return out;
  }
  const RenderedPrompt prompt =
      forge.render(PromptKind::kJudge, {{"question", sample.query},
                                        {"contract", sample.context},
                                        {"ground_truth", std::string(to_string(sample.gold))},
                                        {"model_generation", std::string(response)}});
  GenerationRequest req;
  req.messages = prompt.messages();
  req.temperature = options.temperature;
  req.max_tokens = options.max_tokens;
  for (int attempt = 0; attempt < 2; ++attempt) {
    req.seed = options.seed + attempt;
    out.judge_called = true;
    const auto res = gateway.generate(judge, req);
    if (auto v = parse_judge_word(res.text)) {
      out.verdict = *v;
      return out;
    }
  }
  out.verdict = JudgeVerdict::kIncorrect;
  out.unparseable = true;
  return out;
}

EvalReport evaluate_student(const Corpus& corpus, const EndpointProfile& student,
                            const EndpointProfile* judge, Gateway& gateway,
                            const PromptForge& forge, const EvalOptions& options) {
  if (corpus.samples.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluate: empty corpus");
  EvalReport report;
  report.dataset = std::filesystem::path(corpus.source_path).stem().string();
  report.policy_checkpoint = student.model_name;
  report.records.resize(corpus.samples.size());

  parallel_for(corpus.samples.size(), student.max_parallel, [&](std::size_t i) {
    const LegalSample& s = corpus.samples[i];
    const RenderedPrompt prompt =
        forge.render(PromptKind::kStudentCot, {{"contract", s.context}, {"question", s.query}});
    GenerationRequest req;
    req.messages = prompt.messages();
    req.temperature = options.student_temperature;
    req.max_tokens = options.student_max_tokens;
    req.seed = options.seed;
    const auto res = gateway.generate(student, req);

    EvalRecord& rec = report.records[i];
    rec.sample_id = s.id;
    rec.gold = s.gold;
    rec.response_text = res.text;
    rec.predicted = extract_verdict(res.text);
    if (options.use_judge && judge != nullptr) {
      const auto outcome = judge_response(s, res.text, *judge, gateway, forge, options.judge);
      rec.judge_verdict = outcome.verdict;
      rec.judge_unparseable = outcome.unparseable;
    }
  });
  report.metrics = score_binary(report.records);
  return report;
}

Json metrics_to_json(const MetricsReport& m) {
  return Json{{"accuracy", m.accuracy},
              {"f1", m.f1},
              {"macro_f1", m.macro_f1},
              {"judge_accuracy", m.judge_accuracy ? Json(*m.judge_accuracy) : Json(nullptr)},
              {"counts", {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn},
                          {"unparsed", m.unparsed}}},
              {"precision_undefined", m.precision_undefined},
              {"recall_undefined", m.recall_undefined}};
}

Json eval_report_to_json(const EvalReport& r) {
  Json records = Json::array();
  for (const auto& rec : r.records) {
    records.push_back(Json{
        {"sample_id", rec.sample_id},
        {"gold", std::string(to_string(rec.gold))},
        {"predicted", rec.predicted ? Json(std::string(to_string(*rec.predicted))) : Json(nullptr)},
        {"judge_verdict",
         rec.judge_verdict ? Json(std::string(to_string(*rec.judge_verdict))) : Json(nullptr)},
        {"judge_unparseable", rec.judge_unparseable},
        {"response_text", rec.response_text}});
  }
  return Json{{"dataset", r.dataset},
              {"policy_checkpoint", r.policy_checkpoint},
              {"metrics", metrics_to_json(r.metrics)},
              {"records", records}};
}

EvalReport eval_report_from_json(const Json& j) {
  EvalReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.policy_checkpoint = j.value("policy_checkpoint", "");
  for (const auto& rec : j.at("records")) {
    EvalRecord e;
    e.sample_id = rec.at("sample_id").get<std::string>();
    e.gold = parse_verdict(rec.at("gold").get<std::string>()).value();
    if (!rec.at("predicted").is_null()) {
      e.predicted = parse_verdict(rec.at("predicted").get<std::string>());
    }
    if (!rec.at("judge_verdict").is_null()) {
      e.judge_verdict = parse_judge_word(rec.at("judge_verdict").get<std::string>());
    }
    e.judge_unparseable = rec.value("judge_unparseable", false);
    e.response_text = rec.value("response_text", "");
    r.records.push_back(std::move(e));
  }
  r.metrics = score_binary(r.records);
  return r;
}

std::string format_metrics_table(const std::vector<EvalReport>& reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %6s %8s\n", "dataset", "Acc", "F1", "Judge",
                "N", "unparsed");
  out += line;
  for (const auto& r : reports) {
    const auto& m = r.metrics;
    char judge[16] = "-";
    if (m.judge_accuracy) std::snprintf(judge, sizeof judge, "%.4f", *m.judge_accuracy);
    std::snprintf(line, sizeof line, "%-24s %8.4f %8.4f %8s %6ld %8ld\n", r.dataset.c_str(),
                  m.accuracy, m.f1, judge, m.total(), m.unparsed);
    out += line;
  }
  return out;
}

}  // namespace blindspot
