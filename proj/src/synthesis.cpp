// SPDX-License-Identifier: Apache-2.0
#include "blindspot/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "blindspot/errors.hpp"
#include "blindspot/evaluation.hpp"
#include "blindspot/hashing.hpp"
#include "blindspot/parallel.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

namespace {

/// Unbiased integer in [0, bound) from a 64-bit engine. std::uniform_int_distribution
/// is implementation-defined, so draws would differ across standard libraries.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

std::vector<std::size_t> partial_shuffle(std::size_t n, std::size_t take, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < take && i + 1 < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(bounded(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

std::string verdict_name(std::optional<Verdict> v) {
  return v ? std::string(to_string(*v)) : std::string("none");
}

}  // namespace

// ---------------------------------------------------------------------------
// Exploration

ExploreResult explore(const Corpus& corpus, const EndpointProfile& student, Gateway& gateway,
                      const PromptForge& forge, const ExploreOptions& options) {
  if (corpus.samples.empty()) throw Error(ErrorCode::kInvalidArgument, "explore: empty corpus");
  const std::size_t n = corpus.samples.size();
  std::vector<std::optional<StudentResponse>> slots(n);
  std::vector<std::optional<SkipRecord>> failures(n);

  parallel_for(n, student.max_parallel, [&](std::size_t i) {
    const LegalSample& s = corpus.samples[i];
    const RenderedPrompt prompt =
        forge.render(PromptKind::kStudentCot, {{"contract", s.context}, {"question", s.query}});
    GenerationRequest req;
    req.messages = prompt.messages();
    req.temperature = options.temperature;
    req.max_tokens = options.max_tokens;
    req.seed = options.seed;
    try {
      const auto res = gateway.generate(student, req);
      if (trim(res.text).empty()) {
        failures[i] = SkipRecord{s.id, "empty response"};
        return;
      }
      StudentResponse r;
      r.sample_id = s.id;
      r.text = res.text;
      r.extracted_verdict = extract_verdict(res.text);
      r.iteration = options.iteration;
      slots[i] = std::move(r);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kTransport && e.code() != ErrorCode::kRateLimited &&
          e.code() != ErrorCode::kSchema) {
        throw;
      }
      failures[i] = SkipRecord{s.id, e.what()};
    }
  });

  ExploreResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) out.responses.push_back(std::move(*slots[i]));
    if (failures[i]) out.skips.push_back(std::move(*failures[i]));
  }
  return out;
}

Corpus exploration_subset(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "exploration fraction must be in (0, 1]");
  }
  const std::size_t n = corpus.samples.size();
  const auto take = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  if (take == n) return corpus;
  std::mt19937_64 rng(seed);
  auto idx = partial_shuffle(n, take, rng);
  std::sort(idx.begin(), idx.end());
  Corpus out;
  out.source_path = corpus.source_path;
  for (auto i : idx) out.samples.push_back(corpus.samples[i]);
  out.content_hash = corpus_content_hash(out.samples);
  return out;
}

// ---------------------------------------------------------------------------
// Diagnosis

std::string_view to_string(AuditStatus s) {
  switch (s) {
    case AuditStatus::kCorrectAnswer: return "correct_answer";
    case AuditStatus::kIncorrectAnswer: return "incorrect_answer";
    case AuditStatus::kFlawedReasoning: return "flawed_reasoning";
  }
  return "correct_answer";
}

std::optional<AuditStatus> parse_audit_status(std::string_view s) {
  std::string t = to_lower(trim(s));
  std::replace(t.begin(), t.end(), ' ', '_');
  if (t == "correct_answer" || t == "correct") return AuditStatus::kCorrectAnswer;
  if (t == "incorrect_answer" || t == "incorrect") return AuditStatus::kIncorrectAnswer;
  if (t == "flawed_reasoning") return AuditStatus::kFlawedReasoning;
  return std::nullopt;
}

std::optional<std::string> nearest_taxonomy_label(std::string_view label,
                                                  const std::vector<std::string>& taxonomy) {
  const std::string norm = normalize_whitespace_lower(label);
  for (const auto& t : taxonomy) {
    if (normalize_whitespace_lower(t) == norm) return t;
  }
  const auto lw = words(label);
  const std::set<std::string> a(lw.begin(), lw.end());
  double best = 0.0;
  std::optional<std::string> pick;
  for (const auto& t : taxonomy) {
    const auto tw = words(t);
    const std::set<std::string> b(tw.begin(), tw.end());
    std::size_t inter = 0;
    for (const auto& w : a) inter += b.count(w);
    const std::size_t uni = a.size() + b.size() - inter;
    const double j = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    if (j > best) {
      best = j;
      pick = t;
    }
  }
  return pick;
}

AuditReport parse_audit_output(std::string_view text, const AuditOptions& options) {
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw Error(ErrorCode::kAudit, "reply contains no JSON object");
  }
  const std::string_view body = text.substr(open, close - open + 1);
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kAudit, std::string("reply is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kAudit, "reply is not a JSON object");

  AuditReport r;
  r.raw_json = std::string(body);
  if (!j.contains("status") || !j["status"].is_string()) {
    throw Error(ErrorCode::kAudit, "missing string field \"status\"");
  }
  auto status = parse_audit_status(j["status"].get<std::string>());
  if (!status) throw Error(ErrorCode::kAudit, "unknown status " + j["status"].dump());
  r.status = *status;

  const auto text_field = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) throw Error(ErrorCode::kAudit, std::string(key) + " must be a string");
    return std::string(trim(it->get<std::string>()));
  };
  r.generic_summary = text_field("generic_summary");
  r.reproduction_instruction = text_field("reproduction_instruction");

  if (auto it = j.find("error_types"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(ErrorCode::kAudit, "error_types must be an array");
    for (const auto& e : *it) {
      if (!e.is_string()) throw Error(ErrorCode::kAudit, "error_types entries must be strings");
      const auto raw = e.get<std::string>();
      const auto mapped = nearest_taxonomy_label(raw, options.taxonomy);
      const bool exact = mapped && normalize_whitespace_lower(*mapped) == normalize_whitespace_lower(raw);
      if (options.strict_taxonomy && !exact) {
        throw Error(ErrorCode::kAudit, "TaxonomyViolation: \"" + raw + "\" is not a taxonomy label");
      }
      if (mapped && std::find(r.error_types.begin(), r.error_types.end(), *mapped) ==
                        r.error_types.end()) {
        r.error_types.push_back(*mapped);
      }
    }
  }
  if (r.status != AuditStatus::kCorrectAnswer && r.reproduction_instruction.empty()) {
    throw Error(ErrorCode::kAudit, "non-correct status requires a reproduction_instruction");
  }
  return r;
}

AuditReport audit(const LegalSample& sample, const StudentResponse& response,
                  const EndpointProfile& auditor, Gateway& gateway, const PromptForge& forge,
                  const AuditOptions& options) {
  if (trim(response.text).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "audit: empty student response");
  }
  const RenderedPrompt prompt = forge.render(
      PromptKind::kAuditAgent, {{"contract", sample.context},
                                {"question", sample.query},
                                {"ground_truth", std::string(to_string(sample.gold))},
                                {"student_answer", response.text}});
  GenerationRequest req;
  req.messages = prompt.messages();
  req.temperature = options.temperature;
  req.max_tokens = options.max_tokens;
  req.seed = options.seed;

  std::string last_problem;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    const auto res = gateway.generate(auditor, req);
    try {
      AuditReport r = parse_audit_output(res.text, options);
      r.source_sample_id = sample.id;
      r.repair_attempts = attempt;
      return r;
    } catch (const Error& e) {
      last_problem = e.what();
      req.messages.push_back({ChatRole::kAssistant, res.text});
      req.messages.push_back(
          {ChatRole::kUser,
           "Your previous reply could not be used (" + last_problem +
               "). Respond again with only a strict JSON object with the keys \"status\" "
               "(CORRECT_ANSWER, INCORRECT_ANSWER or FLAWED_REASONING), \"error_types\" (labels "
               "from: " +
               join(options.taxonomy, ", ") +
               "), \"generic_summary\" and \"reproduction_instruction\"."});
    }
  }
  throw Error(ErrorCode::kAudit, "UnparseableAuditOutput for sample " + sample.id + " after " +
                                     std::to_string(options.retries) + " repairs: " + last_problem);
}

DiagnoseResult diagnose(const Corpus& corpus, const std::vector<StudentResponse>& responses,
                        const EndpointProfile& auditor, Gateway& gateway, const PromptForge& forge,
                        const AuditOptions& options) {
  const std::size_t n = responses.size();
  std::vector<std::optional<AuditReport>> slots(n);
  std::vector<std::optional<SkipRecord>> failures(n);
  parallel_for(n, auditor.max_parallel, [&](std::size_t i) {
    const auto& resp = responses[i];
    const LegalSample* sample = corpus.find(resp.sample_id);
    if (sample == nullptr) {
      throw Error(ErrorCode::kState, "response for unknown sample " + resp.sample_id);
    }
    try {
      slots[i] = audit(*sample, resp, auditor, gateway, forge, options);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kAudit && e.code() != ErrorCode::kTransport &&
          e.code() != ErrorCode::kRateLimited && e.code() != ErrorCode::kSchema) {
        throw;
      }
      failures[i] = SkipRecord{resp.sample_id, e.what()};
    }
  });
  DiagnoseResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) out.reports.push_back(std::move(*slots[i]));
    if (failures[i]) out.skips.push_back(std::move(*failures[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bank

std::string normalize_instruction(std::string_view text) { return normalize_whitespace_lower(text); }

std::string instruction_id(std::string_view text) {
  return "ins-" + sha256_hex(normalize_instruction(text)).substr(0, 12);
}

const ErrorInstruction* ErrorBank::find(std::string_view id) const {
  auto it = std::find_if(instructions_.begin(), instructions_.end(),
                         [&](const ErrorInstruction& e) { return e.id == id; });
  return it == instructions_.end() ? nullptr : &*it;
}

bool ErrorBank::add(ErrorInstruction instruction) {
  if (trim(instruction.text).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty error instruction");
  }
  if (!dedup_index_.insert(normalize_instruction(instruction.text)).second) return false;
  if (instruction.id.empty()) instruction.id = instruction_id(instruction.text);
  instructions_.push_back(std::move(instruction));
  return true;
}

bool is_context_agnostic(std::string_view instruction, std::string_view context,
                         std::size_t ngram) {
  if (ngram == 0) return true;
  const auto iw = words(instruction);
  const auto cw = words(context);
  if (iw.size() < ngram || cw.size() < ngram) return true;
  const auto key = [&](const std::vector<std::string>& w, std::size_t at) {
    std::string k;
    for (std::size_t i = at; i < at + ngram; ++i) {
      k += w[i];
      k += '\x1f';
    }
    return k;
  };
  std::unordered_set<std::string> grams;
  for (std::size_t i = 0; i + ngram <= cw.size(); ++i) grams.insert(key(cw, i));
  for (std::size_t i = 0; i + ngram <= iw.size(); ++i) {
    if (grams.count(key(iw, i))) return false;
  }
  return true;
}

BankUpdate compile_bank(const std::vector<AuditReport>& reports,
                        const std::optional<ErrorBank>& existing, const Corpus* corpus,
                        const BankOptions& options) {
  BankUpdate up;
  if (existing) up.bank = *existing;
  for (const auto& r : reports) {
    if (r.status == AuditStatus::kCorrectAnswer || trim(r.reproduction_instruction).empty()) {
      ++up.skipped_correct;
      continue;
    }
    if (corpus != nullptr) {
      const LegalSample* src = corpus->find(r.source_sample_id);
      if (src != nullptr &&
          !is_context_agnostic(r.reproduction_instruction, src->context, options.context_ngram)) {
        up.context_bound.push_back(r.source_sample_id);
        continue;
      }
    }
    ErrorInstruction e;
    e.id = instruction_id(r.reproduction_instruction);
    e.text = r.reproduction_instruction;
    e.error_types = r.error_types;
    e.generic_summary = r.generic_summary;
    e.source_sample_id = r.source_sample_id;
    e.iteration = options.iteration;
    if (up.bank.add(std::move(e))) {
      ++up.added;
    } else {
      ++up.duplicates;
    }
  }
  return up;
}

Draw draw_instructions(const ErrorBank& bank, const LegalSample& sample, int k,
                       std::uint64_t seed) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "draw_instructions: K must be >= 1");
  if (bank.empty()) throw Error(ErrorCode::kSynthesis, "EmptyBank");
  const std::size_t n = bank.size();
  Draw d;
  d.shortfall = static_cast<std::size_t>(k) > n;
  const std::size_t take = std::min(n, static_cast<std::size_t>(k));
  std::mt19937_64 rng(seed ^ hash64(sample.id));
  for (auto i : partial_shuffle(n, take, rng)) d.instructions.push_back(bank.instructions()[i]);
  return d;
}

// ---------------------------------------------------------------------------
// Targeted generation

std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::kVerdictMismatchRejected: return "VerdictMismatch(rejected)";
    case DropReason::kVerdictMismatchChosen: return "VerdictMismatch(chosen)";
    case DropReason::kDegeneratePair: return "DegeneratePair";
  }
  return "DegeneratePair";
}

std::string make_pair_id(int iteration, std::string_view sample_id, int k_index) {
  return "t" + std::to_string(iteration) + ":" + std::string(sample_id) + ":k" +
         std::to_string(k_index);
}

std::variant<PreferencePair, DropRecord> synthesize_pair(
    const LegalSample& sample, const ErrorInstruction& instruction, int k_index,
    const EndpointProfile& teacher, Gateway& gateway, const PromptForge& forge,
    const SynthesisOptions& options) {
  const std::string pair_id = make_pair_id(options.iteration, sample.id, k_index);
  const auto drop = [&](DropReason reason, std::string detail) {
    return DropRecord{pair_id, sample.id, instruction.id, k_index, reason, std::move(detail)};
  };

  Bindings b{{"contract", sample.context},
             {"question", sample.query},
             {"correct_answer", std::string(to_string(sample.gold))},
             {"error_types", instruction.error_types.empty() ? std::string("unspecified")
                                                             : join(instruction.error_types, ", ")},
             {"generic_summary", instruction.generic_summary.empty() ? instruction.text
                                                                     : instruction.generic_summary},
             {"reproduction_instruction", instruction.text}};

  GenerationRequest req;
  req.temperature = options.temperature;
  req.max_tokens = options.max_tokens;

  // Each resample uses a fresh seed so it is a distinct (cacheable) request.
  const auto sample_until = [&](PromptKind kind, Verdict want,
                                std::string& out) -> std::optional<std::string> {
    req.messages = forge.render(kind, b).messages();
    std::optional<Verdict> got;
    for (int attempt = 0; attempt <= options.retries; ++attempt) {
      req.seed = options.seed * 100 + attempt;
      out = gateway.generate(teacher, req).text;
      got = extract_verdict(out);
      if (got == want) return std::nullopt;
    }
    return "expected " + std::string(to_string(want)) + ", got " + verdict_name(got) + " after " +
           std::to_string(options.retries + 1) + " attempts";
  };

  std::string rejected;
  if (auto why = sample_until(PromptKind::kTeacherRejected, opposite(sample.gold), rejected)) {
    return drop(DropReason::kVerdictMismatchRejected, *why);
  }
  b["rejected_response"] = rejected;
  std::string chosen;
  if (auto why = sample_until(PromptKind::kTeacherChosen, sample.gold, chosen)) {
    return drop(DropReason::kVerdictMismatchChosen, *why);
  }
  if (trim(chosen) == trim(rejected)) {
    return drop(DropReason::kDegeneratePair, "chosen text equals rejected text");
  }
  return PreferencePair{pair_id, sample.id, instruction.id, chosen, rejected,
                        options.iteration, k_index};
}

SynthesisResult synthesize_dataset(const Corpus& corpus, const ErrorBank& bank,
                                   const EndpointProfile& teacher, Gateway& gateway,
                                   const PromptForge& forge, const SynthesisOptions& options) {
  if (options.k < 1) throw Error(ErrorCode::kInvalidArgument, "synthesize_dataset: K must be >= 1");
  if (bank.empty()) throw Error(ErrorCode::kSynthesis, "EmptyBank");

  struct Item {
    const LegalSample* sample;
    ErrorInstruction instruction;
    int k_index;
  };
  SynthesisResult out;
  std::vector<Item> items;
  for (const auto& s : corpus.samples) {
    Draw d = draw_instructions(bank, s, options.k, static_cast<std::uint64_t>(options.seed));
    if (d.shortfall) out.shortfall_samples.push_back(s.id);
    for (std::size_t k = 0; k < d.instructions.size(); ++k) {
      items.push_back({&s, std::move(d.instructions[k]), static_cast<int>(k) + 1});
    }
  }

  std::vector<std::optional<std::variant<PreferencePair, DropRecord>>> results(items.size());
  parallel_for(items.size(), teacher.max_parallel, [&](std::size_t i) {
    const Item& it = items[i];
    results[i] = synthesize_pair(*it.sample, it.instruction, it.k_index, teacher, gateway, forge,
                                 options);
  });

  out.attempted = items.size();
  for (auto& r : results) {
    if (auto* p = std::get_if<PreferencePair>(&*r)) {
      out.pairs.push_back(std::move(*p));
    } else {
      out.drops.push_back(std::get<DropRecord>(std::move(*r)));
    }
  }
  if (out.attempted > 0) {
    const double frac = static_cast<double>(out.drops.size()) / static_cast<double>(out.attempted);
    if (frac > options.drop_fraction_limit) {
      throw Error(ErrorCode::kSynthesis,
                  "dropped " + std::to_string(out.drops.size()) + " of " +
                      std::to_string(out.attempted) + " pairs, above the limit of " +
                      std::to_string(options.drop_fraction_limit));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

Json to_json(const StudentResponse& r) {
  return Json{{"sample_id", r.sample_id},
              {"text", r.text},
              {"extracted_verdict", r.extracted_verdict
                                        ? Json(std::string(to_string(*r.extracted_verdict)))
                                        : Json(nullptr)},
              {"flagged", r.flagged()},
              {"iteration", r.iteration}};
}

Json to_json(const SkipRecord& r) { return Json{{"sample_id", r.sample_id}, {"reason", r.reason}}; }

Json to_json(const AuditReport& r) {
  return Json{{"status", std::string(to_string(r.status))},
              {"error_types", r.error_types},
              {"generic_summary", r.generic_summary},
              {"reproduction_instruction", r.reproduction_instruction},
              {"source_sample_id", r.source_sample_id},
              {"raw_json", r.raw_json},
              {"repair_attempts", r.repair_attempts}};
}

Json to_json(const ErrorInstruction& e) {
  return Json{{"id", e.id},
              {"text", e.text},
              {"error_types", e.error_types},
              {"generic_summary", e.generic_summary},
              {"source_sample_id", e.source_sample_id},
              {"iteration", e.iteration}};
}

Json to_json(const PreferencePair& p) {
  return Json{{"pair_id", p.pair_id},       {"sample_id", p.sample_id},
              {"instruction_id", p.instruction_id}, {"chosen", p.chosen},
              {"rejected", p.rejected},     {"iteration", p.iteration},
              {"k_index", p.k_index}};
}

Json to_json(const DropRecord& d) {
  return Json{{"pair_id", d.pair_id},
              {"sample_id", d.sample_id},
              {"instruction_id", d.instruction_id},
              {"k_index", d.k_index},
              {"reason", std::string(to_string(d.reason))},
              {"detail", d.detail}};
}

StudentResponse student_response_from_json(const Json& j) {
  StudentResponse r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  if (const auto& v = j.at("extracted_verdict"); !v.is_null()) {
    r.extracted_verdict = parse_verdict(v.get<std::string>());
  }
  r.iteration = j.value("iteration", 0);
  return r;
}

AuditReport audit_report_from_json(const Json& j) {
  AuditReport r;
  r.status = parse_audit_status(j.at("status").get<std::string>()).value();
  r.error_types = j.value("error_types", std::vector<std::string>{});
  r.generic_summary = j.value("generic_summary", "");
  r.reproduction_instruction = j.value("reproduction_instruction", "");
  r.source_sample_id = j.value("source_sample_id", "");
  r.raw_json = j.value("raw_json", "");
  r.repair_attempts = j.value("repair_attempts", 0);
  return r;
}

ErrorInstruction instruction_from_json(const Json& j) {
  ErrorInstruction e;
  e.id = j.at("id").get<std::string>();
  e.text = j.at("text").get<std::string>();
  e.error_types = j.value("error_types", std::vector<std::string>{});
  e.generic_summary = j.value("generic_summary", "");
  e.source_sample_id = j.value("source_sample_id", "");
  e.iteration = j.value("iteration", 0);
  return e;
}

PreferencePair pair_from_json(const Json& j) {
  PreferencePair p;
  p.pair_id = j.at("pair_id").get<std::string>();
  p.sample_id = j.at("sample_id").get<std::string>();
  p.instruction_id = j.at("instruction_id").get<std::string>();
  p.chosen = j.at("chosen").get<std::string>();
  p.rejected = j.at("rejected").get<std::string>();
  p.iteration = j.at("iteration").get<int>();
  p.k_index = j.at("k_index").get<int>();
  return p;
}

DropRecord drop_from_json(const Json& j) {
  DropRecord d;
  d.pair_id = j.at("pair_id").get<std::string>();
  d.sample_id = j.at("sample_id").get<std::string>();
  d.instruction_id = j.at("instruction_id").get<std::string>();
  d.k_index = j.at("k_index").get<int>();
  const auto reason = j.at("reason").get<std::string>();
  for (auto r : {DropReason::kVerdictMismatchRejected, DropReason::kVerdictMismatchChosen,
                 DropReason::kDegeneratePair}) {
    if (to_string(r) == reason) d.reason = r;
  }
  d.detail = j.value("detail", "");
  return d;
}

ErrorBank bank_from_rows(const std::vector<Json>& rows) {
  ErrorBank bank;
  for (const auto& row : rows) bank.add(instruction_from_json(row));
  return bank;
}

std::vector<Json> bank_to_rows(const ErrorBank& bank) {
  std::vector<Json> rows;
  for (const auto& e : bank.instructions()) rows.push_back(to_json(e));
  return rows;
}

}  // namespace blindspot
