// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "blindspot/corpus.hpp"
#include "blindspot/gateway.hpp"
#include "blindspot/prompts.hpp"

namespace blindspot {

// ---------------------------------------------------------------------------
// Exploration

struct StudentResponse {
  std::string sample_id;
  std::string text;
  std::optional<Verdict> extracted_verdict;
  int iteration = 0;

  /// True when no final-answer line could be extracted.
  bool flagged() const { return !extracted_verdict.has_value(); }
};

/// A work item that produced no output, with the reason.
struct SkipRecord {
  std::string sample_id;
  std::string reason;
};

struct ExploreOptions {
  double temperature = 0.7;
  int max_tokens = 1024;
  std::int64_t seed = 0;
  int iteration = 0;
};

struct ExploreResult {
  std::vector<StudentResponse> responses;  // corpus order, skipped samples omitted
  std::vector<SkipRecord> skips;
};

/// One CoT response per sample from the current student.
ExploreResult explore(const Corpus& corpus, const EndpointProfile& student, Gateway& gateway,
                      const PromptForge& forge, const ExploreOptions& options);

/// Deterministic subset of ceil(fraction * N) samples, in corpus order.
Corpus exploration_subset(const Corpus& corpus, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Diagnosis

enum class AuditStatus { kCorrectAnswer, kIncorrectAnswer, kFlawedReasoning };
std::string_view to_string(AuditStatus s);
std::optional<AuditStatus> parse_audit_status(std::string_view s);

struct AuditReport {
  AuditStatus status = AuditStatus::kCorrectAnswer;
  std::vector<std::string> error_types;
  std::string generic_summary;
  std::string reproduction_instruction;
  std::string source_sample_id;
  std::string raw_json;
  int repair_attempts = 0;
};

struct AuditOptions {
  int retries = 2;  // repair re-asks after the first attempt
  std::vector<std::string> taxonomy = kDefaultErrorTaxonomy;
  bool strict_taxonomy = false;
  double temperature = 0.2;
  int max_tokens = 1024;
  std::int64_t seed = 0;
};

/// Maps a free-form label onto the taxonomy: case/whitespace-insensitive
/// equality first, then the label with the highest word overlap (Jaccard).
/// nullopt when nothing overlaps.
std::optional<std::string> nearest_taxonomy_label(std::string_view label,
                                                  const std::vector<std::string>& taxonomy);

/// Parses an audit agent reply (bare JSON or JSON inside a code fence).
/// Throws kAudit describing what is wrong.
AuditReport parse_audit_output(std::string_view text, const AuditOptions& options);

AuditReport audit(const LegalSample& sample, const StudentResponse& response,
                  const EndpointProfile& auditor, Gateway& gateway, const PromptForge& forge,
                  const AuditOptions& options);

struct DiagnoseResult {
  std::vector<AuditReport> reports;
  std::vector<SkipRecord> skips;
};

DiagnoseResult diagnose(const Corpus& corpus, const std::vector<StudentResponse>& responses,
                        const EndpointProfile& auditor, Gateway& gateway, const PromptForge& forge,
                        const AuditOptions& options);

// ---------------------------------------------------------------------------
// Error instruction bank

struct ErrorInstruction {
  std::string id;
  std::string text;
  std::vector<std::string> error_types;
  std::string generic_summary;
  std::string source_sample_id;
  int iteration = 0;
};

class ErrorBank {
 public:
  const std::vector<ErrorInstruction>& instructions() const { return instructions_; }
  std::size_t size() const { return instructions_.size(); }
  bool empty() const { return instructions_.empty(); }
  const ErrorInstruction* find(std::string_view id) const;

  /// False when an instruction with the same normalized text exists.
  bool add(ErrorInstruction instruction);

 private:
  std::vector<ErrorInstruction> instructions_;
  std::set<std::string> dedup_index_;
};

/// Lowercased, whitespace-collapsed text used for deduplication.
std::string normalize_instruction(std::string_view text);

/// Stable id derived from the normalized text.
std::string instruction_id(std::string_view text);

/// False when `instruction` repeats `ngram` or more consecutive words of
/// `context` verbatim (case and punctuation ignored).
bool is_context_agnostic(std::string_view instruction, std::string_view context,
                         std::size_t ngram = 6);

struct BankOptions {
  std::size_t context_ngram = 6;
  int iteration = 0;
};

struct BankUpdate {
  ErrorBank bank;
  std::size_t added = 0;
  std::size_t duplicates = 0;
  std::size_t skipped_correct = 0;
  std::vector<std::string> context_bound;  // source sample ids of rejected instructions
};

/// Merges non-correct reports with a non-empty instruction into `existing`.
/// When `corpus` is given, instructions that copy their source context are
/// rejected.
BankUpdate compile_bank(const std::vector<AuditReport>& reports,
                        const std::optional<ErrorBank>& existing, const Corpus* corpus,
                        const BankOptions& options = {});

struct Draw {
  std::vector<ErrorInstruction> instructions;
  bool shortfall = false;
};

/// K distinct instructions, uniform without replacement, seeded by
/// (seed, sample.id). Returns the whole bank with shortfall when |bank| < K.
Draw draw_instructions(const ErrorBank& bank, const LegalSample& sample, int k,
                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Targeted generation

struct PreferencePair {
  std::string pair_id;
  std::string sample_id;
  std::string instruction_id;
  std::string chosen;
  std::string rejected;
  int iteration = 0;
  int k_index = 1;
};

enum class DropReason { kVerdictMismatchRejected, kVerdictMismatchChosen, kDegeneratePair };
std::string_view to_string(DropReason r);

struct DropRecord {
  std::string pair_id;
  std::string sample_id;
  std::string instruction_id;
  int k_index = 1;
  DropReason reason = DropReason::kDegeneratePair;
  std::string detail;
};

struct SynthesisOptions {
  int k = 4;
  std::int64_t seed = 0;
  int iteration = 0;
  double temperature = 0.8;
  int max_tokens = 1024;
  int retries = 2;
  double drop_fraction_limit = 0.25;
};

std::string make_pair_id(int iteration, std::string_view sample_id, int k_index);

/// Rejected response first, then the chosen one conditioned on it. Verdicts
/// are enforced: rejected must conclude opposite to gold, chosen equal to it;
/// each side is resampled up to `retries` times before the pair is dropped.
std::variant<PreferencePair, DropRecord> synthesize_pair(
    const LegalSample& sample, const ErrorInstruction& instruction, int k_index,
    const EndpointProfile& teacher, Gateway& gateway, const PromptForge& forge,
    const SynthesisOptions& options);

struct SynthesisResult {
  std::vector<PreferencePair> pairs;
  std::vector<DropRecord> drops;
  std::vector<std::string> shortfall_samples;
  std::size_t attempted = 0;
};

/// K pairs per sample. Throws kSynthesis when the dropped fraction exceeds
/// options.drop_fraction_limit.
SynthesisResult synthesize_dataset(const Corpus& corpus, const ErrorBank& bank,
                                   const EndpointProfile& teacher, Gateway& gateway,
                                   const PromptForge& forge, const SynthesisOptions& options);

// ---------------------------------------------------------------------------
// Serialization

Json to_json(const StudentResponse& r);
Json to_json(const SkipRecord& r);
Json to_json(const AuditReport& r);
Json to_json(const ErrorInstruction& e);
Json to_json(const PreferencePair& p);
Json to_json(const DropRecord& d);

StudentResponse student_response_from_json(const Json& j);
AuditReport audit_report_from_json(const Json& j);
ErrorInstruction instruction_from_json(const Json& j);
PreferencePair pair_from_json(const Json& j);
DropRecord drop_from_json(const Json& j);

ErrorBank bank_from_rows(const std::vector<Json>& rows);
std::vector<Json> bank_to_rows(const ErrorBank& bank);

}  // namespace blindspot
