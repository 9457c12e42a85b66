// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "blindspot/corpus.hpp"
#include "blindspot/gateway.hpp"
#include "blindspot/prompts.hpp"
#include "blindspot/synthesis.hpp"

namespace blindspot {

inline constexpr double kDefaultLabelFloor = 1e-6;

/// Probability mass read for one label word from first-token alternatives.
struct LabelMatch {
  std::optional<double> probability;  // nullopt when the label is absent
  bool via_prefix_proxy = false;
};

/// Matches `label` against alternative tokens, case-insensitively with leading
/// whitespace stripped. Exact matches (all spellings) have their probabilities
/// summed. With no exact match, the most probable token that is a proper
/// prefix of `label` (at least 2 chars) and not a prefix of `other_label`
/// stands in for a label word split across several tokens.
LabelMatch match_label(const TokenLogprobs& alternatives, std::string_view label,
                       std::string_view other_label);

/// p_c / (p_c + p_i). Requires both > 0.
double normalized_score(double p_correct, double p_incorrect);

struct CorrectnessScore {
  double score = 0.5;
  bool determinable = false;
  TokenLogprobs raw;
};

/// Scores raw alternatives: a single missing label gets `floor`; with neither
/// label present the score is 0.5 and not determinable.
CorrectnessScore score_alternatives(const TokenLogprobs& alternatives,
                                    double floor = kDefaultLabelFloor);

struct VerificationOptions {
  int top_k = 20;
  double floor = kDefaultLabelFloor;
  std::int64_t seed = 0;
};

/// Asks the student whether `candidate` is correct and normalizes the
/// probabilities of "correct" / "incorrect" at the first generated token.
CorrectnessScore correctness_score(const EndpointProfile& student, const LegalSample& sample,
                                   const std::string& candidate, Gateway& gateway,
                                   const PromptForge& forge, const VerificationOptions& options = {});

/// s_minus - s_plus. Inputs must lie in [0, 1].
double difficulty_score(double s_minus, double s_plus);

struct VerificationRecord {
  std::string pair_id;
  double s_plus = 0.5;
  double s_minus = 0.5;
  double ds = 0.0;
  TokenLogprobs raw_alternatives_plus;
  TokenLogprobs raw_alternatives_minus;
  bool determinable = false;
  std::string checkpoint;  // student model that produced the scores
};

Json verification_to_json(const VerificationRecord& r);
VerificationRecord verification_from_json(const Json& j);

/// Scores both sides of every pair with the student.
std::vector<VerificationRecord> verify_pairs(const Corpus& corpus,
                                             const std::vector<PreferencePair>& pairs,
                                             const EndpointProfile& student, Gateway& gateway,
                                             const PromptForge& forge,
                                             const VerificationOptions& options = {});

struct FilterResult {
  std::vector<PreferencePair> retained;
  std::size_t indeterminable = 0;
  std::size_t below_threshold = 0;
};

/// Keeps pairs that are determinable with ds > tau (strict), in input order.
FilterResult filter_pairs(const std::vector<VerificationRecord>& records,
                          const std::vector<PreferencePair>& pairs, double tau);

}  // namespace blindspot
