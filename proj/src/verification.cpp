// SPDX-License-Identifier: Apache-2.0
#include "blindspot/verification.hpp"

#include <cmath>

#include "blindspot/errors.hpp"
#include "blindspot/parallel.hpp"
#include "blindspot/text.hpp"

namespace blindspot {

namespace {

std::string normalize_token(std::string_view token) { return to_lower(trim(token)); }

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

Json alternatives_to_json(const TokenLogprobs& alts) {
  Json j = Json::object();
  for (const auto& [tok, lp] : alts) j[tok] = lp;
  return j;
}

TokenLogprobs alternatives_from_json(const Json& j) {
  TokenLogprobs out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<double>();
  return out;
}

}  // namespace

LabelMatch match_label(const TokenLogprobs& alternatives, std::string_view label,
                       std::string_view other_label) {
  LabelMatch m;
  double exact = 0.0;
  bool any_exact = false;
  double proxy = 0.0;
  bool any_proxy = false;
  for (const auto& [token, logprob] : alternatives) {
    const std::string t = normalize_token(token);
    const double p = std::exp(logprob);
    if (t == label) {
      exact += p;
      any_exact = true;
    } else if (t.size() >= 2 && t.size() < label.size() && starts_with(label, t) &&
               !starts_with(other_label, t)) {
      if (!any_proxy || p > proxy) proxy = p;
      any_proxy = true;
    }
  }
  if (any_exact) {
    m.probability = std::min(1.0, exact);
  } else if (any_proxy) {
    m.probability = proxy;
    m.via_prefix_proxy = true;
  }
  return m;
}

double normalized_score(double p_correct, double p_incorrect) {
  if (!(p_correct > 0.0) || !(p_incorrect > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "normalized_score: probabilities must be > 0");
  }
  return p_correct / (p_correct + p_incorrect);
}

CorrectnessScore score_alternatives(const TokenLogprobs& alternatives, double floor) {
  if (!(floor > 0.0 && floor < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "label floor must be in (0, 1)");
  }
  for (const auto& [tok, lp] : alternatives) {
    if (!std::isfinite(lp) && lp != -INFINITY) {
      throw Error(ErrorCode::kInvalidArgument, "non-finite logprob for token \"" + tok + "\"");
    }
  }
  CorrectnessScore out;
  out.raw = alternatives;
  const auto c = match_label(alternatives, "correct", "incorrect");
  const auto i = match_label(alternatives, "incorrect", "correct");
  if (!c.probability && !i.probability) return out;
  const double pc = std::max(c.probability.value_or(floor), floor);
  const double pi = std::max(i.probability.value_or(floor), floor);
  out.score = normalized_score(pc, pi);
  out.determinable = true;
  return out;
}

CorrectnessScore correctness_score(const EndpointProfile& student, const LegalSample& sample,
                                   const std::string& candidate, Gateway& gateway,
                                   const PromptForge& forge, const VerificationOptions& options) {
  if (trim(candidate).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "correctness_score: empty candidate");
  }
  const RenderedPrompt prompt = forge.render(
      PromptKind::kVerification,
      {{"contract", sample.context}, {"question", sample.query}, {"candidate_response", candidate}});
  const auto alts =
      gateway.first_token_alternatives(student, prompt.messages(), options.top_k, options.seed);
  return score_alternatives(alts, options.floor);
}

double difficulty_score(double s_minus, double s_plus) {
  const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(s_minus) || !in_unit(s_plus)) {
    throw Error(ErrorCode::kInvalidArgument, "difficulty_score: scores must lie in [0, 1]");
  }
  return s_minus - s_plus;
}

Json verification_to_json(const VerificationRecord& r) {
  return Json{{"pair_id", r.pair_id},
              {"s_plus", r.s_plus},
              {"s_minus", r.s_minus},
              {"ds", r.ds},
              {"determinable", r.determinable},
              {"checkpoint", r.checkpoint},
              {"raw_alternatives_plus", alternatives_to_json(r.raw_alternatives_plus)},
              {"raw_alternatives_minus", alternatives_to_json(r.raw_alternatives_minus)}};
}

VerificationRecord verification_from_json(const Json& j) {
  VerificationRecord r;
  r.pair_id = j.at("pair_id").get<std::string>();
  r.s_plus = j.at("s_plus").get<double>();
  r.s_minus = j.at("s_minus").get<double>();
  r.ds = j.at("ds").get<double>();
  r.determinable = j.at("determinable").get<bool>();
  r.checkpoint = j.value("checkpoint", "");
  r.raw_alternatives_plus = alternatives_from_json(j.value("raw_alternatives_plus", Json::object()));
  r.raw_alternatives_minus =
      alternatives_from_json(j.value("raw_alternatives_minus", Json::object()));
  return r;
}

std::vector<VerificationRecord> verify_pairs(const Corpus& corpus,
                                             const std::vector<PreferencePair>& pairs,
                                             const EndpointProfile& student, Gateway& gateway,
                                             const PromptForge& forge,
                                             const VerificationOptions& options) {
  std::vector<VerificationRecord> out(pairs.size());
  parallel_for(pairs.size(), student.max_parallel, [&](std::size_t i) {
    const PreferencePair& p = pairs[i];
    const LegalSample* sample = corpus.find(p.sample_id);
    if (sample == nullptr) {
      throw Error(ErrorCode::kState, "pair " + p.pair_id + " references unknown sample");
    }
    const auto plus = correctness_score(student, *sample, p.chosen, gateway, forge, options);
    const auto minus = correctness_score(student, *sample, p.rejected, gateway, forge, options);
    VerificationRecord& r = out[i];
    r.pair_id = p.pair_id;
    r.s_plus = plus.score;
    r.s_minus = minus.score;
    r.determinable = plus.determinable && minus.determinable;
    r.ds = difficulty_score(r.s_minus, r.s_plus);
    r.raw_alternatives_plus = plus.raw;
    r.raw_alternatives_minus = minus.raw;
    r.checkpoint = student.model_name;
  });
  return out;
}

FilterResult filter_pairs(const std::vector<VerificationRecord>& records,
                          const std::vector<PreferencePair>& pairs, double tau) {
  if (records.size() != pairs.size()) {
    throw Error(ErrorCode::kInvalidArgument, "filter_pairs: record/pair count mismatch");
  }
  FilterResult out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (records[i].pair_id != pairs[i].pair_id) {
      throw Error(ErrorCode::kInvalidArgument,
                  "filter_pairs: record " + records[i].pair_id + " does not match pair " +
                      pairs[i].pair_id);
    }
    if (!records[i].determinable) {
      ++out.indeterminable;
    } else if (records[i].ds > tau) {
      out.retained.push_back(pairs[i]);
    } else {
      ++out.below_threshold;
    }
  }
  return out;
}

}  // namespace blindspot
