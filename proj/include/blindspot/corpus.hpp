// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blindspot/io.hpp"

namespace blindspot {

enum class Verdict { kYes, kNo };

/// Case-insensitive, surrounding whitespace ignored. nullopt for anything
/// other than yes/no.
std::optional<Verdict> parse_verdict(std::string_view text);

/// Canonical spelling: "Yes" / "No".
std::string_view to_string(Verdict v);

inline Verdict opposite(Verdict v) { return v == Verdict::kYes ? Verdict::kNo : Verdict::kYes; }

/// One document-grounded binary question: legal context, query, gold verdict.
struct LegalSample {
  std::string id;
  std::string context;
  std::string query;
  Verdict gold = Verdict::kYes;

  friend bool operator==(const LegalSample&, const LegalSample&) = default;
};

struct Corpus {
  std::vector<LegalSample> samples;
  std::string source_path;
  std::string content_hash;

  std::size_t size() const { return samples.size(); }
  const LegalSample* find(std::string_view id) const;
};

/// Builds a canonical sample from one raw record with fields
/// {id, context, question, answer}. Fields are whitespace-trimmed. A record
/// without "id" gets `fallback_id` if provided, otherwise MissingField(id).
LegalSample validate_sample(const Json& raw,
                            const std::optional<std::string>& fallback_id = std::nullopt);

/// Loads a JSONL corpus. Errors carry the 1-based line number.
Corpus load_corpus(const std::filesystem::path& path);

/// Digest of the canonical serialization of `samples`; stable across reloads.
std::string corpus_content_hash(const std::vector<LegalSample>& samples);

Json sample_to_json(const LegalSample& s);

/// Writes samples in the loader's input schema.
void write_corpus(const std::filesystem::path& path, const std::vector<LegalSample>& samples);

}  // namespace blindspot
