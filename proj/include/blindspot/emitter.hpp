// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "blindspot/corpus.hpp"
#include "blindspot/prompts.hpp"
#include "blindspot/synthesis.hpp"

namespace blindspot {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct RecordMeta {
  std::string pair_id;
  std::string sample_id;
  int iteration = 0;
  friend bool operator==(const RecordMeta&, const RecordMeta&) = default;
};

struct SftRecord {
  std::string prompt;
  std::string completion;
  RecordMeta meta;
  friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

struct DpoRecord {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  RecordMeta meta;
  friend bool operator==(const DpoRecord&, const DpoRecord&) = default;
};

/// Hashes of the inputs an artifact was derived from. Empty when unknown.
struct SourceHashes {
  std::string corpus;
  std::string bank;
  std::string pairs;
};

struct Manifest {
  std::string file_path;  // file name, relative to the manifest
  std::size_t record_count = 0;
  std::string content_hash;
  int iteration = 0;
  SourceHashes source_hashes;
  std::string tool_version = std::string(kToolVersion);
  std::vector<std::string> warnings;
};

Json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const Json& j);

/// "<dir>/<stem>.manifest.json" for a data file "<dir>/<stem>.<ext>".
std::filesystem::path manifest_path_for(const std::filesystem::path& data_file);

/// Writes `rows` as JSONL plus its manifest. Returns the manifest.
Manifest write_artifact(const std::filesystem::path& path, const std::vector<Json>& rows,
                        int iteration, const SourceHashes& sources,
                        std::vector<std::string> warnings = {});

Manifest read_manifest(const std::filesystem::path& data_file);

/// True when the data file's bytes and line count match its manifest.
bool verify_manifest(const std::filesystem::path& data_file);

/// Student prompt as one string: system text, a blank line, user text.
std::string flatten_prompt(const RenderedPrompt& prompt);

struct EmitContext {
  const Corpus* corpus = nullptr;
  const PromptForge* forge = nullptr;
  int iteration = 0;
  SourceHashes sources;
};

/// One record per unique (sample_id, chosen), first occurrence kept. Every
/// completion must end in a final-answer line equal to gold.
Manifest emit_sft(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path,
                  const EmitContext& ctx);

/// One record per pair, order preserved. Refuses a pair with chosen == rejected.
Manifest emit_dpo(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path,
                  const EmitContext& ctx);

Json to_json(const SftRecord& r);
Json to_json(const DpoRecord& r);
std::vector<SftRecord> read_sft(const std::filesystem::path& path);
std::vector<DpoRecord> read_dpo(const std::filesystem::path& path);

}  // namespace blindspot
