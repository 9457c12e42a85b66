// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "blindspot/gateway.hpp"

namespace blindspot {

struct StageTemperatures {
  double exploration = 0.7;
  double audit = 0.2;
  double teacher = 0.8;
  double verification = 0.0;
  double judge = 0.0;
};

struct TrainerSettings {
  std::string command;  // shell template; {request_file} is replaced by the request path
  std::string url;      // HTTP endpoint receiving the request as a JSON POST body
  std::string hparams = "{}";  // JSON object forwarded verbatim
  int timeout_s = 0;           // HTTP only; 0 = no timeout
};

struct PipelineConfig {
  std::filesystem::path corpus_path;
  std::vector<std::filesystem::path> eval_paths;
  std::filesystem::path run_dir = "run";
  std::filesystem::path prompts_dir = "prompts";
  std::filesystem::path cache_path;  // empty: <run_dir>/transcripts.jsonl
  std::optional<std::filesystem::path> mock_transcripts;

  int iterations = 2;  // T
  int k = 4;
  double tau = 0.0;
  double exploration_fraction = 1.0;
  bool resample = false;  // fresh exploration subset each round
  std::int64_t seed = 0;
  double drop_fraction_limit = 0.25;
  int audit_retries = 2;
  int synthesis_retries = 2;
  bool strict_taxonomy = false;
  std::vector<std::string> taxonomy;
  std::size_t context_ngram = 6;
  int top_k = 20;
  double label_floor = 1e-6;
  int max_tokens = 1024;
  bool use_judge = true;
  std::string base_checkpoint = "base";
  StageTemperatures temperatures;

  /// model_name may contain "{policy}", replaced by the current policy checkpoint.
  EndpointProfile student{"student", "", "{policy}", "", 4, 3};
  EndpointProfile teacher{"teacher", "", "teacher", "", 4, 3};
  EndpointProfile auditor{"auditor", "", "auditor", "", 4, 3};
  EndpointProfile judge{"judge", "", "judge", "", 4, 3};

  TrainerSettings trainer;

  std::filesystem::path effective_cache_path() const;
};

/// Reads an INI file (sections plus key = value) and applies `overrides`
/// ("key=value" or "section.key=value"; a bare key must be unambiguous).
/// Relative paths resolve against the config file's directory, or the working
/// directory for overrides. Throws kConfig for unknown keys and bad values.
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides = {});

/// Same, from INI text. `base_dir` anchors relative paths.
PipelineConfig parse_config(const std::string& ini_text, const std::filesystem::path& base_dir,
                            const std::vector<std::string>& overrides = {});

void validate_config(const PipelineConfig& config);

/// Every auth_env variable referenced by an endpoint must be set. The error
/// names the variable and the endpoint, never the value.
void validate_environment(const PipelineConfig& config);

/// Every accepted key, as "section.key".
std::vector<std::string> config_keys();

}  // namespace blindspot
