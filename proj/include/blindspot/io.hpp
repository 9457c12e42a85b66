// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace blindspot {

using Json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);

/// Writes via a temp file in the same directory, then renames over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// One compact object per line, keys sorted, trailing newline after each line.
std::string to_jsonl(const std::vector<Json>& records);

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

/// Parses every non-blank line. Errors name the 1-based line number.
std::vector<Json> read_jsonl(const std::filesystem::path& path);

}  // namespace blindspot
