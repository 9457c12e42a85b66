// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace blindspot {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Lowercases and collapses whitespace runs to single spaces, trimmed.
std::string normalize_whitespace_lower(std::string_view s);

/// Lowercased alphanumeric word tokens; punctuation separates words.
std::vector<std::string> words(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace blindspot
