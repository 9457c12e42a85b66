// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace blindspot {

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// First 8 bytes of SHA-256, big-endian. Used to derive sub-seeds from ids.
std::uint64_t hash64(std::string_view bytes);

}  // namespace blindspot
