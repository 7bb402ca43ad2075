#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace normforge {

// ---- text ----------------------------------------------------------------

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool iequals(std::string_view a, std::string_view b);

/// Byte offset of every Unicode scalar value in `s`, plus a final entry equal
/// to s.size(). Malformed UTF-8 bytes count as one scalar each.
std::vector<std::size_t> utf8_scalar_offsets(std::string_view s);
std::size_t utf8_length(std::string_view s);

/// Case-folded word tokens with punctuation removed. Folding covers ASCII and
/// the Latin-1 supplement; General Punctuation and Latin-1 symbols separate
/// tokens like ASCII punctuation does.
std::vector<std::string> normalized_tokens(std::string_view s);

/// Whole-word, case-insensitive occurrence of `needle` in `haystack`.
bool contains_word(std::string_view haystack, std::string_view needle);

// ---- files ---------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes via a sibling temporary file and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);

// ---- JSON ----------------------------------------------------------------

/// Compact single-line dump; invalid UTF-8 is replaced rather than thrown on.
std::string dump_line(const nlohmann::ordered_json& j);
std::string dump_line(const nlohmann::json& j);
/// Indented dump with the same replacement policy.
std::string dump_pretty(const nlohmann::ordered_json& j);

// ---- hashing -------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data);

}  // namespace normforge
