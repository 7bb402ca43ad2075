#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace normforge {

/// Per-book metadata that fills prompt variables and drives name detection.
struct BookMetadata {
  std::string book_summary;
  std::string book_context;
  std::vector<std::string> character_lexicon;
};

struct SourceText {
  std::string book_id;
  std::string title;
  std::int64_t gutenberg_id = 0;
  std::string raw_text;
  std::string clean_text;
  BookMetadata metadata;
};

struct Chunk {
  std::string chunk_id;
  std::string book_id;
  std::size_t index = 0;
  std::size_t start_offset = 0;  // Unicode scalar values, not bytes
  std::size_t end_offset = 0;
  std::string text;

  bool operator==(const Chunk&) const = default;
};

struct ChunkingConfig {
  std::size_t chunk_size = 6000;
  std::size_t overlap = 1000;

  void validate() const;
  std::size_t stride() const { return chunk_size - overlap; }
};

/// Raised for a manifest that cannot be used at all.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BookLoadError {
  std::string book_id;
  std::string message;
};

struct CorpusLoad {
  std::vector<SourceText> texts;
  std::vector<BookLoadError> errors;
};

/// Interior text between the Gutenberg START/END marker lines (matched
/// case-insensitively). Without markers the input is returned trimmed.
std::string strip_boilerplate(std::string_view raw);

std::string make_chunk_id(std::string_view book_id, std::size_t index);

/// Fixed windows of cfg.chunk_size scalars starting every cfg.stride()
/// scalars; stops at the first window that reaches the end of the text.
std::vector<Chunk> chunk_text(std::string_view book_id, std::string_view clean, const ChunkingConfig& cfg);

/// Loads a JSON manifest:
///   {"books": [{"book_id", "title", "gutenberg_id", "path", "metadata"?}]}
/// Relative paths resolve against the manifest's directory. Unreadable books
/// are reported in `errors`; a malformed manifest throws ConfigError.
CorpusLoad load_corpus(const std::filesystem::path& manifest_path);

BookMetadata load_book_metadata(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& j);

void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks(const std::filesystem::path& path);

}  // namespace normforge
