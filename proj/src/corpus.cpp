#include "normforge/corpus.hpp"

#include <cstdio>
#include <regex>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

void ChunkingConfig::validate() const {
  if (chunk_size == 0) throw ConfigError("chunk_size must be positive");
  if (overlap >= chunk_size) throw ConfigError("overlap must be smaller than chunk_size");
}

namespace {

// Covers "*** START OF THE PROJECT GUTENBERG EBOOK ...", "***START OF THIS
// PROJECT GUTENBERG EBOOK" and the older "E-BOOK"/"ETEXT" spellings.
const std::regex& start_marker() {
  static const std::regex re(R"(^\s*\*{3}\s*START OF (THE|THIS) PROJECT GUTENBERG)",
                             std::regex::icase | std::regex::optimize);
  return re;
}

const std::regex& end_marker() {
  static const std::regex re(R"(^\s*\*{3}\s*END OF (THE|THIS) PROJECT GUTENBERG)",
                             std::regex::icase | std::regex::optimize);
  return re;
}

struct Line {
  std::size_t begin;
  std::size_t end;  // one past the newline, or text end
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl + 1;
    lines.push_back({pos, end});
    pos = end;
  }
  return lines;
}

}  // namespace

std::string strip_boilerplate(std::string_view raw) {
  const auto lines = split_lines(raw);
  std::size_t body_begin = 0;
  std::size_t body_end = raw.size();
  bool have_start = false;
  for (const auto& line : lines) {
    const std::string text(raw.substr(line.begin, line.end - line.begin));
    if (!have_start && std::regex_search(text, start_marker())) {
      body_begin = line.end;
      have_start = true;
      continue;
    }
    if (line.begin >= body_begin && std::regex_search(text, end_marker())) {
      body_end = line.begin;
      break;
    }
  }
  if (body_end < body_begin) body_end = body_begin;
  return std::string(trim(raw.substr(body_begin, body_end - body_begin)));
}

std::string make_chunk_id(std::string_view book_id, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return std::string(book_id) + "_" + buf;
}

std::vector<Chunk> chunk_text(std::string_view book_id, std::string_view clean, const ChunkingConfig& cfg) {
  cfg.validate();
  std::vector<Chunk> chunks;
  if (clean.empty()) return chunks;

  const auto offsets = utf8_scalar_offsets(clean);
  const std::size_t n = offsets.size() - 1;
  for (std::size_t i = 0;; ++i) {
    const std::size_t start = i * cfg.stride();
    const std::size_t end = std::min(start + cfg.chunk_size, n);
    Chunk c;
    c.chunk_id = make_chunk_id(book_id, i);
    c.book_id = std::string(book_id);
    c.index = i;
    c.start_offset = start;
    c.end_offset = end;
    c.text = std::string(clean.substr(offsets[start], offsets[end] - offsets[start]));
    chunks.push_back(std::move(c));
    if (end >= n) break;
  }
  return chunks;
}

BookMetadata load_book_metadata(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed book metadata " + path.string() + ": " + e.what());
  }
  BookMetadata m;
  m.book_summary = j.value("book_summary", "");
  m.book_context = j.value("book_context", "");
  if (j.contains("character_lexicon")) {
    m.character_lexicon = j.at("character_lexicon").get<std::vector<std::string>>();
  }
  return m;
}

CorpusLoad load_corpus(const std::filesystem::path& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const std::exception& e) {
    throw ConfigError("cannot read manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("books") || !manifest["books"].is_array()) {
    throw ConfigError("manifest must be an object with a \"books\" array");
  }
  const auto base = manifest_path.parent_path();
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  CorpusLoad out;
  std::size_t pos = 0;
  for (const auto& entry : manifest["books"]) {
    const std::string where = "books[" + std::to_string(pos++) + "]";
    if (!entry.is_object()) throw ConfigError(where + " is not an object");
    for (const char* key : {"book_id", "title", "path"}) {
      if (!entry.contains(key) || !entry[key].is_string()) {
        throw ConfigError(where + "." + key + " missing or not a string");
      }
    }
    if (!entry.contains("gutenberg_id") || !entry["gutenberg_id"].is_number_integer()) {
      throw ConfigError(where + ".gutenberg_id missing or not an integer");
    }

    SourceText book;
    book.book_id = entry["book_id"].get<std::string>();
    book.title = entry["title"].get<std::string>();
    book.gutenberg_id = entry["gutenberg_id"].get<std::int64_t>();
    const auto text_path = resolve(entry["path"].get<std::string>());
    try {
      if (entry.contains("metadata") && entry["metadata"].is_string()) {
        book.metadata = load_book_metadata(resolve(entry["metadata"].get<std::string>()));
      }
      book.raw_text = read_file(text_path);
      if (book.raw_text.empty()) throw std::runtime_error("empty text file " + text_path.string());
      book.clean_text = strip_boilerplate(book.raw_text);
      if (book.clean_text.empty()) throw std::runtime_error("no text left after boilerplate removal");
    } catch (const std::exception& e) {
      out.errors.push_back({book.book_id, e.what()});
      continue;
    }
    out.texts.push_back(std::move(book));
  }
  return out;
}

nlohmann::ordered_json to_json(const Chunk& chunk) {
  nlohmann::ordered_json j;
  j["chunk_id"] = chunk.chunk_id;
  j["book_id"] = chunk.book_id;
  j["index"] = chunk.index;
  j["start_offset"] = chunk.start_offset;
  j["end_offset"] = chunk.end_offset;
  j["text"] = chunk.text;
  return j;
}

Chunk chunk_from_json(const json& j) {
  Chunk c;
  c.chunk_id = j.at("chunk_id").get<std::string>();
  c.book_id = j.at("book_id").get<std::string>();
  c.index = j.at("index").get<std::size_t>();
  c.start_offset = j.at("start_offset").get<std::size_t>();
  c.end_offset = j.at("end_offset").get<std::size_t>();
  c.text = j.at("text").get<std::string>();
  return c;
}

void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks) {
  std::string out;
  for (const auto& c : chunks) {
    out += dump_line(to_json(c));
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<Chunk> read_chunks(const std::filesystem::path& path) {
  std::vector<Chunk> chunks;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    chunks.push_back(chunk_from_json(json::parse(line)));
  }
  return chunks;
}

}  // namespace normforge
