#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "normforge/corpus.hpp"
#include "normforge/extraction.hpp"
#include "normforge/gateway.hpp"
#include "normforge/prompts.hpp"
#include "normforge/reward.hpp"
#include "normforge/universe.hpp"

namespace httplib {
class Server;
}

namespace normforge {

/// A required data file or directory is missing; what() names the path.
class MissingInput : public std::runtime_error {
 public:
  explicit MissingInput(const std::filesystem::path& path)
      : std::runtime_error("missing input: " + path.string()), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct BookEntry {
  std::string book_id;
  std::string title;
  std::int64_t gutenberg_id = 0;
  BookMetadata metadata;
  std::size_t chunk_count = 0;
};

/// Fixed layout under a work directory.
struct WorkdirLayout {
  std::filesystem::path root;
  std::filesystem::path chunks() const { return root / "chunks"; }
  std::filesystem::path books_index() const { return chunks() / "books.json"; }
  std::filesystem::path chunk_file(const std::string& book_id) const { return chunks() / (book_id + ".jsonl"); }
  std::filesystem::path records() const { return root / "records"; }
  BookRunPaths book_run(const std::string& book_id) const { return {records() / book_id}; }
  std::filesystem::path universes() const { return root / "universes"; }
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path stats() const { return root / "stats"; }
};

void write_books_index(const std::filesystem::path& path, const std::vector<BookEntry>& books);
std::vector<BookEntry> read_books_index(const std::filesystem::path& path);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path workdir;
  std::filesystem::path prompt_dir = default_prompt_dir();
  EndpointConfig judge;
  EndpointConfig embedder;
  RewardConfig reward;
  std::uint64_t default_seed = 0;
  std::size_t diagnostics_window = 512;
  std::size_t threads = 8;
  std::optional<std::filesystem::path> audit_log;

  void validate() const;
};

/// Keys: host, port, workdir, prompt_dir, seed, diagnostics_window, threads,
/// audit_log, endpoints.{judge,embedder}, reward.{weights, lambda, k,
/// shaping, fail_on_unreachable}. Missing keys keep the defaults.
ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig base = {});
/// Reads the file (when given) and then applies NORMFORGE_* environment
/// overrides: HOST, PORT, WORKDIR, SEED, LAMBDA, DIAGNOSTICS_WINDOW, THREADS
/// and the per-role endpoint variables.
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file);

RewardConfig reward_config_from_json(const nlohmann::json& j, RewardConfig base = {});

/// Everything scoring needs, loaded once and never modified.
struct ScoringData {
  std::map<std::string, Chunk> chunks;
  std::map<std::string, GoldLabel> gold;
  std::vector<NormativeUniverse> universes;
};

/// Chunks, gold labels and universes from a work directory. Throws
/// MissingInput for absent files and OnlyOneUniverse when contrastive
/// scoring is impossible.
ScoringData load_scoring_data(const WorkdirLayout& layout);

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Rolling record of the most recent scored completions.
class DiagnosticsWindow {
 public:
  explicit DiagnosticsWindow(std::size_t capacity);
  void add(const std::vector<RewardBreakdown>& breakdowns);
  ojson snapshot() const;

 private:
  struct Entry {
    bool no_flow = false;
    std::array<double, 6> components{};
    double composite = 0.0;
  };
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::deque<Entry> entries_;
  std::size_t requests_ = 0;
  std::size_t completions_ = 0;
};

/// Request handling independent of the HTTP server, shared with offline
/// batch scoring.
class RewardService {
 public:
  RewardService(ServiceConfig cfg, ScoringData data, Gateway gateway, PromptSet prompts);
  ~RewardService();

  HttpReply score(std::string_view request_body);
  HttpReply health() const;
  HttpReply diagnostics() const;
  static const ojson& schema();

  /// Binds to cfg.host:cfg.port (0 picks a free port) and serves in a
  /// background thread; returns the bound port.
  int start();
  /// Serves on the calling thread until stop().
  void serve_forever();
  void stop();

  const ServiceConfig& config() const { return cfg_; }

 private:
  void install_routes();

  ServiceConfig cfg_;
  ScoringData data_;
  Gateway gateway_;
  PromptSet prompts_;
  DiagnosticsWindow window_;
  std::unique_ptr<AuditLog> audit_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

struct OfflineSummary {
  std::size_t scored = 0;
  std::size_t errors = 0;
  std::size_t skipped = 0;  // already present in the output file
};

struct OfflineOptions {
  /// Called after each output line is written; returning false stops the run.
  std::function<bool(std::size_t line_no)> on_line;
};

/// Scores each line of a JSONL request file through RewardService::score and
/// appends {"line", "chunk_id", "status", "response" | "error"} to out_file.
/// Lines already recorded in out_file are skipped. A 503 aborts the run with
/// ServiceUnavailable so a rerun picks up where it stopped.
OfflineSummary score_batch_offline(RewardService& service, const std::filesystem::path& requests_file,
                                   const std::filesystem::path& out_file, const OfflineOptions& opts = {});

}  // namespace normforge
