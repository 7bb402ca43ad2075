#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "normforge/ci_schema.hpp"
#include "normforge/corpus.hpp"
#include "normforge/gateway.hpp"
#include "normforge/prompts.hpp"

namespace normforge {

struct ChunkRecord {
  Chunk chunk;
  std::optional<std::string> flow_reasoning;
  std::optional<FlowExtraction> flow_extraction;
  std::optional<std::string> norm_reasoning;
  std::optional<NormExtraction> norm_extraction;
  std::vector<AbstractedNorm> abstracted_norms;
  /// Norms whose abstraction still contained character names after a retry.
  std::vector<RazNorm> quarantined_norms;
  /// "<stage>: <message>" entries.
  std::vector<std::string> errors;

  bool operator==(const ChunkRecord&) const = default;
};

struct GoldLabel {
  std::string chunk_id;
  bool has_flows = false;
  std::size_t flow_count = 0;

  bool operator==(const GoldLabel&) const = default;
};

ojson to_json(const ChunkRecord& r);
ChunkRecord chunk_record_from_json(const nlohmann::json& j);
ojson to_json(const GoldLabel& g);
GoldLabel gold_label_from_json(const nlohmann::json& j);

/// Gold label for a record with a flow extraction; nullopt otherwise.
std::optional<GoldLabel> gold_label_for(const ChunkRecord& r);

struct StageResult {
  std::optional<std::string> reasoning;
  std::vector<std::string> errors;
};

struct FlowStageResult : StageResult {
  std::optional<FlowExtraction> extraction;
};

struct NormStageResult : StageResult {
  std::optional<NormExtraction> extraction;
};

/// Stage 1 reasoning over the chunk, then one single-flow extraction call per
/// flow the reasoning names. A no-flow verdict skips stage 2; a flow whose
/// extraction fails is dropped and its error recorded.
FlowStageResult run_flow_stage(const Chunk& chunk, ChatModel& model, const PromptSet& prompts);

/// Stage 1 reasoning, then one extraction call covering all norms.
NormStageResult run_norm_stage(const Chunk& chunk, const BookMetadata& meta, ChatModel& model,
                               const PromptSet& prompts);

/// Norm fields naming an entry of the lexicon (whole word, any case), or
/// nullopt when the norm is clean.
std::optional<std::vector<std::string>> detect_quality_flags(const RazNorm& norm,
                                                             const std::vector<std::string>& lexicon);

class AbstractionFailed : public std::runtime_error {
 public:
  AbstractionFailed(const std::string& message, std::vector<std::string> flags)
      : std::runtime_error(message), flags_(std::move(flags)) {}
  const std::vector<std::string>& flags() const { return flags_; }

 private:
  std::vector<std::string> flags_;
};

/// Rewrites a flagged norm in terms of social roles. Unflagged norms pass
/// through unchanged. Throws AbstractionFailed when a rewrite still names a
/// character after one retry.
AbstractedNorm abstract_norm(const RazNorm& norm, const BookMetadata& meta, const std::string& chunk_text,
                             ChatModel& model, const PromptSet& prompts);

struct BookRunPaths {
  std::filesystem::path dir;
  std::filesystem::path records() const { return dir / "records.jsonl"; }
  std::filesystem::path flows() const { return dir / "flows.jsonl"; }
  std::filesystem::path norms() const { return dir / "norms.jsonl"; }
  std::filesystem::path abstracted_norms() const { return dir / "abstracted_norms.jsonl"; }
  std::filesystem::path gold_labels() const { return dir / "gold_labels.jsonl"; }
  std::filesystem::path quarantine() const { return dir / "quarantine.jsonl"; }
};

struct BookRunResult {
  std::vector<ChunkRecord> records;
  std::vector<GoldLabel> gold_labels;
  std::size_t resumed_chunks = 0;
};

struct BookRunOptions {
  /// Called after each chunk is checkpointed; returning false stops the run.
  std::function<bool(const ChunkRecord&)> on_chunk_done;
};

/// Processes a book's chunks in index order. After each chunk the records
/// file is rewritten atomically; a rerun resumes after the last completed
/// chunk. The derived per-book files are written when all chunks are done.
BookRunResult run_book_pipeline(const std::string& book_id, const std::vector<Chunk>& chunks,
                                const BookMetadata& meta, const BookRunPaths& paths, ChatModel& model,
                                const PromptSet& prompts, const BookRunOptions& opts = {});

/// Reads a book's records file (empty when absent).
std::vector<ChunkRecord> load_records(const std::filesystem::path& records_file);
std::vector<GoldLabel> load_gold_labels(const std::filesystem::path& path);
std::vector<AbstractedNorm> load_abstracted_norms(const std::filesystem::path& path);

}  // namespace normforge
