#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "normforge/ci_schema.hpp"
#include "normforge/gateway.hpp"

namespace normforge {

class UniverseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmbeddingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OnlyOneUniverse : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NormRecord {
  AbstractedNorm norm;
  Embedding embedding;          // over norm_articulation
  Embedding context_embedding;  // over the context label

  bool operator==(const NormRecord&) const = default;
};

struct UniverseStats {
  std::map<std::string, std::size_t> deontic_histogram;  // every force, zero counts included
  std::map<std::string, std::size_t> context_histogram;  // keyed by context_key()
  double context_entropy_bits = 0.0;
  double governs_flow_fraction = 0.0;

  bool operator==(const UniverseStats&) const = default;
};

struct NormativeUniverse {
  std::string book_id;
  std::vector<NormRecord> norms;
  std::size_t embedding_dim = 0;
  std::string built_at;
  UniverseStats stats;

  bool operator==(const NormativeUniverse&) const = default;
};

struct RetrievalConfig {
  std::size_t k = 3;
  void validate() const;
};

struct Retrieved {
  std::size_t index;
  double similarity;
};

inline constexpr std::uint32_t kUniverseFormatVersion = 1;

/// Text embedded for a norm's context: the trimmed label, or "unspecified".
std::string context_text(const RazNorm& norm);
/// Histogram key: context_text lower-cased.
std::string context_key(const RazNorm& norm);

/// Shannon entropy in bits with 0 log 0 = 0.
double shannon_entropy_bits(const std::map<std::string, std::size_t>& histogram);

UniverseStats compute_stats(const std::vector<AbstractedNorm>& norms);

/// Embeds articulations and context labels. Throws UniverseError for an empty
/// norm list and EmbeddingFailure when the embedder fails.
NormativeUniverse build_universe(const std::string& book_id, const std::vector<AbstractedNorm>& norms,
                                 EmbeddingModel& embedder, const std::string& built_at);

/// Single binary file: magic, version, JSON metadata, float32 embeddings.
void save_universe(const NormativeUniverse& u, const std::filesystem::path& path);
NormativeUniverse load_universe(const std::filesystem::path& path);
/// All *.nfu files in `dir`, ordered by book_id.
std::vector<NormativeUniverse> load_universes(const std::filesystem::path& dir);

/// Everything except embeddings.
ojson universe_export_json(const NormativeUniverse& u);

/// min(k, |norms|) entries by descending cosine similarity, ties by
/// ascending norm index. Full scan, exact.
std::vector<Retrieved> retrieve_top_k(const NormativeUniverse& u, const Embedding& query, const RetrievalConfig& cfg);

/// Maximum dot product between `query` and the per-norm context embeddings.
double context_max_similarity(const NormativeUniverse& u, const Embedding& query);
double context_max_similarity(const NormativeUniverse& u, const std::string& stated_context, EmbeddingModel& embedder);

/// Uniform choice among universes other than `correct_book_id`.
const NormativeUniverse& sample_wrong_universe(const std::vector<NormativeUniverse>& all,
                                               const std::string& correct_book_id, std::uint64_t seed);

/// Mean articulation embedding, re-normalized to unit length.
std::vector<double> centroid(const NormativeUniverse& u);

struct StatsReport {
  ojson json;
  std::string text;
};

/// Per-book deontic distributions and context entropies plus the pairwise
/// cosine similarity of book centroids.
StatsReport universe_stats_report(const std::vector<NormativeUniverse>& universes);

}  // namespace normforge
