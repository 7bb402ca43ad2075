#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "normforge/extraction.hpp"
#include "normforge/prompts.hpp"

namespace normforge {

struct TrainingPair {
  std::string prompt;
  std::string target;
  std::string chunk_id;
  std::string book_id;
  bool is_no_flow = false;

  bool operator==(const TrainingPair&) const = default;
};

ojson to_json(const TrainingPair& p);
TrainingPair training_pair_from_json(const nlohmann::json& j);

/// The policy prompt for a chunk: the task template with the task
/// instruction filled in.
std::string grpo_prompt(const std::string& chunk_text, const PromptSet& prompts);

/// The exact completion format the policy is asked for.
std::string sft_target(const FlowExtraction& fe);

struct SftBuild {
  std::vector<TrainingPair> pairs;
  std::size_t skipped = 0;
};

/// One pair per record with a flow extraction, in record order.
SftBuild build_sft_pairs(const std::vector<ChunkRecord>& records, const PromptSet& prompts);

struct DownsampleResult {
  std::vector<TrainingPair> pairs;
  /// "NoFlowClassOnly" or "FlowClassOnly" when a class is missing.
  std::vector<std::string> warnings;
};

/// Keeps every flow pair and floor(ratio x flows) no-flow pairs (capped at the
/// number available), then shuffles. Deterministic in `seed`.
DownsampleResult downsample_no_flow(const std::vector<TrainingPair>& pairs, double target_ratio, std::uint64_t seed);

class InvalidFractions : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SplitFraction {
  std::string name;
  double fraction = 0.0;
};

/// Parses "train=0.9,val=0.1".
std::vector<SplitFraction> parse_split_fractions(const std::string& spec);

/// Shuffled split stratified by is_no_flow. Returns splits in the order given.
std::vector<std::vector<TrainingPair>> split_pairs(const std::vector<TrainingPair>& pairs,
                                                   const std::vector<SplitFraction>& fractions, std::uint64_t seed);

/// Writes <name>.jsonl per split plus manifest.json; returns the manifest.
ojson export_splits(const std::vector<TrainingPair>& pairs, const std::vector<SplitFraction>& fractions,
                    std::uint64_t seed, const std::filesystem::path& out_dir);

std::vector<TrainingPair> load_pairs(const std::filesystem::path& path);

/// {chunk_id, book_id, is_no_flow, prompt} per pair.
void write_grpo_prompts(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path);

}  // namespace normforge
