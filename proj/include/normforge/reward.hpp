#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "normforge/ci_schema.hpp"
#include "normforge/corpus.hpp"
#include "normforge/extraction.hpp"
#include "normforge/gateway.hpp"
#include "normforge/prompts.hpp"
#include "normforge/universe.hpp"

namespace normforge {

/// Raised when a judge or embedding endpoint cannot be reached at all.
class ServiceUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<const char*, 6> kComponentNames = {"uncert", "complete", "consist",
                                                               "context", "cohere",   "ground"};

struct RewardWeights {
  double uncert = 0.10;
  double complete = 0.05;
  double consist = 0.05;
  double context = 0.20;
  double cohere = 0.10;
  double ground = 0.50;

  std::array<double, 6> as_array() const { return {uncert, complete, consist, context, cohere, ground}; }
  /// Each weight in [0,1] and the sum within 1e-9 of 1.
  void validate() const;
  /// Overrides keyed by kComponentNames; unknown keys throw.
  RewardWeights with_overrides(const nlohmann::json& overrides) const;
};

struct ContrastiveConfig {
  double lambda = 1.0;
  void validate() const;
};

/// Rewards for completions that declare no information flows.
struct NoFlowShaping {
  double gold_no_flow = 0.6;
  double gold_has_flows = 0.1;
  /// Apply the gating values to r_uncert as well.
  bool shape_uncertainty = false;
  double context_score = 0.0;
  /// Used when the reasoning is non-empty; empty reasoning scores 0.
  double coherence_score = 1.0;
  /// Subtract the wrong-universe coverage alignment as for flows.
  bool contrastive_coverage = true;
};

struct RewardConfig {
  RewardWeights weights;
  ContrastiveConfig contrastive;
  RetrievalConfig retrieval;
  NoFlowShaping shaping;
  PlaceholderLexicon placeholders;
  /// Unreachable judge or embedder raises ServiceUnavailable instead of
  /// flooring the affected component.
  bool fail_on_unreachable = true;

  void validate() const;
};

// ---- judge verdicts ------------------------------------------------------------------

struct JudgeVerdict {
  double norm_match_score = 0.0;
  double governance_score = 0.0;
  bool appropriateness_consistent = false;
  std::string explanation;

  /// 0.4 a + 0.4 b + 0.2 c.
  double score() const;
};

struct CoverageVerdict {
  bool passage_contains_governed_flows = false;
  double coverage_score = 0.0;
  std::string explanation;
};

JudgeVerdict validate_judge_verdict(std::string_view document);
CoverageVerdict validate_coverage_verdict(std::string_view document);
const nlohmann::json& judge_verdict_schema();
const nlohmann::json& coverage_verdict_schema();

// ---- components ---------------------------------------------------------------------

struct UncertaintyResult {
  double score = 0.0;
  /// Envelope that passed parsing and type checks (invariants not applied).
  std::optional<FlowExtraction> parsed;
  std::string error;
};

/// 0.6 for a well-typed envelope, 0.2 when has_information_exchange is
/// present, 0.2 x mean(confidence / 10) over flows (missing counts as 0).
UncertaintyResult score_uncertainty(std::string_view completion);

struct GatingScores {
  double complete = 0.0;
  double consist = 0.0;
};

GatingScores score_gating(const FlowExtraction& fe, const GoldLabel& gold, const NoFlowShaping& shaping = {},
                          const PlaceholderLexicon& lexicon = {});

double score_coherence(std::string_view reasoning, const FlowExtraction& fe, const NoFlowShaping& shaping = {});

struct ComponentResult {
  double score = 0.0;
  bool failed = false;
  std::string error;
};

/// Mean over flows of max(0, context_max_similarity). Flows without a stated
/// context score 0.
ComponentResult score_context(const FlowExtraction& fe, const NormativeUniverse& universe, EmbeddingModel& embedder,
                              const RewardConfig& cfg = {});

/// clamp(r_correct - lambda * r_wrong, 0, 1).
double contrastive_clamp(double r_correct, double r_wrong, double lambda);

/// "sender → recipient : information_type [context]".
std::string canonical_flow_text(const InformationFlow& flow);

/// Retrieved norms as the JSON array handed to the judges.
std::string retrieved_norms_json(const NormativeUniverse& u, const std::vector<Retrieved>& hits);

struct FlowJudgement {
  std::size_t flow_index = 0;
  std::vector<std::size_t> retrieved;
  JudgeVerdict verdict;
  double score = 0.0;
  bool failed = false;
  std::string error;
};

/// One judge call for one flow against retrieved norms. Failures yield a
/// zero verdict marked failed.
FlowJudgement judge_flow(const InformationFlow& flow, std::size_t flow_index, const std::string& chunk_text,
                         const NormativeUniverse& universe, const std::vector<Retrieved>& hits, ChatModel& judge,
                         const PromptSet& prompts, bool fail_on_unreachable = true);

struct GroundingSide {
  std::string book_id;
  std::vector<FlowJudgement> flows;
  std::optional<CoverageVerdict> coverage;
  std::vector<std::size_t> coverage_retrieved;
  /// Mean flow score, or 1 - coverage for a no-flow completion.
  double mean = 0.0;
  bool failed = false;
  std::string error;
};

struct GroundingResult {
  double score = 0.0;
  bool no_flow = false;
  double lambda = 1.0;
  GroundingSide correct;
  GroundingSide wrong;
};

GroundingResult score_grounding(const FlowExtraction& fe, const std::string& chunk_text,
                                const NormativeUniverse& correct, const NormativeUniverse& wrong,
                                const RewardConfig& cfg, const Gateway& gateway, const PromptSet& prompts);

// ---- composite ------------------------------------------------------------------------

struct RewardBreakdown {
  double r_uncert = 0.0;
  double r_complete = 0.0;
  double r_consist = 0.0;
  double r_context = 0.0;
  double r_cohere = 0.0;
  double r_ground = 0.0;
  double composite = 0.0;
  bool schema_valid = false;
  bool no_flow_predicted = false;
  bool gold_has_flows = false;
  std::vector<std::string> flags;
  std::optional<GroundingResult> grounding;

  std::array<double, 6> components() const { return {r_uncert, r_complete, r_consist, r_context, r_cohere, r_ground}; }
};

/// Weighted sum in component order, clamped to [0,1].
double weighted_composite(const std::array<double, 6>& components, const RewardWeights& weights);

struct RewardInputs {
  const Chunk& chunk;
  const GoldLabel& gold;
  const NormativeUniverse& correct;
  const NormativeUniverse& wrong;
};

/// Never throws for a bad completion; throws ServiceUnavailable when a model
/// endpoint is unreachable and cfg.fail_on_unreachable is set.
RewardBreakdown composite_reward(std::string_view raw_completion, const RewardInputs& in, const RewardConfig& cfg,
                                 const Gateway& gateway, const PromptSet& prompts);

struct GroupDiagnostics {
  std::size_t size = 0;
  double no_flow_rate = 0.0;
  double schema_valid_rate = 0.0;
  std::array<double, 6> component_means{};
  double composite_mean = 0.0;
};

GroupDiagnostics group_diagnostics(const std::vector<RewardBreakdown>& breakdowns);

struct GroupResult {
  std::vector<RewardBreakdown> breakdowns;
  GroupDiagnostics diagnostics;
  std::string wrong_book_id;
  std::uint64_t seed = 0;
};

/// Seed for the wrong-universe draw of one group.
std::uint64_t group_seed(std::uint64_t seed, const std::string& chunk_id);

/// Scores completions in order against one shared wrong universe drawn with
/// group_seed(seed, chunk_id).
GroupResult score_group(const std::vector<std::string>& completions, const Chunk& chunk, const GoldLabel& gold,
                        const std::vector<NormativeUniverse>& universes, const RewardConfig& cfg, std::uint64_t seed,
                        const Gateway& gateway, const PromptSet& prompts);

ojson to_json(const RewardBreakdown& b);
ojson to_json(const GroundingResult& g);
ojson to_json(const GroupDiagnostics& d);

/// Append-only JSONL log of scored completions.
class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}
  void record(const std::string& chunk_id, std::string_view completion, std::uint64_t seed,
              const std::string& wrong_book_id, const RewardBreakdown& b);

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

}  // namespace normforge
