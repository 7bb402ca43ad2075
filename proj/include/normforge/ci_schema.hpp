#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace normforge {

using ojson = nlohmann::ordered_json;

// ---- enumerations ----------------------------------------------------------

enum class Appropriateness { appropriate, inappropriate, ambiguous };
enum class NormSource { explicit_, implicit_, both };
enum class NormativeForce { obligatory, prohibited, permitted, recommended, discouraged };
enum class ConfidenceQual { very_uncertain, uncertain, somewhat_certain, certain, very_certain };

inline constexpr NormativeForce kAllForces[] = {NormativeForce::obligatory, NormativeForce::prohibited,
                                                NormativeForce::permitted, NormativeForce::recommended,
                                                NormativeForce::discouraged};

std::string_view to_string(Appropriateness v);
std::string_view to_string(NormSource v);
std::string_view to_string(NormativeForce v);
std::string_view to_string(ConfidenceQual v);

/// Inclusive confidence_quant band congruent with a qualitative rating.
std::pair<int, int> confidence_band(ConfidenceQual q);

// ---- errors ----------------------------------------------------------------

enum class ValidationErrorKind { parse, schema, invariant };

class ValidationError : public std::runtime_error {
 public:
  ValidationError(ValidationErrorKind kind, std::string field_path, const std::string& message);
  ValidationErrorKind kind() const { return kind_; }
  const std::string& field_path() const { return field_path_; }

 private:
  ValidationErrorKind kind_;
  std::string field_path_;
};

/// Document is not well-formed JSON.
class ParseError : public ValidationError {
 public:
  ParseError(std::string field_path, const std::string& message)
      : ValidationError(ValidationErrorKind::parse, std::move(field_path), message) {}
};

/// Required field missing or of the wrong type, or an unknown enum value.
class SchemaError : public ValidationError {
 public:
  SchemaError(std::string field_path, const std::string& message)
      : ValidationError(ValidationErrorKind::schema, std::move(field_path), message) {}
};

/// Well-typed document that breaks a cross-field rule.
class InvariantError : public ValidationError {
 public:
  InvariantError(std::string field_path, const std::string& message)
      : ValidationError(ValidationErrorKind::invariant, std::move(field_path), message) {}
};

// ---- CI information flows -------------------------------------------------

struct InformationFlow {
  std::string sender;
  std::string recipient;
  std::optional<std::string> subject;
  std::string information_type;
  std::optional<std::string> transmission_principle;
  std::optional<std::string> context;
  Appropriateness appropriateness = Appropriateness::appropriate;
  std::vector<std::string> norms_invoked;
  std::optional<NormSource> norm_source;
  bool is_new_flow = false;
  std::optional<int> confidence;

  bool operator==(const InformationFlow&) const = default;
};

struct FlowExtraction {
  std::string reasoning;
  // Absent when the completion omitted the flag; scored by the reward.
  std::optional<bool> has_information_exchange;
  std::vector<InformationFlow> flows;

  bool operator==(const FlowExtraction&) const = default;
};

/// Stage-1 flow reasoning entry, one per candidate flow.
struct FlowReasoningEntry {
  std::string original_text_snippet;
  std::string reasoning;
  std::string context_identified;
  std::string flow_direction;
  std::optional<Appropriateness> potential_appropriateness;
  bool is_new_flow = false;

  bool operator==(const FlowReasoningEntry&) const = default;
};

struct FlowReasoning {
  std::string reasoning;
  bool has_information_exchange = false;
  std::vector<FlowReasoningEntry> flows;

  bool operator==(const FlowReasoning&) const = default;
};

// ---- Raz norms ---------------------------------------------------------------

struct RazNorm {
  std::string prescriptive_element;
  std::string norm_subject;
  std::string norm_act;
  std::optional<std::string> condition_of_application;
  NormativeForce normative_force = NormativeForce::obligatory;
  std::string context;
  std::string norm_articulation;
  NormSource norm_source = NormSource::implicit_;
  bool governs_information_flow = false;
  std::optional<std::string> information_flow_note;
  ConfidenceQual confidence_qual = ConfidenceQual::somewhat_certain;
  int confidence_quant = 5;

  bool operator==(const RazNorm&) const = default;
};

inline constexpr std::size_t kMaxNormsPerChunk = 10;

struct NormExtraction {
  bool has_prescriptive_content = false;
  std::vector<RazNorm> norms;

  bool operator==(const NormExtraction&) const = default;
};

struct NormReasoningEntry {
  std::string original_text_snippet;
  std::string reasoning;
  NormativeForce preliminary_normative_force = NormativeForce::obligatory;
  bool governs_information_flow = false;

  bool operator==(const NormReasoningEntry&) const = default;
};

struct NormReasoning {
  bool has_prescriptive_content = false;
  std::vector<NormReasoningEntry> norms;

  bool operator==(const NormReasoning&) const = default;
};

struct AbstractedNorm {
  RazNorm norm;
  std::optional<std::vector<std::string>> quality_flags;
  std::string role_rationale;

  bool operator==(const AbstractedNorm&) const = default;
};

/// Output of the role-abstraction rewrite: only the rewritten fields.
struct AbstractionRewrite {
  std::string norm_subject;
  std::string norm_act;
  std::optional<std::string> condition_of_application;
  std::string norm_articulation;
  std::string role_rationale;
};

// ---- validation --------------------------------------------------------------

/// Parses and type-checks without applying cross-field invariants. Unknown
/// fields are ignored; enum values match case-insensitively.
FlowExtraction parse_flow_extraction(std::string_view document);
FlowExtraction parse_flow_extraction(const nlohmann::json& document);
inline FlowExtraction parse_flow_extraction(const std::string& document) {
  return parse_flow_extraction(std::string_view(document));
}
inline FlowExtraction parse_flow_extraction(const char* document) {
  return parse_flow_extraction(std::string_view(document));
}
void check_flow_extraction_invariants(const FlowExtraction& fe);
FlowExtraction validate_flow_extraction(std::string_view document);

InformationFlow parse_information_flow(const nlohmann::json& j, const std::string& path = "");
void check_flow_invariants(const InformationFlow& flow, const std::string& path = "");
/// Single-flow document as produced by the stage-2 extractor.
InformationFlow validate_information_flow(std::string_view document);

FlowReasoning validate_flow_reasoning(std::string_view document);
NormReasoning validate_norm_reasoning(std::string_view document);

RazNorm parse_raz_norm(const nlohmann::json& j, const std::string& path = "");
void check_norm_invariants(const RazNorm& norm, const std::string& path = "");
NormExtraction validate_norm_extraction(std::string_view document);

AbstractionRewrite validate_abstraction_rewrite(std::string_view document);
AbstractedNorm abstracted_norm_from_json(const nlohmann::json& j);

// ---- reward-facing checks -------------------------------------------------------

struct InvariantReport {
  std::size_t passed = 0;
  std::size_t total = 0;
  std::vector<std::string> failed;

  double proportion() const { return total == 0 ? 1.0 : static_cast<double>(passed) / total; }
};

/// Fixed check list: flag/flows pairing; per flow, is_new_flow implies an
/// inappropriate or ambiguous judgment; per flow, confidence within 0..10.
InvariantReport check_internal_invariants(const FlowExtraction& fe);

/// Values that do not count as substantive tuple components (compared after
/// trimming, case-insensitively).
struct PlaceholderLexicon {
  std::set<std::string> values{"unknown", "n/a", "none"};
  bool is_substantive(const std::optional<std::string>& v) const;
};

/// Mean over flows of the fraction of substantive tuple components. Returns
/// nullopt for an envelope without flows; reward shaping handles that case.
std::optional<double> completeness_score(const FlowExtraction& fe, const PlaceholderLexicon& lexicon = {});

// ---- serialization ---------------------------------------------------------------

ojson to_json(const InformationFlow& flow);
ojson to_json(const FlowExtraction& fe);
ojson to_json(const FlowReasoningEntry& e);
ojson to_json(const FlowReasoning& fr);
ojson to_json(const RazNorm& norm);
ojson to_json(const NormExtraction& ne);
ojson to_json(const NormReasoningEntry& e);
ojson to_json(const NormReasoning& nr);
ojson to_json(const AbstractedNorm& an);
ojson to_json(const AbstractionRewrite& r);

// ---- schema descriptors (JSON Schema, for guided decoding) ------------------------

const nlohmann::json& information_flow_schema();
const nlohmann::json& flow_extraction_schema();
const nlohmann::json& flow_reasoning_schema();
const nlohmann::json& norm_reasoning_schema();
const nlohmann::json& norm_extraction_schema();
const nlohmann::json& abstraction_rewrite_schema();

}  // namespace normforge
