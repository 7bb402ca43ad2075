#include "normforge/ci_schema.hpp"

#include <cmath>
#include <limits>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

// ---- enumerations ----------------------------------------------------------

std::string_view to_string(Appropriateness v) {
  switch (v) {
    case Appropriateness::appropriate: return "appropriate";
    case Appropriateness::inappropriate: return "inappropriate";
    case Appropriateness::ambiguous: return "ambiguous";
  }
  return "";
}

std::string_view to_string(NormSource v) {
  switch (v) {
    case NormSource::explicit_: return "explicit";
    case NormSource::implicit_: return "implicit";
    case NormSource::both: return "both";
  }
  return "";
}

std::string_view to_string(NormativeForce v) {
  switch (v) {
    case NormativeForce::obligatory: return "obligatory";
    case NormativeForce::prohibited: return "prohibited";
    case NormativeForce::permitted: return "permitted";
    case NormativeForce::recommended: return "recommended";
    case NormativeForce::discouraged: return "discouraged";
  }
  return "";
}

std::string_view to_string(ConfidenceQual v) {
  switch (v) {
    case ConfidenceQual::very_uncertain: return "very_uncertain";
    case ConfidenceQual::uncertain: return "uncertain";
    case ConfidenceQual::somewhat_certain: return "somewhat_certain";
    case ConfidenceQual::certain: return "certain";
    case ConfidenceQual::very_certain: return "very_certain";
  }
  return "";
}

std::pair<int, int> confidence_band(ConfidenceQual q) {
  switch (q) {
    case ConfidenceQual::very_uncertain: return {0, 2};
    case ConfidenceQual::uncertain: return {3, 4};
    case ConfidenceQual::somewhat_certain: return {5, 6};
    case ConfidenceQual::certain: return {7, 8};
    case ConfidenceQual::very_certain: return {9, 10};
  }
  return {0, 10};
}

ValidationError::ValidationError(ValidationErrorKind kind, std::string field_path, const std::string& message)
    : std::runtime_error(field_path.empty() ? message : field_path + ": " + message),
      kind_(kind),
      field_path_(std::move(field_path)) {}

namespace {

template <typename E, std::size_t N>
std::vector<E> enum_values(const E (&values)[N]) {
  return std::vector<E>(values, values + N);
}

const std::vector<Appropriateness>& all_appropriateness() {
  static const std::vector<Appropriateness> v{Appropriateness::appropriate, Appropriateness::inappropriate,
                                              Appropriateness::ambiguous};
  return v;
}
const std::vector<NormSource>& all_sources() {
  static const std::vector<NormSource> v{NormSource::explicit_, NormSource::implicit_, NormSource::both};
  return v;
}
const std::vector<NormativeForce>& all_forces() {
  static const std::vector<NormativeForce> v = enum_values(kAllForces);
  return v;
}
const std::vector<ConfidenceQual>& all_qual() {
  static const std::vector<ConfidenceQual> v{ConfidenceQual::very_uncertain, ConfidenceQual::uncertain,
                                             ConfidenceQual::somewhat_certain, ConfidenceQual::certain,
                                             ConfidenceQual::very_certain};
  return v;
}

template <typename E>
json enum_schema(const std::vector<E>& values) {
  json names = json::array();
  for (auto v : values) names.push_back(std::string(to_string(v)));
  return {{"type", "string"}, {"enum", names}};
}

std::string join_path(const std::string& base, std::string_view key) {
  return base.empty() ? std::string(key) : base + "." + std::string(key);
}

std::string index_path(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

// Typed access to one JSON object with field paths for error reporting.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw SchemaError(path_, "expected an object");
  }

  std::string path(std::string_view key) const { return join_path(path_, key); }

  bool present(std::string_view key) const {
    auto it = obj_.find(key);
    return it != obj_.end() && !it->is_null();
  }

  const json& at(std::string_view key) const {
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) throw SchemaError(path(key), "required field missing");
    return *it;
  }

  std::string req_string(std::string_view key) const {
    const auto& v = at(key);
    if (!v.is_string()) throw SchemaError(path(key), "expected a string");
    return v.get<std::string>();
  }

  std::optional<std::string> opt_string(std::string_view key) const {
    if (!present(key)) return std::nullopt;
    return req_string(key);
  }

  bool req_bool(std::string_view key) const {
    const auto& v = at(key);
    if (!v.is_boolean()) throw SchemaError(path(key), "expected a boolean");
    return v.get<bool>();
  }

  std::optional<bool> opt_bool(std::string_view key) const {
    if (!present(key)) return std::nullopt;
    return req_bool(key);
  }

  int req_int(std::string_view key) const {
    const auto& v = at(key);
    if (!v.is_number()) throw SchemaError(path(key), "expected an integer");
    const double d = v.get<double>();
    if (std::floor(d) != d || std::abs(d) > 1e9) throw SchemaError(path(key), "expected an integer");
    return static_cast<int>(d);
  }

  std::optional<int> opt_int(std::string_view key) const {
    if (!present(key)) return std::nullopt;
    return req_int(key);
  }

  std::vector<std::string> string_list(std::string_view key) const {
    std::vector<std::string> out;
    if (!present(key)) return out;
    const auto& v = at(key);
    if (!v.is_array()) throw SchemaError(path(key), "expected an array of strings");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) throw SchemaError(index_path(path(key), i), "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  const json& req_array(std::string_view key) const {
    const auto& v = at(key);
    if (!v.is_array()) throw SchemaError(path(key), "expected an array");
    return v;
  }

  template <typename E>
  E req_enum(std::string_view key, const std::vector<E>& values) const {
    const auto raw = req_string(key);
    const auto needle = trim(raw);
    for (auto v : values) {
      if (iequals(needle, to_string(v))) return v;
    }
    throw SchemaError(path(key), "unknown value \"" + raw + "\"");
  }

  template <typename E>
  std::optional<E> opt_enum(std::string_view key, const std::vector<E>& values) const {
    if (!present(key)) return std::nullopt;
    return req_enum(key, values);
  }

 private:
  const json& obj_;
  std::string path_;
};

json parse_document(std::string_view document) {
  try {
    return json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError("", e.what());
  }
}

void require_non_empty(const std::string& value, const std::string& path) {
  if (trim(value).empty()) throw InvariantError(path, "must not be empty");
}

template <typename T>
void set_optional(ojson& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
  else j[key] = nullptr;
}

}  // namespace

// ---- flows -------------------------------------------------------------------

InformationFlow parse_information_flow(const json& j, const std::string& path) {
  FieldReader r(j, path);
  InformationFlow f;
  f.sender = r.req_string("sender");
  f.recipient = r.req_string("recipient");
  f.subject = r.opt_string("subject");
  f.information_type = r.req_string("information_type");
  f.transmission_principle = r.opt_string("transmission_principle");
  f.context = r.opt_string("context");
  f.appropriateness = r.req_enum("appropriateness", all_appropriateness());
  f.norms_invoked = r.string_list("norms_invoked");
  f.norm_source = r.opt_enum("norm_source", all_sources());
  f.is_new_flow = r.opt_bool("is_new_flow").value_or(false);
  f.confidence = r.opt_int("confidence");
  // The single-flow extractor prompt asks for a quantitative confidence
  // under a different key.
  if (!f.confidence) f.confidence = r.opt_int("confidence_quant");
  return f;
}

void check_flow_invariants(const InformationFlow& flow, const std::string& path) {
  require_non_empty(flow.sender, join_path(path, "sender"));
  require_non_empty(flow.recipient, join_path(path, "recipient"));
  require_non_empty(flow.information_type, join_path(path, "information_type"));
  if (flow.confidence && (*flow.confidence < 0 || *flow.confidence > 10)) {
    throw InvariantError(join_path(path, "confidence"), "must lie in 0..10");
  }
}

FlowExtraction parse_flow_extraction(const json& document) {
  FieldReader r(document, "");
  FlowExtraction fe;
  fe.reasoning = r.req_string("reasoning");
  fe.has_information_exchange = r.opt_bool("has_information_exchange");
  const auto& flows = r.req_array("flows");
  for (std::size_t i = 0; i < flows.size(); ++i) {
    fe.flows.push_back(parse_information_flow(flows[i], index_path("flows", i)));
  }
  return fe;
}

FlowExtraction parse_flow_extraction(std::string_view document) {
  return parse_flow_extraction(parse_document(document));
}

void check_flow_extraction_invariants(const FlowExtraction& fe) {
  if (fe.has_information_exchange == false && !fe.flows.empty()) {
    throw InvariantError("has_information_exchange", "false flag must pair with an empty flows array");
  }
  require_non_empty(fe.reasoning, "reasoning");
  for (std::size_t i = 0; i < fe.flows.size(); ++i) {
    check_flow_invariants(fe.flows[i], index_path("flows", i));
  }
}

FlowExtraction validate_flow_extraction(std::string_view document) {
  auto fe = parse_flow_extraction(document);
  check_flow_extraction_invariants(fe);
  return fe;
}

InformationFlow validate_information_flow(std::string_view document) {
  auto flow = parse_information_flow(parse_document(document));
  check_flow_invariants(flow);
  return flow;
}

FlowReasoning validate_flow_reasoning(std::string_view document) {
  const auto j = parse_document(document);
  FieldReader r(j, "");
  FlowReasoning fr;
  fr.reasoning = r.req_string("reasoning");
  fr.has_information_exchange = r.req_bool("has_information_exchange");
  const auto& flows = r.req_array("flows");
  for (std::size_t i = 0; i < flows.size(); ++i) {
    FieldReader e(flows[i], index_path("flows", i));
    FlowReasoningEntry entry;
    entry.original_text_snippet = e.opt_string("original_text_snippet").value_or("");
    entry.reasoning = e.req_string("reasoning");
    entry.context_identified = e.opt_string("context_identified").value_or("");
    entry.flow_direction = e.opt_string("flow_direction").value_or("");
    entry.potential_appropriateness = e.opt_enum("potential_appropriateness", all_appropriateness());
    entry.is_new_flow = e.opt_bool("is_new_flow").value_or(false);
    fr.flows.push_back(std::move(entry));
  }
  if (!fr.has_information_exchange && !fr.flows.empty()) {
    throw InvariantError("has_information_exchange", "false flag must pair with an empty flows array");
  }
  require_non_empty(fr.reasoning, "reasoning");
  for (std::size_t i = 0; i < fr.flows.size(); ++i) {
    require_non_empty(fr.flows[i].reasoning, index_path("flows", i) + ".reasoning");
  }
  return fr;
}

// ---- norms -------------------------------------------------------------------

RazNorm parse_raz_norm(const json& j, const std::string& path) {
  FieldReader r(j, path);
  RazNorm n;
  n.prescriptive_element = r.req_string("prescriptive_element");
  n.norm_subject = r.req_string("norm_subject");
  n.norm_act = r.req_string("norm_act");
  n.condition_of_application = r.opt_string("condition_of_application");
  n.normative_force = r.req_enum("normative_force", all_forces());
  n.context = r.req_string("context");
  n.norm_articulation = r.req_string("norm_articulation");
  n.norm_source = r.req_enum("norm_source", all_sources());
  n.governs_information_flow = r.req_bool("governs_information_flow");
  n.information_flow_note = r.opt_string("information_flow_note");
  n.confidence_qual = r.req_enum("confidence_qual", all_qual());
  n.confidence_quant = r.req_int("confidence_quant");
  return n;
}

void check_norm_invariants(const RazNorm& norm, const std::string& path) {
  require_non_empty(norm.norm_subject, join_path(path, "norm_subject"));
  require_non_empty(norm.norm_act, join_path(path, "norm_act"));
  require_non_empty(norm.norm_articulation, join_path(path, "norm_articulation"));
  if (!norm.governs_information_flow && norm.information_flow_note) {
    throw InvariantError(join_path(path, "information_flow_note"),
                         "must be null when governs_information_flow is false");
  }
  if (norm.confidence_quant < 0 || norm.confidence_quant > 10) {
    throw InvariantError(join_path(path, "confidence_quant"), "must lie in 0..10");
  }
  const auto [lo, hi] = confidence_band(norm.confidence_qual);
  if (norm.confidence_quant < lo || norm.confidence_quant > hi) {
    throw InvariantError(join_path(path, "confidence_quant"),
                         "value " + std::to_string(norm.confidence_quant) + " is not congruent with \"" +
                             std::string(to_string(norm.confidence_qual)) + "\" (expected " +
                             std::to_string(lo) + "-" + std::to_string(hi) + ")");
  }
}

NormExtraction validate_norm_extraction(std::string_view document) {
  const auto j = parse_document(document);
  FieldReader r(j, "");
  NormExtraction ne;
  ne.has_prescriptive_content = r.req_bool("has_prescriptive_content");
  const auto& norms = r.req_array("norms");
  for (std::size_t i = 0; i < norms.size(); ++i) {
    ne.norms.push_back(parse_raz_norm(norms[i], index_path("norms", i)));
  }
  if (!ne.has_prescriptive_content && !ne.norms.empty()) {
    throw InvariantError("has_prescriptive_content", "false flag must pair with an empty norms array");
  }
  if (ne.norms.size() > kMaxNormsPerChunk) {
    throw InvariantError("norms", "at most " + std::to_string(kMaxNormsPerChunk) + " norms per chunk, got " +
                                      std::to_string(ne.norms.size()));
  }
  for (std::size_t i = 0; i < ne.norms.size(); ++i) check_norm_invariants(ne.norms[i], index_path("norms", i));
  return ne;
}

NormReasoning validate_norm_reasoning(std::string_view document) {
  const auto j = parse_document(document);
  FieldReader r(j, "");
  NormReasoning nr;
  nr.has_prescriptive_content = r.req_bool("has_prescriptive_content");
  const auto& norms = r.req_array("norms");
  for (std::size_t i = 0; i < norms.size(); ++i) {
    FieldReader e(norms[i], index_path("norms", i));
    NormReasoningEntry entry;
    entry.original_text_snippet = e.opt_string("original_text_snippet").value_or("");
    entry.reasoning = e.req_string("reasoning");
    entry.preliminary_normative_force = e.req_enum("preliminary_normative_force", all_forces());
    entry.governs_information_flow = e.req_bool("governs_information_flow");
    nr.norms.push_back(std::move(entry));
  }
  if (!nr.has_prescriptive_content && !nr.norms.empty()) {
    throw InvariantError("has_prescriptive_content", "false flag must pair with an empty norms array");
  }
  return nr;
}

AbstractionRewrite validate_abstraction_rewrite(std::string_view document) {
  const auto j = parse_document(document);
  FieldReader r(j, "");
  AbstractionRewrite out;
  out.norm_subject = r.req_string("norm_subject");
  out.norm_act = r.req_string("norm_act");
  out.condition_of_application = r.opt_string("condition_of_application");
  out.norm_articulation = r.req_string("norm_articulation");
  out.role_rationale = r.opt_string("role_rationale").value_or("");
  require_non_empty(out.norm_subject, "norm_subject");
  require_non_empty(out.norm_act, "norm_act");
  require_non_empty(out.norm_articulation, "norm_articulation");
  return out;
}

AbstractedNorm abstracted_norm_from_json(const json& j) {
  AbstractedNorm an;
  an.norm = parse_raz_norm(j);
  check_norm_invariants(an.norm);
  FieldReader r(j, "");
  if (r.present("quality_flags")) an.quality_flags = r.string_list("quality_flags");
  an.role_rationale = r.opt_string("role_rationale").value_or("");
  return an;
}

// ---- reward-facing checks -------------------------------------------------------

InvariantReport check_internal_invariants(const FlowExtraction& fe) {
  InvariantReport report;
  const auto record = [&](bool ok, std::string what) {
    ++report.total;
    if (ok) ++report.passed;
    else report.failed.push_back(std::move(what));
  };

  record(!(fe.has_information_exchange == false && !fe.flows.empty()),
         "has_information_exchange: false flag paired with non-empty flows");
  for (std::size_t i = 0; i < fe.flows.size(); ++i) {
    const auto& f = fe.flows[i];
    record(!f.is_new_flow || f.appropriateness != Appropriateness::appropriate,
           index_path("flows", i) + ".is_new_flow: new flow judged appropriate");
    record(!f.confidence || (*f.confidence >= 0 && *f.confidence <= 10),
           index_path("flows", i) + ".confidence: outside 0..10");
  }
  return report;
}

bool PlaceholderLexicon::is_substantive(const std::optional<std::string>& v) const {
  if (!v) return false;
  const auto t = trim(*v);
  if (t.empty()) return false;
  return values.count(to_lower_ascii(t)) == 0;
}

std::optional<double> completeness_score(const FlowExtraction& fe, const PlaceholderLexicon& lexicon) {
  if (fe.flows.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& f : fe.flows) {
    int present = 0;
    present += lexicon.is_substantive(f.sender);
    present += lexicon.is_substantive(f.recipient);
    present += lexicon.is_substantive(f.subject);
    present += lexicon.is_substantive(f.information_type);
    present += lexicon.is_substantive(f.transmission_principle);
    sum += present / 5.0;
  }
  return sum / static_cast<double>(fe.flows.size());
}

// ---- serialization ---------------------------------------------------------------

ojson to_json(const InformationFlow& f) {
  ojson j;
  j["sender"] = f.sender;
  j["recipient"] = f.recipient;
  set_optional(j, "subject", f.subject);
  j["information_type"] = f.information_type;
  set_optional(j, "transmission_principle", f.transmission_principle);
  set_optional(j, "context", f.context);
  j["appropriateness"] = to_string(f.appropriateness);
  j["norms_invoked"] = f.norms_invoked;
  if (f.norm_source) j["norm_source"] = to_string(*f.norm_source);
  else j["norm_source"] = nullptr;
  j["is_new_flow"] = f.is_new_flow;
  set_optional(j, "confidence", f.confidence);
  return j;
}

ojson to_json(const FlowExtraction& fe) {
  ojson j;
  j["reasoning"] = fe.reasoning;
  set_optional(j, "has_information_exchange", fe.has_information_exchange);
  j["flows"] = ojson::array();
  for (const auto& f : fe.flows) j["flows"].push_back(to_json(f));
  return j;
}

ojson to_json(const FlowReasoningEntry& e) {
  ojson j;
  j["original_text_snippet"] = e.original_text_snippet;
  j["reasoning"] = e.reasoning;
  j["context_identified"] = e.context_identified;
  j["flow_direction"] = e.flow_direction;
  if (e.potential_appropriateness) j["potential_appropriateness"] = to_string(*e.potential_appropriateness);
  else j["potential_appropriateness"] = nullptr;
  j["is_new_flow"] = e.is_new_flow;
  return j;
}

ojson to_json(const FlowReasoning& fr) {
  ojson j;
  j["reasoning"] = fr.reasoning;
  j["has_information_exchange"] = fr.has_information_exchange;
  j["flows"] = ojson::array();
  for (const auto& e : fr.flows) j["flows"].push_back(to_json(e));
  return j;
}

ojson to_json(const RazNorm& n) {
  ojson j;
  j["prescriptive_element"] = n.prescriptive_element;
  j["norm_subject"] = n.norm_subject;
  j["norm_act"] = n.norm_act;
  set_optional(j, "condition_of_application", n.condition_of_application);
  j["normative_force"] = to_string(n.normative_force);
  j["context"] = n.context;
  j["norm_articulation"] = n.norm_articulation;
  j["norm_source"] = to_string(n.norm_source);
  j["governs_information_flow"] = n.governs_information_flow;
  set_optional(j, "information_flow_note", n.information_flow_note);
  j["confidence_qual"] = to_string(n.confidence_qual);
  j["confidence_quant"] = n.confidence_quant;
  return j;
}

ojson to_json(const NormExtraction& ne) {
  ojson j;
  j["has_prescriptive_content"] = ne.has_prescriptive_content;
  j["norms"] = ojson::array();
  for (const auto& n : ne.norms) j["norms"].push_back(to_json(n));
  return j;
}

ojson to_json(const NormReasoningEntry& e) {
  ojson j;
  j["original_text_snippet"] = e.original_text_snippet;
  j["reasoning"] = e.reasoning;
  j["preliminary_normative_force"] = to_string(e.preliminary_normative_force);
  j["governs_information_flow"] = e.governs_information_flow;
  return j;
}

ojson to_json(const NormReasoning& nr) {
  ojson j;
  j["has_prescriptive_content"] = nr.has_prescriptive_content;
  j["norms"] = ojson::array();
  for (const auto& e : nr.norms) j["norms"].push_back(to_json(e));
  return j;
}

ojson to_json(const AbstractedNorm& an) {
  ojson j = to_json(an.norm);
  set_optional(j, "quality_flags", an.quality_flags);
  j["role_rationale"] = an.role_rationale;
  return j;
}

ojson to_json(const AbstractionRewrite& r) {
  ojson j;
  j["norm_subject"] = r.norm_subject;
  j["norm_act"] = r.norm_act;
  set_optional(j, "condition_of_application", r.condition_of_application);
  j["norm_articulation"] = r.norm_articulation;
  j["role_rationale"] = r.role_rationale;
  return j;
}

// ---- schema descriptors ---------------------------------------------------------

namespace {

json string_schema() { return {{"type", "string"}}; }
json nullable_string_schema() { return {{"type", json::array({"string", "null"})}}; }
json object_schema(json properties, json required) {
  return {{"type", "object"}, {"properties", std::move(properties)}, {"required", std::move(required)}};
}

}  // namespace

const json& information_flow_schema() {
  static const json schema = object_schema(
      {{"sender", string_schema()},
       {"recipient", string_schema()},
       {"subject", nullable_string_schema()},
       {"information_type", string_schema()},
       {"transmission_principle", nullable_string_schema()},
       {"context", string_schema()},
       {"appropriateness", enum_schema(all_appropriateness())},
       {"norms_invoked", {{"type", "array"}, {"items", string_schema()}}},
       {"norm_source", enum_schema(all_sources())},
       {"is_new_flow", {{"type", "boolean"}}},
       {"confidence", {{"type", "integer"}, {"minimum", 0}, {"maximum", 10}}}},
      {"sender", "recipient", "information_type", "context", "appropriateness", "norms_invoked", "norm_source",
       "is_new_flow", "confidence"});
  return schema;
}

const json& flow_extraction_schema() {
  static const json schema = object_schema({{"reasoning", string_schema()},
                                            {"has_information_exchange", {{"type", "boolean"}}},
                                            {"flows", {{"type", "array"}, {"items", information_flow_schema()}}}},
                                           {"reasoning", "has_information_exchange", "flows"});
  return schema;
}

const json& flow_reasoning_schema() {
  static const json entry = object_schema({{"original_text_snippet", string_schema()},
                                           {"reasoning", string_schema()},
                                           {"context_identified", string_schema()},
                                           {"flow_direction", string_schema()},
                                           {"potential_appropriateness", enum_schema(all_appropriateness())},
                                           {"is_new_flow", {{"type", "boolean"}}}},
                                          {"original_text_snippet", "reasoning", "context_identified",
                                           "flow_direction", "potential_appropriateness", "is_new_flow"});
  static const json schema =
      object_schema({{"reasoning", string_schema()},
                     {"has_information_exchange", {{"type", "boolean"}}},
                     {"flows", {{"type", "array"}, {"items", entry}}}},
                    {"reasoning", "has_information_exchange", "flows"});
  return schema;
}

const json& norm_reasoning_schema() {
  static const json entry = object_schema({{"original_text_snippet", string_schema()},
                                           {"reasoning", string_schema()},
                                           {"preliminary_normative_force", enum_schema(all_forces())},
                                           {"governs_information_flow", {{"type", "boolean"}}}},
                                          {"original_text_snippet", "reasoning", "preliminary_normative_force",
                                           "governs_information_flow"});
  static const json schema = object_schema({{"has_prescriptive_content", {{"type", "boolean"}}},
                                            {"norms", {{"type", "array"}, {"items", entry}}}},
                                           {"has_prescriptive_content", "norms"});
  return schema;
}

const json& norm_extraction_schema() {
  static const json norm = object_schema(
      {{"prescriptive_element", string_schema()},
       {"norm_subject", string_schema()},
       {"norm_act", string_schema()},
       {"condition_of_application", nullable_string_schema()},
       {"normative_force", enum_schema(all_forces())},
       {"context", string_schema()},
       {"norm_articulation", string_schema()},
       {"norm_source", enum_schema(all_sources())},
       {"governs_information_flow", {{"type", "boolean"}}},
       {"information_flow_note", nullable_string_schema()},
       {"confidence_qual", enum_schema(all_qual())},
       {"confidence_quant", {{"type", "integer"}, {"minimum", 0}, {"maximum", 10}}}},
      {"prescriptive_element", "norm_subject", "norm_act", "condition_of_application", "normative_force", "context",
       "norm_articulation", "norm_source", "governs_information_flow", "information_flow_note", "confidence_qual",
       "confidence_quant"});
  static const json schema =
      object_schema({{"has_prescriptive_content", {{"type", "boolean"}}},
                     {"norms", {{"type", "array"}, {"items", norm}, {"maxItems", kMaxNormsPerChunk}}}},
                    {"has_prescriptive_content", "norms"});
  return schema;
}

const json& abstraction_rewrite_schema() {
  static const json schema = object_schema({{"norm_subject", string_schema()},
                                            {"norm_act", string_schema()},
                                            {"condition_of_application", nullable_string_schema()},
                                            {"norm_articulation", string_schema()},
                                            {"role_rationale", string_schema()}},
                                           {"norm_subject", "norm_act", "condition_of_application",
                                            "norm_articulation", "role_rationale"});
  return schema;
}

}  // namespace normforge
