#include "normforge/reward.hpp"

#include <algorithm>
#include <cmath>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::string nonempty_or(std::string_view s, const char* fallback) {
  return trim(s).empty() ? std::string(fallback) : std::string(s);
}

}  // namespace

void RewardWeights::validate() const {
  double sum = 0.0;
  const auto w = as_array();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] >= 0.0 && w[i] <= 1.0)) {
      throw std::invalid_argument(std::string("weight ") + kComponentNames[i] + " must lie in [0,1]");
    }
    sum += w[i];
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to 1, got " + std::to_string(sum));
}

RewardWeights RewardWeights::with_overrides(const json& overrides) const {
  if (!overrides.is_object()) throw std::invalid_argument("weight override must be an object");
  RewardWeights w = *this;
  double* slots[] = {&w.uncert, &w.complete, &w.consist, &w.context, &w.cohere, &w.ground};
  for (const auto& [key, value] : overrides.items()) {
    const auto it = std::find_if(kComponentNames.begin(), kComponentNames.end(),
                                 [&](const char* n) { return key == n; });
    if (it == kComponentNames.end()) throw std::invalid_argument("unknown weight \"" + key + "\"");
    if (!value.is_number()) throw std::invalid_argument("weight \"" + key + "\" must be a number");
    *slots[it - kComponentNames.begin()] = value.get<double>();
  }
  w.validate();
  return w;
}

void ContrastiveConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be a non-negative number");
}

void RewardConfig::validate() const {
  weights.validate();
  contrastive.validate();
  retrieval.validate();
}

// ---- verdicts ----------------------------------------------------------------------------

double JudgeVerdict::score() const {
  return 0.4 * norm_match_score + 0.4 * governance_score + 0.2 * (appropriateness_consistent ? 1.0 : 0.0);
}

namespace {

json parse_object(std::string_view document) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError("", e.what());
  }
  if (!j.is_object()) throw SchemaError("", "expected an object");
  return j;
}

double unit_score(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) throw SchemaError(key, "required number missing");
  const double v = j[key].get<double>();
  if (!(v >= 0.0 && v <= 1.0)) throw InvariantError(key, "must lie in [0,1]");
  return v;
}

}  // namespace

JudgeVerdict validate_judge_verdict(std::string_view document) {
  const auto j = parse_object(document);
  JudgeVerdict v;
  v.norm_match_score = unit_score(j, "norm_match_score");
  v.governance_score = unit_score(j, "governance_score");
  if (!j.contains("appropriateness_consistent") || !j["appropriateness_consistent"].is_boolean()) {
    throw SchemaError("appropriateness_consistent", "required boolean missing");
  }
  v.appropriateness_consistent = j["appropriateness_consistent"].get<bool>();
  if (j.contains("explanation") && j["explanation"].is_string()) v.explanation = j["explanation"];
  return v;
}

CoverageVerdict validate_coverage_verdict(std::string_view document) {
  const auto j = parse_object(document);
  CoverageVerdict v;
  v.coverage_score = unit_score(j, "coverage_score");
  if (j.contains("passage_contains_governed_flows")) {
    if (!j["passage_contains_governed_flows"].is_boolean()) {
      throw SchemaError("passage_contains_governed_flows", "expected a boolean");
    }
    v.passage_contains_governed_flows = j["passage_contains_governed_flows"].get<bool>();
  }
  if (j.contains("explanation") && j["explanation"].is_string()) v.explanation = j["explanation"];
  return v;
}

const json& judge_verdict_schema() {
  static const json schema = {
      {"type", "object"},
      {"properties",
       {{"norm_match_score", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
        {"governance_score", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
        {"appropriateness_consistent", {{"type", "boolean"}}},
        {"explanation", {{"type", "string"}}}}},
      {"required", {"norm_match_score", "governance_score", "appropriateness_consistent", "explanation"}}};
  return schema;
}

const json& coverage_verdict_schema() {
  static const json schema = {
      {"type", "object"},
      {"properties",
       {{"passage_contains_governed_flows", {{"type", "boolean"}}},
        {"coverage_score", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
        {"explanation", {{"type", "string"}}}}},
      {"required", {"passage_contains_governed_flows", "coverage_score", "explanation"}}};
  return schema;
}

// ---- components ------------------------------------------------------------------------------

UncertaintyResult score_uncertainty(std::string_view completion) {
  UncertaintyResult out;
  try {
    out.parsed = parse_flow_extraction(completion);
  } catch (const ValidationError& e) {
    out.error = e.what();
    return out;
  }
  const auto& fe = *out.parsed;
  double score = 0.6;
  if (fe.has_information_exchange.has_value()) score += 0.2;
  if (!fe.flows.empty()) {
    double sum = 0.0;
    for (const auto& f : fe.flows) sum += std::clamp(f.confidence.value_or(0), 0, 10) / 10.0;
    score += 0.2 * (sum / static_cast<double>(fe.flows.size()));
  }
  out.score = clamp01(score);
  return out;
}

GatingScores score_gating(const FlowExtraction& fe, const GoldLabel& gold, const NoFlowShaping& shaping,
                          const PlaceholderLexicon& lexicon) {
  if (fe.flows.empty()) {
    const double v = gold.has_flows ? shaping.gold_has_flows : shaping.gold_no_flow;
    return {v, v};
  }
  return {completeness_score(fe, lexicon).value_or(0.0), check_internal_invariants(fe).proportion()};
}

double score_coherence(std::string_view reasoning, const FlowExtraction& fe, const NoFlowShaping& shaping) {
  if (trim(reasoning).empty()) return 0.0;
  if (fe.flows.empty()) return shaping.coherence_score;
  double sum = 0.0;
  for (const auto& f : fe.flows) {
    int hits = 0;
    for (const auto* field : {&f.sender, &f.recipient, &f.information_type}) hits += contains_word(reasoning, *field);
    sum += hits / 3.0;
  }
  return sum / static_cast<double>(fe.flows.size());
}

ComponentResult score_context(const FlowExtraction& fe, const NormativeUniverse& universe, EmbeddingModel& embedder,
                              const RewardConfig& cfg) {
  ComponentResult out;
  if (fe.flows.empty()) {
    out.score = cfg.shaping.context_score;
    return out;
  }
  std::vector<std::string> texts;
  std::vector<std::size_t> owners;
  for (std::size_t i = 0; i < fe.flows.size(); ++i) {
    const auto& c = fe.flows[i].context;
    if (c && !trim(*c).empty()) {
      texts.emplace_back(trim(*c));
      owners.push_back(i);
    }
  }
  std::vector<double> per_flow(fe.flows.size(), 0.0);
  try {
    const auto vecs = embedder.embed_batch(texts);
    for (std::size_t j = 0; j < vecs.size(); ++j) {
      per_flow[owners[j]] = std::max(0.0, context_max_similarity(universe, vecs[j]));
    }
  } catch (const TransportError& e) {
    if (cfg.fail_on_unreachable) throw ServiceUnavailable(std::string("embedding endpoint unreachable: ") + e.what());
    out.failed = true;
    out.error = e.what();
    return out;
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
    return out;
  }
  double sum = 0.0;
  for (double s : per_flow) sum += std::min(1.0, s);
  out.score = sum / static_cast<double>(per_flow.size());
  return out;
}

double contrastive_clamp(double r_correct, double r_wrong, double lambda) {
  return clamp01(r_correct - lambda * r_wrong);
}

std::string canonical_flow_text(const InformationFlow& flow) {
  return flow.sender + " → " + flow.recipient + " : " + flow.information_type + " [" +
         flow.context.value_or("") + "]";
}

std::string retrieved_norms_json(const NormativeUniverse& u, const std::vector<Retrieved>& hits) {
  ojson arr = ojson::array();
  for (const auto& h : hits) {
    const auto& n = u.norms[h.index].norm.norm;
    ojson j;
    j["norm_articulation"] = n.norm_articulation;
    j["norm_subject"] = n.norm_subject;
    j["norm_act"] = n.norm_act;
    j["condition_of_application"] = n.condition_of_application ? ojson(*n.condition_of_application) : ojson(nullptr);
    j["normative_force"] = to_string(n.normative_force);
    j["context"] = n.context;
    j["governs_information_flow"] = n.governs_information_flow;
    arr.push_back(std::move(j));
  }
  return dump_pretty(arr);
}

FlowJudgement judge_flow(const InformationFlow& flow, std::size_t flow_index, const std::string& chunk_text,
                         const NormativeUniverse& universe, const std::vector<Retrieved>& hits, ChatModel& judge,
                         const PromptSet& prompts, bool fail_on_unreachable) {
  FlowJudgement out;
  out.flow_index = flow_index;
  for (const auto& h : hits) out.retrieved.push_back(h.index);
  const auto& p = prompts.get(PromptRole::grounding_judge);
  try {
    CompletionRequest req{p.system.text(),
                          p.user.render({{"chunk_text", nonempty_or(chunk_text, "(empty)")},
                                         {"flow_json", dump_pretty(to_json(flow))},
                                         {"norm_universe_json", retrieved_norms_json(universe, hits)}}),
                          judge_verdict_schema(), "grounding_verdict"};
    out.verdict = validate_judge_verdict(strip_think_blocks(judge.complete_structured(req)));
    out.score = out.verdict.score();
  } catch (const TransportError& e) {
    if (fail_on_unreachable) throw ServiceUnavailable(std::string("judge endpoint unreachable: ") + e.what());
    out.failed = true;
    out.error = e.what();
  } catch (const std::exception& e) {
    out.verdict = {};
    out.score = 0.0;
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

namespace {

GroundingSide judge_flows_side(const FlowExtraction& fe, const std::vector<Embedding>& queries,
                               const std::string& chunk_text, const NormativeUniverse& u, const RewardConfig& cfg,
                               const Gateway& gateway, const PromptSet& prompts) {
  GroundingSide side;
  side.book_id = u.book_id;
  double sum = 0.0;
  for (std::size_t i = 0; i < fe.flows.size(); ++i) {
    const auto hits = retrieve_top_k(u, queries[i], cfg.retrieval);
    auto j = judge_flow(fe.flows[i], i, chunk_text, u, hits, *gateway.judge, prompts, cfg.fail_on_unreachable);
    side.failed = side.failed || j.failed;
    sum += j.score;
    side.flows.push_back(std::move(j));
  }
  side.mean = sum / static_cast<double>(fe.flows.size());
  return side;
}

GroundingSide coverage_side(const Embedding& query, const std::string& chunk_text, const NormativeUniverse& u,
                            const RewardConfig& cfg, const Gateway& gateway, const PromptSet& prompts) {
  GroundingSide side;
  side.book_id = u.book_id;
  const auto hits = retrieve_top_k(u, query, cfg.retrieval);
  for (const auto& h : hits) side.coverage_retrieved.push_back(h.index);
  const auto& p = prompts.get(PromptRole::coverage_judge);
  try {
    CompletionRequest req{p.system.text(),
                          p.user.render({{"chunk_text", nonempty_or(chunk_text, "(empty)")},
                                         {"norm_universe_json", retrieved_norms_json(u, hits)}}),
                          coverage_verdict_schema(), "coverage_verdict"};
    side.coverage = validate_coverage_verdict(strip_think_blocks(gateway.judge->complete_structured(req)));
    side.mean = 1.0 - side.coverage->coverage_score;
  } catch (const TransportError& e) {
    if (cfg.fail_on_unreachable) throw ServiceUnavailable(std::string("judge endpoint unreachable: ") + e.what());
    side.failed = true;
    side.error = e.what();
  } catch (const std::exception& e) {
    side.failed = true;
    side.error = e.what();
  }
  return side;
}

std::vector<Embedding> embed_or_raise(EmbeddingModel& embedder, const std::vector<std::string>& texts,
                                      const RewardConfig& cfg) {
  try {
    return embedder.embed_batch(texts);
  } catch (const TransportError& e) {
    if (cfg.fail_on_unreachable) throw ServiceUnavailable(std::string("embedding endpoint unreachable: ") + e.what());
    throw;
  }
}

}  // namespace

GroundingResult score_grounding(const FlowExtraction& fe, const std::string& chunk_text,
                                const NormativeUniverse& correct, const NormativeUniverse& wrong,
                                const RewardConfig& cfg, const Gateway& gateway, const PromptSet& prompts) {
  GroundingResult out;
  out.lambda = cfg.contrastive.lambda;
  out.no_flow = fe.flows.empty();
  out.correct.book_id = correct.book_id;
  out.wrong.book_id = wrong.book_id;

  if (!out.no_flow) {
    std::vector<std::string> texts;
    for (const auto& f : fe.flows) texts.push_back(canonical_flow_text(f));
    std::vector<Embedding> queries;
    try {
      queries = embed_or_raise(*gateway.embedder, texts, cfg);
    } catch (const ServiceUnavailable&) {
      throw;
    } catch (const std::exception& e) {
      out.correct.failed = out.wrong.failed = true;
      out.correct.error = out.wrong.error = e.what();
      return out;
    }
    out.correct = judge_flows_side(fe, queries, chunk_text, correct, cfg, gateway, prompts);
    out.wrong = judge_flows_side(fe, queries, chunk_text, wrong, cfg, gateway, prompts);
    out.score = contrastive_clamp(out.correct.mean, out.wrong.mean, out.lambda);
    return out;
  }

  std::vector<Embedding> query;
  try {
    query = embed_or_raise(*gateway.embedder, {nonempty_or(chunk_text, "(empty)")}, cfg);
  } catch (const ServiceUnavailable&) {
    throw;
  } catch (const std::exception& e) {
    out.correct.failed = out.wrong.failed = true;
    out.correct.error = out.wrong.error = e.what();
    return out;
  }
  out.correct = coverage_side(query[0], chunk_text, correct, cfg, gateway, prompts);
  out.wrong = coverage_side(query[0], chunk_text, wrong, cfg, gateway, prompts);
  // A failed side contributes 0.
  const double wrong_term = cfg.shaping.contrastive_coverage ? out.wrong.mean : 0.0;
  out.score = contrastive_clamp(out.correct.mean, wrong_term, out.lambda);
  return out;
}

// ---- composite -------------------------------------------------------------------------------------

double weighted_composite(const std::array<double, 6>& c, const RewardWeights& weights) {
  const auto w = weights.as_array();
  double sum = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) sum += w[i] * c[i];
  return clamp01(sum);
}

RewardBreakdown composite_reward(std::string_view raw_completion, const RewardInputs& in, const RewardConfig& cfg,
                                 const Gateway& gateway, const PromptSet& prompts) {
  RewardBreakdown b;
  b.gold_has_flows = in.gold.has_flows;
  const auto text = strip_think_blocks(raw_completion);
  auto uncert = score_uncertainty(text);
  if (!uncert.parsed) {
    b.flags.push_back("unparseable: " + uncert.error);
    b.composite = weighted_composite(b.components(), cfg.weights);
    return b;
  }
  const auto& fe = *uncert.parsed;
  b.schema_valid = true;
  b.no_flow_predicted = fe.flows.empty();
  b.r_uncert = uncert.score;
  try {
    check_flow_extraction_invariants(fe);
  } catch (const ValidationError& e) {
    b.flags.push_back(std::string("invariant: ") + e.what());
  }

  const auto gating = score_gating(fe, in.gold, cfg.shaping, cfg.placeholders);
  b.r_complete = gating.complete;
  b.r_consist = gating.consist;
  if (b.no_flow_predicted && cfg.shaping.shape_uncertainty) b.r_uncert = gating.complete;

  const auto context = score_context(fe, in.correct, *gateway.embedder, cfg);
  b.r_context = clamp01(context.score);
  if (context.failed) b.flags.push_back("context: " + context.error);

  b.r_cohere = clamp01(score_coherence(fe.reasoning, fe, cfg.shaping));

  auto grounding = score_grounding(fe, in.chunk.text, in.correct, in.wrong, cfg, gateway, prompts);
  b.r_ground = clamp01(grounding.score);
  if (grounding.correct.failed) b.flags.push_back("grounding: judge failure against the correct universe");
  if (grounding.wrong.failed) b.flags.push_back("grounding: judge failure against the wrong universe");
  b.grounding = std::move(grounding);

  b.composite = weighted_composite(b.components(), cfg.weights);
  return b;
}

GroupDiagnostics group_diagnostics(const std::vector<RewardBreakdown>& breakdowns) {
  GroupDiagnostics d;
  d.size = breakdowns.size();
  if (breakdowns.empty()) return d;
  std::size_t no_flow = 0, valid = 0;
  for (const auto& b : breakdowns) {
    no_flow += b.schema_valid && b.no_flow_predicted;
    valid += b.schema_valid;
    const auto c = b.components();
    for (std::size_t i = 0; i < c.size(); ++i) d.component_means[i] += c[i];
    d.composite_mean += b.composite;
  }
  const double n = static_cast<double>(breakdowns.size());
  d.no_flow_rate = static_cast<double>(no_flow) / n;
  d.schema_valid_rate = static_cast<double>(valid) / n;
  for (auto& m : d.component_means) m /= n;
  d.composite_mean /= n;
  return d;
}

std::uint64_t group_seed(std::uint64_t seed, const std::string& chunk_id) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = seed ^ fnv1a64(chunk_id);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

GroupResult score_group(const std::vector<std::string>& completions, const Chunk& chunk, const GoldLabel& gold,
                        const std::vector<NormativeUniverse>& universes, const RewardConfig& cfg, std::uint64_t seed,
                        const Gateway& gateway, const PromptSet& prompts) {
  const auto correct = std::find_if(universes.begin(), universes.end(),
                                    [&](const auto& u) { return u.book_id == chunk.book_id; });
  if (correct == universes.end()) throw UniverseError("no universe loaded for book " + chunk.book_id);
  GroupResult out;
  out.seed = seed;
  const auto& wrong = sample_wrong_universe(universes, chunk.book_id, group_seed(seed, chunk.chunk_id));
  out.wrong_book_id = wrong.book_id;
  const RewardInputs in{chunk, gold, *correct, wrong};
  for (const auto& c : completions) out.breakdowns.push_back(composite_reward(c, in, cfg, gateway, prompts));
  out.diagnostics = group_diagnostics(out.breakdowns);
  return out;
}

// ---- serialization ----------------------------------------------------------------------------

namespace {

ojson side_json(const GroundingSide& s) {
  ojson j;
  j["book_id"] = s.book_id;
  j["mean"] = s.mean;
  j["failed"] = s.failed;
  if (!s.error.empty()) j["error"] = s.error;
  if (s.coverage) {
    j["retrieved"] = s.coverage_retrieved;
    j["coverage_score"] = s.coverage->coverage_score;
    j["passage_contains_governed_flows"] = s.coverage->passage_contains_governed_flows;
  } else {
    j["flows"] = ojson::array();
    for (const auto& f : s.flows) {
      ojson fj;
      fj["flow_index"] = f.flow_index;
      fj["retrieved"] = f.retrieved;
      fj["norm_match_score"] = f.verdict.norm_match_score;
      fj["governance_score"] = f.verdict.governance_score;
      fj["appropriateness_consistent"] = f.verdict.appropriateness_consistent;
      fj["score"] = f.score;
      fj["failed"] = f.failed;
      if (!f.error.empty()) fj["error"] = f.error;
      j["flows"].push_back(std::move(fj));
    }
  }
  return j;
}

}  // namespace

ojson to_json(const GroundingResult& g) {
  ojson j;
  j["mode"] = g.no_flow ? "coverage" : "flows";
  j["lambda"] = g.lambda;
  j["score"] = g.score;
  j["correct"] = side_json(g.correct);
  j["wrong"] = side_json(g.wrong);
  return j;
}

ojson to_json(const RewardBreakdown& b) {
  ojson j;
  j["r_uncert"] = b.r_uncert;
  j["r_complete"] = b.r_complete;
  j["r_consist"] = b.r_consist;
  j["r_context"] = b.r_context;
  j["r_cohere"] = b.r_cohere;
  j["r_ground"] = b.r_ground;
  j["composite"] = b.composite;
  j["schema_valid"] = b.schema_valid;
  j["no_flow_predicted"] = b.no_flow_predicted;
  j["gold_has_flows"] = b.gold_has_flows;
  j["flags"] = b.flags;
  j["grounding_detail"] = b.grounding ? to_json(*b.grounding) : ojson(nullptr);
  return j;
}

ojson to_json(const GroupDiagnostics& d) {
  ojson j;
  j["group_size"] = d.size;
  j["no_flow_rate"] = d.no_flow_rate;
  j["schema_valid_rate"] = d.schema_valid_rate;
  ojson means;
  for (std::size_t i = 0; i < kComponentNames.size(); ++i) means[kComponentNames[i]] = d.component_means[i];
  j["component_means"] = means;
  j["composite_mean"] = d.composite_mean;
  return j;
}

void AuditLog::record(const std::string& chunk_id, std::string_view completion, std::uint64_t seed,
                      const std::string& wrong_book_id, const RewardBreakdown& b) {
  ojson j;
  j["chunk_id"] = chunk_id;
  j["completion_sha256"] = sha256_hex(completion);
  j["seed"] = seed;
  j["wrong_book_id"] = wrong_book_id;
  j["breakdown"] = to_json(b);
  const auto line = dump_line(j);
  std::lock_guard lock(mu_);
  append_line(path_, line);
}

}  // namespace normforge
