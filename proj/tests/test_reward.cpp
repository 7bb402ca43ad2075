#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <random>

#include "normforge/reward.hpp"
#include "support.hpp"

using namespace normforge;
using nlohmann::json;

namespace {

// Judge answering from a fixed script.
class ScriptedChat : public ChatModel {
 public:
  std::deque<std::string> replies;
  std::size_t calls = 0;
  bool down = false;

  std::string complete_text(const CompletionRequest& r) override { return complete_structured(r); }
  std::string complete_structured(const CompletionRequest&) override {
    ++calls;
    if (down) throw TransportError("judge down");
    if (replies.empty()) throw EndpointError(400, "script exhausted");
    auto r = replies.front();
    replies.pop_front();
    return r;
  }
};

std::string verdict(double a, double b, bool c) {
  return json{{"norm_match_score", a}, {"governance_score", b}, {"appropriateness_consistent", c}, {"explanation", "x"}}
      .dump();
}

std::string coverage(double s) {
  return json{{"passage_contains_governed_flows", s > 0.5}, {"coverage_score", s}, {"explanation", "x"}}.dump();
}

InformationFlow flow(const std::string& s, const std::string& r, const std::string& info, std::string ctx = "court",
                     std::optional<int> conf = 8) {
  InformationFlow f;
  f.sender = s;
  f.recipient = r;
  f.subject = "a third party";
  f.information_type = info;
  f.transmission_principle = "in confidence";
  f.context = std::move(ctx);
  f.confidence = conf;
  return f;
}

FlowExtraction envelope(std::vector<InformationFlow> flows, std::string reasoning = "reasoning") {
  FlowExtraction fe;
  fe.reasoning = std::move(reasoning);
  fe.has_information_exchange = !flows.empty();
  fe.flows = std::move(flows);
  return fe;
}

std::string completion(const FlowExtraction& fe) { return dump_pretty(to_json(fe)); }

Embedding unit3(double x, double y, double z) {
  const double n = std::sqrt(x * x + y * y + z * z);
  return {static_cast<float>(x / n), static_cast<float>(y / n), static_cast<float>(z / n)};
}

NormativeUniverse small_universe(const std::string& book, std::vector<Embedding> contexts) {
  NormativeUniverse u;
  u.book_id = book;
  u.embedding_dim = 3;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    NormRecord r;
    r.norm.norm.norm_subject = "a clerk";
    r.norm.norm.norm_act = "keep records " + std::to_string(i);
    r.norm.norm.context = "court";
    r.norm.norm.norm_articulation = "A clerk must keep records " + std::to_string(i) + ".";
    r.norm.norm.normative_force = NormativeForce::obligatory;
    r.embedding = contexts[i];
    r.context_embedding = contexts[i];
    u.norms.push_back(r);
  }
  return u;
}

// Stub-backed fixture with three universes built from the standard plans.
class RewardStub : public ::testing::Test {
 protected:
  void SetUp() override {
    gateway.judge = judge;
    gateway.extractor = judge;
    gateway.embedder = embedder;
    for (const auto& plan : nftest::standard_plans()) {
      std::vector<AbstractedNorm> norms;
      for (const auto& [idx, cp] : plan.chunks) {
        for (const auto& n : cp.norms) {
          AbstractedNorm a;
          a.norm.norm_subject = n.abstract_subject.empty() ? n.subject : "a steward";
          a.norm.norm_act = n.act;
          a.norm.normative_force = n.force == "prohibited" ? NormativeForce::prohibited : NormativeForce::obligatory;
          a.norm.context = n.context;
          a.norm.governs_information_flow = n.governs;
          a.norm.norm_articulation = stub_articulation(a.norm.norm_subject, n.force, n.act, "");
          norms.push_back(a);
        }
      }
      universes.push_back(build_universe(plan.book_id, norms, *embedder, "t"));
    }
    chunk.chunk_id = "alpha-000003";
    chunk.book_id = "alpha";
    chunk.text = "A doctor told a patient about a diagnosis in the medicine ward.";
    gold = {chunk.chunk_id, true, 2};
  }

  StubServer stub{nftest::stub_options()};
  std::shared_ptr<nftest::DirectChat> judge = std::make_shared<nftest::DirectChat>(stub);
  std::shared_ptr<nftest::DirectEmbedder> embedder = std::make_shared<nftest::DirectEmbedder>(stub);
  Gateway gateway;
  PromptSet prompts = PromptSet::load(nftest::prompt_dir());
  std::vector<NormativeUniverse> universes;
  Chunk chunk;
  GoldLabel gold;
  RewardConfig cfg;

  FlowExtraction two_flows() {
    return envelope({flow("a doctor", "a patient", "a diagnosis", "medicine"),
                     flow("a nurse", "the family", "treatment details", "medicine", 5)},
                    "a doctor tells a patient a diagnosis; a nurse tells the family treatment details");
  }
};

}  // namespace

// ---- weights and config -------------------------------------------------------------

TEST(RewardWeights, DefaultsAndValidation) {
  RewardWeights w;
  EXPECT_NO_THROW(w.validate());
  const auto a = w.as_array();
  const std::array<double, 6> expected{0.10, 0.05, 0.05, 0.20, 0.10, 0.50};
  EXPECT_EQ(a, expected);
  w.ground = 0.6;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  RewardWeights base;
  const auto moved = base.with_overrides(json{{"ground", 0.4}, {"context", 0.3}});
  EXPECT_DOUBLE_EQ(moved.ground, 0.4);
  EXPECT_NO_THROW(moved.validate());
  EXPECT_THROW(base.with_overrides(json{{"bogus", 0.1}}), std::invalid_argument);
  ContrastiveConfig c;
  c.lambda = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---- uncertainty --------------------------------------------------------------------

TEST(Uncertainty, Examples) {
  EXPECT_DOUBLE_EQ(score_uncertainty("not json at all").score, 0.0);
  EXPECT_FALSE(score_uncertainty("{\"flows\": 3}").parsed.has_value());
  EXPECT_NEAR(score_uncertainty(completion(envelope({flow("a", "b", "c", "d", 10)}))).score, 1.0, 1e-12);
  EXPECT_NEAR(score_uncertainty(completion(envelope({flow("a", "b", "c", "d", 5)}))).score, 0.9, 1e-12);
  EXPECT_NEAR(score_uncertainty(completion(envelope({}))).score, 0.8, 1e-12);
  EXPECT_NEAR(score_uncertainty(R"({"reasoning": "r", "flows": []})").score, 0.6, 1e-12);
  EXPECT_NEAR(score_uncertainty(completion(envelope({flow("a", "b", "c", "d", std::nullopt), flow("a", "b", "c", "d", 6)})))
                  .score,
              0.8 + 0.2 * 0.3, 1e-12);
}

// ---- gating ---------------------------------------------------------------------------

TEST(Gating, NoFlowShapingTable) {
  const auto none = envelope({});
  const auto some = envelope({flow("a", "b", "c"), flow("d", "e", "f")});
  const GoldLabel gold_none{"c", false, 0}, gold_some{"c", true, 2};
  auto g = score_gating(none, gold_none);
  EXPECT_DOUBLE_EQ(g.complete, 0.6);
  EXPECT_DOUBLE_EQ(g.consist, 0.6);
  g = score_gating(none, gold_some);
  EXPECT_DOUBLE_EQ(g.complete, 0.1);
  EXPECT_DOUBLE_EQ(g.consist, 0.1);
  for (const auto& gold : {gold_none, gold_some}) {
    g = score_gating(some, gold);
    EXPECT_DOUBLE_EQ(g.complete, *completeness_score(some));
    EXPECT_DOUBLE_EQ(g.consist, check_internal_invariants(some).proportion());
  }
}

TEST(Gating, MissingSubjectExample) {
  auto fe = envelope({flow("a", "b", "c"), flow("d", "e", "f")});
  fe.flows[1].subject.reset();
  const auto g = score_gating(fe, {"c", true, 2});
  EXPECT_NEAR(g.complete, 0.9, 1e-12);
  EXPECT_DOUBLE_EQ(g.consist, 1.0);
}

// ---- coherence ------------------------------------------------------------------------

TEST(Coherence, Examples) {
  const auto fe = envelope({flow("Mr. Darcy", "Elizabeth", "past conduct")});
  EXPECT_DOUBLE_EQ(score_coherence("mr darcy wrote to ELIZABETH about his past conduct.", fe), 1.0);
  EXPECT_NEAR(score_coherence("Mr. Darcy wrote to Elizabeth.", fe), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(score_coherence("", fe), 0.0);
  EXPECT_NEAR(score_coherence("Darcyville and Elizabeth", fe), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(score_coherence("nothing passes here", envelope({})), 1.0);
  EXPECT_DOUBLE_EQ(score_coherence("", envelope({})), 0.0);
}

// ---- context --------------------------------------------------------------------------

TEST(Context, Examples) {
  StubServer stub(nftest::stub_options());
  nftest::DirectEmbedder embedder(stub);
  const auto u = small_universe("b", {unit3(1, 0, 0), unit3(0, 1, 0)});
  stub.set_embedding_override("court", {1, 0, 0});
  stub.set_embedding_override("ctx nine", {0.9, std::sqrt(1 - 0.81), 0});
  stub.set_embedding_override("ctx five", {0.5, 0, std::sqrt(0.75)});
  stub.set_embedding_override("opposite", {-1, -1, 0});

  EXPECT_NEAR(score_context(envelope({flow("a", "b", "c", "court")}), u, embedder).score, 1.0, 1e-6);
  // max over stored labels: "ctx nine" is 0.9 against the first, 0.436 against the second
  EXPECT_NEAR(score_context(envelope({flow("a", "b", "c", "ctx nine"), flow("a", "b", "c", "ctx five")}), u, embedder)
                  .score,
              0.7, 1e-6);
  EXPECT_DOUBLE_EQ(score_context(envelope({}), u, embedder).score, 0.0);
  EXPECT_DOUBLE_EQ(score_context(envelope({flow("a", "b", "c", "opposite")}), u, embedder).score, 0.0);
  EXPECT_NEAR(score_context(envelope({flow("a", "b", "c", "court"), flow("a", "b", "c", "  ")}), u, embedder).score, 0.5,
              1e-6);
}

TEST(Context, EmbedderOutage) {
  StubServer stub(nftest::stub_options());
  nftest::DirectEmbedder embedder(stub);
  embedder.down = true;
  const auto u = small_universe("b", {unit3(1, 0, 0)});
  const auto fe = envelope({flow("a", "b", "c", "court")});
  EXPECT_THROW(score_context(fe, u, embedder), ServiceUnavailable);
  RewardConfig lenient;
  lenient.fail_on_unreachable = false;
  const auto r = score_context(fe, u, embedder, lenient);
  EXPECT_TRUE(r.failed);
  EXPECT_DOUBLE_EQ(r.score, 0.0);
}

// ---- judge ----------------------------------------------------------------------------

TEST(Judge, VerdictValidation) {
  EXPECT_DOUBLE_EQ(validate_judge_verdict(verdict(1, 1, true)).score(), 1.0);
  EXPECT_NEAR(validate_judge_verdict(verdict(0.5, 1, false)).score(), 0.6, 1e-12);
  EXPECT_THROW(validate_judge_verdict(verdict(1.5, 0, true)), InvariantError);
  EXPECT_THROW(validate_judge_verdict("{\"norm_match_score\": 1}"), SchemaError);
  EXPECT_THROW(validate_judge_verdict("garbage"), ParseError);
  EXPECT_THROW(validate_coverage_verdict(coverage(-0.1)), InvariantError);
}

TEST(Judge, PerFlowScores) {
  const auto prompts = PromptSet::load(nftest::prompt_dir());
  const auto u = small_universe("b", {unit3(1, 0, 0), unit3(0, 1, 0)});
  const auto hits = retrieve_top_k(u, unit3(1, 0, 0), {});
  ScriptedChat judge;
  judge.replies = {verdict(1, 1, true), verdict(0.5, 1, false), "{\"explanation\": \"half a verdict\"}",
                   "<think>hm</think>" + verdict(0, 0.5, true)};
  const auto f = flow("a", "b", "c");
  EXPECT_DOUBLE_EQ(judge_flow(f, 0, "text", u, hits, judge, prompts).score, 1.0);
  EXPECT_NEAR(judge_flow(f, 0, "text", u, hits, judge, prompts).score, 0.6, 1e-12);
  const auto bad = judge_flow(f, 0, "text", u, hits, judge, prompts);
  EXPECT_TRUE(bad.failed);
  EXPECT_DOUBLE_EQ(bad.score, 0.0);
  EXPECT_NEAR(judge_flow(f, 0, "", u, hits, judge, prompts).score, 0.4, 1e-12);
  EXPECT_EQ(bad.retrieved, (std::vector<std::size_t>{0, 1}));
  judge.down = true;
  EXPECT_THROW(judge_flow(f, 0, "t", u, hits, judge, prompts), ServiceUnavailable);
  EXPECT_TRUE(judge_flow(f, 0, "t", u, hits, judge, prompts, false).failed);
}

TEST(Judge, CanonicalRendering) {
  EXPECT_EQ(canonical_flow_text(flow("a maid", "a cook", "a secret", "kitchen")), "a maid → a cook : a secret [kitchen]");
  auto f = flow("a", "b", "c");
  f.context.reset();
  EXPECT_EQ(canonical_flow_text(f), "a → b : c []");
}

// ---- contrastive ----------------------------------------------------------------------

TEST(Contrastive, Examples) {
  EXPECT_NEAR(contrastive_clamp(0.8, 0.3, 1.0), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(contrastive_clamp(0.2, 0.6, 1.0), 0.0);
  EXPECT_NEAR(contrastive_clamp(0.8, 0.3, 0.5), 0.65, 1e-12);
}

TEST(ContrastiveProperty, Monotonicity) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double c = u01(rng), w = u01(rng), l = 2 * u01(rng), d = 0.3 * u01(rng);
    const double base = contrastive_clamp(c, w, l);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
    EXPECT_LE(contrastive_clamp(c, w + d, l), base);
    EXPECT_LE(contrastive_clamp(c, w, l + d), base);
    EXPECT_GE(contrastive_clamp(std::min(1.0, c + d), w, l), base);
    EXPECT_DOUBLE_EQ(contrastive_clamp(c, 0.0, l), c);
  }
}

TEST(Grounding, FlowCaseAgainstScriptedJudge) {
  StubServer stub(nftest::stub_options());
  auto judge = std::make_shared<ScriptedChat>();
  auto embedder = std::make_shared<nftest::DirectEmbedder>(stub);
  const auto prompts = PromptSet::load(nftest::prompt_dir());
  const Gateway gw{judge, judge, embedder};
  const auto f = flow("a clerk", "the court", "testimony");
  stub.set_embedding_override(canonical_flow_text(f), {1, 0, 0});
  const auto right = small_universe("right", {unit3(1, 0, 0)});
  const auto wrong = small_universe("wrong", {unit3(0, 1, 0)});

  RewardConfig cfg;
  judge->replies = {verdict(1, 1, false), verdict(0.25, 0.5, false)};  // 0.8 and 0.3
  auto g = score_grounding(envelope({f}), "chunk", right, wrong, cfg, gw, prompts);
  EXPECT_NEAR(g.correct.mean, 0.8, 1e-12);
  EXPECT_NEAR(g.wrong.mean, 0.3, 1e-12);
  EXPECT_NEAR(g.score, 0.5, 1e-12);

  cfg.contrastive.lambda = 0.5;
  judge->replies = {verdict(1, 1, false), verdict(0.25, 0.5, false)};
  g = score_grounding(envelope({f}), "chunk", right, wrong, cfg, gw, prompts);
  EXPECT_NEAR(g.score, 0.65, 1e-12);

  cfg.contrastive.lambda = 1.0;
  judge->replies = {verdict(0.5, 0, false), verdict(1, 1, true)};
  EXPECT_DOUBLE_EQ(score_grounding(envelope({f}), "chunk", right, wrong, cfg, gw, prompts).score, 0.0);

  // the wrong side failing floors it at 0
  judge->replies = {verdict(1, 1, false), "nonsense"};
  g = score_grounding(envelope({f}), "chunk", right, wrong, cfg, gw, prompts);
  EXPECT_TRUE(g.wrong.failed);
  EXPECT_NEAR(g.score, 0.8, 1e-12);
}

TEST(Grounding, NoFlowCaseUsesCoverage) {
  StubServer stub(nftest::stub_options());
  auto judge = std::make_shared<ScriptedChat>();
  auto embedder = std::make_shared<nftest::DirectEmbedder>(stub);
  const auto prompts = PromptSet::load(nftest::prompt_dir());
  const Gateway gw{judge, judge, embedder};
  stub.set_embedding_override("chunk", {1, 0, 0});
  const auto right = small_universe("right", {unit3(1, 0, 0)});
  const auto wrong = small_universe("wrong", {unit3(0, 1, 0)});

  RewardConfig cfg;
  judge->replies = {coverage(0.2), coverage(0.7)};  // alignments 0.8 and 0.3
  auto g = score_grounding(envelope({}), "chunk", right, wrong, cfg, gw, prompts);
  EXPECT_TRUE(g.no_flow);
  ASSERT_TRUE(g.correct.coverage.has_value());
  EXPECT_NEAR(g.correct.mean, 0.8, 1e-12);
  EXPECT_NEAR(g.score, 0.5, 1e-12);

  cfg.shaping.contrastive_coverage = false;
  judge->replies = {coverage(0.2), coverage(0.7)};
  EXPECT_NEAR(score_grounding(envelope({}), "chunk", right, wrong, cfg, gw, prompts).score, 0.8, 1e-12);
}

// ---- composite --------------------------------------------------------------------------

TEST(Composite, WeightedSumExamples) {
  RewardWeights w;
  EXPECT_NEAR(weighted_composite({1, 1, 1, 1, 1, 1}, w), 1.0, 1e-12);
  EXPECT_NEAR(weighted_composite({1, 1, 1, 0, 0, 0}, w), 0.20, 1e-12);
}

TEST(CompositeProperty, BoundedAndExact) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    std::array<double, 6> raw{};
    double total = 0;
    for (auto& x : raw) total += (x = u01(rng) + 1e-3);
    RewardWeights w{raw[0] / total, raw[1] / total, raw[2] / total, raw[3] / total, raw[4] / total, 0};
    w.ground = 1.0 - (w.uncert + w.complete + w.consist + w.context + w.cohere);
    ASSERT_NO_THROW(w.validate());
    std::array<double, 6> c{};
    for (auto& x : c) x = rng() % 5 == 0 ? std::round(u01(rng)) : u01(rng);
    const double comp = weighted_composite(c, w);
    double dot = 0;
    const auto wa = w.as_array();
    for (std::size_t k = 0; k < 6; ++k) dot += wa[k] * c[k];
    EXPECT_GE(comp, 0.0);
    EXPECT_LE(comp, 1.0);
    EXPECT_NEAR(comp, dot, 1e-9);
  }
}

TEST_F(RewardStub, UnparseableCompletionScoresZero) {
  const auto b = composite_reward("I think there is a flow here.", {chunk, gold, universes[0], universes[1]}, cfg, gateway,
                                  prompts);
  EXPECT_FALSE(b.schema_valid);
  for (double c : b.components()) EXPECT_DOUBLE_EQ(c, 0.0);
  EXPECT_DOUBLE_EQ(b.composite, 0.0);
  ASSERT_FALSE(b.flags.empty());
  EXPECT_EQ(b.flags[0].rfind("unparseable", 0), 0u);
  EXPECT_EQ(judge->total, 0u);
}

TEST_F(RewardStub, BreakdownMatchesComponents) {
  const auto fe = two_flows();
  const auto b =
      composite_reward("<think>plan</think>" + completion(fe), {chunk, gold, universes[0], universes[1]}, cfg, gateway, prompts);
  EXPECT_TRUE(b.schema_valid);
  EXPECT_FALSE(b.no_flow_predicted);
  EXPECT_NEAR(b.r_uncert, score_uncertainty(completion(fe)).score, 1e-12);
  EXPECT_NEAR(b.r_complete, 1.0, 1e-12);
  EXPECT_NEAR(b.r_consist, 1.0, 1e-12);
  EXPECT_NEAR(b.r_cohere, 1.0, 1e-12);
  double dot = 0;
  const auto w = cfg.weights.as_array();
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_GE(b.components()[i], 0.0);
    EXPECT_LE(b.components()[i], 1.0);
    dot += w[i] * b.components()[i];
  }
  EXPECT_NEAR(b.composite, dot, 1e-9);
  ASSERT_TRUE(b.grounding.has_value());
  EXPECT_EQ(b.grounding->correct.flows.size(), 2u);
  EXPECT_EQ(b.grounding->wrong.book_id, "beta");
  const auto j = to_json(b);
  for (const char* k : {"r_uncert", "r_complete", "r_consist", "r_context", "r_cohere", "r_ground", "composite",
                        "no_flow_predicted", "gold_has_flows", "grounding_detail"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
}

TEST_F(RewardStub, NoFlowCompletionFollowsShaping) {
  const auto none = completion(envelope({}, "Nothing is passed on."));
  auto b = composite_reward(none, {chunk, gold, universes[0], universes[1]}, cfg, gateway, prompts);
  EXPECT_TRUE(b.no_flow_predicted);
  EXPECT_DOUBLE_EQ(b.r_complete, 0.1);
  EXPECT_DOUBLE_EQ(b.r_consist, 0.1);
  EXPECT_DOUBLE_EQ(b.r_context, 0.0);
  EXPECT_DOUBLE_EQ(b.r_cohere, 1.0);
  EXPECT_NEAR(b.r_uncert, 0.8, 1e-12);

  const GoldLabel quiet{chunk.chunk_id, false, 0};
  b = composite_reward(none, {chunk, quiet, universes[0], universes[1]}, cfg, gateway, prompts);
  EXPECT_DOUBLE_EQ(b.r_complete, 0.6);
  cfg.shaping.shape_uncertainty = true;
  b = composite_reward(none, {chunk, quiet, universes[0], universes[1]}, cfg, gateway, prompts);
  EXPECT_DOUBLE_EQ(b.r_uncert, 0.6);
}

TEST_F(RewardStub, InvariantBreachesAreFlaggedNotFatal) {
  auto fe = two_flows();
  fe.has_information_exchange = false;
  const auto b = composite_reward(completion(fe), {chunk, gold, universes[0], universes[1]}, cfg, gateway, prompts);
  EXPECT_TRUE(b.schema_valid);
  EXPECT_NEAR(b.r_consist, 4.0 / 5.0, 1e-12);
  bool flagged = false;
  for (const auto& f : b.flags) flagged = flagged || f.rfind("invariant", 0) == 0;
  EXPECT_TRUE(flagged);
}

TEST_F(RewardStub, RandomCompletionsStayBounded) {
  std::mt19937_64 rng(4);
  const char* pieces[] = {"{", "}", "\"flows\"", ":", "[", "]", "\"reasoning\"", "\"x\"", ",", "true", "<think>",
                          "</think>", "\"has_information_exchange\"", "7"};
  std::vector<std::string> docs;
  for (int i = 0; i < 150; ++i) {
    std::string s;
    const int n = static_cast<int>(rng() % 14);
    for (int k = 0; k < n; ++k) s += pieces[rng() % 14];
    docs.push_back(s);
  }
  for (int i = 0; i < 50; ++i) {
    auto fe = two_flows();
    fe.flows.resize(rng() % 3);
    if (rng() % 2) fe.has_information_exchange = rng() % 2;
    for (auto& f : fe.flows) f.confidence = static_cast<int>(rng() % 11);
    docs.push_back(completion(fe));
  }
  for (const auto& d : docs) {
    const auto b = composite_reward(d, {chunk, gold, universes[0], universes[1]}, cfg, gateway, prompts);
    for (double c : b.components()) {
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, 1.0);
    }
    EXPECT_NEAR(b.composite, weighted_composite(b.components(), cfg.weights), 1e-12);
  }
}

TEST_F(RewardStub, GroupRules) {
  const auto two = completion(two_flows());
  const auto none = completion(envelope({}, "Nothing."));
  const auto same = score_group({two, two}, chunk, gold, universes, cfg, 7, gateway, prompts);
  ASSERT_EQ(same.breakdowns.size(), 2u);
  EXPECT_EQ(dump_line(to_json(same.breakdowns[0])), dump_line(to_json(same.breakdowns[1])));
  EXPECT_NE(same.wrong_book_id, "alpha");

  const auto mixed = score_group({none, two}, chunk, gold, universes, cfg, 7, gateway, prompts);
  EXPECT_DOUBLE_EQ(mixed.diagnostics.no_flow_rate, 0.5);
  EXPECT_EQ(mixed.diagnostics.size, 2u);
  EXPECT_TRUE(mixed.breakdowns[0].no_flow_predicted);
  EXPECT_EQ(mixed.wrong_book_id, same.wrong_book_id);
  EXPECT_NEAR(mixed.diagnostics.composite_mean,
              (mixed.breakdowns[0].composite + mixed.breakdowns[1].composite) / 2, 1e-12);

  std::set<std::string> wrongs;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto a = score_group({none}, chunk, gold, universes, cfg, seed, gateway, prompts);
    const auto b = score_group({none}, chunk, gold, universes, cfg, seed, gateway, prompts);
    EXPECT_EQ(a.wrong_book_id, b.wrong_book_id);
    EXPECT_EQ(a.seed, seed);
    wrongs.insert(a.wrong_book_id);
  }
  EXPECT_EQ(wrongs, (std::set<std::string>{"beta", "gamma"}));
  EXPECT_EQ(group_seed(7, "x"), group_seed(7, "x"));
  EXPECT_NE(group_seed(7, "x"), group_seed(7, "y"));
}

TEST_F(RewardStub, GroupNeedsItsUniverses) {
  const auto none = completion(envelope({}, "Nothing."));
  EXPECT_THROW(score_group({none}, chunk, gold, {universes[0]}, cfg, 1, gateway, prompts), OnlyOneUniverse);
  Chunk orphan = chunk;
  orphan.book_id = "delta";
  EXPECT_THROW(score_group({none}, orphan, gold, universes, cfg, 1, gateway, prompts), UniverseError);
}

TEST_F(RewardStub, JudgeOutage) {
  judge->down = true;
  const auto two = completion(two_flows());
  EXPECT_THROW(composite_reward(two, {chunk, gold, universes[0], universes[1]}, cfg, gateway, prompts),
               ServiceUnavailable);
  cfg.fail_on_unreachable = false;
  const auto b = composite_reward(two, {chunk, gold, universes[0], universes[1]}, cfg, gateway, prompts);
  EXPECT_DOUBLE_EQ(b.r_ground, 0.0);
  EXPECT_FALSE(b.flags.empty());
}

TEST_F(RewardStub, PureFunctionUnderStubs) {
  const auto two = completion(two_flows());
  const auto a = composite_reward(two, {chunk, gold, universes[0], universes[2]}, cfg, gateway, prompts);
  const auto b = composite_reward(two, {chunk, gold, universes[0], universes[2]}, cfg, gateway, prompts);
  EXPECT_EQ(dump_line(to_json(a)), dump_line(to_json(b)));
}

TEST_F(RewardStub, AuditLogAppendsOneLinePerCompletion) {
  nftest::TempDir dir;
  AuditLog log(dir / "audit.jsonl");
  const auto two = completion(two_flows());
  const auto b = composite_reward(two, {chunk, gold, universes[0], universes[1]}, cfg, gateway, prompts);
  log.record(chunk.chunk_id, two, 5, "beta", b);
  log.record(chunk.chunk_id, two, 5, "beta", b);
  const auto lines = read_lines(dir / "audit.jsonl");
  ASSERT_EQ(lines.size(), 2u);
  const auto j = json::parse(lines[0]);
  EXPECT_EQ(j["completion_sha256"], sha256_hex(two));
  EXPECT_EQ(j["wrong_book_id"], "beta");
  EXPECT_DOUBLE_EQ(j["breakdown"]["composite"].get<double>(), b.composite);
}
