#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "normforge/universe.hpp"
#include "support.hpp"

using namespace normforge;

namespace {

AbstractedNorm an(const std::string& subject, NormativeForce force, const std::string& context, bool governs = false) {
  AbstractedNorm a;
  a.norm.norm_subject = subject;
  a.norm.norm_act = "act";
  a.norm.normative_force = force;
  a.norm.context = context;
  a.norm.governs_information_flow = governs;
  a.norm.norm_articulation = subject + " must act in " + context + ".";
  return a;
}

Embedding unit(std::vector<float> v) {
  double n = 0;
  for (float x : v) n += static_cast<double>(x) * x;
  for (float& x : v) x = static_cast<float>(x / std::sqrt(n));
  return v;
}

NormativeUniverse hand_universe(const std::string& book, const std::vector<Embedding>& vecs,
                                const std::vector<Embedding>& contexts = {}) {
  NormativeUniverse u;
  u.book_id = book;
  u.embedding_dim = vecs.empty() ? 0 : vecs[0].size();
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    NormRecord r;
    r.norm = an("n" + std::to_string(i), NormativeForce::permitted, "c");
    r.embedding = vecs[i];
    r.context_embedding = contexts.empty() ? vecs[i] : contexts[i];
    u.norms.push_back(r);
  }
  return u;
}

}  // namespace

TEST(Entropy, KnownValues) {
  EXPECT_DOUBLE_EQ(shannon_entropy_bits({{"a", 5}}), 0.0);
  EXPECT_DOUBLE_EQ(shannon_entropy_bits({{"a", 2}, {"b", 2}, {"c", 2}, {"d", 2}}), 2.0);
  EXPECT_DOUBLE_EQ(shannon_entropy_bits({{"a", 1}, {"b", 1}, {"z", 0}}), 1.0);
  EXPECT_DOUBLE_EQ(shannon_entropy_bits({}), 0.0);
}

TEST(Stats, HandCountedExample) {
  const std::vector<AbstractedNorm> norms{
      an("a", NormativeForce::obligatory, "Household", true), an("b", NormativeForce::obligatory, " household "),
      an("c", NormativeForce::prohibited, "court", true), an("d", NormativeForce::recommended, "court"),
      an("e", NormativeForce::obligatory, "")};
  const auto s = compute_stats(norms);
  EXPECT_EQ(s.deontic_histogram.size(), 5u);
  EXPECT_EQ(s.deontic_histogram.at("obligatory"), 3u);
  EXPECT_EQ(s.deontic_histogram.at("prohibited"), 1u);
  EXPECT_EQ(s.deontic_histogram.at("permitted"), 0u);
  EXPECT_EQ(s.deontic_histogram.at("recommended"), 1u);
  EXPECT_EQ(s.deontic_histogram.at("discouraged"), 0u);
  EXPECT_EQ(s.context_histogram, (std::map<std::string, std::size_t>{{"household", 2}, {"court", 2}, {"unspecified", 1}}));
  const double expected = -(0.4 * std::log2(0.4) * 2 + 0.2 * std::log2(0.2));
  EXPECT_NEAR(s.context_entropy_bits, expected, 1e-12);
  EXPECT_DOUBLE_EQ(s.governs_flow_fraction, 0.4);
}

TEST(Retrieval, BruteForceOracleWithTies) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> coarse(-2, 2);  // small grid so ties happen
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 2 + rng() % 4;
    const std::size_t n = 1 + rng() % 12;
    std::vector<Embedding> vecs;
    for (std::size_t i = 0; i < n; ++i) {
      Embedding v(dim);
      do {
        for (auto& x : v) x = static_cast<float>(coarse(rng));
      } while (std::all_of(v.begin(), v.end(), [](float x) { return x == 0; }));
      vecs.push_back(unit(v));
    }
    if (n > 2 && rng() % 2) vecs[n - 1] = vecs[0];
    const auto u = hand_universe("b", vecs);
    Embedding q(dim);
    do {
      for (auto& x : q) x = static_cast<float>(coarse(rng));
    } while (std::all_of(q.begin(), q.end(), [](float x) { return x == 0; }));
    q = unit(q);
    const std::size_t k = 1 + rng() % 5;
    const auto got = retrieve_top_k(u, q, {k});

    std::vector<std::pair<double, std::size_t>> oracle;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t d = 0; d < dim; ++d) s += static_cast<double>(q[d]) * vecs[i][d];
      oracle.push_back({-s, i});
    }
    std::sort(oracle.begin(), oracle.end());
    ASSERT_EQ(got.size(), std::min(k, n));
    for (std::size_t r = 0; r < got.size(); ++r) {
      EXPECT_EQ(got[r].index, oracle[r].second) << "trial " << trial;
      EXPECT_NEAR(got[r].similarity, -oracle[r].first, 1e-6);
    }
  }
}

TEST(Retrieval, KIsClampedAndValidated) {
  const auto u = hand_universe("b", {unit({1, 0}), unit({0, 1})});
  EXPECT_EQ(retrieve_top_k(u, unit({1, 1}), {10}).size(), 2u);
  EXPECT_THROW(retrieve_top_k(u, unit({1, 1}), {0}), std::invalid_argument);
  EXPECT_THROW(retrieve_top_k(u, unit({1, 1, 1}), {1}), DimensionMismatch);
  const auto tie = retrieve_top_k(u, unit({1, 1}), {2});
  EXPECT_EQ(tie[0].index, 0u);
  EXPECT_EQ(tie[1].index, 1u);
}

TEST(ContextSimilarity, TakesTheMaximum) {
  // context embeddings whose dot products with the query are 0.3, 0.9 and 0.5
  const Embedding q{1, 0, 0};
  auto ctx = [](float c) { return Embedding{c, static_cast<float>(std::sqrt(1 - c * c)), 0}; };
  const auto u = hand_universe("b", {ctx(0.3f), ctx(0.9f), ctx(0.5f)}, {ctx(0.3f), ctx(0.9f), ctx(0.5f)});
  EXPECT_NEAR(context_max_similarity(u, q), 0.9, 1e-6);
  EXPECT_THROW(context_max_similarity(hand_universe("e", {}), q), UniverseError);
}

TEST(WrongUniverse, SamplingRules) {
  std::vector<NormativeUniverse> two{hand_universe("a", {unit({1, 0})}), hand_universe("b", {unit({0, 1})})};
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(sample_wrong_universe(two, "a", seed).book_id, "b");
  std::vector<NormativeUniverse> one{two[0]};
  EXPECT_THROW(sample_wrong_universe(one, "a", 1), OnlyOneUniverse);

  std::vector<NormativeUniverse> many;
  for (const char* id : {"a", "b", "c", "d", "e"}) many.push_back(hand_universe(id, {unit({1, 0})}));
  std::map<std::string, int> seen;
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto& w = sample_wrong_universe(many, "c", seed);
    EXPECT_NE(w.book_id, "c");
    EXPECT_EQ(&w, &sample_wrong_universe(many, "c", seed));
    ++seen[w.book_id];
  }
  EXPECT_EQ(seen.size(), 4u);
  for (const auto& [id, count] : seen) EXPECT_GT(count, 400) << id;
}

class UniverseBuild : public ::testing::Test {
 protected:
  StubServer stub{nftest::stub_options()};
  nftest::DirectEmbedder embedder{stub};
  std::vector<AbstractedNorm> norms{an("a host", NormativeForce::obligatory, "hospitality", true),
                                    an("a guest", NormativeForce::prohibited, "hospitality"),
                                    an("a clerk", NormativeForce::permitted, "")};
};

TEST_F(UniverseBuild, EmbedsArticulationsAndContexts) {
  const auto u = build_universe("b", norms, embedder, "2024-01-01T00:00:00Z");
  ASSERT_EQ(u.norms.size(), 3u);
  EXPECT_EQ(u.embedding_dim, 64u);
  EXPECT_EQ(u.norms[0].embedding, embedder.embed(norms[0].norm.norm_articulation));
  EXPECT_EQ(u.norms[2].context_embedding, embedder.embed("unspecified"));
  EXPECT_EQ(u.stats, compute_stats(norms));
  EXPECT_EQ(retrieve_top_k(u, embedder.embed(norms[1].norm.norm_articulation), {1})[0].index, 1u);
  EXPECT_THROW(build_universe("b", {}, embedder, "t"), UniverseError);
  embedder.down = true;
  EXPECT_THROW(build_universe("b", norms, embedder, "t"), EmbeddingFailure);
}

TEST_F(UniverseBuild, SaveLoadRoundTrip) {
  nftest::TempDir dir;
  const auto u = build_universe("b", norms, embedder, "2024-01-01T00:00:00Z");
  save_universe(u, dir / "b.nfu");
  EXPECT_EQ(load_universe(dir / "b.nfu"), u);
  auto other = u;
  other.book_id = "a";
  save_universe(other, dir / "a.nfu");
  const auto all = load_universes(dir.path());
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].book_id, "a");

  const auto bytes = read_file(dir / "b.nfu");
  write_file_atomic(dir / "cut.nfu", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_universe(dir / "cut.nfu"), UniverseError);
  write_file_atomic(dir / "junk.bin", "hello world, not a universe");
  EXPECT_THROW(load_universe(dir / "junk.bin"), UniverseError);

  const auto exported = universe_export_json(u);
  EXPECT_EQ(exported["norms"].size(), 3u);
  EXPECT_EQ(dump_line(exported).find("\"embedding\""), std::string::npos);
}

TEST_F(UniverseBuild, StatsReportCoversEveryPair) {
  const auto a = build_universe("a", norms, embedder, "t");
  auto b_norms = norms;
  b_norms.pop_back();
  const auto b = build_universe("b", b_norms, embedder, "t");
  const auto report = universe_stats_report({a, b});
  EXPECT_FALSE(report.text.empty());
  const auto c = centroid(a);
  double n = 0;
  for (double x : c) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-9);
  const auto& m = report.json["centroid_similarity"]["matrix"];
  ASSERT_EQ(m.size(), 2u);
  EXPECT_NEAR(m[0][0].get<double>(), 1.0, 1e-9);
  EXPECT_NEAR(m[0][1].get<double>(), m[1][0].get<double>(), 1e-12);
  EXPECT_DOUBLE_EQ(report.json["books"][1]["deontic_distribution"]["obligatory"].get<double>(), 0.5);
}
