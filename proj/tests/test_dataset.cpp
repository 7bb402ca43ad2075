#include <gtest/gtest.h>

#include <random>
#include <set>

#include "normforge/dataset.hpp"
#include "support.hpp"

using namespace normforge;

namespace {

std::vector<TrainingPair> make_pairs(std::size_t no_flow, std::size_t flow) {
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < no_flow + flow; ++i) {
    TrainingPair p;
    p.chunk_id = "b-" + std::to_string(i);
    p.book_id = "b";
    p.is_no_flow = i < no_flow;
    p.prompt = "prompt " + std::to_string(i);
    p.target = "{}";
    out.push_back(p);
  }
  return out;
}

std::size_t count_no_flow(const std::vector<TrainingPair>& v) {
  std::size_t n = 0;
  for (const auto& p : v) n += p.is_no_flow;
  return n;
}

std::set<std::string> ids(const std::vector<TrainingPair>& v) {
  std::set<std::string> s;
  for (const auto& p : v) s.insert(p.chunk_id);
  return s;
}

ChunkRecord record(std::size_t i, std::optional<std::size_t> flows) {
  ChunkRecord r;
  r.chunk.chunk_id = make_chunk_id("b", i);
  r.chunk.book_id = "b";
  r.chunk.index = i;
  r.chunk.text = "chunk text " + std::to_string(i);
  if (flows) {
    FlowExtraction fe;
    fe.reasoning = "r";
    fe.has_information_exchange = *flows > 0;
    for (std::size_t k = 0; k < *flows; ++k) {
      InformationFlow f;
      f.sender = "s";
      f.recipient = "r";
      f.information_type = "t";
      f.context = "c";
      f.confidence = 7;
      fe.flows.push_back(f);
    }
    r.flow_extraction = fe;
  }
  return r;
}

}  // namespace

TEST(SftPairs, OnePairPerExtractedRecord) {
  const auto prompts = PromptSet::load(nftest::prompt_dir());
  std::vector<ChunkRecord> records;
  for (std::size_t i = 0; i < 10; ++i) records.push_back(record(i, i % 3 == 1 ? std::nullopt : std::optional<std::size_t>(i % 3)));
  const auto build = build_sft_pairs(records, prompts);
  EXPECT_EQ(build.skipped, 3u);
  ASSERT_EQ(build.pairs.size(), 7u);
  EXPECT_TRUE(build.pairs[0].is_no_flow);
  EXPECT_FALSE(build.pairs[1].is_no_flow);
  EXPECT_EQ(build.pairs[1].chunk_id, make_chunk_id("b", 2));
  EXPECT_EQ(build.pairs[1].target, sft_target(*records[2].flow_extraction));
  EXPECT_EQ(build.pairs[1].prompt, grpo_prompt(records[2].chunk.text, prompts));
}

TEST(SftPairs, TargetIsTheBareEnvelope) {
  const auto r = record(0, 2);
  const auto target = sft_target(*r.flow_extraction);
  EXPECT_EQ(target.front(), '{');
  EXPECT_EQ(target.back(), '}');
  EXPECT_EQ(target.find("```"), std::string::npos);
  EXPECT_EQ(validate_flow_extraction(target), *r.flow_extraction);
}

TEST(SftPairs, PromptEmbedsInstructionAndChunk) {
  const auto prompts = PromptSet::load(nftest::prompt_dir());
  const auto& pair = prompts.get(PromptRole::grpo_task);
  const auto p = grpo_prompt("THE CHUNK", prompts);
  EXPECT_EQ(p, pair.user.render({{"instruction", pair.system.text()}, {"chunk_text", "THE CHUNK"}}));
  EXPECT_EQ(p.rfind(pair.system.text(), 0), 0u);
  EXPECT_EQ(p.substr(p.size() - 9), "THE CHUNK");
}

TEST(Downsample, Examples) {
  auto r = downsample_no_flow(make_pairs(87, 13), 1.0, 42);
  EXPECT_EQ(r.pairs.size(), 26u);
  EXPECT_EQ(count_no_flow(r.pairs), 13u);
  EXPECT_TRUE(r.warnings.empty());

  r = downsample_no_flow(make_pairs(5, 10), 1.0, 42);
  EXPECT_EQ(r.pairs.size(), 15u);

  r = downsample_no_flow(make_pairs(87, 13), 0.5, 42);
  EXPECT_EQ(count_no_flow(r.pairs), 6u);

  EXPECT_THROW(downsample_no_flow(make_pairs(1, 1), 0.0, 1), std::invalid_argument);
}

TEST(Downsample, SingleClassInputsWarn) {
  const auto only_no = make_pairs(4, 0);
  auto r = downsample_no_flow(only_no, 1.0, 1);
  EXPECT_EQ(r.warnings, std::vector<std::string>{"NoFlowClassOnly"});
  EXPECT_EQ(r.pairs, only_no);
  const auto only_flow = make_pairs(0, 4);
  r = downsample_no_flow(only_flow, 1.0, 1);
  EXPECT_EQ(r.warnings, std::vector<std::string>{"FlowClassOnly"});
  EXPECT_EQ(r.pairs, only_flow);
}

TEST(DownsampleProperty, SeedReplayAndCounts) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t nf = rng() % 60, f = 1 + rng() % 30;
    const double ratio = 0.25 * static_cast<double>(1 + rng() % 8);
    const auto pairs = make_pairs(nf, f);
    const auto a = downsample_no_flow(pairs, ratio, trial);
    const auto b = downsample_no_flow(pairs, ratio, trial);
    EXPECT_EQ(a.pairs, b.pairs);
    const auto want = std::min<std::size_t>(static_cast<std::size_t>(std::floor(ratio * static_cast<double>(f))), nf);
    EXPECT_EQ(count_no_flow(a.pairs), nf == 0 ? 0 : want);
    EXPECT_EQ(a.pairs.size() - count_no_flow(a.pairs), f);
    EXPECT_EQ(ids(a.pairs).size(), a.pairs.size());
  }
}

TEST(Splits, ParseAndValidate) {
  const auto f = parse_split_fractions("train=0.9,val=0.1");
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[1].name, "val");
  EXPECT_DOUBLE_EQ(f[1].fraction, 0.1);
  EXPECT_THROW(split_pairs(make_pairs(5, 5), {{"a", 0.5}, {"b", 0.6}}, 1), InvalidFractions);
  EXPECT_THROW(parse_split_fractions("train=0.9"), InvalidFractions);
  EXPECT_THROW(parse_split_fractions("train=abc,val=0.5"), InvalidFractions);
  EXPECT_THROW(parse_split_fractions("train=0.5,train=0.5"), InvalidFractions);
  EXPECT_THROW(parse_split_fractions("../x=0.5,y=0.5"), InvalidFractions);
}

TEST(Splits, NinetyTenStratified) {
  const auto pairs = make_pairs(30, 70);
  const auto s = split_pairs(pairs, {{"train", 0.9}, {"val", 0.1}}, 5);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].size(), 90u);
  EXPECT_EQ(s[1].size(), 10u);
  EXPECT_EQ(count_no_flow(s[0]), 27u);
  EXPECT_EQ(count_no_flow(s[1]), 3u);
  EXPECT_EQ(s, split_pairs(pairs, {{"train", 0.9}, {"val", 0.1}}, 5));
}

TEST(SplitsProperty, PartitionAndClassRatios) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t nf = rng() % 80, f = rng() % 80;
    const auto pairs = make_pairs(nf, f);
    const std::size_t parts = 1 + rng() % 4;
    std::vector<double> raw(parts);
    double total = 0;
    for (auto& x : raw) total += (x = 1.0 + static_cast<double>(rng() % 9));
    std::vector<SplitFraction> fr;
    double acc = 0;
    for (std::size_t i = 0; i < parts; ++i) {
      const double v = i + 1 == parts ? 1.0 - acc : raw[i] / total;
      acc += v;
      fr.push_back({"s" + std::to_string(i), v});
    }
    const auto s = split_pairs(pairs, fr, trial);
    std::set<std::string> all;
    std::size_t count = 0;
    for (std::size_t i = 0; i < parts; ++i) {
      count += s[i].size();
      for (const auto& id : ids(s[i])) all.insert(id);
      EXPECT_LE(std::abs(static_cast<double>(s[i].size()) - fr[i].fraction * static_cast<double>(pairs.size())), 2.0);
      EXPECT_LE(std::abs(static_cast<double>(count_no_flow(s[i])) - fr[i].fraction * static_cast<double>(nf)), 1.0);
      EXPECT_LE(std::abs(static_cast<double>(s[i].size() - count_no_flow(s[i])) - fr[i].fraction * static_cast<double>(f)),
                1.0);
    }
    EXPECT_EQ(count, pairs.size());
    EXPECT_EQ(all, ids(pairs));
  }
}

TEST(Export, FilesAndManifestRoundTrip) {
  nftest::TempDir dir;
  const auto pairs = make_pairs(12, 8);
  const auto m = export_splits(pairs, {{"train", 0.75}, {"val", 0.25}}, 9, dir.path());
  EXPECT_EQ(m["total"], 20);
  EXPECT_EQ(m["no_flow"], 12);
  const auto train = load_pairs(dir / "train.jsonl");
  const auto val = load_pairs(dir / "val.jsonl");
  EXPECT_EQ(train.size(), 15u);
  EXPECT_EQ(val.size(), 5u);
  EXPECT_EQ(m["splits"][0]["sha256"], sha256_hex(read_file(dir / "train.jsonl")));
  const auto expected = split_pairs(pairs, {{"train", 0.75}, {"val", 0.25}}, 9);
  EXPECT_EQ(train, expected[0]);
  for (const auto& line : read_lines(dir / "val.jsonl")) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"prompt", "target", "chunk_id", "book_id", "is_no_flow"}) EXPECT_TRUE(j.contains(k)) << k;
  }
  const auto before = read_file(dir / "manifest.json");
  export_splits(pairs, {{"train", 0.75}, {"val", 0.25}}, 9, dir.path());
  EXPECT_EQ(read_file(dir / "manifest.json"), before);
}

TEST(Export, LoadReportsBadLines) {
  nftest::TempDir dir;
  write_file_atomic(dir / "x.jsonl", dump_line(to_json(make_pairs(1, 0)[0])) + "\n{\"prompt\": 1}\n");
  try {
    load_pairs(dir / "x.jsonl");
    FAIL() << "no exception";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("x.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(Export, GrpoPromptFile) {
  nftest::TempDir dir;
  const auto pairs = make_pairs(2, 2);
  write_grpo_prompts(pairs, dir / "grpo.jsonl");
  const auto lines = read_lines(dir / "grpo.jsonl");
  ASSERT_EQ(lines.size(), 4u);
  const auto j = nlohmann::json::parse(lines[3]);
  EXPECT_EQ(j["chunk_id"], pairs[3].chunk_id);
  EXPECT_EQ(j["prompt"], pairs[3].prompt);
  EXPECT_FALSE(j.contains("target"));
}
