#include "normforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

namespace {

// Fisher-Yates over mt19937_64 draws; std::shuffle is not reproducible
// across standard libraries.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

std::string need_string(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw std::runtime_error(std::string("missing string field ") + key);
  return j[key].get<std::string>();
}

}  // namespace

ojson to_json(const TrainingPair& p) {
  ojson j;
  j["prompt"] = p.prompt;
  j["target"] = p.target;
  j["chunk_id"] = p.chunk_id;
  j["book_id"] = p.book_id;
  j["is_no_flow"] = p.is_no_flow;
  return j;
}

TrainingPair training_pair_from_json(const json& j) {
  if (!j.is_object()) throw std::runtime_error("training pair must be an object");
  TrainingPair p;
  p.prompt = need_string(j, "prompt");
  p.target = need_string(j, "target");
  p.chunk_id = need_string(j, "chunk_id");
  p.book_id = need_string(j, "book_id");
  if (!j.contains("is_no_flow") || !j["is_no_flow"].is_boolean()) {
    throw std::runtime_error("missing boolean field is_no_flow");
  }
  p.is_no_flow = j["is_no_flow"].get<bool>();
  return p;
}

std::string grpo_prompt(const std::string& chunk_text, const PromptSet& prompts) {
  const auto& p = prompts.get(PromptRole::grpo_task);
  return p.user.render({{"instruction", p.system.text()}, {"chunk_text", chunk_text}});
}

std::string sft_target(const FlowExtraction& fe) { return dump_pretty(to_json(fe)); }

SftBuild build_sft_pairs(const std::vector<ChunkRecord>& records, const PromptSet& prompts) {
  SftBuild out;
  for (const auto& r : records) {
    if (!r.flow_extraction) {
      ++out.skipped;
      continue;
    }
    const auto& fe = *r.flow_extraction;
    out.pairs.push_back({grpo_prompt(r.chunk.text, prompts), sft_target(fe), r.chunk.chunk_id, r.chunk.book_id,
                         fe.flows.empty()});
  }
  return out;
}

DownsampleResult downsample_no_flow(const std::vector<TrainingPair>& pairs, double target_ratio, std::uint64_t seed) {
  if (!(target_ratio > 0.0) || !std::isfinite(target_ratio)) {
    throw std::invalid_argument("target ratio must be a positive number");
  }
  std::vector<TrainingPair> flow, no_flow;
  for (const auto& p : pairs) (p.is_no_flow ? no_flow : flow).push_back(p);
  DownsampleResult out;
  if (flow.empty() || no_flow.empty()) {
    out.warnings.push_back(flow.empty() ? "NoFlowClassOnly" : "FlowClassOnly");
    out.pairs = pairs;
    return out;
  }
  const auto wanted = static_cast<std::size_t>(std::floor(target_ratio * static_cast<double>(flow.size()) + 1e-9));
  const std::size_t keep = std::min(wanted, no_flow.size());

  std::mt19937_64 rng(seed);
  seeded_shuffle(no_flow, rng);
  no_flow.resize(keep);
  out.pairs = std::move(flow);
  out.pairs.insert(out.pairs.end(), no_flow.begin(), no_flow.end());
  seeded_shuffle(out.pairs, rng);
  return out;
}

namespace {
void validate_fractions(const std::vector<SplitFraction>& fractions);
}  // namespace

std::vector<SplitFraction> parse_split_fractions(const std::string& spec) {
  std::vector<SplitFraction> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const auto comma = std::min(spec.find(',', pos), spec.size());
    const std::string item(trim(std::string_view(spec).substr(pos, comma - pos)));
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidFractions("expected name=fraction, got \"" + item + "\"");
    SplitFraction f;
    f.name = std::string(trim(std::string_view(item).substr(0, eq)));
    const std::string value(trim(std::string_view(item).substr(eq + 1)));
    try {
      std::size_t used = 0;
      f.fraction = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw InvalidFractions("not a number: \"" + value + "\"");
    }
    out.push_back(std::move(f));
    pos = comma + 1;
  }
  validate_fractions(out);
  return out;
}

namespace {

void validate_fractions(const std::vector<SplitFraction>& fractions) {
  if (fractions.empty()) throw InvalidFractions("no splits given");
  std::set<std::string> names;
  double sum = 0.0;
  for (const auto& f : fractions) {
    if (f.name.empty() || f.name.find_first_of("/\\.") != std::string::npos) {
      throw InvalidFractions("bad split name \"" + f.name + "\"");
    }
    if (!names.insert(f.name).second) throw InvalidFractions("duplicate split name \"" + f.name + "\"");
    if (!(f.fraction >= 0.0 && f.fraction <= 1.0)) throw InvalidFractions("fraction for " + f.name + " outside [0,1]");
    sum += f.fraction;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidFractions("fractions sum to " + std::to_string(sum) + ", not 1");
}

// Largest-remainder apportionment of n items; ties go to the earlier split.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<SplitFraction>& fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i].fraction * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
  while (assigned > n) {
    // floating noise can over-assign by one at most per split
    for (auto it = counts.rbegin(); it != counts.rend() && assigned > n; ++it) {
      if (*it > 0) --*it, --assigned;
    }
  }
  return counts;
}

}  // namespace

std::vector<std::vector<TrainingPair>> split_pairs(const std::vector<TrainingPair>& pairs,
                                                   const std::vector<SplitFraction>& fractions, std::uint64_t seed) {
  validate_fractions(fractions);
  std::vector<TrainingPair> flow, no_flow;
  for (const auto& p : pairs) (p.is_no_flow ? no_flow : flow).push_back(p);
  std::mt19937_64 rng(seed);
  seeded_shuffle(flow, rng);
  seeded_shuffle(no_flow, rng);

  std::vector<std::vector<TrainingPair>> out(fractions.size());
  for (auto* cls : {&flow, &no_flow}) {
    const auto counts = apportion(cls->size(), fractions);
    std::size_t at = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      out[i].insert(out[i].end(), cls->begin() + static_cast<std::ptrdiff_t>(at),
                    cls->begin() + static_cast<std::ptrdiff_t>(at + counts[i]));
      at += counts[i];
    }
  }
  for (auto& s : out) seeded_shuffle(s, rng);
  return out;
}

ojson export_splits(const std::vector<TrainingPair>& pairs, const std::vector<SplitFraction>& fractions,
                    std::uint64_t seed, const std::filesystem::path& out_dir) {
  const auto splits = split_pairs(pairs, fractions, seed);
  std::filesystem::create_directories(out_dir);
  const auto no_flow_total = std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.is_no_flow; });

  ojson manifest;
  manifest["seed"] = seed;
  manifest["total"] = pairs.size();
  manifest["flow"] = pairs.size() - static_cast<std::size_t>(no_flow_total);
  manifest["no_flow"] = no_flow_total;
  manifest["splits"] = ojson::array();
  for (std::size_t i = 0; i < splits.size(); ++i) {
    std::string body;
    std::size_t no_flow = 0;
    for (const auto& p : splits[i]) {
      body += dump_line(to_json(p));
      body += '\n';
      no_flow += p.is_no_flow;
    }
    const auto file = fractions[i].name + ".jsonl";
    write_file_atomic(out_dir / file, body);
    ojson s;
    s["name"] = fractions[i].name;
    s["fraction"] = fractions[i].fraction;
    s["file"] = file;
    s["count"] = splits[i].size();
    s["flow"] = splits[i].size() - no_flow;
    s["no_flow"] = no_flow;
    s["sha256"] = sha256_hex(body);
    manifest["splits"].push_back(std::move(s));
  }
  write_file_atomic(out_dir / "manifest.json", dump_pretty(manifest) + "\n");
  return manifest;
}

std::vector<TrainingPair> load_pairs(const std::filesystem::path& path) {
  std::vector<TrainingPair> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(training_pair_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_grpo_prompts(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path) {
  std::string body;
  for (const auto& p : pairs) {
    ojson j;
    j["chunk_id"] = p.chunk_id;
    j["book_id"] = p.book_id;
    j["is_no_flow"] = p.is_no_flow;
    j["prompt"] = p.prompt;
    body += dump_line(j);
    body += '\n';
  }
  write_file_atomic(path, body);
}

}  // namespace normforge
