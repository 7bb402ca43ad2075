#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "normforge/gateway.hpp"
#include "normforge/stub_server.hpp"
#include "normforge/util.hpp"

namespace nftest {

namespace fs = std::filesystem;

inline fs::path source_dir() { return NORMFORGE_SOURCE_DIR; }
inline fs::path prompt_dir() { return source_dir() / "prompts"; }

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "normforge-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  fs::path path_;
};

inline std::string filler(std::size_t n, std::size_t seed) {
  static const char* words[] = {"the", "quiet", "road", "ran", "past", "fields", "where", "weather", "turned",
                                "slowly", "and", "evening", "light", "settled", "over", "hedges"};
  std::string out;
  std::size_t i = seed;
  while (out.size() < n) {
    if (!out.empty()) out += ' ';
    out += words[i % 16];
    i += 7;
  }
  out.resize(n);
  return out;
}

// Markers planted in one chunk of a synthetic book.
struct ChunkPlan {
  std::vector<normforge::PlantedFlow> flows;
  std::vector<normforge::PlantedNorm> norms;
};

struct BookPlan {
  std::string book_id;
  std::vector<std::string> lexicon;
  std::map<std::size_t, ChunkPlan> chunks;  // chunk index -> markers
  std::size_t chunk_count = 4;
};

// Text whose markers sit in the part of each chunk no other chunk overlaps
// (default 6000/1000 windows), so every marker is seen exactly once.
inline std::string synthetic_text(const BookPlan& plan) {
  std::string text;
  for (std::size_t i = 0; i < plan.chunk_count; ++i) {
    const std::size_t zone = i * 5000 + 1200;
    text += filler(zone - text.size(), i);
    const auto it = plan.chunks.find(i);
    if (it != plan.chunks.end()) {
      for (const auto& f : it->second.flows) text += " " + normforge::format_marker(f) + " filler.";
      for (const auto& n : it->second.norms) text += " " + normforge::format_marker(n) + " filler.";
    }
    if (text.size() >= i * 5000 + 4800) throw std::runtime_error("too many markers for one chunk");
  }
  const std::size_t total = (plan.chunk_count - 1) * 5000 + 6000;
  text += filler(total - text.size(), 99);
  return text;
}

inline normforge::PlantedFlow flow(std::string sender, std::string recipient, std::string info, std::string context,
                                   std::string appropriateness = "appropriate", int confidence = 8) {
  normforge::PlantedFlow f;
  f.sender = std::move(sender);
  f.recipient = std::move(recipient);
  f.subject = "a third party";
  f.information_type = std::move(info);
  f.transmission_principle = "in confidence";
  f.context = std::move(context);
  f.appropriateness = std::move(appropriateness);
  f.confidence = confidence;
  return f;
}

inline normforge::PlantedNorm norm(std::string subject, std::string act, std::string force, std::string context,
                                   bool governs = true, std::string abstract_subject = "") {
  normforge::PlantedNorm n;
  n.subject = std::move(subject);
  n.act = std::move(act);
  n.condition = "";
  n.force = std::move(force);
  n.context = std::move(context);
  n.governs = governs;
  n.confidence = 8;
  n.abstract_subject = std::move(abstract_subject);
  return n;
}

struct PlantedCounts {
  std::size_t chunks = 0;
  std::size_t flow_chunks = 0;       // chunks with at least one extractable flow
  std::size_t flows = 0;             // extractable flows
  std::size_t norms = 0;             // norms reaching the universe
  std::size_t quarantined = 0;
  std::size_t failed_chunks = 0;     // flow stage yields no extraction
  std::map<std::string, std::size_t> norms_by_book;
};

inline PlantedCounts expected_counts(const std::vector<BookPlan>& plans) {
  PlantedCounts c;
  for (const auto& b : plans) {
    c.chunks += b.chunk_count;
    std::size_t book_norms = 0;
    for (const auto& [idx, cp] : b.chunks) {
      std::size_t good = 0;
      for (const auto& f : cp.flows) good += !f.fault;
      c.flows += good;
      c.flow_chunks += good > 0;
      c.failed_chunks += !cp.flows.empty() && good == 0;
      for (const auto& n : cp.norms) {
        if (n.abstract_subject == "STUCK") {
          ++c.quarantined;
        } else {
          ++book_norms;
        }
      }
    }
    c.norms += book_norms;
    c.norms_by_book[b.book_id] = book_norms;
  }
  return c;
}

// Three books: flows in several chunks, a faulty flow, a quarantined norm,
// chunks with nothing planted.
inline std::vector<BookPlan> standard_plans() {
  std::vector<BookPlan> plans(3);
  plans[0].book_id = "alpha";
  plans[0].lexicon = {"Harrow"};
  plans[0].chunks[0] = {{flow("a servant", "the mistress", "news of a visitor", "household")},
                        {norm("a servant", "announce visitors", "obligatory", "household"),
                         norm("Harrow", "keep household secrets", "prohibited", "household", true, "a steward")}};
  plans[0].chunks[1] = {{}, {norm("Harrow", "hide letters", "prohibited", "household", true, "STUCK")}};
  plans[0].chunks[3] = {{flow("a doctor", "a patient", "a diagnosis", "medicine"),
                         flow("a nurse", "the family", "treatment details", "medicine", "ambiguous", 5)},
                        {norm("a doctor", "protect patient records", "obligatory", "medicine")}};

  plans[1].book_id = "beta";
  plans[1].chunks[0] = {{}, {norm("a judge", "hear both parties", "obligatory", "legal", false)}};
  plans[1].chunks[2] = {{flow("a clerk", "the court", "testimony", "legal", "inappropriate", 6)},
                        {norm("a witness", "tell the truth", "obligatory", "legal"),
                         norm("a spectator", "interrupt proceedings", "discouraged", "legal", false)}};
  auto faulty = flow("a spy", "a minister", "troop movements", "state");
  faulty.fault = true;
  plans[1].chunks[3] = {{faulty}, {}};

  plans[2].book_id = "gamma";
  plans[2].chunk_count = 3;
  plans[2].chunks[1] = {{flow("a teacher", "a parent", "exam results", "school"),
                         flow("a pupil", "a friend", "a rumour", "school", "inappropriate", 4)},
                        {norm("a teacher", "report progress", "recommended", "school"),
                         norm("a pupil", "spread rumours", "prohibited", "school"),
                         norm("a parent", "attend meetings", "permitted", "school", false)}};
  return plans;
}

// Writes texts, metadata and a manifest; returns the manifest path.
inline fs::path write_synthetic_corpus(const fs::path& dir, const std::vector<BookPlan>& plans) {
  fs::create_directories(dir / "texts");
  nlohmann::json manifest = {{"books", nlohmann::json::array()}};
  int gid = 1;
  for (const auto& b : plans) {
    const auto text = "*** START OF THE PROJECT GUTENBERG EBOOK SYNTHETIC ***\n" + synthetic_text(b) +
                      "\n*** END OF THE PROJECT GUTENBERG EBOOK SYNTHETIC ***\n";
    normforge::write_file_atomic(dir / "texts" / (b.book_id + ".txt"), text);
    nlohmann::json meta = {{"book_summary", "A synthetic book."},
                           {"book_context", "An invented society."},
                           {"character_lexicon", b.lexicon}};
    normforge::write_file_atomic(dir / "texts" / (b.book_id + ".meta.json"), meta.dump());
    manifest["books"].push_back({{"book_id", b.book_id},
                                 {"title", "Synthetic " + b.book_id},
                                 {"gutenberg_id", gid++},
                                 {"path", "texts/" + b.book_id + ".txt"},
                                 {"metadata", "texts/" + b.book_id + ".meta.json"}});
  }
  const auto path = dir / "manifest.json";
  normforge::write_file_atomic(path, manifest.dump(2));
  return path;
}

// All regular files under dir keyed by relative path, with their contents.
inline std::map<std::string, std::string> snapshot_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = normforge::read_file(e.path());
  }
  return out;
}

inline normforge::StubOptions stub_options() {
  normforge::StubOptions o;
  o.prompt_dir = prompt_dir();
  return o;
}

// In-process models answering like the stub server, without HTTP.
class DirectChat : public normforge::ChatModel {
 public:
  explicit DirectChat(const normforge::StubServer& stub) : stub_(stub) {}
  std::string complete_text(const normforge::CompletionRequest& req) override { return answer(req); }
  std::string complete_structured(const normforge::CompletionRequest& req) override { return answer(req); }

  std::map<std::string, std::size_t> calls;
  std::size_t total = 0;
  bool down = false;

 private:
  std::string answer(const normforge::CompletionRequest& req) {
    if (down) throw normforge::TransportError("endpoint down");
    const auto role = prompts_.identify(req.system_prompt);
    ++calls[role ? std::string(normforge::to_string(*role)) : "policy"];
    ++total;
    auto reply = stub_.chat_reply(req.system_prompt, req.user_prompt);
    if (!reply) throw normforge::EndpointError(400, "unrecognised prompt");
    return *reply;
  }

  const normforge::StubServer& stub_;
  normforge::PromptSet prompts_ = normforge::PromptSet::load(prompt_dir());
};

class DirectEmbedder : public normforge::EmbeddingModel {
 public:
  explicit DirectEmbedder(const normforge::StubServer& stub) : stub_(stub) {}
  bool down = false;

 protected:
  std::vector<std::vector<double>> embed_raw(const std::vector<std::string>& texts) override {
    if (down) throw normforge::TransportError("endpoint down");
    std::vector<std::vector<double>> out;
    for (const auto& t : texts) out.push_back(stub_.embedding_for(t));
    return out;
  }

 private:
  const normforge::StubServer& stub_;
};

inline normforge::EndpointConfig endpoint(const std::string& base_url) {
  normforge::EndpointConfig c;
  c.base_url = base_url;
  c.model_name = "stub";
  c.timeout_s = 10;
  c.max_retries = 2;
  c.initial_backoff_s = 0.0;
  c.max_backoff_s = 0.0;
  return c;
}

}  // namespace nftest
