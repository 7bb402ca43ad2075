#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "normforge/prompts.hpp"

namespace httplib {
class Server;
}

namespace normforge {

// ---- planted markers ------------------------------------------------------------
//
// Synthetic texts carry inline markers that the stub reads back as model
// output, which makes extraction counts known in advance:
//   <<FLOW|sender|recipient|subject|information_type|transmission_principle|context|appropriateness|confidence>>
//   <<NORM|subject|act|condition|force|context|governs|confidence|abstract_subject>>
// A FLOW marker with a tenth field "fault" makes the single-flow extractor
// answer with a malformed document. A NORM abstract_subject of "STUCK" makes
// the abstraction rewrite keep the original subject.

struct PlantedFlow {
  std::string sender, recipient, subject, information_type, transmission_principle, context, appropriateness;
  int confidence = 8;
  bool fault = false;
};

struct PlantedNorm {
  std::string subject, act, condition, force, context;
  bool governs = false;
  int confidence = 8;
  std::string abstract_subject;
};

std::string format_marker(const PlantedFlow& f);
std::string format_marker(const PlantedNorm& n);
std::vector<std::pair<std::string, PlantedFlow>> find_flow_markers(std::string_view text);
std::vector<std::pair<std::string, PlantedNorm>> find_norm_markers(std::string_view text);

/// Sentence the stub writes for a norm, e.g. "A host must greet guests."
std::string stub_articulation(const std::string& subject, const std::string& force, const std::string& act,
                              const std::string& condition);

/// Hashed bag-of-words vector (not normalized).
std::vector<double> stub_embedding(std::string_view text, std::size_t dim);

// ---- server ------------------------------------------------------------------------

struct StubOptions {
  std::filesystem::path prompt_dir = default_prompt_dir();
  std::size_t embedding_dim = 64;
  /// The first n POST requests answer 500.
  int fail_first_n = 0;
  /// Every POST answers with this status.
  std::optional<int> always_status;
  /// Requests carrying a guided-decoding parameter answer 400.
  bool reject_guided_decoding = false;
  std::map<std::string, std::vector<double>> embedding_overrides;
};

struct StubCounters {
  std::map<std::string, std::size_t> by_role;
  std::size_t chat_requests = 0;
  std::size_t embedding_requests = 0;
  std::size_t embedded_texts = 0;
  std::size_t injected_failures = 0;
};

/// Deterministic OpenAI-compatible endpoint for tests and offline runs. The
/// same instance serves chat completions and embeddings under /v1.
class StubServer {
 public:
  explicit StubServer(StubOptions opts = {});
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Starts listening in a background thread; port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks until stop() is called from another thread or a signal handler.
  void serve_forever(const std::string& host, int port);
  void stop();

  std::string base_url() const;
  int port() const { return port_; }

  StubCounters counters() const;
  void reset_counters();
  /// Content strings served, in order, ahead of prompt-driven replies.
  void push_reply(std::string content);
  void fail_next(int n);
  void set_always_status(std::optional<int> status);
  void set_reject_guided_decoding(bool reject);
  void set_embedding_override(const std::string& text, std::vector<double> vec);

  /// Reply content for one chat request, or nullopt when the prompt is not
  /// one the stub recognises.
  std::optional<std::string> chat_reply(const std::string& system_prompt, const std::string& user_prompt) const;
  std::vector<double> embedding_for(const std::string& text) const;

 private:
  void install_routes();
  std::optional<std::string> role_reply(PromptRole role, const std::string& user) const;
  std::optional<std::string> policy_reply(const std::string& user) const;

  StubOptions opts_;
  PromptSet prompts_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = 0;

  mutable std::mutex mu_;
  StubCounters counters_;
  std::deque<std::string> replies_;
  int fail_remaining_ = 0;
};

}  // namespace normforge
