#include "normforge/stub_server.hpp"

#include <httplib.h>

#include <algorithm>
#include <set>

#include "normforge/ci_schema.hpp"
#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

// ---- markers -----------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(std::string_view body) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const auto bar = body.find('|', pos);
    out.emplace_back(body.substr(pos, bar == std::string_view::npos ? std::string_view::npos : bar - pos));
    if (bar == std::string_view::npos) break;
    pos = bar + 1;
  }
  return out;
}

template <typename F>
void scan_markers(std::string_view text, std::string_view tag, F&& on_marker) {
  const std::string open = "<<" + std::string(tag) + "|";
  std::size_t pos = 0;
  while ((pos = text.find(open, pos)) != std::string_view::npos) {
    const auto close = text.find(">>", pos + open.size());
    if (close == std::string_view::npos) return;
    const auto body = text.substr(pos + open.size(), close - pos - open.size());
    if (body.find('<') == std::string_view::npos) {
      on_marker(std::string(text.substr(pos, close + 2 - pos)), split_fields(body));
    }
    pos = close + 2;
  }
}

int to_int_or(const std::string& s, int fallback) {
  try {
    return std::stoi(s);
  } catch (const std::exception&) {
    return fallback;
  }
}

std::string modal_for(const std::string& force) {
  if (force == "obligatory") return "must";
  if (force == "prohibited") return "must not";
  if (force == "permitted") return "may";
  if (force == "recommended") return "should";
  if (force == "discouraged") return "should not";
  return "ought to";
}

std::string qual_for(int quant) {
  if (quant >= 9) return "very_certain";
  if (quant >= 7) return "certain";
  if (quant >= 5) return "somewhat_certain";
  if (quant >= 3) return "uncertain";
  return "very_uncertain";
}

json null_if_empty(const std::string& s) { return s.empty() ? json(nullptr) : json(s); }

std::set<std::string> token_set(std::string_view s) {
  auto toks = normalized_tokens(s);
  return {toks.begin(), toks.end()};
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double round2(double x) { return static_cast<double>(static_cast<long long>(x * 100.0 + 0.5)) / 100.0; }

std::string stub_norm_invoked(const PlantedFlow& f) {
  return "In " + f.context + ", " + f.information_type + " passes from " + f.sender + " to " + f.recipient +
         " by " + f.transmission_principle;
}

json flow_document(const PlantedFlow& f) {
  json j;
  j["sender"] = f.sender;
  j["recipient"] = f.recipient;
  j["subject"] = null_if_empty(f.subject);
  j["information_type"] = f.information_type;
  j["transmission_principle"] = null_if_empty(f.transmission_principle);
  j["context"] = f.context;
  j["appropriateness"] = f.appropriateness;
  j["norms_invoked"] = json::array({stub_norm_invoked(f)});
  j["norm_source"] = "implicit";
  j["is_new_flow"] = false;
  j["confidence"] = f.confidence;
  return j;
}

json norm_document(const PlantedNorm& n) {
  json j;
  j["prescriptive_element"] = modal_for(n.force);
  j["norm_subject"] = n.subject;
  j["norm_act"] = n.act;
  j["condition_of_application"] = null_if_empty(n.condition);
  j["normative_force"] = n.force;
  j["context"] = n.context;
  j["norm_articulation"] = stub_articulation(n.subject, n.force, n.act, n.condition);
  j["norm_source"] = "implicit";
  j["governs_information_flow"] = n.governs;
  j["information_flow_note"] = n.governs ? json("Regulates what " + n.subject + " may pass on.") : json(nullptr);
  j["confidence_qual"] = qual_for(n.confidence);
  j["confidence_quant"] = n.confidence;
  return j;
}

std::string flow_summary(const PlantedFlow& f) {
  return f.sender + " conveys " + f.information_type + " to " + f.recipient + " in a " + f.context + " setting.";
}

}  // namespace

std::string format_marker(const PlantedFlow& f) {
  std::string s = "<<FLOW|" + f.sender + "|" + f.recipient + "|" + f.subject + "|" + f.information_type + "|" +
                  f.transmission_principle + "|" + f.context + "|" + f.appropriateness + "|" +
                  std::to_string(f.confidence);
  if (f.fault) s += "|fault";
  return s + ">>";
}

std::string format_marker(const PlantedNorm& n) {
  return "<<NORM|" + n.subject + "|" + n.act + "|" + n.condition + "|" + n.force + "|" + n.context + "|" +
         (n.governs ? "true" : "false") + "|" + std::to_string(n.confidence) + "|" + n.abstract_subject + ">>";
}

std::vector<std::pair<std::string, PlantedFlow>> find_flow_markers(std::string_view text) {
  std::vector<std::pair<std::string, PlantedFlow>> out;
  scan_markers(text, "FLOW", [&](std::string raw, const std::vector<std::string>& f) {
    if (f.size() < 8) return;
    PlantedFlow p{f[0], f[1], f[2], f[3], f[4], f[5], f[6], to_int_or(f[7], 8), f.size() > 8 && f[8] == "fault"};
    out.emplace_back(std::move(raw), std::move(p));
  });
  return out;
}

std::vector<std::pair<std::string, PlantedNorm>> find_norm_markers(std::string_view text) {
  std::vector<std::pair<std::string, PlantedNorm>> out;
  scan_markers(text, "NORM", [&](std::string raw, const std::vector<std::string>& f) {
    if (f.size() < 8) return;
    PlantedNorm n{f[0], f[1], f[2], f[3], f[4], f[5] == "true", to_int_or(f[6], 8), f[7]};
    out.emplace_back(std::move(raw), std::move(n));
  });
  return out;
}

std::string stub_articulation(const std::string& subject, const std::string& force, const std::string& act,
                              const std::string& condition) {
  std::string s = subject;
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  s += " " + modal_for(force) + " " + act;
  if (!condition.empty()) s += " " + condition;
  return s + ".";
}

std::vector<double> stub_embedding(std::string_view text, std::size_t dim) {
  if (dim < 2) throw std::invalid_argument("stub embedding dimension must be at least 2");
  std::vector<double> v(dim, 0.0);
  v[dim - 1] = 0.25;
  for (const auto& tok : normalized_tokens(text)) {
    const auto h = fnv1a64(tok);
    v[h % (dim - 1)] += (h >> 63) ? 1.0 : -1.0;
  }
  return v;
}

// ---- server --------------------------------------------------------------------------

StubServer::StubServer(StubOptions opts)
    : opts_(std::move(opts)), prompts_(PromptSet::load(opts_.prompt_dir)), server_(std::make_unique<httplib::Server>()) {
  fail_remaining_ = opts_.fail_first_n;
  install_routes();
}

StubServer::~StubServer() { stop(); }

int StubServer::start(const std::string& host, int port) {
  host_ = host;
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    if (!server_->bind_to_port(host, port)) throw std::runtime_error("stub cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
  }
  if (port_ <= 0) throw std::runtime_error("stub cannot bind " + host);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void StubServer::serve_forever(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!server_->listen(host, port)) throw std::runtime_error("stub cannot listen on " + host + ":" + std::to_string(port));
}

void StubServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_) + "/v1"; }

StubCounters StubServer::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

void StubServer::reset_counters() {
  std::lock_guard lock(mu_);
  counters_ = {};
}

void StubServer::push_reply(std::string content) {
  std::lock_guard lock(mu_);
  replies_.push_back(std::move(content));
}

void StubServer::fail_next(int n) {
  std::lock_guard lock(mu_);
  fail_remaining_ = n;
}

void StubServer::set_always_status(std::optional<int> status) {
  std::lock_guard lock(mu_);
  opts_.always_status = status;
}

void StubServer::set_reject_guided_decoding(bool reject) {
  std::lock_guard lock(mu_);
  opts_.reject_guided_decoding = reject;
}

void StubServer::set_embedding_override(const std::string& text, std::vector<double> vec) {
  std::lock_guard lock(mu_);
  opts_.embedding_overrides[text] = std::move(vec);
}

std::vector<double> StubServer::embedding_for(const std::string& text) const {
  {
    std::lock_guard lock(mu_);
    auto it = opts_.embedding_overrides.find(text);
    if (it != opts_.embedding_overrides.end()) return it->second;
  }
  return stub_embedding(text, opts_.embedding_dim);
}

std::optional<std::string> StubServer::chat_reply(const std::string& system_prompt,
                                                  const std::string& user_prompt) const {
  if (auto role = prompts_.identify(system_prompt)) {
    if (*role == PromptRole::grpo_task) return policy_reply(user_prompt);
    return role_reply(*role, user_prompt);
  }
  return policy_reply(user_prompt);
}

std::optional<std::string> StubServer::policy_reply(const std::string& user) const {
  const auto& pair = prompts_.get(PromptRole::grpo_task);
  // the instruction itself contains blank lines, so split around a rendered
  // sentinel instead of matching the template
  const std::string sentinel = "\x01";
  const auto shape = pair.user.render({{"instruction", pair.system.text()}, {"chunk_text", sentinel}});
  const auto cut = shape.find(sentinel);
  const auto prefix = shape.substr(0, cut), suffix = shape.substr(cut + sentinel.size());
  if (user.size() < prefix.size() + suffix.size() || user.compare(0, prefix.size(), prefix) != 0 ||
      user.compare(user.size() - suffix.size(), suffix.size(), suffix) != 0) {
    return std::nullopt;
  }
  const auto flows = find_flow_markers(user.substr(prefix.size(), user.size() - prefix.size() - suffix.size()));
  json out;
  std::string reasoning;
  for (const auto& [raw, f] : flows) reasoning += (reasoning.empty() ? "" : " ") + flow_summary(f);
  out["reasoning"] = flows.empty() ? "No information passes between characters in this passage." : reasoning;
  out["has_information_exchange"] = !flows.empty();
  out["flows"] = json::array();
  for (const auto& [raw, f] : flows) out["flows"].push_back(flow_document(f));
  return out.dump(2);
}

std::optional<std::string> StubServer::role_reply(PromptRole role, const std::string& user) const {
  const auto vars = prompts_.get(role).user.match(user);
  if (!vars) return std::nullopt;
  const auto var = [&](const char* name) -> const std::string& { return vars->at(name); };

  switch (role) {
    case PromptRole::flow_reasoning: {
      const auto flows = find_flow_markers(var("article_text"));
      json out;
      std::string reasoning;
      for (const auto& [raw, f] : flows) reasoning += (reasoning.empty() ? "" : " ") + flow_summary(f);
      out["reasoning"] = flows.empty() ? "The passage narrates events without any transfer of information." : reasoning;
      out["has_information_exchange"] = !flows.empty();
      out["flows"] = json::array();
      for (const auto& [raw, f] : flows) {
        out["flows"].push_back({{"original_text_snippet", raw},
                                {"reasoning", flow_summary(f)},
                                {"context_identified", f.context},
                                {"flow_direction", f.sender + " -> " + f.recipient},
                                {"potential_appropriateness", f.appropriateness},
                                {"is_new_flow", false}});
      }
      return out.dump();
    }
    case PromptRole::flow_extraction: {
      const auto flows = find_flow_markers(var("reasoning_trace"));
      if (flows.empty()) return std::string("{\"error\": \"no flow in reasoning trace\"}");
      const auto& f = flows.front().second;
      if (f.fault) return std::string("{\"sender\": \"") + f.sender + "\", \"recipient\": ";
      return flow_document(f).dump();
    }
    case PromptRole::norm_reasoning: {
      const auto norms = find_norm_markers(var("article_text"));
      json out;
      out["has_prescriptive_content"] = !norms.empty();
      out["norms"] = json::array();
      for (const auto& [raw, n] : norms) {
        out["norms"].push_back({{"original_text_snippet", raw},
                                {"reasoning", "The passage shows that " + n.subject + " " + modal_for(n.force) + " " +
                                                  n.act + "."},
                                {"preliminary_normative_force", n.force},
                                {"governs_information_flow", n.governs}});
      }
      return out.dump();
    }
    case PromptRole::norm_extraction: {
      const auto norms = find_norm_markers(var("article_text"));
      json out;
      out["has_prescriptive_content"] = !norms.empty();
      out["norms"] = json::array();
      for (const auto& [raw, n] : norms) out["norms"].push_back(norm_document(n));
      return out.dump();
    }
    case PromptRole::norm_abstraction: {
      const auto& subject = var("norm_subject");
      const auto& act = var("norm_act");
      std::string condition = var("condition_of_application");
      if (condition == "null") condition.clear();
      std::string rewritten = subject;
      for (const auto& [raw, n] : find_norm_markers(var("article_text"))) {
        if (n.subject == subject && n.act == act && n.abstract_subject != "STUCK" && !n.abstract_subject.empty()) {
          rewritten = n.abstract_subject;
          break;
        }
      }
      json out;
      out["norm_subject"] = rewritten;
      out["norm_act"] = act;
      out["condition_of_application"] = null_if_empty(condition);
      out["norm_articulation"] = stub_articulation(rewritten, var("normative_force"), act, condition);
      out["role_rationale"] = rewritten == subject ? "No rewrite was possible." : "The character acts as " + rewritten + ".";
      return out.dump();
    }
    case PromptRole::grounding_judge: {
      json flow, norms;
      try {
        flow = json::parse(var("flow_json"));
        norms = json::parse(var("norm_universe_json"));
      } catch (const json::exception&) {
        return std::string("{\"explanation\": \"unreadable input\"}");
      }
      std::string invoked;
      for (const auto& s : flow.value("norms_invoked", json::array())) invoked += s.get<std::string>() + " ";
      const auto invoked_tokens = token_set(invoked);
      const auto flow_context = to_lower_ascii(trim(flow.value("context", "")));
      double match = 0.0, governance = 0.0, best = -1.0;
      std::string governing_force;
      for (const auto& n : norms) {
        match = std::max(match, jaccard(invoked_tokens, token_set(n.value("norm_articulation", ""))));
        const double g = 0.5 * (to_lower_ascii(trim(n.value("context", ""))) == flow_context) +
                         0.5 * n.value("governs_information_flow", false);
        if (g > best) {
          best = g;
          governance = g;
          governing_force = n.value("normative_force", "");
        }
      }
      const auto appr = flow.value("appropriateness", "");
      const bool restrictive = governing_force == "prohibited" || governing_force == "discouraged";
      const bool consistent = !governing_force.empty() && appr != "ambiguous" &&
                              ((appr == "inappropriate") == restrictive);
      json out;
      out["norm_match_score"] = round2(std::min(1.0, 2.0 * match));
      out["governance_score"] = round2(governance);
      out["appropriateness_consistent"] = consistent;
      out["explanation"] = "Scored by token overlap against " + std::to_string(norms.size()) + " retrieved norm(s).";
      return out.dump();
    }
    case PromptRole::coverage_judge: {
      json norms;
      try {
        norms = json::parse(var("norm_universe_json"));
      } catch (const json::exception&) {
        return std::string("{\"explanation\": \"unreadable input\"}");
      }
      const auto flows = find_flow_markers(var("chunk_text"));
      double coverage = 0.1;
      if (!flows.empty()) {
        std::size_t governed = 0;
        for (const auto& [raw, f] : flows) {
          for (const auto& n : norms) {
            if (to_lower_ascii(trim(n.value("context", ""))) == to_lower_ascii(trim(f.context))) {
              ++governed;
              break;
            }
          }
        }
        coverage = round2(0.3 + 0.6 * static_cast<double>(governed) / static_cast<double>(flows.size()));
      }
      json out;
      out["passage_contains_governed_flows"] = coverage >= 0.5;
      out["coverage_score"] = coverage;
      out["explanation"] = std::to_string(flows.size()) + " planted flow(s) in the passage.";
      return out.dump();
    }
    case PromptRole::grpo_task:
      return policy_reply(user);
  }
  return std::nullopt;
}

void StubServer::install_routes() {
  auto error_body = [](const std::string& message) {
    return json{{"error", {{"message", message}, {"type", "invalid_request_error"}}}}.dump();
  };

  // Injected failures apply to every POST before any other handling.
  auto injected_status = [this]() -> std::optional<int> {
    std::lock_guard lock(mu_);
    if (opts_.always_status) {
      ++counters_.injected_failures;
      return opts_.always_status;
    }
    if (fail_remaining_ > 0) {
      --fail_remaining_;
      ++counters_.injected_failures;
      return 500;
    }
    return std::nullopt;
  };

  server_->Get("/v1/models", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"object", "list"}, {"data", json::array({{{"id", "normforge-stub"}, {"object", "model"}}})}}.dump(),
                    "application/json");
  });

  server_->Post("/v1/chat/completions", [this, error_body, injected_status](const httplib::Request& req,
                                                                           httplib::Response& res) {
    if (auto status = injected_status()) {
      res.status = *status;
      res.set_content(error_body("injected failure"), "application/json");
      return;
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      res.set_content(error_body("request body is not JSON"), "application/json");
      return;
    }
    const bool guided = body.contains("guided_json") || body.contains("response_format");
    bool reject;
    {
      std::lock_guard lock(mu_);
      reject = opts_.reject_guided_decoding;
    }
    if (guided && reject) {
      res.status = 400;
      res.set_content(error_body("Unrecognized request argument supplied: guided_json"), "application/json");
      return;
    }
    std::string system, user;
    for (const auto& m : body.value("messages", json::array())) {
      const auto role = m.value("role", "");
      if (role == "system") system = m.value("content", "");
      else if (role == "user") user = m.value("content", "");
    }

    std::optional<std::string> content;
    std::string role_name = "unknown";
    {
      std::lock_guard lock(mu_);
      ++counters_.chat_requests;
      if (!replies_.empty()) {
        content = std::move(replies_.front());
        replies_.pop_front();
        role_name = "scripted";
      }
    }
    if (!content) {
      if (auto role = prompts_.identify(system)) role_name = std::string(to_string(*role));
      else role_name = "policy";
      content = chat_reply(system, user);
    }
    {
      std::lock_guard lock(mu_);
      ++counters_.by_role[role_name];
    }
    if (!content) {
      res.status = 400;
      res.set_content(error_body("the stub does not recognise this prompt"), "application/json");
      return;
    }
    json out = {{"id", "stub-" + sha256_hex(system + '\0' + user).substr(0, 16)},
                {"object", "chat.completion"},
                {"model", body.value("model", "normforge-stub")},
                {"choices", json::array({{{"index", 0},
                                          {"message", {{"role", "assistant"}, {"content", *content}}},
                                          {"finish_reason", "stop"}}})}};
    res.set_content(out.dump(), "application/json");
  });

  server_->Post("/v1/embeddings", [this, error_body, injected_status](const httplib::Request& req,
                                                                     httplib::Response& res) {
    if (auto status = injected_status()) {
      res.status = *status;
      res.set_content(error_body("injected failure"), "application/json");
      return;
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      res.set_content(error_body("request body is not JSON"), "application/json");
      return;
    }
    std::vector<std::string> inputs;
    if (body.contains("input") && body["input"].is_string()) inputs.push_back(body["input"].get<std::string>());
    else if (body.contains("input") && body["input"].is_array()) inputs = body["input"].get<std::vector<std::string>>();
    else {
      res.status = 400;
      res.set_content(error_body("input must be a string or an array of strings"), "application/json");
      return;
    }
    {
      std::lock_guard lock(mu_);
      ++counters_.embedding_requests;
      counters_.embedded_texts += inputs.size();
    }
    json data = json::array();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", embedding_for(inputs[i])}});
    }
    res.set_content(json{{"object", "list"}, {"data", data}, {"model", body.value("model", "normforge-stub")}}.dump(),
                    "application/json");
  });
}

}  // namespace normforge
