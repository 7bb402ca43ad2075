#include "normforge/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

void EndpointConfig::validate() const {
  if (base_url.empty()) throw std::invalid_argument("endpoint base_url is empty");
  if (!(timeout_s > 0)) throw std::invalid_argument("endpoint timeout must be positive");
  if (max_retries < 0) throw std::invalid_argument("endpoint max_retries must be non-negative");
  if (initial_backoff_s < 0 || max_backoff_s < initial_backoff_s) {
    throw std::invalid_argument("endpoint backoff must satisfy 0 <= initial <= max");
  }
  if (embed_batch_size == 0) throw std::invalid_argument("embed_batch_size must be positive");
  if (max_in_flight == 0) throw std::invalid_argument("max_in_flight must be positive");
}

std::vector<std::chrono::duration<double>> backoff_delays(const EndpointConfig& cfg) {
  std::vector<std::chrono::duration<double>> out;
  double d = cfg.initial_backoff_s;
  for (int i = 0; i < cfg.max_retries; ++i) {
    out.emplace_back(std::min(d, cfg.max_backoff_s));
    d *= 2.0;
  }
  return out;
}

std::string strip_think_blocks(std::string_view completion) {
  static constexpr std::string_view open = "<think>";
  static constexpr std::string_view close = "</think>";
  std::string current(completion);
  for (;;) {
    std::string out;
    std::size_t pos = 0;
    while (pos < current.size()) {
      const auto o = current.find(open, pos);
      if (o == std::string::npos) {
        out.append(current, pos, std::string::npos);
        break;
      }
      out.append(current, pos, o - pos);
      const auto c = current.find(close, o + open.size());
      if (c == std::string::npos) break;
      pos = c + close.size();
    }
    std::string trimmed(trim(out));
    // Removing a block can splice a new tag together; repeat to a fixpoint.
    if (trimmed == current) return trimmed;
    current = std::move(trimmed);
  }
}

// ---- embeddings ---------------------------------------------------------------

std::vector<Embedding> EmbeddingModel::embed_batch(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  for (const auto& t : texts) {
    if (t.empty()) throw std::invalid_argument("cannot embed an empty string");
  }
  const auto raw = embed_raw(texts);
  if (raw.size() != texts.size()) {
    throw EndpointError(200, "embedding endpoint returned " + std::to_string(raw.size()) + " vectors for " +
                                 std::to_string(texts.size()) + " inputs");
  }
  std::vector<Embedding> out;
  out.reserve(raw.size());
  for (const auto& v : raw) {
    std::size_t expected = 0;
    if (!dim_.compare_exchange_strong(expected, v.size()) && expected != v.size()) {
      throw DimensionMismatch("embedding dimension " + std::to_string(v.size()) + " differs from " +
                              std::to_string(expected) + " seen earlier");
    }
    if (v.empty()) throw EndpointError(200, "embedding endpoint returned an empty vector");
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0) || !std::isfinite(norm)) throw EndpointError(200, "embedding has zero or non-finite norm");
    Embedding e(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) e[i] = static_cast<float>(v[i] / norm);
    out.push_back(std::move(e));
  }
  return out;
}

// ---- HTTP transport -----------------------------------------------------------

namespace {

struct Target {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

Target split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint URL lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Target t;
  if (path_start == std::string::npos) {
    t.origin = url;
  } else {
    t.origin = url.substr(0, path_start);
    t.prefix = url.substr(path_start);
  }
  while (!t.prefix.empty() && t.prefix.back() == '/') t.prefix.pop_back();
  return t;
}

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<>& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<>& s_;
};

std::unique_ptr<httplib::Client> make_client(const EndpointConfig& cfg, const Target& t) {
  auto cli = std::make_unique<httplib::Client>(t.origin);
  const auto secs = static_cast<time_t>(cfg.timeout_s);
  const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
  cli->set_connection_timeout(secs, usecs);
  cli->set_read_timeout(secs, usecs);
  cli->set_write_timeout(secs, usecs);
  if (cfg.api_key && !cfg.api_key->empty()) cli->set_bearer_token_auth(*cfg.api_key);
  return cli;
}

bool mentions_constraint(const std::string& body) {
  const auto lower = to_lower_ascii(body);
  for (const char* key : {"guided_json", "guided_decoding", "response_format", "json_schema", "guided"}) {
    if (lower.find(key) != std::string::npos) return true;
  }
  return false;
}

std::string snippet(const std::string& body) { return body.size() > 300 ? body.substr(0, 300) + "..." : body; }

// POSTs `payload` with retries; returns the 2xx body.
std::string post_with_retries(const EndpointConfig& cfg, const std::string& path, const json& payload,
                              bool structured) {
  const auto target = split_url(cfg.base_url);
  const auto delays = backoff_delays(cfg);
  const std::string body = dump_line(payload);
  std::string last_failure;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    auto cli = make_client(cfg, target);
    auto res = cli->Post(target.prefix + path, body, "application/json");
    if (!res) {
      last_failure = "transport failure: " + httplib::to_string(res.error());
    } else if (res->status >= 500 || res->status == 429) {
      last_failure = "status " + std::to_string(res->status) + ": " + snippet(res->body);
    } else if (res->status >= 400) {
      if (structured && mentions_constraint(res->body)) {
        throw ConstraintUnsupported(res->status, "endpoint rejected guided decoding: " + snippet(res->body));
      }
      throw EndpointError(res->status, "status " + std::to_string(res->status) + ": " + snippet(res->body));
    } else {
      return res->body;
    }
    if (attempt < cfg.max_retries) std::this_thread::sleep_for(delays[static_cast<std::size_t>(attempt)]);
  }
  throw TransportError(cfg.base_url + path + " failed after " + std::to_string(cfg.max_retries + 1) +
                       " attempt(s); last " + last_failure);
}

bool probe_models(const EndpointConfig& cfg) {
  try {
    const auto target = split_url(cfg.base_url);
    auto cli = make_client(cfg, target);
    auto res = cli->Get(target.prefix + "/models");
    return res && res->status < 500;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

HttpChatModel::HttpChatModel(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  slots_ = std::make_unique<std::counting_semaphore<>>(static_cast<std::ptrdiff_t>(cfg_.max_in_flight));
}

std::string HttpChatModel::complete_text(const CompletionRequest& req) { return complete(req, false); }

std::string HttpChatModel::complete_structured(const CompletionRequest& req) {
  if (!req.schema) throw std::invalid_argument("structured completion requires a schema");
  return complete(req, true);
}

std::string HttpChatModel::complete(const CompletionRequest& req, bool structured) {
  if (req.system_prompt.empty() || req.user_prompt.empty()) {
    throw std::invalid_argument("completion prompts must be non-empty");
  }
  json payload = {
      {"model", cfg_.model_name},
      {"messages", json::array({{{"role", "system"}, {"content", req.system_prompt}},
                                {{"role", "user"}, {"content", req.user_prompt}}})},
      {"temperature", cfg_.temperature},
      {"max_tokens", req.max_tokens},
  };
  if (structured) {
    if (cfg_.dialect == GuidedDialect::vllm) {
      payload["guided_json"] = *req.schema;
    } else {
      payload["response_format"] = {
          {"type", "json_schema"},
          {"json_schema", {{"name", req.schema_name}, {"schema", *req.schema}, {"strict", true}}}};
    }
  }

  std::string body;
  {
    SlotGuard guard(*slots_);
    body = post_with_retries(cfg_, "/chat/completions", payload, structured);
  }
  json response;
  try {
    response = json::parse(body);
  } catch (const json::exception& e) {
    throw EndpointError(200, std::string("unparseable completion response: ") + e.what());
  }
  const auto* content = [&]() -> const json* {
    if (!response.contains("choices") || !response["choices"].is_array() || response["choices"].empty()) {
      return nullptr;
    }
    const auto& choice = response["choices"][0];
    if (!choice.contains("message") || !choice["message"].contains("content")) return nullptr;
    return &choice["message"]["content"];
  }();
  if (!content) throw EndpointError(200, "completion response has no choices[0].message.content");
  if (!content->is_string() || trim(content->get_ref<const std::string&>()).empty()) {
    throw EmptyCompletion("endpoint returned an empty completion");
  }
  return content->get<std::string>();
}

bool HttpChatModel::probe() { return probe_models(cfg_); }

HttpEmbeddingModel::HttpEmbeddingModel(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  slots_ = std::make_unique<std::counting_semaphore<>>(static_cast<std::ptrdiff_t>(cfg_.max_in_flight));
}

bool HttpEmbeddingModel::probe() { return probe_models(cfg_); }

std::vector<std::vector<double>> HttpEmbeddingModel::embed_raw(const std::vector<std::string>& texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += cfg_.embed_batch_size) {
    const auto end = std::min(texts.size(), begin + cfg_.embed_batch_size);
    json payload = {{"model", cfg_.model_name},
                    {"input", std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                                       texts.begin() + static_cast<std::ptrdiff_t>(end))}};
    std::string body;
    {
      SlotGuard guard(*slots_);
      body = post_with_retries(cfg_, "/embeddings", payload, false);
    }
    json response;
    try {
      response = json::parse(body);
    } catch (const json::exception& e) {
      throw EndpointError(200, std::string("unparseable embedding response: ") + e.what());
    }
    if (!response.contains("data") || !response["data"].is_array() || response["data"].size() != end - begin) {
      throw EndpointError(200, "embedding response has the wrong number of vectors");
    }
    std::vector<std::pair<std::size_t, std::vector<double>>> batch;
    std::size_t position = 0;
    for (const auto& item : response["data"]) {
      const std::size_t index = item.contains("index") ? item["index"].get<std::size_t>() : position;
      if (!item.contains("embedding") || !item["embedding"].is_array()) {
        throw EndpointError(200, "embedding item lacks an embedding array");
      }
      batch.emplace_back(index, item["embedding"].get<std::vector<double>>());
      ++position;
    }
    std::stable_sort(batch.begin(), batch.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [index, vec] : batch) out.push_back(std::move(vec));
  }
  return out;
}

// ---- configuration ---------------------------------------------------------------

EndpointConfig endpoint_from_json(const json& j, EndpointConfig cfg) {
  if (!j.is_object()) throw std::invalid_argument("endpoint config must be an object");
  if (j.contains("base_url")) cfg.base_url = j["base_url"].get<std::string>();
  if (j.contains("model")) cfg.model_name = j["model"].get<std::string>();
  if (j.contains("api_key") && j["api_key"].is_string()) cfg.api_key = j["api_key"].get<std::string>();
  if (j.contains("timeout_s")) cfg.timeout_s = j["timeout_s"].get<double>();
  if (j.contains("max_retries")) cfg.max_retries = j["max_retries"].get<int>();
  if (j.contains("temperature")) cfg.temperature = j["temperature"].get<double>();
  if (j.contains("initial_backoff_s")) cfg.initial_backoff_s = j["initial_backoff_s"].get<double>();
  if (j.contains("max_backoff_s")) cfg.max_backoff_s = j["max_backoff_s"].get<double>();
  if (j.contains("embed_batch_size")) cfg.embed_batch_size = j["embed_batch_size"].get<std::size_t>();
  if (j.contains("max_in_flight")) cfg.max_in_flight = j["max_in_flight"].get<std::size_t>();
  if (j.contains("dialect")) {
    const auto d = j["dialect"].get<std::string>();
    if (d == "vllm") cfg.dialect = GuidedDialect::vllm;
    else if (d == "openai") cfg.dialect = GuidedDialect::openai;
    else throw std::invalid_argument("unknown guided-decoding dialect \"" + d + "\"");
  }
  return cfg;
}

EndpointConfig endpoint_from_env(const std::string& role, EndpointConfig cfg) {
  const auto get = [&](const char* suffix) -> std::optional<std::string> {
    const auto name = "NORMFORGE_" + role + "_" + suffix;
    const char* v = std::getenv(name.c_str());
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("BASE_URL")) cfg.base_url = *v;
  if (auto v = get("MODEL")) cfg.model_name = *v;
  if (auto v = get("API_KEY")) cfg.api_key = *v;
  if (auto v = get("TIMEOUT")) cfg.timeout_s = std::stod(*v);
  if (auto v = get("MAX_RETRIES")) cfg.max_retries = std::stoi(*v);
  return cfg;
}

Gateway make_http_gateway(const EndpointConfig& extractor, const EndpointConfig& judge,
                          const EndpointConfig& embedder) {
  Gateway g;
  g.extractor = std::make_shared<HttpChatModel>(extractor);
  g.judge = std::make_shared<HttpChatModel>(judge);
  g.embedder = std::make_shared<HttpEmbeddingModel>(embedder);
  return g;
}

}  // namespace normforge
