#include "normforge/service.hpp"

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

// ---- work directory index ------------------------------------------------------------

void write_books_index(const std::filesystem::path& path, const std::vector<BookEntry>& books) {
  ojson arr = ojson::array();
  for (const auto& b : books) {
    ojson j;
    j["book_id"] = b.book_id;
    j["title"] = b.title;
    j["gutenberg_id"] = b.gutenberg_id;
    j["chunk_count"] = b.chunk_count;
    j["metadata"] = {{"book_summary", b.metadata.book_summary},
                     {"book_context", b.metadata.book_context},
                     {"character_lexicon", b.metadata.character_lexicon}};
    arr.push_back(std::move(j));
  }
  ojson root;
  root["books"] = std::move(arr);
  write_file_atomic(path, dump_pretty(root) + "\n");
}

std::vector<BookEntry> read_books_index(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingInput(path);
  const auto root = json::parse(read_file(path));
  std::vector<BookEntry> out;
  for (const auto& j : root.at("books")) {
    BookEntry b;
    b.book_id = j.at("book_id").get<std::string>();
    b.title = j.value("title", "");
    b.gutenberg_id = j.value("gutenberg_id", std::int64_t{0});
    b.chunk_count = j.value("chunk_count", std::size_t{0});
    if (j.contains("metadata")) {
      const auto& m = j["metadata"];
      b.metadata.book_summary = m.value("book_summary", "");
      b.metadata.book_context = m.value("book_context", "");
      b.metadata.character_lexicon = m.value("character_lexicon", std::vector<std::string>{});
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---- configuration ------------------------------------------------------------------------

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

}  // namespace

RewardConfig reward_config_from_json(const json& j, RewardConfig base) {
  if (!j.is_object()) throw std::invalid_argument("reward config must be an object");
  if (j.contains("weights")) base.weights = base.weights.with_overrides(j["weights"]);
  read_if(j, "lambda", base.contrastive.lambda);
  read_if(j, "k", base.retrieval.k);
  read_if(j, "fail_on_unreachable", base.fail_on_unreachable);
  if (j.contains("shaping")) {
    const auto& s = j["shaping"];
    read_if(s, "gold_no_flow", base.shaping.gold_no_flow);
    read_if(s, "gold_has_flows", base.shaping.gold_has_flows);
    read_if(s, "shape_uncertainty", base.shaping.shape_uncertainty);
    read_if(s, "context_score", base.shaping.context_score);
    read_if(s, "coherence_score", base.shaping.coherence_score);
    read_if(s, "contrastive_coverage", base.shaping.contrastive_coverage);
  }
  if (j.contains("placeholders")) {
    base.placeholders.values.clear();
    for (const auto& v : j["placeholders"]) base.placeholders.values.insert(to_lower_ascii(trim(v.get<std::string>())));
  }
  base.validate();
  return base;
}

ServiceConfig service_config_from_json(const json& j, ServiceConfig base) {
  if (!j.is_object()) throw std::invalid_argument("service config must be an object");
  read_if(j, "host", base.host);
  read_if(j, "port", base.port);
  if (j.contains("workdir")) base.workdir = j["workdir"].get<std::string>();
  if (j.contains("prompt_dir")) base.prompt_dir = j["prompt_dir"].get<std::string>();
  read_if(j, "seed", base.default_seed);
  read_if(j, "diagnostics_window", base.diagnostics_window);
  read_if(j, "threads", base.threads);
  if (j.contains("audit_log") && !j["audit_log"].is_null()) base.audit_log = j["audit_log"].get<std::string>();
  if (j.contains("endpoints")) {
    const auto& e = j["endpoints"];
    if (e.contains("judge")) base.judge = endpoint_from_json(e["judge"], base.judge);
    if (e.contains("embedder")) base.embedder = endpoint_from_json(e["embedder"], base.embedder);
  }
  if (j.contains("reward")) base.reward = reward_config_from_json(j["reward"], base.reward);
  return base;
}

ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file) {
  ServiceConfig cfg;
  if (file) {
    if (!std::filesystem::exists(*file)) throw MissingInput(*file);
    json j;
    try {
      j = json::parse(read_file(*file));
    } catch (const json::exception& e) {
      throw std::invalid_argument("malformed config " + file->string() + ": " + e.what());
    }
    cfg = service_config_from_json(j, cfg);
  }
  try {
    if (auto v = env("NORMFORGE_HOST")) cfg.host = *v;
    if (auto v = env("NORMFORGE_PORT")) cfg.port = std::stoi(*v);
    if (auto v = env("NORMFORGE_WORKDIR")) cfg.workdir = *v;
    if (auto v = env("NORMFORGE_SEED")) cfg.default_seed = std::stoull(*v);
    if (auto v = env("NORMFORGE_LAMBDA")) cfg.reward.contrastive.lambda = std::stod(*v);
    if (auto v = env("NORMFORGE_DIAGNOSTICS_WINDOW")) cfg.diagnostics_window = std::stoul(*v);
    if (auto v = env("NORMFORGE_THREADS")) cfg.threads = std::stoul(*v);
  } catch (const std::logic_error& e) {
    throw std::invalid_argument(std::string("bad NORMFORGE_* environment value: ") + e.what());
  }
  cfg.judge = endpoint_from_env("JUDGE", cfg.judge);
  cfg.embedder = endpoint_from_env("EMBEDDER", cfg.embedder);
  return cfg;
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range");
  if (diagnostics_window == 0) throw std::invalid_argument("diagnostics_window must be positive");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
  reward.validate();
}

// ---- data -----------------------------------------------------------------------------

ScoringData load_scoring_data(const WorkdirLayout& layout) {
  ScoringData data;
  for (const auto& book : read_books_index(layout.books_index())) {
    const auto chunk_file = layout.chunk_file(book.book_id);
    if (!std::filesystem::exists(chunk_file)) throw MissingInput(chunk_file);
    for (auto& c : read_chunks(chunk_file)) data.chunks.emplace(c.chunk_id, std::move(c));
    const auto gold_file = layout.book_run(book.book_id).gold_labels();
    if (!std::filesystem::exists(gold_file)) throw MissingInput(gold_file);
    for (auto& g : load_gold_labels(gold_file)) data.gold.emplace(g.chunk_id, std::move(g));
  }
  if (!std::filesystem::is_directory(layout.universes())) throw MissingInput(layout.universes());
  data.universes = load_universes(layout.universes());
  if (data.universes.size() < 2) {
    throw OnlyOneUniverse("contrastive scoring needs at least two universes, found " +
                          std::to_string(data.universes.size()));
  }
  return data;
}

// ---- diagnostics -------------------------------------------------------------------------

DiagnosticsWindow::DiagnosticsWindow(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

void DiagnosticsWindow::add(const std::vector<RewardBreakdown>& breakdowns) {
  std::lock_guard lock(mu_);
  ++requests_;
  for (const auto& b : breakdowns) {
    entries_.push_back({b.schema_valid && b.no_flow_predicted, b.components(), b.composite});
    ++completions_;
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

ojson DiagnosticsWindow::snapshot() const {
  std::lock_guard lock(mu_);
  std::size_t no_flow = 0;
  std::array<double, 6> sums{};
  double composite = 0.0;
  for (const auto& e : entries_) {
    no_flow += e.no_flow;
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += e.components[i];
    composite += e.composite;
  }
  const double n = static_cast<double>(entries_.size());
  ojson j;
  j["window_capacity"] = capacity_;
  j["window_size"] = entries_.size();
  j["no_flow_count"] = no_flow;
  j["no_flow_rate"] = entries_.empty() ? 0.0 : static_cast<double>(no_flow) / n;
  ojson means;
  for (std::size_t i = 0; i < sums.size(); ++i) means[kComponentNames[i]] = entries_.empty() ? 0.0 : sums[i] / n;
  j["component_means"] = means;
  j["composite_mean"] = entries_.empty() ? 0.0 : composite / n;
  j["requests_total"] = requests_;
  j["completions_total"] = completions_;
  return j;
}

// ---- service --------------------------------------------------------------------------------

namespace {

HttpReply error_reply(int status, const std::string& message, const std::optional<std::string>& chunk_id = {}) {
  ojson j;
  j["error"] = message;
  if (chunk_id) j["chunk_id"] = *chunk_id;
  return {status, dump_line(j)};
}

struct ScoreRequest {
  std::string chunk_id;
  std::vector<std::string> completions;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_override;
  std::optional<json> weight_override;
};

// Throws std::invalid_argument with a client-facing message.
ScoreRequest parse_score_request(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    throw std::invalid_argument("request body is not valid JSON");
  }
  if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  ScoreRequest r;
  if (!j.contains("chunk_id") || !j["chunk_id"].is_string()) throw std::invalid_argument("chunk_id must be a string");
  r.chunk_id = j["chunk_id"].get<std::string>();
  if (!j.contains("completions") || !j["completions"].is_array() || j["completions"].empty()) {
    throw std::invalid_argument("completions must be a non-empty array of strings");
  }
  for (const auto& c : j["completions"]) {
    if (!c.is_string()) throw std::invalid_argument("completions must be a non-empty array of strings");
    r.completions.push_back(c.get<std::string>());
  }
  if (j.contains("seed") && !j["seed"].is_null()) {
    if (!j["seed"].is_number_unsigned()) throw std::invalid_argument("seed must be a non-negative integer");
    r.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("lambda_override") && !j["lambda_override"].is_null()) {
    if (!j["lambda_override"].is_number() || j["lambda_override"].get<double>() < 0.0) {
      throw std::invalid_argument("lambda_override must be a non-negative number");
    }
    r.lambda_override = j["lambda_override"].get<double>();
  }
  if (j.contains("weight_override") && !j["weight_override"].is_null()) {
    if (!j["weight_override"].is_object()) throw std::invalid_argument("weight_override must be an object");
    r.weight_override = j["weight_override"];
  }
  return r;
}

}  // namespace

RewardService::RewardService(ServiceConfig cfg, ScoringData data, Gateway gateway, PromptSet prompts)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      gateway_(std::move(gateway)),
      prompts_(std::move(prompts)),
      window_(cfg_.diagnostics_window) {
  cfg_.validate();
  if (!gateway_.judge || !gateway_.embedder) throw std::invalid_argument("service needs a judge and an embedder");
  if (cfg_.audit_log) audit_ = std::make_unique<AuditLog>(*cfg_.audit_log);
}

RewardService::~RewardService() { stop(); }

HttpReply RewardService::score(std::string_view request_body) {
  ScoreRequest req;
  RewardConfig rcfg = cfg_.reward;
  try {
    req = parse_score_request(request_body);
    if (req.lambda_override) rcfg.contrastive.lambda = *req.lambda_override;
    if (req.weight_override) rcfg.weights = rcfg.weights.with_overrides(*req.weight_override);
  } catch (const std::exception& e) {
    return error_reply(422, e.what());
  }
  const auto chunk = data_.chunks.find(req.chunk_id);
  if (chunk == data_.chunks.end()) return error_reply(404, "unknown chunk_id " + req.chunk_id, req.chunk_id);
  const auto gold = data_.gold.find(req.chunk_id);
  if (gold == data_.gold.end()) return error_reply(404, "no gold label for chunk_id " + req.chunk_id, req.chunk_id);

  const std::uint64_t seed = req.seed.value_or(cfg_.default_seed);
  GroupResult group;
  try {
    group = score_group(req.completions, chunk->second, gold->second, data_.universes, rcfg, seed, gateway_,
                        prompts_);
  } catch (const ServiceUnavailable& e) {
    return error_reply(503, e.what(), req.chunk_id);
  } catch (const UniverseError& e) {
    return error_reply(404, e.what(), req.chunk_id);
  }
  window_.add(group.breakdowns);
  if (audit_) {
    for (std::size_t i = 0; i < req.completions.size(); ++i) {
      audit_->record(req.chunk_id, req.completions[i], seed, group.wrong_book_id, group.breakdowns[i]);
    }
  }

  ojson out;
  out["chunk_id"] = req.chunk_id;
  out["seed"] = seed;
  out["wrong_book_id"] = group.wrong_book_id;
  out["rewards"] = ojson::array();
  out["breakdowns"] = ojson::array();
  for (const auto& b : group.breakdowns) {
    out["rewards"].push_back(b.composite);
    out["breakdowns"].push_back(to_json(b));
  }
  out["diagnostics"] = to_json(group.diagnostics);
  return {200, dump_line(out)};
}

HttpReply RewardService::health() const {
  const bool judge_ok = gateway_.judge->probe();
  const bool embed_ok = gateway_.embedder->probe();
  ojson j;
  j["status"] = judge_ok && embed_ok ? "ok" : "degraded";
  j["endpoints"] = {{"judge", {{"reachable", judge_ok}}}, {"embedder", {{"reachable", embed_ok}}}};
  j["chunks"] = data_.chunks.size();
  j["gold_labels"] = data_.gold.size();
  ojson books = ojson::array();
  for (const auto& u : data_.universes) books.push_back(u.book_id);
  j["universes"] = books;
  j["prompt_fingerprint"] = prompts_.fingerprint();
  return {judge_ok && embed_ok ? 200 : 503, dump_line(j)};
}

HttpReply RewardService::diagnostics() const { return {200, dump_line(window_.snapshot())}; }

const ojson& RewardService::schema() {
  static const ojson s = [] {
    const ojson unit = {{"type", "number"}, {"minimum", 0}, {"maximum", 1}};
    ojson breakdown_props;
    for (const char* k : {"r_uncert", "r_complete", "r_consist", "r_context", "r_cohere", "r_ground", "composite"}) {
      breakdown_props[k] = unit;
    }
    breakdown_props["schema_valid"] = {{"type", "boolean"}};
    breakdown_props["no_flow_predicted"] = {{"type", "boolean"}};
    breakdown_props["gold_has_flows"] = {{"type", "boolean"}};
    breakdown_props["flags"] = {{"type", "array"}, {"items", {{"type", "string"}}}};
    breakdown_props["grounding_detail"] = {{"type", {"object", "null"}}};
    ojson breakdown_required = ojson::array();
    for (const auto& [k, v] : breakdown_props.items()) breakdown_required.push_back(k);

    ojson root;
    root["score_request"] = {
        {"type", "object"},
        {"properties",
         {{"chunk_id", {{"type", "string"}}},
          {"completions", {{"type", "array"}, {"minItems", 1}, {"items", {{"type", "string"}}}}},
          {"seed", {{"type", "integer"}, {"minimum", 0}}},
          {"lambda_override", {{"type", "number"}, {"minimum", 0}}},
          {"weight_override",
           {{"type", "object"},
            {"properties",
             {{"uncert", unit}, {"complete", unit}, {"consist", unit}, {"context", unit}, {"cohere", unit},
              {"ground", unit}}},
            {"additionalProperties", false}}}}},
        {"required", {"chunk_id", "completions"}}};
    root["reward_breakdown"] = {{"type", "object"}, {"properties", breakdown_props}, {"required", breakdown_required}};
    root["score_response"] = {
        {"type", "object"},
        {"properties",
         {{"chunk_id", {{"type", "string"}}},
          {"seed", {{"type", "integer"}}},
          {"wrong_book_id", {{"type", "string"}}},
          {"rewards", {{"type", "array"}, {"items", unit}}},
          {"breakdowns", {{"type", "array"}, {"items", {{"$ref", "#/reward_breakdown"}}}}},
          {"diagnostics", {{"type", "object"}}}}},
        {"required", {"chunk_id", "seed", "wrong_book_id", "rewards", "breakdowns", "diagnostics"}}};
    root["error"] = {{"type", "object"},
                     {"properties", {{"error", {{"type", "string"}}}, {"chunk_id", {{"type", "string"}}}}},
                     {"required", {"error"}}};
    return root;
  }();
  return s;
}

void RewardService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  const std::size_t threads = cfg_.threads;
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  const auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->Post("/v1/score", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, score(req.body));
  });
  server_->Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  server_->Get("/v1/diagnostics",
               [this, send](const httplib::Request&, httplib::Response& res) { send(res, diagnostics()); });
  server_->Get("/v1/schema", [send](const httplib::Request&, httplib::Response& res) {
    send(res, {200, dump_pretty(schema())});
  });
  server_->set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, msg));
  });
}

int RewardService::start() {
  install_routes();
  int port = cfg_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(cfg_.host);
  } else if (!server_->bind_to_port(cfg_.host, port)) {
    port = -1;
  }
  if (port <= 0) throw std::runtime_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void RewardService::serve_forever() {
  install_routes();
  if (!server_->listen(cfg_.host, cfg_.port)) {
    throw std::runtime_error("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
  }
}

void RewardService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

// ---- offline batch ---------------------------------------------------------------------------

OfflineSummary score_batch_offline(RewardService& service, const std::filesystem::path& requests_file,
                                   const std::filesystem::path& out_file, const OfflineOptions& opts) {
  if (!std::filesystem::exists(requests_file)) throw MissingInput(requests_file);

  std::set<std::size_t> done;
  if (std::filesystem::exists(out_file)) {
    auto existing = read_file(out_file);
    // drop a torn final line left by an interrupted write
    const auto last_nl = existing.rfind('\n');
    const auto keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep != existing.size()) {
      existing.resize(keep);
      write_file_atomic(out_file, existing);
    }
    std::size_t pos = 0;
    while (pos < existing.size()) {
      const auto nl = existing.find('\n', pos);
      const auto line = std::string_view(existing).substr(pos, nl - pos);
      pos = nl + 1;
      const auto j = json::parse(line, nullptr, false);
      if (j.is_object() && j.contains("line") && j["line"].is_number_unsigned()) done.insert(j["line"].get<std::size_t>());
    }
  }

  OfflineSummary summary;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(requests_file)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (done.count(line_no)) {
      ++summary.skipped;
      continue;
    }
    ojson rec;
    rec["line"] = line_no;
    const auto parsed = json::parse(line, nullptr, false);
    if (parsed.is_object() && parsed.contains("chunk_id") && parsed["chunk_id"].is_string()) {
      rec["chunk_id"] = parsed["chunk_id"].get<std::string>();
    } else {
      rec["chunk_id"] = nullptr;
    }
    const auto reply = service.score(line);
    if (reply.status == 503) {
      throw ServiceUnavailable("line " + std::to_string(line_no) + ": " +
                               json::parse(reply.body).value("error", std::string("unavailable")));
    }
    rec["status"] = reply.status;
    if (reply.status == 200) {
      rec["response"] = ojson::parse(reply.body);
      ++summary.scored;
    } else {
      rec["error"] = json::parse(reply.body).value("error", std::string("error"));
      ++summary.errors;
    }
    append_line(out_file, dump_line(rec));
    if (opts.on_line && !opts.on_line(line_no)) break;
  }
  return summary;
}

}  // namespace normforge
