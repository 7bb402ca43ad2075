#include "normforge/cli.hpp"

#include <CLI11.hpp>
#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <ctime>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "normforge/corpus.hpp"
#include "normforge/dataset.hpp"
#include "normforge/extraction.hpp"
#include "normforge/gateway.hpp"
#include "normforge/service.hpp"
#include "normforge/stub_server.hpp"
#include "normforge/universe.hpp"
#include "normforge/util.hpp"

namespace normforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::mutex log_mu;

void log(const std::string& line) {
  std::lock_guard lock(log_mu);
  std::cerr << line << '\n';
}

struct CommonOptions {
  std::string workdir = "work";
  std::string config;
  std::string base_url;
  std::string model;
  std::string prompt_dir;
  bool stub = false;
};

struct Endpoints {
  std::unique_ptr<StubServer> stub;
  EndpointConfig extractor;
  ServiceConfig service;
};

fs::path prompt_dir_of(const CommonOptions& o) { return o.prompt_dir.empty() ? default_prompt_dir() : fs::path(o.prompt_dir); }

PromptSet load_prompts(const CommonOptions& o) {
  const auto dir = prompt_dir_of(o);
  if (!fs::is_directory(dir)) throw MissingInput(dir);
  return PromptSet::load(dir);
}

// Resolution order: config file, NORMFORGE_* environment, command-line
// flags, then --stub which overrides every base URL.
Endpoints resolve_endpoints(const CommonOptions& o) {
  Endpoints e;
  std::optional<fs::path> cfg_file;
  if (!o.config.empty()) cfg_file = o.config;
  e.service = load_service_config(cfg_file);
  if (cfg_file) {
    const auto j = json::parse(read_file(*cfg_file));
    if (j.contains("endpoints") && j["endpoints"].contains("extractor")) {
      e.extractor = endpoint_from_json(j["endpoints"]["extractor"], e.extractor);
    }
  }
  e.extractor = endpoint_from_env("EXTRACTOR", e.extractor);
  e.service.workdir = o.workdir;
  if (!o.prompt_dir.empty()) e.service.prompt_dir = o.prompt_dir;
  for (auto* ep : {&e.extractor, &e.service.judge, &e.service.embedder}) {
    if (!o.base_url.empty()) ep->base_url = o.base_url;
    if (!o.model.empty()) ep->model_name = o.model;
  }
  if (o.stub) {
    StubOptions so;
    so.prompt_dir = prompt_dir_of(o);
    e.stub = std::make_unique<StubServer>(so);
    e.stub->start();
    for (auto* ep : {&e.extractor, &e.service.judge, &e.service.embedder}) {
      ep->base_url = e.stub->base_url();
      if (ep->model_name.empty()) ep->model_name = "stub";
    }
    log("using in-process stub endpoint " + e.stub->base_url());
  }
  return e;
}

void require_endpoint(const EndpointConfig& ep, const std::string& role) {
  if (ep.base_url.empty()) {
    std::string upper = role;
    for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    throw UsageError("no " + role + " endpoint configured; set NORMFORGE_" + upper +
                     "_BASE_URL, pass --base-url, or use --stub");
  }
}

std::string iso_utc(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string resolve_built_at(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
    try {
      return iso_utc(static_cast<std::time_t>(std::stoll(sde)));
    } catch (const std::exception&) {
      throw UsageError("SOURCE_DATE_EPOCH is not an integer");
    }
  }
  return iso_utc(std::time(nullptr));
}

std::vector<BookEntry> select_books(const WorkdirLayout& layout, const std::vector<std::string>& wanted) {
  auto books = read_books_index(layout.books_index());
  if (wanted.empty() || (wanted.size() == 1 && wanted[0] == "all")) return books;
  std::vector<BookEntry> out;
  for (const auto& id : wanted) {
    const auto it = std::find_if(books.begin(), books.end(), [&](const auto& b) { return b.book_id == id; });
    if (it == books.end()) throw UsageError("book " + id + " is not in " + layout.books_index().string());
    out.push_back(*it);
  }
  return out;
}

sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_stop_signal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  log("received signal " + std::to_string(sig) + ", stopping");
}

// ---- commands ---------------------------------------------------------------------------

int cmd_ingest(const CommonOptions& o, const std::string& manifest, const ChunkingConfig& chunking,
               bool allow_missing) {
  if (!fs::exists(manifest)) throw MissingInput(manifest);
  chunking.validate();
  const auto corpus = load_corpus(manifest);
  const WorkdirLayout layout{o.workdir};
  fs::create_directories(layout.chunks());

  std::vector<BookEntry> entries;
  std::size_t total = 0;
  for (const auto& book : corpus.texts) {
    const auto chunks = chunk_text(book.book_id, book.clean_text, chunking);
    write_chunks(layout.chunk_file(book.book_id), chunks);
    entries.push_back({book.book_id, book.title, book.gutenberg_id, book.metadata, chunks.size()});
    total += chunks.size();
    log("[" + book.book_id + "] " + std::to_string(utf8_length(book.clean_text)) + " chars, " +
        std::to_string(chunks.size()) + " chunks");
  }
  write_books_index(layout.books_index(), entries);
  for (const auto& err : corpus.errors) log("[" + err.book_id + "] not ingested: " + err.message);
  log("ingested " + std::to_string(entries.size()) + " books, " + std::to_string(total) + " chunks");
  if (!corpus.errors.empty() && !(allow_missing && !entries.empty())) return kExitUsage;
  return kExitOk;
}

int cmd_extract(const CommonOptions& o, const std::vector<std::string>& wanted, std::size_t jobs) {
  const WorkdirLayout layout{o.workdir};
  const auto books = select_books(layout, wanted);
  for (const auto& b : books) {
    if (!fs::exists(layout.chunk_file(b.book_id))) throw MissingInput(layout.chunk_file(b.book_id));
  }
  const auto prompts = load_prompts(o);
  auto ep = resolve_endpoints(o);
  require_endpoint(ep.extractor, "extractor");
  HttpChatModel model(ep.extractor);

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  const auto worker = [&] {
    for (std::size_t i = next++; i < books.size(); i = next++) {
      const auto& book = books[i];
      try {
        const auto chunks = read_chunks(layout.chunk_file(book.book_id));
        BookRunOptions opts;
        opts.on_chunk_done = [&](const ChunkRecord& r) {
          log("[" + book.book_id + "] chunk " + std::to_string(r.chunk.index + 1) + "/" +
              std::to_string(chunks.size()) + (r.errors.empty() ? "" : " (" + std::to_string(r.errors.size()) + " errors)"));
          return true;
        };
        const auto result =
            run_book_pipeline(book.book_id, chunks, book.metadata, layout.book_run(book.book_id), model, prompts, opts);
        std::size_t flow_chunks = 0, norms = 0, quarantined = 0;
        for (const auto& r : result.records) {
          flow_chunks += r.flow_extraction && !r.flow_extraction->flows.empty();
          norms += r.abstracted_norms.size();
          quarantined += r.quarantined_norms.size();
        }
        log("[" + book.book_id + "] done: " + std::to_string(result.records.size()) + " chunks (" +
            std::to_string(result.resumed_chunks) + " resumed), " + std::to_string(flow_chunks) +
            " with flows, " + std::to_string(norms) + " norms, " + std::to_string(quarantined) + " quarantined");
      } catch (const std::exception& e) {
        failed = true;
        log("[" + book.book_id + "] failed: " + e.what());
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, books.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return failed ? kExitRuntime : kExitOk;
}

int cmd_build_universe(const CommonOptions& o, const std::vector<std::string>& wanted, const std::string& built_at_flag) {
  const WorkdirLayout layout{o.workdir};
  const auto books = select_books(layout, wanted);
  for (const auto& b : books) {
    const auto path = layout.book_run(b.book_id).abstracted_norms();
    if (!fs::exists(path)) throw MissingInput(path);
  }
  const auto built_at = resolve_built_at(built_at_flag);
  auto ep = resolve_endpoints(o);
  require_endpoint(ep.service.embedder, "embedder");
  HttpEmbeddingModel embedder(ep.service.embedder);
  fs::create_directories(layout.universes());

  for (const auto& b : books) {
    const auto norms = load_abstracted_norms(layout.book_run(b.book_id).abstracted_norms());
    const auto nfu = layout.universes() / (b.book_id + ".nfu");
    const auto exp = layout.universes() / (b.book_id + ".json");
    if (norms.empty()) {
      fs::remove(nfu);
      fs::remove(exp);
      log("[" + b.book_id + "] no norms, universe skipped");
      continue;
    }
    const auto u = build_universe(b.book_id, norms, embedder, built_at);
    save_universe(u, nfu);
    write_file_atomic(exp, dump_pretty(universe_export_json(u)) + "\n");
    log("[" + b.book_id + "] universe of " + std::to_string(u.norms.size()) + " norms, dim " +
        std::to_string(u.embedding_dim));
  }
  return kExitOk;
}

int cmd_dataset(const CommonOptions& o, double ratio, std::uint64_t seed, const std::string& splits_spec) {
  const WorkdirLayout layout{o.workdir};
  const auto books = select_books(layout, {});
  const auto fractions = parse_split_fractions(splits_spec);
  std::vector<ChunkRecord> records;
  for (const auto& b : books) {
    const auto path = layout.book_run(b.book_id).records();
    if (!fs::exists(path)) throw MissingInput(path);
    auto r = load_records(path);
    records.insert(records.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  const auto prompts = load_prompts(o);
  const auto sft = build_sft_pairs(records, prompts);
  const auto balanced = downsample_no_flow(sft.pairs, ratio, seed);
  for (const auto& w : balanced.warnings) log("warning: " + w);

  const auto out_dir = layout.dataset();
  auto manifest = export_splits(balanced.pairs, fractions, seed, out_dir);
  write_grpo_prompts(balanced.pairs, out_dir / "grpo_prompts.jsonl");

  const auto count_flow = [](const std::vector<TrainingPair>& v) {
    return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](const auto& p) { return !p.is_no_flow; }));
  };
  ojson ds;
  ds["ratio"] = ratio;
  ds["records"] = records.size();
  ds["skipped_records"] = sft.skipped;
  ds["pairs_before"] = sft.pairs.size();
  ds["flow_before"] = count_flow(sft.pairs);
  ds["no_flow_before"] = sft.pairs.size() - count_flow(sft.pairs);
  ds["warnings"] = balanced.warnings;
  manifest["downsample"] = ds;
  manifest["grpo_prompts"] = "grpo_prompts.jsonl";
  manifest["prompt_fingerprint"] = prompts.fingerprint();
  write_file_atomic(out_dir / "manifest.json", dump_pretty(manifest) + "\n");
  log("dataset: " + std::to_string(balanced.pairs.size()) + " pairs (" + std::to_string(count_flow(balanced.pairs)) +
      " with flows) from " + std::to_string(records.size()) + " records, " + std::to_string(sft.skipped) + " skipped");
  return kExitOk;
}

std::unique_ptr<RewardService> make_service(const CommonOptions& o, Endpoints& ep) {
  require_endpoint(ep.service.judge, "judge");
  require_endpoint(ep.service.embedder, "embedder");
  auto data = load_scoring_data(WorkdirLayout{o.workdir});
  Gateway g;
  g.judge = std::make_shared<HttpChatModel>(ep.service.judge);
  g.embedder = std::make_shared<HttpEmbeddingModel>(ep.service.embedder);
  if (!fs::is_directory(ep.service.prompt_dir)) throw MissingInput(ep.service.prompt_dir);
  auto prompts = PromptSet::load(ep.service.prompt_dir);
  log("loaded " + std::to_string(data.chunks.size()) + " chunks, " + std::to_string(data.universes.size()) +
      " universes");
  return std::make_unique<RewardService>(ep.service, std::move(data), std::move(g), std::move(prompts));
}

int cmd_score(const CommonOptions& o, const std::string& requests, const std::string& out,
              std::optional<std::uint64_t> seed) {
  if (!fs::exists(requests)) throw MissingInput(requests);
  auto ep = resolve_endpoints(o);
  if (seed) ep.service.default_seed = *seed;
  auto svc = make_service(o, ep);
  const auto summary = score_batch_offline(*svc, requests, out);
  log("scored " + std::to_string(summary.scored) + ", errors " + std::to_string(summary.errors) + ", skipped " +
      std::to_string(summary.skipped));
  return kExitOk;
}

int cmd_serve(const CommonOptions& o, const std::string& host, std::optional<int> port) {
  const auto signals = block_stop_signals();
  auto ep = resolve_endpoints(o);
  if (!host.empty()) ep.service.host = host;
  if (port) ep.service.port = *port;
  auto svc = make_service(o, ep);
  const int bound = svc->start();
  log("reward service listening on http://" + ep.service.host + ":" + std::to_string(bound) + "/v1");
  wait_for_stop_signal(signals);
  svc->stop();
  return kExitOk;
}

int cmd_stats(const CommonOptions& o, const std::string& universes_dir) {
  const WorkdirLayout layout{o.workdir};
  const fs::path dir = universes_dir.empty() ? layout.universes() : fs::path(universes_dir);
  if (!fs::is_directory(dir)) throw MissingInput(dir);
  const auto universes = load_universes(dir);
  if (universes.empty()) throw MissingInput(dir / "*.nfu");
  const auto report = universe_stats_report(universes);
  fs::create_directories(layout.stats());
  write_file_atomic(layout.stats() / "universe_stats.json", dump_pretty(report.json) + "\n");
  write_file_atomic(layout.stats() / "universe_stats.txt", report.text);
  log(report.text);
  return kExitOk;
}

int cmd_stub(const CommonOptions& o, const std::string& host, int port, std::size_t dim) {
  const auto signals = block_stop_signals();
  StubOptions so;
  so.prompt_dir = prompt_dir_of(o);
  so.embedding_dim = dim;
  StubServer stub(so);
  stub.start(host.empty() ? "127.0.0.1" : host, port);
  log("stub endpoint at " + stub.base_url());
  wait_for_stop_signal(signals);
  stub.stop();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"normforge: normative simulacra extraction and reward scoring"};
  app.require_subcommand(1);
  app.fallthrough();
  CommonOptions common;
  app.add_option("-w,--workdir", common.workdir, "Work directory")->capture_default_str();
  app.add_option("--config", common.config, "JSON config with endpoints and reward settings");
  app.add_option("--base-url", common.base_url, "Base URL for every model endpoint");
  app.add_option("--model", common.model, "Model name for every endpoint");
  app.add_option("--prompt-dir", common.prompt_dir, "Prompt template directory");
  app.add_flag("--stub", common.stub, "Serve models from an in-process deterministic stub");

  auto* ingest = app.add_subcommand("ingest", "Strip and chunk the corpus");
  std::string manifest;
  ChunkingConfig chunking;
  bool allow_missing = false;
  ingest->add_option("-m,--manifest", manifest, "Corpus manifest")->required();
  ingest->add_option("--chunk-size", chunking.chunk_size)->capture_default_str();
  ingest->add_option("--overlap", chunking.overlap)->capture_default_str();
  ingest->add_flag("--allow-missing", allow_missing, "Succeed when some books could not be read");

  std::vector<std::string> books;
  auto* extract = app.add_subcommand("extract", "Run flow and norm extraction");
  std::size_t jobs = 1;
  extract->add_option("-b,--book", books, "Book ids (default all)");
  extract->add_option("-j,--jobs", jobs, "Books processed in parallel")->capture_default_str();

  auto* build = app.add_subcommand("build-universe", "Embed abstracted norms into per-book universes");
  std::string built_at;
  build->add_option("-b,--book", books, "Book ids (default all)");
  build->add_option("--built-at", built_at, "Timestamp recorded in the universe (default SOURCE_DATE_EPOCH or now)");

  auto* dataset = app.add_subcommand("dataset", "Build SFT pairs and GRPO prompts");
  double ratio = 1.0;
  std::uint64_t seed = 0;
  std::string splits = "train=0.9,val=0.1";
  dataset->add_option("--ratio", ratio, "No-flow to flow ratio")->check(CLI::PositiveNumber)->capture_default_str();
  dataset->add_option("--seed", seed)->capture_default_str();
  dataset->add_option("--splits", splits)->capture_default_str();

  auto* score = app.add_subcommand("score", "Score a JSONL file of score requests");
  std::string requests, out;
  std::optional<std::uint64_t> score_seed;
  score->add_option("-r,--requests", requests)->required();
  score->add_option("-o,--out", out)->required();
  score->add_option("--seed", score_seed, "Default seed for requests without one");

  auto* serve = app.add_subcommand("serve", "Run the reward service");
  std::string host;
  std::optional<int> port;
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  auto* stats = app.add_subcommand("stats", "Report universe statistics");
  std::string universes_dir;
  stats->add_option("--universes", universes_dir, "Universe directory (default <workdir>/universes)");

  auto* stub = app.add_subcommand("stub", "Run the deterministic stub model endpoint");
  std::string stub_host = "127.0.0.1";
  int stub_port = 8000;
  std::size_t stub_dim = 64;
  stub->add_option("--host", stub_host)->capture_default_str();
  stub->add_option("--port", stub_port)->capture_default_str();
  stub->add_option("--embedding-dim", stub_dim)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(common, manifest, chunking, allow_missing);
    if (*extract) return cmd_extract(common, books, jobs);
    if (*build) return cmd_build_universe(common, books, built_at);
    if (*dataset) return cmd_dataset(common, ratio, seed, splits);
    if (*score) return cmd_score(common, requests, out, score_seed);
    if (*serve) return cmd_serve(common, host, port);
    if (*stats) return cmd_stats(common, universes_dir);
    if (*stub) return cmd_stub(common, stub_host, stub_port, stub_dim);
  } catch (const MissingInput& e) {
    log(std::string("error: ") + e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    log(std::string("error: ") + e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    log(std::string("error: ") + e.what());
    return kExitUsage;
  } catch (const InvalidFractions& e) {
    log(std::string("error: ") + e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  std::vector<char*> argv;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(copy.size()), argv.data());
}

}  // namespace normforge
