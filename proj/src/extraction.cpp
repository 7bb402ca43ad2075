#include "normforge/extraction.hpp"

#include <iostream>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

// ---- records ---------------------------------------------------------------------

namespace {

template <typename T>
ojson optional_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  if constexpr (std::is_same_v<T, std::string>) return *v;
  else return to_json(*v);
}

NormExtraction norm_extraction_from_json(const json& j) { return validate_norm_extraction(dump_line(j)); }

std::string tagged(std::string_view stage, const std::string& message) { return std::string(stage) + ": " + message; }

}  // namespace

ojson to_json(const ChunkRecord& r) {
  ojson j;
  j["chunk"] = to_json(r.chunk);
  j["flow_reasoning"] = optional_json(r.flow_reasoning);
  j["flow_extraction"] = optional_json(r.flow_extraction);
  j["norm_reasoning"] = optional_json(r.norm_reasoning);
  j["norm_extraction"] = optional_json(r.norm_extraction);
  j["abstracted_norms"] = ojson::array();
  for (const auto& n : r.abstracted_norms) j["abstracted_norms"].push_back(to_json(n));
  j["quarantined_norms"] = ojson::array();
  for (const auto& n : r.quarantined_norms) j["quarantined_norms"].push_back(to_json(n));
  j["errors"] = r.errors;
  return j;
}

ChunkRecord chunk_record_from_json(const json& j) {
  ChunkRecord r;
  r.chunk = chunk_from_json(j.at("chunk"));
  if (j.contains("flow_reasoning") && j["flow_reasoning"].is_string()) r.flow_reasoning = j["flow_reasoning"];
  if (j.contains("flow_extraction") && j["flow_extraction"].is_object()) {
    r.flow_extraction = parse_flow_extraction(j["flow_extraction"]);
  }
  if (j.contains("norm_reasoning") && j["norm_reasoning"].is_string()) r.norm_reasoning = j["norm_reasoning"];
  if (j.contains("norm_extraction") && j["norm_extraction"].is_object()) {
    r.norm_extraction = norm_extraction_from_json(j["norm_extraction"]);
  }
  for (const auto& n : j.value("abstracted_norms", json::array())) r.abstracted_norms.push_back(abstracted_norm_from_json(n));
  for (const auto& n : j.value("quarantined_norms", json::array())) r.quarantined_norms.push_back(parse_raz_norm(n));
  r.errors = j.value("errors", std::vector<std::string>{});
  return r;
}

ojson to_json(const GoldLabel& g) {
  ojson j;
  j["chunk_id"] = g.chunk_id;
  j["has_flows"] = g.has_flows;
  j["flow_count"] = g.flow_count;
  return j;
}

GoldLabel gold_label_from_json(const json& j) {
  GoldLabel g;
  g.chunk_id = j.at("chunk_id").get<std::string>();
  g.has_flows = j.at("has_flows").get<bool>();
  g.flow_count = j.at("flow_count").get<std::size_t>();
  if (g.has_flows != (g.flow_count > 0)) throw std::runtime_error("gold label " + g.chunk_id + " is inconsistent");
  return g;
}

std::optional<GoldLabel> gold_label_for(const ChunkRecord& r) {
  if (!r.flow_extraction) return std::nullopt;
  const auto n = r.flow_extraction->flows.size();
  return GoldLabel{r.chunk.chunk_id, n > 0, n};
}

// ---- stages ------------------------------------------------------------------------

FlowStageResult run_flow_stage(const Chunk& chunk, ChatModel& model, const PromptSet& prompts) {
  FlowStageResult out;
  const auto& p1 = prompts.get(PromptRole::flow_reasoning);
  FlowReasoning stage1;
  try {
    CompletionRequest req{p1.system.text(), p1.user.render({{"article_text", chunk.text}}), flow_reasoning_schema(),
                          "flow_reasoning"};
    const auto text = strip_think_blocks(model.complete_structured(req));
    stage1 = validate_flow_reasoning(text);
    out.reasoning = text;
  } catch (const std::exception& e) {
    out.errors.push_back(tagged("flow_reasoning", e.what()));
    return out;
  }

  FlowExtraction fe;
  fe.reasoning = stage1.reasoning;
  if (!stage1.has_information_exchange || stage1.flows.empty()) {
    fe.has_information_exchange = false;
    out.extraction = std::move(fe);
    return out;
  }

  const auto& p2 = prompts.get(PromptRole::flow_extraction);
  for (std::size_t i = 0; i < stage1.flows.size(); ++i) {
    try {
      const auto trace = dump_pretty(to_json(stage1.flows[i]));
      CompletionRequest req{p2.system.text(),
                            p2.user.render({{"article_text", chunk.text}, {"reasoning_trace", trace}}),
                            information_flow_schema(), "information_flow"};
      fe.flows.push_back(validate_information_flow(strip_think_blocks(model.complete_structured(req))));
    } catch (const std::exception& e) {
      out.errors.push_back(tagged("flow_extraction[" + std::to_string(i) + "]", e.what()));
    }
  }
  // Every announced flow failed: the chunk has no usable extraction.
  if (fe.flows.empty()) return out;
  fe.has_information_exchange = true;
  out.extraction = std::move(fe);
  return out;
}

NormStageResult run_norm_stage(const Chunk& chunk, const BookMetadata& meta, ChatModel& model,
                               const PromptSet& prompts) {
  NormStageResult out;
  const std::string book_context = meta.book_context.empty() ? "" : meta.book_context + "\n\n";
  const auto& p1 = prompts.get(PromptRole::norm_reasoning);
  NormReasoning stage1;
  try {
    CompletionRequest req{p1.system.text(),
                          p1.user.render({{"book_context", book_context}, {"article_text", chunk.text}}),
                          norm_reasoning_schema(), "norm_reasoning"};
    const auto text = strip_think_blocks(model.complete_structured(req));
    stage1 = validate_norm_reasoning(text);
    out.reasoning = text;
  } catch (const std::exception& e) {
    out.errors.push_back(tagged("norm_reasoning", e.what()));
    return out;
  }
  if (!stage1.has_prescriptive_content || stage1.norms.empty()) {
    out.extraction = NormExtraction{false, {}};
    return out;
  }

  const auto& p2 = prompts.get(PromptRole::norm_extraction);
  try {
    CompletionRequest req{p2.system.text(),
                          p2.user.render({{"book_context", book_context},
                                          {"article_text", chunk.text},
                                          {"reasoning_trace", dump_pretty(to_json(stage1))}}),
                          norm_extraction_schema(), "norm_extraction"};
    out.extraction = validate_norm_extraction(strip_think_blocks(model.complete_structured(req)));
  } catch (const std::exception& e) {
    out.errors.push_back(tagged("norm_extraction", e.what()));
  }
  return out;
}

// ---- abstraction ---------------------------------------------------------------------

std::optional<std::vector<std::string>> detect_quality_flags(const RazNorm& norm,
                                                             const std::vector<std::string>& lexicon) {
  const std::pair<const char*, std::string> fields[] = {
      {"norm_subject", norm.norm_subject},
      {"norm_act", norm.norm_act},
      {"condition_of_application", norm.condition_of_application.value_or("")},
      {"norm_articulation", norm.norm_articulation},
  };
  std::vector<std::string> flagged;
  for (const auto& [name, value] : fields) {
    for (const auto& entry : lexicon) {
      if (contains_word(value, entry)) {
        flagged.emplace_back(name);
        break;
      }
    }
  }
  if (flagged.empty()) return std::nullopt;
  return flagged;
}

AbstractedNorm abstract_norm(const RazNorm& norm, const BookMetadata& meta, const std::string& chunk_text,
                             ChatModel& model, const PromptSet& prompts) {
  auto flags = detect_quality_flags(norm, meta.character_lexicon);
  if (!flags) return AbstractedNorm{norm, std::nullopt, "No character names found; kept as extracted."};

  const auto& p = prompts.get(PromptRole::norm_abstraction);
  std::string last_problem;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      CompletionRequest req{
          p.system.text(),
          p.user.render({{"book_summary", meta.book_summary},
                         {"article_text", chunk_text},
                         {"prescriptive_element", norm.prescriptive_element},
                         {"norm_subject", norm.norm_subject},
                         {"norm_act", norm.norm_act},
                         {"condition_of_application", norm.condition_of_application.value_or("null")},
                         {"normative_force", std::string(to_string(norm.normative_force))},
                         {"norm_articulation", norm.norm_articulation},
                         {"context", norm.context},
                         {"quality_flags", dump_line(json(*flags))}}),
          abstraction_rewrite_schema(), "abstraction_rewrite"};
      const auto rewrite = validate_abstraction_rewrite(strip_think_blocks(model.complete_structured(req)));
      RazNorm out = norm;
      out.norm_subject = rewrite.norm_subject;
      out.norm_act = rewrite.norm_act;
      out.condition_of_application = rewrite.condition_of_application;
      out.norm_articulation = rewrite.norm_articulation;
      check_norm_invariants(out);
      if (auto still = detect_quality_flags(out, meta.character_lexicon)) {
        std::string fields;
        for (const auto& f : *still) fields += (fields.empty() ? "" : ", ") + f;
        last_problem = "rewrite still names a character in " + fields;
        continue;
      }
      return AbstractedNorm{out, std::nullopt, rewrite.role_rationale};
    } catch (const std::exception& e) {
      last_problem = e.what();
    }
  }
  throw AbstractionFailed("abstraction failed after retry: " + last_problem, *flags);
}

// ---- book runs ---------------------------------------------------------------------------

namespace {

ChunkRecord process_chunk(const Chunk& chunk, const BookMetadata& meta, ChatModel& model, const PromptSet& prompts) {
  ChunkRecord rec;
  rec.chunk = chunk;

  auto flows = run_flow_stage(chunk, model, prompts);
  rec.flow_reasoning = std::move(flows.reasoning);
  rec.flow_extraction = std::move(flows.extraction);
  rec.errors.insert(rec.errors.end(), flows.errors.begin(), flows.errors.end());

  auto norms = run_norm_stage(chunk, meta, model, prompts);
  rec.norm_reasoning = std::move(norms.reasoning);
  rec.norm_extraction = std::move(norms.extraction);
  rec.errors.insert(rec.errors.end(), norms.errors.begin(), norms.errors.end());

  if (rec.norm_extraction) {
    for (std::size_t i = 0; i < rec.norm_extraction->norms.size(); ++i) {
      const auto& norm = rec.norm_extraction->norms[i];
      try {
        rec.abstracted_norms.push_back(abstract_norm(norm, meta, chunk.text, model, prompts));
      } catch (const AbstractionFailed& e) {
        rec.quarantined_norms.push_back(norm);
        rec.errors.push_back(tagged("norm_abstraction[" + std::to_string(i) + "]", e.what()));
      }
    }
  }
  return rec;
}

std::filesystem::path checkpoint_dir(const BookRunPaths& paths) { return paths.dir / "checkpoint"; }

std::filesystem::path checkpoint_file(const BookRunPaths& paths, const Chunk& c) {
  return checkpoint_dir(paths) / (c.chunk_id + ".json");
}

void require_same_chunk(const ChunkRecord& rec, const Chunk& chunk, const std::filesystem::path& where) {
  if (!(rec.chunk == chunk)) {
    throw std::runtime_error("existing record for " + chunk.chunk_id + " in " + where.string() +
                             " was produced from different chunks; remove it to start over");
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<ojson>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += dump_line(row);
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_book_outputs(const std::string& book_id, const BookRunPaths& paths, const BookRunResult& result) {
  std::vector<ojson> records, flows, norms, abstracted, gold, quarantine;
  for (const auto& r : result.records) {
    records.push_back(to_json(r));
    const auto& id = r.chunk.chunk_id;
    if (r.flow_extraction) {
      for (std::size_t i = 0; i < r.flow_extraction->flows.size(); ++i) {
        ojson row;
        row["chunk_id"] = id;
        row["book_id"] = book_id;
        row["flow_index"] = i;
        row["flow"] = to_json(r.flow_extraction->flows[i]);
        flows.push_back(std::move(row));
      }
    }
    if (r.norm_extraction) {
      for (std::size_t i = 0; i < r.norm_extraction->norms.size(); ++i) {
        ojson row;
        row["chunk_id"] = id;
        row["book_id"] = book_id;
        row["norm_index"] = i;
        row["norm"] = to_json(r.norm_extraction->norms[i]);
        norms.push_back(std::move(row));
      }
    }
    for (const auto& n : r.abstracted_norms) {
      ojson row;
      row["chunk_id"] = id;
      row["book_id"] = book_id;
      row["norm"] = to_json(n);
      abstracted.push_back(std::move(row));
    }
    for (const auto& n : r.quarantined_norms) {
      ojson row;
      row["chunk_id"] = id;
      row["book_id"] = book_id;
      row["norm"] = to_json(n);
      quarantine.push_back(std::move(row));
    }
  }
  for (const auto& g : result.gold_labels) gold.push_back(to_json(g));
  write_jsonl(paths.flows(), flows);
  write_jsonl(paths.norms(), norms);
  write_jsonl(paths.abstracted_norms(), abstracted);
  write_jsonl(paths.gold_labels(), gold);
  write_jsonl(paths.quarantine(), quarantine);
  // records.jsonl last: its presence marks a finished book.
  write_jsonl(paths.records(), records);
}

}  // namespace

BookRunResult run_book_pipeline(const std::string& book_id, const std::vector<Chunk>& chunks,
                                const BookMetadata& meta, const BookRunPaths& paths, ChatModel& model,
                                const PromptSet& prompts, const BookRunOptions& opts) {
  BookRunResult result;

  // A finished run: reuse it as long as it was built from the same chunks.
  if (std::filesystem::exists(paths.records())) {
    auto done = load_records(paths.records());
    if (done.size() == chunks.size()) {
      for (std::size_t i = 0; i < chunks.size(); ++i) require_same_chunk(done[i], chunks[i], paths.records());
      result.records = std::move(done);
      result.resumed_chunks = chunks.size();
    }
  }

  if (result.records.empty()) {
    // Contiguous prefix of checkpointed chunks from an interrupted run.
    for (const auto& chunk : chunks) {
      const auto file = checkpoint_file(paths, chunk);
      if (!std::filesystem::exists(file)) break;
      auto rec = chunk_record_from_json(json::parse(read_file(file)));
      require_same_chunk(rec, chunk, file);
      result.records.push_back(std::move(rec));
    }
    result.resumed_chunks = result.records.size();

    for (std::size_t i = result.records.size(); i < chunks.size(); ++i) {
      auto rec = process_chunk(chunks[i], meta, model, prompts);
      write_file_atomic(checkpoint_file(paths, chunks[i]), dump_line(to_json(rec)));
      result.records.push_back(std::move(rec));
      if (opts.on_chunk_done && !opts.on_chunk_done(result.records.back())) return result;
    }
  }

  for (const auto& r : result.records) {
    if (auto g = gold_label_for(r)) result.gold_labels.push_back(*g);
  }
  write_book_outputs(book_id, paths, result);
  std::filesystem::remove_all(checkpoint_dir(paths));
  return result;
}

std::vector<ChunkRecord> load_records(const std::filesystem::path& records_file) {
  std::vector<ChunkRecord> out;
  if (!std::filesystem::exists(records_file)) return out;
  for (const auto& line : read_lines(records_file)) {
    if (trim(line).empty()) continue;
    out.push_back(chunk_record_from_json(json::parse(line)));
  }
  return out;
}

std::vector<GoldLabel> load_gold_labels(const std::filesystem::path& path) {
  std::vector<GoldLabel> out;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    out.push_back(gold_label_from_json(json::parse(line)));
  }
  return out;
}

std::vector<AbstractedNorm> load_abstracted_norms(const std::filesystem::path& path) {
  std::vector<AbstractedNorm> out;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    const auto j = json::parse(line);
    out.push_back(abstracted_norm_from_json(j.contains("norm") ? j["norm"] : j));
  }
  return out;
}

}  // namespace normforge
