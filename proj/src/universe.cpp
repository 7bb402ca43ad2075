#include "normforge/universe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "normforge/util.hpp"

namespace normforge {

using nlohmann::json;

void RetrievalConfig::validate() const {
  if (k < 1) throw std::invalid_argument("retrieval k must be at least 1");
}

std::string context_text(const RazNorm& norm) {
  const auto t = trim(norm.context);
  return t.empty() ? std::string("unspecified") : std::string(t);
}

std::string context_key(const RazNorm& norm) { return to_lower_ascii(context_text(norm)); }

double shannon_entropy_bits(const std::map<std::string, std::size_t>& histogram) {
  std::size_t total = 0;
  for (const auto& [k, c] : histogram) total += c;
  if (total == 0) return 0.0;
  double h = 0.0;
  for (const auto& [k, c] : histogram) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h += p * std::log2(1.0 / p);
  }
  return h;
}

UniverseStats compute_stats(const std::vector<AbstractedNorm>& norms) {
  UniverseStats s;
  for (auto f : kAllForces) s.deontic_histogram[std::string(to_string(f))] = 0;
  std::size_t governs = 0;
  for (const auto& n : norms) {
    ++s.deontic_histogram[std::string(to_string(n.norm.normative_force))];
    ++s.context_histogram[context_key(n.norm)];
    governs += n.norm.governs_information_flow;
  }
  s.context_entropy_bits = shannon_entropy_bits(s.context_histogram);
  s.governs_flow_fraction = norms.empty() ? 0.0 : static_cast<double>(governs) / static_cast<double>(norms.size());
  return s;
}

NormativeUniverse build_universe(const std::string& book_id, const std::vector<AbstractedNorm>& norms,
                                 EmbeddingModel& embedder, const std::string& built_at) {
  if (norms.empty()) throw UniverseError("cannot build a universe for " + book_id + " without norms");
  std::vector<std::string> articulations, contexts;
  for (const auto& n : norms) {
    articulations.push_back(n.norm.norm_articulation);
    contexts.push_back(context_text(n.norm));
  }
  std::vector<Embedding> a, c;
  try {
    a = embedder.embed_batch(articulations);
    c = embedder.embed_batch(contexts);
  } catch (const std::exception& e) {
    throw EmbeddingFailure("embedding failed while building " + book_id + ": " + e.what());
  }

  NormativeUniverse u;
  u.book_id = book_id;
  u.built_at = built_at;
  u.embedding_dim = a.front().size();
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (a[i].size() != u.embedding_dim || c[i].size() != u.embedding_dim) {
      throw EmbeddingFailure("embedding dimensions differ within " + book_id);
    }
    u.norms.push_back({norms[i], std::move(a[i]), std::move(c[i])});
  }
  u.stats = compute_stats(norms);
  return u;
}

// ---- persistence -----------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'F', 'U', 'N', 'I', 'V', '0', '1'};

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_float(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string where) : data_(data), where_(std::move(where)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw UniverseError(where_ + ": truncated universe file");
  }
  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  float get_float() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

ojson stats_json(const UniverseStats& s) {
  ojson j;
  ojson deontic;
  for (auto f : kAllForces) deontic[std::string(to_string(f))] = s.deontic_histogram.at(std::string(to_string(f)));
  j["deontic_histogram"] = deontic;
  j["context_histogram"] = s.context_histogram;
  j["context_entropy_bits"] = s.context_entropy_bits;
  j["governs_flow_fraction"] = s.governs_flow_fraction;
  return j;
}

}  // namespace

ojson universe_export_json(const NormativeUniverse& u) {
  ojson j;
  j["book_id"] = u.book_id;
  j["schema_version"] = kUniverseFormatVersion;
  j["built_at"] = u.built_at;
  j["embedding_dim"] = u.embedding_dim;
  j["norm_count"] = u.norms.size();
  j["stats"] = stats_json(u.stats);
  j["norms"] = ojson::array();
  for (const auto& r : u.norms) j["norms"].push_back(to_json(r.norm));
  return j;
}

void save_universe(const NormativeUniverse& u, const std::filesystem::path& path) {
  const auto meta = dump_line(universe_export_json(u));
  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kUniverseFormatVersion);
  put_le<std::uint64_t>(out, meta.size());
  out += meta;
  for (const auto& r : u.norms) {
    for (float f : r.embedding) put_float(out, f);
  }
  for (const auto& r : u.norms) {
    for (float f : r.context_embedding) put_float(out, f);
  }
  write_file_atomic(path, out);
}

NormativeUniverse load_universe(const std::filesystem::path& path) {
  const auto data = read_file(path);
  ByteReader in(data, path.string());
  if (in.get_bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw UniverseError(path.string() + " is not a universe file");
  }
  const auto version = in.get_le<std::uint32_t>();
  if (version != kUniverseFormatVersion) {
    throw UniverseError(path.string() + ": unsupported universe format version " + std::to_string(version));
  }
  const auto meta_len = in.get_le<std::uint64_t>();
  json meta;
  try {
    meta = json::parse(in.get_bytes(meta_len));
  } catch (const json::exception& e) {
    throw UniverseError(path.string() + ": unreadable metadata: " + e.what());
  }

  NormativeUniverse u;
  u.book_id = meta.at("book_id").get<std::string>();
  u.built_at = meta.at("built_at").get<std::string>();
  u.embedding_dim = meta.at("embedding_dim").get<std::size_t>();
  std::vector<AbstractedNorm> norms;
  for (const auto& n : meta.at("norms")) norms.push_back(abstracted_norm_from_json(n));
  for (auto& n : norms) {
    NormRecord r;
    r.norm = std::move(n);
    r.embedding.resize(u.embedding_dim);
    u.norms.push_back(std::move(r));
  }
  for (auto& r : u.norms) {
    for (auto& f : r.embedding) f = in.get_float();
  }
  for (auto& r : u.norms) {
    r.context_embedding.resize(u.embedding_dim);
    for (auto& f : r.context_embedding) f = in.get_float();
  }
  if (!in.at_end()) throw UniverseError(path.string() + ": trailing bytes after embeddings");
  std::vector<AbstractedNorm> plain;
  for (const auto& r : u.norms) plain.push_back(r.norm);
  u.stats = compute_stats(plain);
  return u;
}

std::vector<NormativeUniverse> load_universes(const std::filesystem::path& dir) {
  std::vector<NormativeUniverse> out;
  if (!std::filesystem::is_directory(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".nfu") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(load_universe(f));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.book_id < b.book_id; });
  return out;
}

// ---- queries -------------------------------------------------------------------------------

namespace {

double dot(const Embedding& a, const Embedding& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace

std::vector<Retrieved> retrieve_top_k(const NormativeUniverse& u, const Embedding& query, const RetrievalConfig& cfg) {
  cfg.validate();
  if (query.size() != u.embedding_dim) {
    throw DimensionMismatch("query has dimension " + std::to_string(query.size()) + ", universe " + u.book_id +
                            " has " + std::to_string(u.embedding_dim));
  }
  std::vector<Retrieved> all;
  all.reserve(u.norms.size());
  for (std::size_t i = 0; i < u.norms.size(); ++i) all.push_back({i, dot(query, u.norms[i].embedding)});
  const auto k = std::min(cfg.k, all.size());
  const auto better = [](const Retrieved& a, const Retrieved& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.index < b.index;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

double context_max_similarity(const NormativeUniverse& u, const Embedding& query) {
  if (u.norms.empty()) throw UniverseError("universe " + u.book_id + " is empty");
  if (query.size() != u.embedding_dim) {
    throw DimensionMismatch("context query has dimension " + std::to_string(query.size()) + ", universe " +
                            u.book_id + " has " + std::to_string(u.embedding_dim));
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : u.norms) best = std::max(best, dot(query, r.context_embedding));
  return best;
}

double context_max_similarity(const NormativeUniverse& u, const std::string& stated_context,
                              EmbeddingModel& embedder) {
  Embedding q;
  try {
    q = embedder.embed(stated_context);
  } catch (const std::exception& e) {
    throw EmbeddingFailure(std::string("cannot embed context: ") + e.what());
  }
  return context_max_similarity(u, q);
}

const NormativeUniverse& sample_wrong_universe(const std::vector<NormativeUniverse>& all,
                                               const std::string& correct_book_id, std::uint64_t seed) {
  std::vector<const NormativeUniverse*> candidates;
  for (const auto& u : all) {
    if (u.book_id != correct_book_id) candidates.push_back(&u);
  }
  if (candidates.empty()) throw OnlyOneUniverse("no universe other than " + correct_book_id + " is loaded");
  std::mt19937_64 rng(seed);
  return *candidates[rng() % candidates.size()];
}

std::vector<double> centroid(const NormativeUniverse& u) {
  std::vector<double> c(u.embedding_dim, 0.0);
  for (const auto& r : u.norms) {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += r.embedding[i];
  }
  double norm = 0.0;
  for (double x : c) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& x : c) x /= norm;
  }
  return c;
}

// ---- report ------------------------------------------------------------------------------

StatsReport universe_stats_report(const std::vector<NormativeUniverse>& universes) {
  StatsReport report;
  ojson books = ojson::array();
  std::ostringstream text;
  text.setf(std::ios::fixed);
  text.precision(3);

  text << "book                      norms  entropy  governs";
  for (auto f : kAllForces) text << "  " << to_string(f).substr(0, 5);
  text << "\n";

  for (const auto& u : universes) {
    const auto n = u.norms.size();
    ojson b;
    b["book_id"] = u.book_id;
    b["norm_count"] = n;
    ojson dist;
    for (auto f : kAllForces) {
      const auto c = u.stats.deontic_histogram.at(std::string(to_string(f)));
      dist[std::string(to_string(f))] = n == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(n);
    }
    b["deontic_distribution"] = dist;
    b["deontic_histogram"] = stats_json(u.stats)["deontic_histogram"];
    b["distinct_contexts"] = u.stats.context_histogram.size();
    b["context_entropy_bits"] = u.stats.context_entropy_bits;
    b["governs_flow_fraction"] = u.stats.governs_flow_fraction;
    books.push_back(std::move(b));

    std::string name = u.book_id;
    name.resize(std::max<std::size_t>(name.size(), 24), ' ');
    text << name << "  " << std::setw(5) << n << "  " << std::setw(7) << u.stats.context_entropy_bits << "  "
         << std::setw(7) << u.stats.governs_flow_fraction;
    for (auto f : kAllForces) {
      const auto c = u.stats.deontic_histogram.at(std::string(to_string(f)));
      text << "  " << std::setw(5) << (n == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(n));
    }
    text << "\n";
  }

  std::vector<std::vector<double>> centroids;
  for (const auto& u : universes) centroids.push_back(centroid(u));
  ojson ids = ojson::array();
  ojson matrix = ojson::array();
  for (std::size_t i = 0; i < universes.size(); ++i) {
    ids.push_back(universes[i].book_id);
    ojson row = ojson::array();
    for (std::size_t j = 0; j < universes.size(); ++j) {
      double s = 0.0;
      if (centroids[i].size() == centroids[j].size()) {
        for (std::size_t d = 0; d < centroids[i].size(); ++d) s += centroids[i][d] * centroids[j][d];
      }
      row.push_back(s);
    }
    matrix.push_back(std::move(row));
  }

  text << "\ncentroid cosine similarity\n";
  for (std::size_t i = 0; i < universes.size(); ++i) {
    text << std::setw(3) << i << " " << universes[i].book_id << "\n";
  }
  text << "   ";
  for (std::size_t j = 0; j < universes.size(); ++j) text << std::setw(7) << j;
  text << "\n";
  for (std::size_t i = 0; i < universes.size(); ++i) {
    text << std::setw(3) << i;
    for (std::size_t j = 0; j < universes.size(); ++j) text << std::setw(7) << matrix[i][j].get<double>();
    text << "\n";
  }

  report.json["books"] = std::move(books);
  report.json["centroid_similarity"] = {{"book_ids", ids}, {"matrix", matrix}};
  report.text = text.str();
  return report;
}

}  // namespace normforge
