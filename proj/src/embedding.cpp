#include "ragcfg/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>

#include "http_client.hpp"
#include "ragcfg/error.hpp"
#include "ragcfg/random.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

using nlohmann::json;

std::string to_string(const TruncationSpec& spec) {
  return std::string(spec.mode == TruncationMode::kTokenBudget ? "token:" : "sentence:") +
         std::to_string(spec.budget);
}

TruncationSpec parse_truncation(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorKind::kValidation, "embedding", "truncation must be mode:budget, got " + s);
  }
  TruncationSpec spec;
  const std::string mode = text::to_lower(s.substr(0, colon));
  if (mode == "token" || mode == "token_budget") {
    spec.mode = TruncationMode::kTokenBudget;
  } else if (mode == "sentence" || mode == "sentence_wise") {
    spec.mode = TruncationMode::kSentenceWise;
  } else {
    throw Error(ErrorKind::kValidation, "embedding", "unknown truncation mode " + mode);
  }
  try {
    spec.budget = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorKind::kValidation, "embedding", "bad truncation budget in " + s);
  }
  if (spec.budget < 1) throw Error(ErrorKind::kValidation, "embedding", "budget must be >= 1");
  return spec;
}

void to_json(json& j, const TruncationSpec& spec) { j = to_string(spec); }
void from_json(const json& j, TruncationSpec& spec) { spec = parse_truncation(j.get<std::string>()); }

namespace {

std::vector<std::string> raw_tokens(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, size_t n) {
  std::string out;
  for (size_t i = 0; i < n && i < parts.size(); ++i) {
    if (i) out += ' ';
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string truncate(const std::string& text, const TruncationSpec& spec) {
  if (spec.budget < 1) throw Error(ErrorKind::kValidation, "embedding", "budget must be >= 1");
  if (text.empty()) return text;
  const auto budget = static_cast<size_t>(spec.budget);
  if (spec.mode == TruncationMode::kTokenBudget) {
    auto tokens = raw_tokens(text);
    if (tokens.size() <= budget) return text;
    return join(tokens, budget);
  }
  auto sentences = text::split_sentences(text);
  std::vector<std::string> kept;
  size_t used = 0;
  for (const auto& s : sentences) {
    const size_t n = raw_tokens(s).size();
    if (!kept.empty() && used + n > budget) break;
    kept.push_back(s);
    used += n;
    if (used >= budget) break;
  }
  if (kept.size() == sentences.size()) return text;
  return join(kept, kept.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorKind::kValidation, "embedding", "cannot normalize a zero vector");
  }
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

PseudoEmbedder::PseudoEmbedder(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
  if (dim < 1) throw Error(ErrorKind::kValidation, "embedding", "dim must be >= 1");
}

std::string PseudoEmbedder::id() const {
  return "pseudo-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

Vector PseudoEmbedder::embed_raw(const std::string& text) const {
  std::map<std::string, int> counts;
  for (const auto& tok : text::tokenize(text)) {
    std::string t = text::strip_punct(tok);
    if (!t.empty()) ++counts[t];
  }
  Vector v(static_cast<size_t>(dim_), 0.0);
  for (const auto& [tok, n] : counts) {
    SplitMix64 rng(text::fnv1a64(tok, mix_seed(seed_, 0xfea7)));
    for (double& x : v) x += n * rng.normal();
  }
  return v;
}

std::vector<Vector> PseudoEmbedder::embed_batch(std::span<const EmbedInput> inputs) {
  std::vector<Vector> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(embed_raw(in.text));
  return out;
}

PrecomputedEmbedder::PrecomputedEmbedder(std::map<std::string, Vector> vectors, std::string name)
    : vectors_(std::move(vectors)), name_(std::move(name)) {}

std::unique_ptr<PrecomputedEmbedder> PrecomputedEmbedder::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kValidation, "embedding", "cannot open vectors file " + path);
  std::map<std::string, Vector> vectors;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      vectors[j.at("id").get<std::string>()] = j.at("vector").get<Vector>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "embedding",
                  path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return std::make_unique<PrecomputedEmbedder>(
      std::move(vectors),
      "precomputed:" + std::filesystem::path(path).filename().string());
}

std::vector<Vector> PrecomputedEmbedder::embed_batch(std::span<const EmbedInput> inputs) {
  std::vector<Vector> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = vectors_.find(in.id);
    if (it == vectors_.end()) {
      throw Error(ErrorKind::kBackend, "embedding", "no precomputed vector for id '" + in.id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

HttpEmbedder::HttpEmbedder(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::vector<Vector> HttpEmbedder::embed_batch(std::span<const EmbedInput> inputs) {
  json input = json::array();
  for (const auto& in : inputs) input.push_back(in.text);
  detail::HttpRequest req{endpoint_.url, endpoint_.api_key,
                          {{"model", endpoint_.model}, {"input", input}},
                          endpoint_.max_attempts, endpoint_.backoff_ms, endpoint_.timeout_s};
  json res = detail::post_json(req, "embedding");
  try {
    const auto& data = res.at("data");
    if (data.size() != inputs.size()) {
      throw Error(ErrorKind::kBackend, "embedding", "response has wrong number of embeddings");
    }
    std::vector<Vector> out;
    for (const auto& d : data) out.push_back(d.at("embedding").get<Vector>());
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kBackend, "embedding", std::string("malformed response: ") + e.what());
  }
}

Vector embed(const EmbedInput& input, const TruncationSpec& spec, EmbedderBackend& backend,
             size_t expected_dim) {
  EmbedInput truncated{input.id, truncate(input.text, spec)};
  auto raw = backend.embed_batch(std::span<const EmbedInput>(&truncated, 1));
  if (raw.size() != 1) throw Error(ErrorKind::kBackend, "embedding", "backend returned no vector");
  if (expected_dim != 0 && raw[0].size() != expected_dim) {
    throw Error(ErrorKind::kValidation, "embedding",
                "dimension mismatch: got " + std::to_string(raw[0].size()) + ", case base has " +
                    std::to_string(expected_dim));
  }
  return normalize(raw[0]);
}

const EmbeddingRecord& EmbeddingStore::at(const std::string& id) const {
  auto it = records.find(id);
  if (it == records.end()) {
    throw Error(ErrorKind::kValidation, "embedding cache", "no vector for id '" + id + "'");
  }
  return it->second;
}

std::string embedding_cache_name(const std::string& embedder_id, const TruncationSpec& spec,
                                 const std::string& corpus_hash) {
  const std::string key = embedder_id + "|" + to_string(spec) + "|" + corpus_hash;
  return "emb-" + text::hex64(text::fnv1a64(key)) + ".jsonl";
}

EmbeddingStore embed_corpus(const Corpus& corpus, const TruncationSpec& spec,
                            EmbedderBackend& backend, int parallelism) {
  EmbeddingStore store;
  store.embedder_id = backend.id();
  store.truncation = spec;
  store.corpus_hash = corpus.content_hash();

  std::vector<EmbedInput> inputs;
  inputs.reserve(corpus.size());
  for (const auto& t : corpus.items()) inputs.push_back({t.id, truncate(t.text, spec)});

  constexpr size_t kBatch = 32;
  const size_t n_batches = (inputs.size() + kBatch - 1) / kBatch;
  std::vector<std::vector<Vector>> batches(n_batches);
  auto run_batch = [&](size_t b) {
    const size_t lo = b * kBatch;
    const size_t hi = std::min(inputs.size(), lo + kBatch);
    batches[b] = backend.embed_batch(std::span<const EmbedInput>(inputs.data() + lo, hi - lo));
  };
  // Only the pseudo-embedder is known to be thread-safe.
  const bool parallel = parallelism > 1 && dynamic_cast<PseudoEmbedder*>(&backend) != nullptr;
  if (parallel) {
    for (size_t start = 0; start < n_batches; start += static_cast<size_t>(parallelism)) {
      std::vector<std::future<void>> futs;
      for (size_t b = start; b < std::min(n_batches, start + parallelism); ++b) {
        futs.push_back(std::async(std::launch::async, run_batch, b));
      }
      for (auto& f : futs) f.get();
    }
  } else {
    for (size_t b = 0; b < n_batches; ++b) run_batch(b);
  }

  size_t i = 0;
  for (const auto& batch : batches) {
    for (const auto& raw : batch) {
      const auto& id = inputs[i++].id;
      if (store.dim == 0) store.dim = raw.size();
      if (raw.size() != store.dim) {
        throw Error(ErrorKind::kValidation, "embedding",
                    "dimension mismatch for '" + id + "'");
      }
      const double n = l2_norm(raw);
      if (!(n > 0.0)) {
        throw Error(ErrorKind::kValidation, "embedding", "zero vector for '" + id + "'");
      }
      store.records[id] = EmbeddingRecord{id, normalize(raw), n};
    }
  }
  return store;
}

void save_embedding_cache(const EmbeddingStore& store, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kValidation, "embedding cache", "cannot write " + tmp);
    json header = {{"embedder_id", store.embedder_id},
                   {"dim", store.dim},
                   {"truncation", store.truncation},
                   {"corpus_hash", store.corpus_hash}};
    out << header.dump() << '\n';
    for (const auto& [id, rec] : store.records) {
      out << json{{"id", id}, {"vector", rec.vector}, {"norm", rec.norm}}.dump() << '\n';
    }
  }
  std::filesystem::rename(tmp, path);
}

EmbeddingStore load_embedding_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kValidation, "embedding cache", "missing " + path);
  EmbeddingStore store;
  std::string line;
  size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      json j = json::parse(line);
      if (line_no == 1) {
        store.embedder_id = j.at("embedder_id").get<std::string>();
        store.dim = j.at("dim").get<size_t>();
        store.truncation = j.at("truncation").get<TruncationSpec>();
        store.corpus_hash = j.value("corpus_hash", "");
        continue;
      }
      EmbeddingRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.vector = j.at("vector").get<Vector>();
      rec.norm = j.value("norm", 1.0);
      if (rec.vector.size() != store.dim) {
        throw Error(ErrorKind::kValidation, "embedding cache", "dimension mismatch for " + rec.id);
      }
      store.records[rec.id] = std::move(rec);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, "embedding cache",
                path + " line " + std::to_string(line_no) + ": " + e.what());
  }
  if (line_no == 0) throw Error(ErrorKind::kParse, "embedding cache", path + " is empty");
  return store;
}

EmbeddingStore get_or_build_store(const Corpus& corpus, const TruncationSpec& spec,
                                  EmbedderBackend& backend, const std::string& cache_dir,
                                  bool* cache_hit, int parallelism) {
  const std::string hash = corpus.content_hash();
  const auto path =
      std::filesystem::path(cache_dir) / embedding_cache_name(backend.id(), spec, hash);
  if (std::filesystem::exists(path)) {
    EmbeddingStore store = load_embedding_cache(path.string());
    if (store.embedder_id == backend.id() && store.truncation == spec && store.corpus_hash == hash) {
      if (cache_hit) *cache_hit = true;
      return store;
    }
  }
  if (cache_hit) *cache_hit = false;
  EmbeddingStore store = embed_corpus(corpus, spec, backend, parallelism);
  std::filesystem::create_directories(cache_dir);
  save_embedding_cache(store, path.string());
  return store;
}

CaseBase::CaseBase(std::vector<EmbeddingRecord> records, std::map<std::string, Label> labels,
                   TruncationSpec truncation, std::string embedder_id)
    : records_(std::move(records)),
      labels_(std::move(labels)),
      truncation_(truncation),
      embedder_id_(std::move(embedder_id)) {
  std::sort(records_.begin(), records_.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!index_.emplace(r.id, i).second) {
      throw Error(ErrorKind::kValidation, "case base", "duplicate id '" + r.id + "'");
    }
    if (!labels_.count(r.id)) {
      throw Error(ErrorKind::kValidation, "case base", "record '" + r.id + "' has no label");
    }
    if (i == 0) dim_ = r.vector.size();
    if (r.vector.size() != dim_) {
      throw Error(ErrorKind::kValidation, "case base", "dimension mismatch for '" + r.id + "'");
    }
  }
}

Label CaseBase::label(const std::string& id) const {
  auto it = labels_.find(id);
  if (it == labels_.end()) throw Error(ErrorKind::kValidation, "case base", "unknown id " + id);
  return it->second;
}

const EmbeddingRecord* CaseBase::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

bool CaseBase::operator==(const CaseBase& other) const {
  if (records_.size() != other.records_.size() || labels_ != other.labels_ ||
      truncation_ != other.truncation_ || embedder_id_ != other.embedder_id_) {
    return false;
  }
  for (size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].id != other.records_[i].id || records_[i].vector != other.records_[i].vector) {
      return false;
    }
  }
  return true;
}

CaseBase build_case_base(const Corpus& corpus, const std::set<Split>& pool,
                         const EmbeddingStore& store) {
  std::vector<EmbeddingRecord> records;
  std::map<std::string, Label> labels;
  for (const auto& t : corpus.items()) {
    if (!pool.count(t.split)) continue;
    if (!t.label) {
      throw Error(ErrorKind::kValidation, "case base",
                  "pool item '" + t.id + "' is unlabeled; examples need labels");
    }
    records.push_back(store.at(t.id));
    labels[t.id] = *t.label;
  }
  return CaseBase(std::move(records), std::move(labels), store.truncation, store.embedder_id);
}

CaseBase build_case_base(const Corpus& corpus, const std::set<Split>& pool,
                         const TruncationSpec& spec, EmbedderBackend& backend,
                         const std::string& cache_dir, bool* cache_hit) {
  for (const auto& t : corpus.items()) {
    if (pool.count(t.split) && !t.label) {
      throw Error(ErrorKind::kValidation, "case base",
                  "pool item '" + t.id + "' is unlabeled; examples need labels");
    }
  }
  return build_case_base(corpus, pool, get_or_build_store(corpus, spec, backend, cache_dir, cache_hit));
}

}  // namespace ragcfg
