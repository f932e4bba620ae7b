#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragcfg/corpus.hpp"

namespace ragcfg {

using Vector = std::vector<double>;

enum class TruncationMode { kTokenBudget, kSentenceWise };

struct TruncationSpec {
  TruncationMode mode = TruncationMode::kTokenBudget;
  int budget = 256;

  bool operator==(const TruncationSpec&) const = default;
  auto operator<=>(const TruncationSpec&) const = default;
};

// "token:256" / "sentence:128".
std::string to_string(const TruncationSpec& spec);
TruncationSpec parse_truncation(const std::string& s);
void to_json(nlohmann::json& j, const TruncationSpec& spec);
void from_json(const nlohmann::json& j, TruncationSpec& spec);

std::string truncate(const std::string& text, const TruncationSpec& spec);

double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
// Throws Error(kValidation) on a zero vector.
Vector normalize(std::span<const double> v);

struct EmbedInput {
  std::string id;
  std::string text;
};

class EmbedderBackend {
 public:
  virtual ~EmbedderBackend() = default;
  // Stable identifier; part of every cache key.
  virtual std::string id() const = 0;
  // Raw (unnormalized) vectors, one per input.
  virtual std::vector<Vector> embed_batch(std::span<const EmbedInput> inputs) = 0;
  // False when the backend ignores text (vectors keyed by id).
  virtual bool uses_text() const { return true; }
};

// Seeded feature hash: every token maps to a fixed Gaussian direction; a text
// is the sum over its token multiset.
class PseudoEmbedder final : public EmbedderBackend {
 public:
  explicit PseudoEmbedder(std::uint64_t seed = 0, int dim = 64);
  std::string id() const override;
  std::vector<Vector> embed_batch(std::span<const EmbedInput> inputs) override;
  Vector embed_raw(const std::string& text) const;

 private:
  std::uint64_t seed_;
  int dim_;
};

// Vectors from a sidecar JSONL file of {"id": ..., "vector": [...]}.
class PrecomputedEmbedder final : public EmbedderBackend {
 public:
  explicit PrecomputedEmbedder(std::map<std::string, Vector> vectors,
                               std::string name = "precomputed");
  static std::unique_ptr<PrecomputedEmbedder> load(const std::string& path);
  std::string id() const override { return name_; }
  std::vector<Vector> embed_batch(std::span<const EmbedInput> inputs) override;
  bool uses_text() const override { return false; }

 private:
  std::map<std::string, Vector> vectors_;
  std::string name_;
};

struct HttpEndpoint {
  std::string url;           // e.g. http://localhost:8080/v1/embeddings
  std::string model;
  std::string api_key;       // sent as a bearer token when non-empty
  int max_attempts = 3;
  int backoff_ms = 200;      // doubled after each failed attempt
  int timeout_s = 60;
};

// OpenAI-compatible embeddings endpoint: request {model, input}, response
// {data: [{embedding: [...]}, ...]}.
class HttpEmbedder final : public EmbedderBackend {
 public:
  explicit HttpEmbedder(HttpEndpoint endpoint);
  std::string id() const override { return "http:" + endpoint_.model; }
  std::vector<Vector> embed_batch(std::span<const EmbedInput> inputs) override;

 private:
  HttpEndpoint endpoint_;
};

// Truncates, embeds and L2-normalizes one text. `expected_dim` of 0 skips
// the dimension check.
Vector embed(const EmbedInput& input, const TruncationSpec& spec, EmbedderBackend& backend,
             size_t expected_dim = 0);

struct EmbeddingRecord {
  std::string id;
  Vector vector;  // unit norm
  double norm = 0.0;  // norm before normalization
};

// Unit-norm vectors for every item of a corpus under one embedder and
// truncation. Serialized as the embedding cache file.
struct EmbeddingStore {
  std::string embedder_id;
  TruncationSpec truncation;
  std::string corpus_hash;
  size_t dim = 0;
  std::map<std::string, EmbeddingRecord> records;

  const EmbeddingRecord& at(const std::string& id) const;
  bool contains(const std::string& id) const { return records.count(id) != 0; }
};

// Cache file name for a key, e.g. "emb-<hash>.jsonl".
std::string embedding_cache_name(const std::string& embedder_id, const TruncationSpec& spec,
                                 const std::string& corpus_hash);

EmbeddingStore embed_corpus(const Corpus& corpus, const TruncationSpec& spec,
                            EmbedderBackend& backend, int parallelism = 1);

// Header line {embedder_id, dim, truncation, corpus_hash}, then one
// {id, vector} line per record. Written to a temp file and renamed.
void save_embedding_cache(const EmbeddingStore& store, const std::string& path);
EmbeddingStore load_embedding_cache(const std::string& path);

// Loads the cache for this key from `cache_dir` or embeds and writes it.
EmbeddingStore get_or_build_store(const Corpus& corpus, const TruncationSpec& spec,
                                  EmbedderBackend& backend, const std::string& cache_dir,
                                  bool* cache_hit = nullptr, int parallelism = 1);

class CaseBase {
 public:
  CaseBase() = default;
  CaseBase(std::vector<EmbeddingRecord> records, std::map<std::string, Label> labels,
           TruncationSpec truncation, std::string embedder_id);

  const std::vector<EmbeddingRecord>& records() const { return records_; }
  Label label(const std::string& id) const;
  const std::map<std::string, Label>& labels() const { return labels_; }
  const EmbeddingRecord* find(const std::string& id) const;
  size_t dim() const { return dim_; }
  size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const TruncationSpec& truncation() const { return truncation_; }
  const std::string& embedder_id() const { return embedder_id_; }

  bool operator==(const CaseBase& other) const;

 private:
  std::vector<EmbeddingRecord> records_;  // sorted by id
  std::map<std::string, size_t> index_;
  std::map<std::string, Label> labels_;
  size_t dim_ = 0;
  TruncationSpec truncation_;
  std::string embedder_id_;
};

// One record per corpus item in the pool splits, vectors from `store`.
CaseBase build_case_base(const Corpus& corpus, const std::set<Split>& pool,
                         const EmbeddingStore& store);

// Convenience overload that embeds through the on-disk cache.
CaseBase build_case_base(const Corpus& corpus, const std::set<Split>& pool,
                         const TruncationSpec& spec, EmbedderBackend& backend,
                         const std::string& cache_dir, bool* cache_hit = nullptr);

}  // namespace ragcfg
