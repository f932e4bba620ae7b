#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragcfg/corpus.hpp"
#include "ragcfg/embedding.hpp"

namespace ragcfg {

enum class Metric { kCosine, kDot, kL2NormCosine };

enum class SelectionMode { kStatic, kDynamic, kHybrid };

inline constexpr int kMaxK = 5;
inline constexpr double kNearDuplicateCosine = 0.95;

struct SelectionConfig {
  int k = 5;
  double tau = 0.75;
  SelectionMode mode = SelectionMode::kDynamic;

  void validate() const;
  bool operator==(const SelectionConfig&) const = default;
};

struct MmrConfig {
  bool enabled = false;
  double lambda = 0.5;
  bool operator==(const MmrConfig&) const = default;
};

struct PostFilterConfig {
  bool dedup = false;
  bool metadata = false;
  bool low_conf = false;
  double confidence_gate = 0.65;

  bool any() const { return dedup || metadata || low_conf; }
  bool operator==(const PostFilterConfig&) const = default;
};

struct Neighbor {
  std::string id;
  double similarity = 0.0;
  Label label = 0;
  bool operator==(const Neighbor&) const = default;
};

enum class SelectionOutcome {
  kThreshold,     // neighbors came from the similarity threshold
  kFallbackTopK,  // nothing passed the threshold; top-k returned
  kStaticTopK,    // threshold not consulted
};

struct RetrievalStats {
  double mean_sim = 0.0;
  double max_sim = 0.0;
  double margin = 0.0;  // sim1 - sim2; 0 with fewer than two neighbors
};

struct RetrievalResult {
  std::vector<Neighbor> neighbors;
  SelectionOutcome mode_used = SelectionOutcome::kStaticTopK;
  RetrievalStats stats;

  std::vector<std::string> ids() const;
  std::vector<Label> labels() const;
  void refresh_stats();
};

const char* to_string(Metric m);
const char* to_string(SelectionMode m);
const char* to_string(SelectionOutcome m);
Metric parse_metric(const std::string& s);
SelectionMode parse_selection_mode(const std::string& s);

// Throws on dimension mismatch, or a zero vector under the cosine variants.
double similarity(std::span<const double> q, std::span<const double> d, Metric metric);

// Every case-base record scored against the query, ordered by descending
// similarity then ascending id.
std::vector<Neighbor> rank_all(std::span<const double> query, const CaseBase& base, Metric metric);

RetrievalResult select(std::span<const double> query, const CaseBase& base,
                       const SelectionConfig& cfg, Metric metric);

// Greedy maximal marginal relevance over `pool`: picks maximize
// lambda*sim(q,d) - (1-lambda)*max_{s in picked} sim(d,s). The first pick is
// the pool's highest query similarity.
RetrievalResult mmr_rerank(std::span<const double> query, std::span<const Neighbor> pool,
                           const CaseBase& base, const MmrConfig& cfg, int k, Metric metric);

// Mean pairwise Jaccard overlap of neighbor id-sets. Needs >= 2 results.
double overlap_rate(std::span<const RetrievalResult> results);

// Filters run only when `confidence` < cfg.confidence_gate. The best neighbor
// always survives.
RetrievalResult post_filter(const RetrievalResult& result, const PostFilterConfig& cfg,
                            double confidence, const CaseBase& base, double tau,
                            const std::string& query_id = {});

// Share of neighbors voting for the majority label.
double vote_confidence(const RetrievalResult& result);

struct NearDuplicatePair {
  std::string base_id;
  std::string extra_id;
  double cosine = 0.0;
};

struct GuardReport {
  std::vector<std::string> id_collisions;
  std::vector<NearDuplicatePair> near_duplicates;
  double vocab_shift = 0.0;     // relative change in pool vocabulary size
  double length_shift = 0.0;    // relative change in mean token count
  double centroid_shift = 0.0;  // cosine distance between pool centroids

  bool passed() const { return id_collisions.empty() && near_duplicates.empty(); }
};

struct ExpansionItem {
  EmbeddingRecord record;
  Label label = 0;
  std::string text;
};

struct Expansion {
  CaseBase base;
  GuardReport guards;
};

GuardReport check_expansion(const CaseBase& base, const Corpus& base_texts,
                            std::span<const ExpansionItem> extra);

// Throws Error(kValidation, "expansion") when any id collides.
Expansion expand_pool(const CaseBase& base, const Corpus& base_texts,
                      std::span<const ExpansionItem> extra);

// normalize((1-alpha)*query + alpha*centroid(selected neighbors)).
Vector prf_expand(std::span<const double> query, const CaseBase& base,
                  const SelectionConfig& cfg, double alpha, Metric metric = Metric::kCosine);

}  // namespace ragcfg
