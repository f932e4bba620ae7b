#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragcfg/corpus.hpp"
#include "ragcfg/embedding.hpp"
#include "ragcfg/judge.hpp"
#include "ragcfg/metrics.hpp"
#include "ragcfg/pipeline.hpp"
#include "ragcfg/retrieval.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

enum class ProxyFamily {
  kSemanticRetrieval,
  kStatisticalText,
  kRankingStability,
  kConfidence,
  kCheapJudge,
};

const char* to_string(ProxyFamily f);
ProxyFamily parse_proxy_family(const std::string& s);

// Registry of metric names per family; ProxyReport values only use these.
const std::set<std::string>& proxy_metric_names(ProxyFamily f);

struct ProxyReport {
  ProxyFamily family = ProxyFamily::kSemanticRetrieval;
  std::map<std::string, double> values;
  // Metrics that could not be computed (empty denominator, missing golds).
  std::vector<std::string> flags;
  size_t subset_size = 0;

  std::optional<double> get(const std::string& name) const;
  // Throws unless the name is registered for this family; non-finite values
  // are replaced by a flag.
  void set(const std::string& name, double value);
  bool operator==(const ProxyReport&) const = default;
};

void to_json(nlohmann::json& j, const ProxyReport& r);
void from_json(const nlohmann::json& j, ProxyReport& r);

inline constexpr Label kMinorityLabel = 1;

// golds[i] belongs to results[i]; a missing gold omits the query from hit@k
// and minority coverage.
ProxyReport semantic_retrieval_proxies(std::span<const RetrievalResult> results,
                                       std::span<const std::optional<Label>> golds);

struct LabeledText {
  std::string text;
  std::optional<Label> label;
};

ProxyReport statistical_text_proxies(std::span<const LabeledText> slice,
                                     const std::set<std::string>& stopwords = text::default_stopwords());

struct RecallCurve {
  std::map<int, double> recall;
  std::map<int, double> precision;  // mean share of correct-label neighbors in top-k
  std::vector<std::string> flags;
};

// Static top-k over `base` for every query. Requested k above |base| is
// capped and flagged.
RecallCurve recall_at_k_curve(const CaseBase& base, std::span<const Vector> queries,
                              std::span<const Label> golds, std::span<const int> ks,
                              Metric metric = Metric::kCosine);

// Tau-a over two strict orderings of the same id set.
double kendall_tau(std::span<const std::string> rank_a, std::span<const std::string> rank_b);

// Binary relevance (neighbor label == gold), log2 discounts.
double ndcg_at_k(const RetrievalResult& result, Label gold, int k);

// Shannon entropy in bits.
double label_entropy(std::span<const Label> labels);

ProxyReport diversity_proxies(const RetrievalResult& result, const CaseBase& base);

struct MiniJudgeResult {
  EvalReport report;
  double agreement = 0.0;  // accuracy on the subset
};

// Runs the configured pipeline with the cheap judge over the subset ids.
MiniJudgeResult mini_judge_eval(JudgeBackend& backend, std::span<const std::string> subset,
                                const Pipeline& pipeline, std::uint64_t order_seed = 0);
double mini_judge_agreement(JudgeBackend& backend, std::span<const std::string> subset,
                            const Pipeline& pipeline);

struct StabilityResult {
  double iqr_macro_f1 = 0.0;
  double max_dev = 0.0;  // largest |x - median|
  std::vector<double> samples;
};

// `runner(seed)` returns the macro-F1 proxy for one shuffled re-run.
StabilityResult stability_check(std::span<const std::uint64_t> seeds,
                                const std::function<double(std::uint64_t)>& runner);

// Linear-interpolated quantile of unsorted data.
double quantile(std::vector<double> xs, double q);

// Everything the screen needs for one candidate, computed on the proxy subset.
struct ProxySuite {
  std::vector<ProxyReport> reports;
  // Primary screening score: mini-judge macro-F1 when a cheap judge ran,
  // otherwise hit@k.
  double primary = 0.0;
  std::string primary_name;
  std::optional<EvalReport> mini_judge;
  std::vector<RetrievalResult> results;  // per subset query, subset order

  const ProxyReport* find(ProxyFamily f) const;
};

ProxySuite proxy_suite(const Pipeline& pipeline, std::span<const std::string> subset,
                       JudgeBackend* cheap_judge,
                       const std::set<std::string>& stopwords = text::default_stopwords());

}  // namespace ragcfg
