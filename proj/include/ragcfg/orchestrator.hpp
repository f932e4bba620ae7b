#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragcfg/config.hpp"
#include "ragcfg/corpus.hpp"
#include "ragcfg/embedding.hpp"
#include "ragcfg/judge.hpp"
#include "ragcfg/metrics.hpp"
#include "ragcfg/pipeline.hpp"
#include "ragcfg/policy.hpp"
#include "ragcfg/proxies.hpp"

namespace ragcfg {

struct Budget {
  int max_gold_evals_per_step = 64;
  int max_proxy_evals_per_step = 512;
  long long max_judge_calls_total = 1'000'000;

  void validate() const;
  bool operator==(const Budget&) const = default;
};

void to_json(nlohmann::json& j, const Budget& b);
void from_json(const nlohmann::json& j, Budget& b);

struct BudgetSpent {
  long long judge_calls = 0;       // gold judge requests, every attempt
  long long mini_judge_calls = 0;  // cheap-judge requests (not capped by max_judge_calls_total)
  int gold_evals = 0;
  int proxy_evals = 0;
  std::map<int, int> gold_by_step;
  std::map<int, int> proxy_by_step;

  bool operator==(const BudgetSpent&) const = default;
};

void to_json(nlohmann::json& j, const BudgetSpent& b);
void from_json(const nlohmann::json& j, BudgetSpent& b);

struct EmbedderVariant {
  std::string embedder_id;
  TruncationSpec truncation;
  bool operator==(const EmbedderVariant&) const = default;
};

struct RunPlan {
  std::vector<int> steps = {1, 2, 3, 4, 5, 6, 7, 8};
  // Step 1 alternatives besides the baseline's own embedder/truncation.
  std::vector<EmbedderVariant> step1_variants;
  std::vector<Metric> metrics = {Metric::kCosine, Metric::kDot, Metric::kL2NormCosine};
  std::vector<int> ks = {2, 3, 5};
  std::vector<double> taus = {0.75, 0.78, 0.82};
  std::vector<SelectionMode> modes = {SelectionMode::kStatic, SelectionMode::kDynamic};
  std::vector<bool> mmr = {false, true};
  double mmr_lambda = 0.5;
  PostFilterConfig filter_candidate{true, true, true, 0.65};
  double prf_alpha = 0.5;
  double tau_min = 0.70;
  double tau_max = 0.80;
  double tau_stride = 0.01;
  std::vector<double> temperatures = {0.0, 0.1, 0.2};
  std::vector<double> top_ps = {1.0, 0.9};
  std::vector<int> n_samples = {1, 3};
  int top_m = 3;
  size_t proxy_subset_size = 20;

  void validate() const;
  std::vector<double> tau_sweep() const;
  std::vector<DecodingParams> decoding_grid() const;
  bool operator==(const RunPlan&) const = default;
};

void to_json(nlohmann::json& j, const RunPlan& p);
void from_json(const nlohmann::json& j, RunPlan& p);

// Resolves an embedder id to a backend; returns nullptr when unknown.
using EmbedderResolver = std::function<EmbedderBackend*(const std::string& embedder_id)>;

struct Backends {
  EmbedderResolver embedder;
  JudgeBackend* judge = nullptr;        // gold judge, required
  JudgeBackend* cheap_judge = nullptr;  // mini-judge, optional
  std::string cache_dir;                // empty: embed in memory
  // Fail with stage "embedding cache" instead of embedding on a miss.
  bool require_cached_embeddings = false;
  int embed_parallelism = 1;
};

using Clock = std::function<std::string()>;
Clock wall_clock();
// "t000001", "t000002", ... for reproducible ledgers.
Clock counter_clock();

struct RunOptions {
  std::string out_dir;  // empty: nothing persisted
  bool resume = false;
  int stop_after_step = -1;  // stop once this step's entries are written
  bool trace = false;
  int parallelism = 1;  // gold-eval worker threads
  int judge_max_attempts = 3;
  int judge_backoff_ms = 0;
  std::uint64_t seed = 0;
  Clock clock;  // defaults to wall_clock()
  std::string instruction = default_system_instruction();
  std::set<std::string> stopwords = text::default_stopwords();
};

struct GoldEval {
  std::string config_hash;
  PipelineConfig config;
  EvalReport report;
  std::map<std::string, Label> predictions;  // item id -> label
  std::vector<std::string> failed;
  long long judge_calls = 0;

  bool operator==(const GoldEval&) const = default;
};

void to_json(nlohmann::json& j, const GoldEval& e);
void from_json(const nlohmann::json& j, GoldEval& e);

// One row of the step table.
struct StepRow {
  int step = 0;
  std::string knobs;
  std::string scores;
  std::string decision;
  std::string reason;
  bool operator==(const StepRow&) const = default;
};

struct RunSummary {
  PipelineConfig frozen;
  std::string frozen_hash;
  std::optional<EvalReport> baseline;
  std::vector<StepRow> rows;
  BudgetSpent spent;
  bool completed = false;
  bool operator==(const RunSummary&) const = default;
};

void to_json(nlohmann::json& j, const RunSummary& s);
void from_json(const nlohmann::json& j, RunSummary& s);

struct RunResult {
  PipelineConfig frozen;
  LockLedger ledger;
  BudgetSpent spent;
  std::optional<EvalReport> baseline;
  std::map<int, nlohmann::json> reports;  // per-step proxy / gold bundles
  std::vector<GoldEval> evals;            // in evaluation order
  bool completed = false;                 // false when stopped early

  RunSummary summary() const;
};

std::string report_text(const RunSummary& s);
nlohmann::json report_json(const RunSummary& s);

// Gold-evaluation store, keyed by config hash, persisted as evals.jsonl.
class EvalStore {
 public:
  const GoldEval* find(const std::string& hash) const;
  void add(GoldEval e);
  const std::vector<GoldEval>& all() const { return evals_; }
  static EvalStore load(const std::string& path);

 private:
  std::vector<GoldEval> evals_;
  std::map<std::string, size_t> index_;
};

class Orchestrator {
 public:
  Orchestrator(const Corpus& corpus, Backends backends, RunPlan plan, Budget budget,
               PolicyThresholds thresholds = {}, RunOptions options = {});

  RunResult run(const PipelineConfig& baseline);

  // One gold evaluation over VAL, charged to `step`.
  GoldEval evaluate_gold(const PipelineConfig& config, int step = 0);

  // Screens candidates by primary proxy; ties keep input order.
  static std::vector<size_t> screen(const std::vector<double>& primary, int top_m);

  std::shared_ptr<const EmbeddingStore> store_for(const std::string& embedder_id,
                                                  const TruncationSpec& truncation);
  Pipeline pipeline(const PipelineConfig& config);

  const BudgetSpent& spent() const { return spent_; }
  std::vector<std::string> proxy_subset() const;

 private:
  struct StepContext;

  void begin_run();
  void persist();
  void append(Decision d);
  std::optional<GoldEval> try_gold(const PipelineConfig& config, int step);
  ProxySuite proxies(const PipelineConfig& config, int step,
                     const std::vector<std::string>& subset);
  bool validate_adoption(const Decision& adopted, int step, double eps);
  void run_steps_1_to_4(const PipelineConfig& baseline);
  void run_step5();
  void run_step6();
  void run_step7();
  void run_step8();
  bool stop_requested(int step) const;
  Decision budget_skip(int step, const std::string& what, const std::string& facet = {});

  const Corpus& corpus_;
  Backends backends_;
  RunPlan plan_;
  Budget budget_;
  PolicyThresholds thresholds_;
  RunOptions options_;
  Clock clock_;

  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const EmbeddingStore>> stores_;
  EvalStore store_;
  std::set<std::string> charged_;
  std::map<std::string, ProxySuite> proxy_memo_;
  BudgetSpent spent_;
  LockLedger ledger_;
  PipelineConfig base_config_;
  std::map<int, nlohmann::json> reports_;
  std::vector<GoldEval> run_evals_;
  std::vector<Decision> prior_ledger_;
  bool stopped_ = false;
};

struct ClassifyResult {
  JudgeVerdict verdict;
  RetrievalResult neighbors;
};

// Online path for one text under a frozen configuration.
ClassifyResult classify(const std::string& text, const PipelineConfig& frozen, const Corpus& corpus,
                        EmbedderBackend& embedder, JudgeBackend& judge,
                        std::shared_ptr<const EmbeddingStore> store,
                        const std::string& instruction = default_system_instruction());

}  // namespace ragcfg
