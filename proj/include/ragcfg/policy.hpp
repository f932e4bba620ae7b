#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragcfg/config.hpp"
#include "ragcfg/metrics.hpp"
#include "ragcfg/retrieval.hpp"

namespace ragcfg {

enum class Verdict { kAdoptFreeze, kSkip, kReject, kRollback };

const char* to_string(Verdict v);
Verdict parse_verdict(const std::string& s);

struct Decision {
  int step = 0;
  // Sub-slot within a step ("prf" for the Step 6 PRF variant); frozen state
  // is keyed by (step, facet).
  std::string facet;
  nlohmann::json candidate;  // merge-patch delta onto the frozen config
  nlohmann::json proxy = nlohmann::json::object();
  std::optional<EvalReport> gold;
  Verdict verdict = Verdict::kSkip;
  std::string reason;  // starts with the rule id, e.g. "S7.reject: ..."
  std::string timestamp;
  // Everything the decide function saw; `inputs.rule` selects it on replay.
  nlohmann::json inputs = nlohmann::json::object();
  // Gold baseline macro-F1 in force after this entry (set on adoptions).
  std::optional<double> baseline_macro_f1;

  bool operator==(const Decision&) const = default;
};

void to_json(nlohmann::json& j, const Decision& d);
void from_json(const nlohmann::json& j, Decision& d);

struct PolicyThresholds {
  double step1_gain = 0.02;
  double step2_gain = 0.01;
  double step3_recall_gain = 0.01;
  double step3_precision_drop = 0.10;
  double step4_overlap = 0.6;
  double step5_gate = 0.65;
  double step6_drop = 0.02;
  double step7_gain = 0.01;
  double eps = 0.0;  // regression tolerance for compare()

  bool operator==(const PolicyThresholds&) const = default;
};

void to_json(nlohmann::json& j, const PolicyThresholds& t);
void from_json(const nlohmann::json& j, PolicyThresholds& t);

// Comparisons against policy thresholds absorb floating error of this size,
// so 0.845 - 0.825 counts as a gain of 0.02.
inline constexpr double kPolicyTolerance = 1e-9;

struct ScoredCandidate {
  nlohmann::json candidate;
  double score = 0.0;
  std::string tier;  // "proxy" or "gold"
};

Decision decide_step1(std::span<const ScoredCandidate> candidates, double baseline_score,
                      const PolicyThresholds& t = {});

Decision decide_step2(std::span<const ScoredCandidate> alternatives, const ScoredCandidate& cosine,
                      const PolicyThresholds& t = {});

struct SelectionScore {
  SelectionConfig selection;
  double score = 0.0;
};

struct Step3Input {
  std::map<int, double> recall;
  std::map<int, double> precision;
  std::vector<SelectionScore> scores;
  SelectionConfig current;
};

Decision decide_step3(const Step3Input& in, const PolicyThresholds& t = {});

Decision decide_step4(double overlap, double minority_recall_delta, double macro_f1_delta,
                      const MmrConfig& candidate, const PolicyThresholds& t = {});

Decision decide_step5(double confidence, double macro_f1_delta, const PostFilterConfig& candidate,
                      const PolicyThresholds& t = {});

Decision decide_step6(double expanded_score, double baseline_score, const GuardReport& guards,
                      const PolicyThresholds& t = {});
// Same acceptance rule, on the hard-query subset, no leakage guards.
Decision decide_step6_prf(double prf_score, double baseline_score, double alpha,
                          const PolicyThresholds& t = {});

struct TauPoint {
  double tau = 0.0;
  EvalReport report;
};

Decision decide_step7(std::span<const TauPoint> sweep, const EvalReport& baseline, double current_tau,
                      const PolicyThresholds& t = {});

struct DecodingPoint {
  DecodingParams params;
  EvalReport report;
};

Decision decide_step8(std::span<const DecodingPoint> grid, const EvalReport& baseline,
                      const DecodingParams& current, const PolicyThresholds& t = {});

// Re-runs the decide function named by `inputs.rule`.
Decision redecide(const nlohmann::json& inputs);

nlohmann::json to_json(const GuardReport& g);

class LockLedger {
 public:
  const std::vector<Decision>& entries() const { return entries_; }
  using Key = std::pair<int, std::string>;
  const std::map<Key, nlohmann::json>& frozen() const { return frozen_; }
  const std::optional<EvalReport>& baseline() const { return baseline_; }
  bool is_frozen(int step, const std::string& facet = {}) const {
    return frozen_.count({step, facet}) > 0;
  }

  // ADOPT_FREEZE records the prior state and freezes the step; it is an error
  // on a step that is already frozen.
  void append(Decision d);

  // Replaces the baseline iff there is none or `r` does not regress it.
  bool offer_baseline(const EvalReport& r, double eps = 0.0);
  void force_baseline(const EvalReport& r) { baseline_ = r; }

  // Restores the step's pre-adoption state and appends a ROLLBACK entry.
  // Throws Error(kState) when the slot has no prior state.
  const Decision& rollback(int step, const std::string& reason, const std::string& timestamp,
                           const std::string& facet = {});

  // Frozen deltas applied onto `base` in step order.
  PipelineConfig frozen_config(const PipelineConfig& base) const;

  // Rebuilds frozen state by re-applying adoptions and rollbacks.
  static LockLedger from_entries(std::span<const Decision> entries);

 private:
  std::vector<Decision> entries_;
  void restore(int step, const std::string& facet);

  std::map<Key, nlohmann::json> frozen_;
  std::map<Key, std::vector<std::optional<nlohmann::json>>> history_;
  std::optional<EvalReport> baseline_;
};

std::string serialize_ledger(std::span<const Decision> entries);
std::vector<Decision> parse_ledger(const std::string& jsonl);
std::vector<Decision> load_ledger(const std::string& path);
void save_ledger(const std::string& path, std::span<const Decision> entries);

struct ReplayMismatch {
  size_t index = 0;
  std::string expected;
  std::string actual;
};

// Entries whose inputs carry a rule are re-decided; the rest are skipped.
std::vector<ReplayMismatch> replay_ledger(std::span<const Decision> entries);

// Frozen config document: {"config": ..., "hash": ...}.
nlohmann::json frozen_document(const PipelineConfig& c);
void save_frozen(const std::string& path, const PipelineConfig& c);
// Throws if the stored hash does not match the content.
PipelineConfig load_frozen(const std::string& path);

// Shortest decimal rendering with at least one fractional digit.
std::string format_number(double x);

}  // namespace ragcfg
