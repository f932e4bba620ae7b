#include "ragcfg/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "ragcfg/error.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

void SelectionConfig::validate() const {
  if (k < 1 || k > kMaxK) {
    throw Error(ErrorKind::kValidation, "retrieval", "k must be in 1..5, got " + std::to_string(k));
  }
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorKind::kValidation, "retrieval", "tau must be in [0,1]");
  }
}

const char* to_string(Metric m) {
  switch (m) {
    case Metric::kCosine: return "cosine";
    case Metric::kDot: return "dot";
    case Metric::kL2NormCosine: return "l2_norm_cosine";
  }
  return "?";
}

const char* to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::kStatic: return "static";
    case SelectionMode::kDynamic: return "dynamic";
    case SelectionMode::kHybrid: return "hybrid";
  }
  return "?";
}

const char* to_string(SelectionOutcome m) {
  switch (m) {
    case SelectionOutcome::kThreshold: return "threshold";
    case SelectionOutcome::kFallbackTopK: return "fallback_topk";
    case SelectionOutcome::kStaticTopK: return "static_topk";
  }
  return "?";
}

Metric parse_metric(const std::string& s) {
  const std::string v = text::to_lower(s);
  if (v == "cosine") return Metric::kCosine;
  if (v == "dot") return Metric::kDot;
  if (v == "l2_norm_cosine" || v == "l2-norm-cosine") return Metric::kL2NormCosine;
  throw Error(ErrorKind::kValidation, "retrieval", "unknown metric " + s);
}

SelectionMode parse_selection_mode(const std::string& s) {
  const std::string v = text::to_lower(s);
  if (v == "static") return SelectionMode::kStatic;
  if (v == "dynamic" || v == "dyn") return SelectionMode::kDynamic;
  if (v == "hybrid") return SelectionMode::kHybrid;
  throw Error(ErrorKind::kValidation, "retrieval", "unknown selection mode " + s);
}

std::vector<std::string> RetrievalResult::ids() const {
  std::vector<std::string> out;
  for (const auto& n : neighbors) out.push_back(n.id);
  return out;
}

std::vector<Label> RetrievalResult::labels() const {
  std::vector<Label> out;
  for (const auto& n : neighbors) out.push_back(n.label);
  return out;
}

void RetrievalResult::refresh_stats() {
  stats = {};
  if (neighbors.empty()) return;
  double sum = 0.0;
  double top = -std::numeric_limits<double>::infinity();
  double second = -std::numeric_limits<double>::infinity();
  for (const auto& n : neighbors) {
    sum += n.similarity;
    if (n.similarity > top) {
      second = top;
      top = n.similarity;
    } else if (n.similarity > second) {
      second = n.similarity;
    }
  }
  stats.mean_sim = sum / static_cast<double>(neighbors.size());
  stats.max_sim = top;
  stats.margin = neighbors.size() >= 2 ? top - second : 0.0;
}

double similarity(std::span<const double> q, std::span<const double> d, Metric metric) {
  if (q.size() != d.size()) {
    throw Error(ErrorKind::kValidation, "retrieval",
                "dimension mismatch: " + std::to_string(q.size()) + " vs " + std::to_string(d.size()));
  }
  if (metric == Metric::kDot) return dot(q, d);
  const double nq = l2_norm(q);
  const double nd = l2_norm(d);
  if (!(nq > 0.0) || !(nd > 0.0)) {
    throw Error(ErrorKind::kValidation, "retrieval", "zero vector under cosine similarity");
  }
  if (metric == Metric::kCosine) return dot(q, d) / (nq * nd);
  const Vector a = normalize(q);
  const Vector b = normalize(d);
  return dot(a, b);
}

namespace {

bool by_sim_then_id(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

}  // namespace

std::vector<Neighbor> rank_all(std::span<const double> query, const CaseBase& base, Metric metric) {
  std::vector<Neighbor> all;
  all.reserve(base.size());
  for (const auto& rec : base.records()) {
    all.push_back({rec.id, similarity(query, rec.vector, metric), base.label(rec.id)});
  }
  std::sort(all.begin(), all.end(), by_sim_then_id);
  return all;
}

RetrievalResult select(std::span<const double> query, const CaseBase& base,
                       const SelectionConfig& cfg, Metric metric) {
  cfg.validate();
  if (base.empty()) throw Error(ErrorKind::kValidation, "retrieval", "empty case base");
  // Records are sorted by id, so index order is the id tie-break.
  const auto& recs = base.records();
  std::vector<std::pair<double, size_t>> scored(recs.size());
  size_t passing = 0;
  const double nq = metric == Metric::kCosine ? l2_norm(query) : 0.0;
  if (metric == Metric::kCosine && !(nq > 0.0)) {
    throw Error(ErrorKind::kValidation, "retrieval", "zero vector under cosine similarity");
  }
  for (size_t i = 0; i < recs.size(); ++i) {
    const auto& v = recs[i].vector;
    if (metric == Metric::kCosine && v.size() == query.size()) {
      scored[i] = {dot(query, v) / (nq * l2_norm(v)), i};
    } else {
      scored[i] = {similarity(query, v, metric), i};
    }
    passing += scored[i].first >= cfg.tau;
  }
  const size_t k = std::min(static_cast<size_t>(cfg.k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });

  RetrievalResult out;
  size_t take = k;
  switch (cfg.mode) {
    case SelectionMode::kStatic:
      out.mode_used = SelectionOutcome::kStaticTopK;
      break;
    case SelectionMode::kDynamic:
      if (passing > 0) {
        take = std::min(passing, k);
        out.mode_used = SelectionOutcome::kThreshold;
      } else {
        out.mode_used = SelectionOutcome::kFallbackTopK;
      }
      break;
    case SelectionMode::kHybrid:
      out.mode_used = passing > 0 ? SelectionOutcome::kThreshold : SelectionOutcome::kFallbackTopK;
      break;
  }
  for (size_t i = 0; i < take; ++i) {
    const auto& rec = recs[scored[i].second];
    out.neighbors.push_back({rec.id, scored[i].first, base.label(rec.id)});
  }
  out.refresh_stats();
  return out;
}

RetrievalResult mmr_rerank(std::span<const double> query, std::span<const Neighbor> pool,
                           const CaseBase& base, const MmrConfig& cfg, int k, Metric metric) {
  if (pool.empty()) throw Error(ErrorKind::kValidation, "retrieval", "MMR pool is empty");
  if (k < 1) throw Error(ErrorKind::kValidation, "retrieval", "MMR k must be >= 1");
  std::vector<Neighbor> remaining(pool.begin(), pool.end());
  for (auto& n : remaining) {
    const auto* rec = base.find(n.id);
    if (!rec) throw Error(ErrorKind::kValidation, "retrieval", "MMR candidate not in case base");
    n.similarity = similarity(query, rec->vector, metric);
  }
  std::sort(remaining.begin(), remaining.end(), by_sim_then_id);

  RetrievalResult out;
  out.mode_used = SelectionOutcome::kStaticTopK;
  // Running max similarity of each remaining candidate to the picked set.
  std::vector<double> redundancy(remaining.size(), -std::numeric_limits<double>::infinity());
  std::vector<bool> taken(remaining.size(), false);
  const size_t want = std::min(static_cast<size_t>(k), remaining.size());
  for (size_t step = 0; step < want; ++step) {
    size_t best = remaining.size();
    double best_score = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < remaining.size(); ++i) {
      if (taken[i]) continue;
      const double score = step == 0 ? remaining[i].similarity
                                     : cfg.lambda * remaining[i].similarity -
                                           (1.0 - cfg.lambda) * redundancy[i];
      // Strict '>' keeps the earlier (higher-similarity, lower-id) candidate on ties.
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    taken[best] = true;
    out.neighbors.push_back(remaining[best]);
    const auto& picked = base.find(remaining[best].id)->vector;
    for (size_t i = 0; i < remaining.size(); ++i) {
      if (taken[i]) continue;
      const double s = similarity(base.find(remaining[i].id)->vector, picked, metric);
      redundancy[i] = std::max(redundancy[i], s);
    }
  }
  out.refresh_stats();
  return out;
}

double overlap_rate(std::span<const RetrievalResult> results) {
  if (results.size() < 2) {
    throw Error(ErrorKind::kValidation, "retrieval", "overlap rate needs at least two results");
  }
  std::vector<std::set<std::string>> sets;
  for (const auto& r : results) {
    auto ids = r.ids();
    sets.emplace_back(ids.begin(), ids.end());
  }
  double sum = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < sets.size(); ++i) {
    for (size_t j = i + 1; j < sets.size(); ++j) {
      size_t inter = 0;
      for (const auto& id : sets[i]) inter += sets[j].count(id);
      const size_t uni = sets[i].size() + sets[j].size() - inter;
      sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

RetrievalResult post_filter(const RetrievalResult& result, const PostFilterConfig& cfg,
                            double confidence, const CaseBase& base, double tau,
                            const std::string& query_id) {
  if (!cfg.any() || !(confidence < cfg.confidence_gate) || result.neighbors.empty()) {
    return result;
  }
  RetrievalResult out;
  out.mode_used = result.mode_used;
  for (const auto& n : result.neighbors) {
    if (cfg.metadata && !query_id.empty() && n.id == query_id) continue;
    if (cfg.low_conf && n.similarity < tau - 0.05) continue;
    if (cfg.dedup) {
      const auto* rec = base.find(n.id);
      bool duplicate = false;
      for (const auto& kept : out.neighbors) {
        const auto* other = base.find(kept.id);
        if (rec && other && dot(rec->vector, other->vector) >= kNearDuplicateCosine) {
          duplicate = true;
          break;
        }
      }
      if (duplicate) continue;
    }
    out.neighbors.push_back(n);
  }
  if (out.neighbors.empty()) out.neighbors.push_back(result.neighbors.front());
  out.refresh_stats();
  return out;
}

double vote_confidence(const RetrievalResult& result) {
  if (result.neighbors.empty()) return 0.0;
  size_t ones = 0;
  for (const auto& n : result.neighbors) ones += n.label == 1 ? 1 : 0;
  const size_t n = result.neighbors.size();
  return static_cast<double>(std::max(ones, n - ones)) / static_cast<double>(n);
}

namespace {

struct TextStats {
  std::set<std::string> vocab;
  double mean_tokens = 0.0;
};

void accumulate(TextStats& s, size_t& count, double& total, const std::string& text) {
  auto toks = text::tokenize(text);
  for (auto& t : toks) s.vocab.insert(text::strip_punct(t));
  total += static_cast<double>(toks.size());
  ++count;
}

Vector centroid(const std::vector<const Vector*>& vs, size_t dim) {
  Vector c(dim, 0.0);
  for (const auto* v : vs) {
    for (size_t i = 0; i < dim; ++i) c[i] += (*v)[i];
  }
  return c;
}

}  // namespace

GuardReport check_expansion(const CaseBase& base, const Corpus& base_texts,
                            std::span<const ExpansionItem> extra) {
  GuardReport report;
  for (const auto& item : extra) {
    if (base.find(item.record.id)) report.id_collisions.push_back(item.record.id);
    if (item.record.vector.size() != base.dim()) {
      throw Error(ErrorKind::kValidation, "expansion",
                  "dimension mismatch for '" + item.record.id + "'");
    }
    for (const auto& rec : base.records()) {
      const double c = dot(rec.vector, item.record.vector);
      if (c >= kNearDuplicateCosine) report.near_duplicates.push_back({rec.id, item.record.id, c});
    }
  }

  TextStats old_stats;
  size_t old_n = 0;
  double old_total = 0.0;
  for (const auto& rec : base.records()) {
    if (const auto* t = base_texts.find(rec.id)) accumulate(old_stats, old_n, old_total, t->text);
  }
  TextStats new_stats = old_stats;
  size_t new_n = old_n;
  double new_total = old_total;
  for (const auto& item : extra) accumulate(new_stats, new_n, new_total, item.text);
  if (!old_stats.vocab.empty()) {
    report.vocab_shift = (static_cast<double>(new_stats.vocab.size()) -
                          static_cast<double>(old_stats.vocab.size())) /
                         static_cast<double>(old_stats.vocab.size());
  }
  if (old_n > 0 && old_total > 0.0 && new_n > 0) {
    const double old_mean = old_total / static_cast<double>(old_n);
    const double new_mean = new_total / static_cast<double>(new_n);
    report.length_shift = (new_mean - old_mean) / old_mean;
  }

  std::vector<const Vector*> old_vs;
  for (const auto& rec : base.records()) old_vs.push_back(&rec.vector);
  std::vector<const Vector*> new_vs = old_vs;
  for (const auto& item : extra) new_vs.push_back(&item.record.vector);
  if (!old_vs.empty() && !extra.empty()) {
    const Vector a = centroid(old_vs, base.dim());
    const Vector b = centroid(new_vs, base.dim());
    if (l2_norm(a) > 0.0 && l2_norm(b) > 0.0) {
      report.centroid_shift = std::max(0.0, 1.0 - similarity(a, b, Metric::kCosine));
    }
  }
  return report;
}

Expansion expand_pool(const CaseBase& base, const Corpus& base_texts,
                      std::span<const ExpansionItem> extra) {
  GuardReport guards = check_expansion(base, base_texts, extra);
  if (!guards.id_collisions.empty()) {
    throw Error(ErrorKind::kValidation, "expansion",
                "rejected: id collision on '" + guards.id_collisions.front() + "'");
  }
  std::vector<EmbeddingRecord> records = base.records();
  std::map<std::string, Label> labels = base.labels();
  for (const auto& item : extra) {
    records.push_back(item.record);
    labels[item.record.id] = item.label;
  }
  return {CaseBase(std::move(records), std::move(labels), base.truncation(), base.embedder_id()),
          std::move(guards)};
}

Vector prf_expand(std::span<const double> query, const CaseBase& base,
                  const SelectionConfig& cfg, double alpha, Metric metric) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorKind::kValidation, "retrieval", "PRF alpha must be in [0,1]");
  }
  const RetrievalResult r = select(query, base, cfg, metric);
  if (r.neighbors.empty()) throw Error(ErrorKind::kValidation, "retrieval", "PRF retrieval is empty");
  std::vector<const Vector*> vs;
  for (const auto& n : r.neighbors) vs.push_back(&base.find(n.id)->vector);
  Vector c = centroid(vs, query.size());
  for (double& x : c) x /= static_cast<double>(vs.size());
  Vector blended(query.size());
  for (size_t i = 0; i < query.size(); ++i) blended[i] = (1.0 - alpha) * query[i] + alpha * c[i];
  return normalize(blended);
}

}  // namespace ragcfg
