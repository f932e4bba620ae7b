#include "ragcfg/proxies.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ragcfg/error.hpp"

namespace ragcfg {

using nlohmann::json;

const char* to_string(ProxyFamily f) {
  switch (f) {
    case ProxyFamily::kSemanticRetrieval: return "semantic_retrieval";
    case ProxyFamily::kStatisticalText: return "statistical_text";
    case ProxyFamily::kRankingStability: return "ranking_stability";
    case ProxyFamily::kConfidence: return "confidence";
    case ProxyFamily::kCheapJudge: return "cheap_judge";
  }
  return "?";
}

ProxyFamily parse_proxy_family(const std::string& s) {
  for (auto f : {ProxyFamily::kSemanticRetrieval, ProxyFamily::kStatisticalText,
                 ProxyFamily::kRankingStability, ProxyFamily::kConfidence, ProxyFamily::kCheapJudge}) {
    if (s == to_string(f)) return f;
  }
  throw Error(ErrorKind::kParse, "proxies", "unknown proxy family " + s);
}

const std::set<std::string>& proxy_metric_names(ProxyFamily f) {
  static const std::map<ProxyFamily, std::set<std::string>> registry = {
      {ProxyFamily::kSemanticRetrieval,
       {"mean_sim", "max_sim", "hit_at_k", "minority_coverage", "overlap_rate"}},
      {ProxyFamily::kStatisticalText,
       {"mean_tokens", "type_token_ratio", "stopword_ratio", "length_balance", "context_tokens"}},
      {ProxyFamily::kRankingStability,
       {"recall@1", "recall@2", "recall@3", "recall@4", "recall@5", "kendall_tau", "ndcg_at_k",
        "mmr_overlap_change", "dynamic_replacements", "mean_pairwise_cosine", "near_dup_fraction",
        "novelty_ratio", "iqr_macro_f1", "max_dev"}},
      {ProxyFamily::kConfidence, {"margin", "vote_entropy", "vote_confidence"}},
      {ProxyFamily::kCheapJudge, {"macro_f1", "accuracy", "recall_1"}},
  };
  return registry.at(f);
}

std::optional<double> ProxyReport::get(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

void ProxyReport::set(const std::string& name, double value) {
  if (!proxy_metric_names(family).count(name)) {
    throw Error(ErrorKind::kValidation, "proxies",
                "metric '" + name + "' is not registered for " + to_string(family));
  }
  if (!std::isfinite(value)) {
    flags.push_back(name);
    values.erase(name);
    return;
  }
  values[name] = value;
}

void to_json(json& j, const ProxyReport& r) {
  j = {{"family", to_string(r.family)},
       {"values", r.values},
       {"flags", r.flags},
       {"subset_size", r.subset_size}};
}

void from_json(const json& j, ProxyReport& r) {
  r.family = parse_proxy_family(j.at("family").get<std::string>());
  r.values = j.at("values").get<std::map<std::string, double>>();
  r.flags = j.value("flags", std::vector<std::string>{});
  r.subset_size = j.value("subset_size", size_t{0});
}

ProxyReport semantic_retrieval_proxies(std::span<const RetrievalResult> results,
                                       std::span<const std::optional<Label>> golds) {
  if (results.empty()) throw Error(ErrorKind::kValidation, "proxies", "no retrieval results");
  ProxyReport r;
  r.family = ProxyFamily::kSemanticRetrieval;
  r.subset_size = results.size();
  double sum = 0.0;
  size_t count = 0;
  double max_sim = -std::numeric_limits<double>::infinity();
  size_t hit = 0;
  size_t with_gold = 0;
  size_t minority_queries = 0;
  size_t minority_covered = 0;
  for (size_t i = 0; i < results.size(); ++i) {
    for (const auto& n : results[i].neighbors) {
      sum += n.similarity;
      max_sim = std::max(max_sim, n.similarity);
      ++count;
    }
    if (i >= golds.size() || !golds[i]) continue;
    const Label g = *golds[i];
    ++with_gold;
    const auto& ns = results[i].neighbors;
    if (std::any_of(ns.begin(), ns.end(), [&](const Neighbor& n) { return n.label == g; })) ++hit;
    if (g == kMinorityLabel) {
      ++minority_queries;
      if (std::any_of(ns.begin(), ns.end(),
                      [](const Neighbor& n) { return n.label == kMinorityLabel; })) {
        ++minority_covered;
      }
    }
  }
  if (count > 0) {
    r.set("mean_sim", sum / static_cast<double>(count));
    r.set("max_sim", max_sim);
  } else {
    r.flags.push_back("mean_sim");
    r.flags.push_back("max_sim");
  }
  if (with_gold > 0) {
    r.set("hit_at_k", static_cast<double>(hit) / static_cast<double>(with_gold));
  } else {
    r.flags.push_back("hit_at_k");
  }
  if (minority_queries > 0) {
    r.set("minority_coverage",
          static_cast<double>(minority_covered) / static_cast<double>(minority_queries));
  } else {
    r.flags.push_back("minority_coverage");
  }
  if (results.size() >= 2) {
    r.set("overlap_rate", overlap_rate(results));
  } else {
    r.flags.push_back("overlap_rate");
  }
  return r;
}

ProxyReport statistical_text_proxies(std::span<const LabeledText> slice,
                                     const std::set<std::string>& stopwords) {
  if (slice.empty()) throw Error(ErrorKind::kValidation, "proxies", "empty text slice");
  ProxyReport r;
  r.family = ProxyFamily::kStatisticalText;
  r.subset_size = slice.size();
  size_t tokens = 0;
  size_t stop = 0;
  std::set<std::string> types;
  std::map<Label, std::pair<double, size_t>> by_class;  // total length, count
  for (const auto& item : slice) {
    const auto toks = text::tokenize(item.text);
    tokens += toks.size();
    for (const auto& t : toks) {
      types.insert(t);
      if (stopwords.count(text::strip_punct(t))) ++stop;
    }
    if (item.label) {
      auto& [total, n] = by_class[*item.label];
      total += static_cast<double>(toks.size());
      ++n;
    }
  }
  r.set("mean_tokens", static_cast<double>(tokens) / static_cast<double>(slice.size()));
  if (tokens > 0) {
    r.set("type_token_ratio", static_cast<double>(types.size()) / static_cast<double>(tokens));
    r.set("stopword_ratio", static_cast<double>(stop) / static_cast<double>(tokens));
  } else {
    r.flags.push_back("type_token_ratio");
    r.flags.push_back("stopword_ratio");
  }
  if (by_class.count(0) && by_class.count(1) && by_class[0].first > 0.0) {
    const double m1 = by_class[1].first / static_cast<double>(by_class[1].second);
    const double m0 = by_class[0].first / static_cast<double>(by_class[0].second);
    r.set("length_balance", m1 / m0);
  } else {
    r.flags.push_back("length_balance");
  }
  return r;
}

RecallCurve recall_at_k_curve(const CaseBase& base, std::span<const Vector> queries,
                              std::span<const Label> golds, std::span<const int> ks, Metric metric) {
  if (queries.size() != golds.size()) {
    throw Error(ErrorKind::kValidation, "proxies", "queries and golds differ in length");
  }
  if (!std::is_sorted(ks.begin(), ks.end())) {
    throw Error(ErrorKind::kValidation, "proxies", "ks must be sorted ascending");
  }
  RecallCurve curve;
  if (queries.empty() || ks.empty()) return curve;
  const int k_max = ks.back();
  std::vector<std::vector<Neighbor>> ranked;
  ranked.reserve(queries.size());
  for (const auto& q : queries) ranked.push_back(rank_all(q, base, metric));
  for (int k : ks) {
    size_t eff = static_cast<size_t>(std::max(k, 1));
    if (eff > base.size()) {
      curve.flags.push_back("k=" + std::to_string(k) + " capped at " + std::to_string(base.size()));
      eff = base.size();
    }
    size_t hits = 0;
    double precision = 0.0;
    for (size_t i = 0; i < queries.size(); ++i) {
      size_t correct = 0;
      for (size_t r = 0; r < eff && r < ranked[i].size(); ++r) {
        correct += ranked[i][r].label == golds[i] ? 1 : 0;
      }
      hits += correct > 0 ? 1 : 0;
      precision += eff ? static_cast<double>(correct) / static_cast<double>(eff) : 0.0;
    }
    curve.recall[k] = static_cast<double>(hits) / static_cast<double>(queries.size());
    curve.precision[k] = precision / static_cast<double>(queries.size());
  }
  (void)k_max;
  return curve;
}

double kendall_tau(std::span<const std::string> rank_a, std::span<const std::string> rank_b) {
  if (rank_a.size() != rank_b.size()) {
    throw Error(ErrorKind::kValidation, "proxies", "kendall tau: rankings differ in size");
  }
  std::map<std::string, size_t> pos_b;
  for (size_t i = 0; i < rank_b.size(); ++i) pos_b[rank_b[i]] = i;
  if (pos_b.size() != rank_b.size()) {
    throw Error(ErrorKind::kValidation, "proxies", "kendall tau: duplicate ids");
  }
  std::vector<size_t> mapped;
  mapped.reserve(rank_a.size());
  for (const auto& id : rank_a) {
    auto it = pos_b.find(id);
    if (it == pos_b.end()) {
      throw Error(ErrorKind::kValidation, "proxies", "kendall tau: id sets differ ('" + id + "')");
    }
    mapped.push_back(it->second);
  }
  const size_t n = mapped.size();
  if (n < 2) return 1.0;
  long long concordant = 0;
  long long discordant = 0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      (mapped[i] < mapped[j] ? concordant : discordant)++;
    }
  }
  return static_cast<double>(concordant - discordant) / (static_cast<double>(n * (n - 1)) / 2.0);
}

double ndcg_at_k(const RetrievalResult& result, Label gold, int k) {
  if (k < 1) throw Error(ErrorKind::kValidation, "proxies", "nDCG k must be >= 1");
  const auto& ns = result.neighbors;
  const size_t cut = std::min(ns.size(), static_cast<size_t>(k));
  double dcg = 0.0;
  size_t relevant = 0;
  for (size_t i = 0; i < ns.size(); ++i) {
    if (ns[i].label != gold) continue;
    ++relevant;
    if (i < cut) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  if (relevant == 0) return 0.0;
  double ideal = 0.0;
  for (size_t i = 0; i < std::min(relevant, cut); ++i) ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / ideal;
}

double label_entropy(std::span<const Label> labels) {
  if (labels.empty()) throw Error(ErrorKind::kValidation, "proxies", "entropy of empty label list");
  std::map<Label, size_t> counts;
  for (Label l : labels) ++counts[l];
  double h = 0.0;
  for (const auto& [label, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(labels.size());
    h -= p * std::log2(p);
  }
  return h == 0.0 ? 0.0 : h;
}

ProxyReport diversity_proxies(const RetrievalResult& result, const CaseBase& base) {
  ProxyReport r;
  r.family = ProxyFamily::kRankingStability;
  r.subset_size = result.neighbors.size();
  const auto& ns = result.neighbors;
  if (ns.size() < 2) {
    r.flags = {"mean_pairwise_cosine", "near_dup_fraction", "novelty_ratio"};
    return r;
  }
  double sum = 0.0;
  size_t pairs = 0;
  size_t dups = 0;
  for (size_t i = 0; i < ns.size(); ++i) {
    const auto* a = base.find(ns[i].id);
    for (size_t j = i + 1; j < ns.size(); ++j) {
      const auto* b = base.find(ns[j].id);
      if (!a || !b) throw Error(ErrorKind::kValidation, "proxies", "neighbor not in case base");
      const double c = similarity(a->vector, b->vector, Metric::kCosine);
      sum += c;
      dups += c >= kNearDuplicateCosine ? 1 : 0;
      ++pairs;
    }
  }
  const double ndf = static_cast<double>(dups) / static_cast<double>(pairs);
  r.set("mean_pairwise_cosine", sum / static_cast<double>(pairs));
  r.set("near_dup_fraction", ndf);
  r.set("novelty_ratio", 1.0 - ndf);
  return r;
}

MiniJudgeResult mini_judge_eval(JudgeBackend& backend, std::span<const std::string> subset,
                                const Pipeline& pipeline, std::uint64_t order_seed) {
  if (subset.empty()) throw Error(ErrorKind::kValidation, "proxies", "mini-judge subset is empty");
  std::vector<Label> preds;
  std::vector<Label> golds;
  for (const auto& id : subset) {
    const Transcript* t = pipeline.corpus().find(id);
    if (!t || !t->label) {
      throw Error(ErrorKind::kValidation, "proxies", "mini-judge item '" + id + "' is unlabeled");
    }
    preds.push_back(pipeline.classify_item(id, backend, {}, order_seed).label);
    golds.push_back(*t->label);
  }
  MiniJudgeResult out;
  out.report = evaluate(preds, golds);
  out.agreement = out.report.accuracy;
  return out;
}

double mini_judge_agreement(JudgeBackend& backend, std::span<const std::string> subset,
                            const Pipeline& pipeline) {
  return mini_judge_eval(backend, subset, pipeline).agreement;
}

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw Error(ErrorKind::kValidation, "proxies", "quantile of empty data");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

StabilityResult stability_check(std::span<const std::uint64_t> seeds,
                                const std::function<double(std::uint64_t)>& runner) {
  if (seeds.size() < 2) {
    throw Error(ErrorKind::kValidation, "proxies", "stability check needs at least two seeds");
  }
  StabilityResult out;
  for (auto s : seeds) out.samples.push_back(runner(s));
  out.iqr_macro_f1 = quantile(out.samples, 0.75) - quantile(out.samples, 0.25);
  const double median = quantile(out.samples, 0.5);
  for (double x : out.samples) out.max_dev = std::max(out.max_dev, std::abs(x - median));
  return out;
}

const ProxyReport* ProxySuite::find(ProxyFamily f) const {
  for (const auto& r : reports) {
    if (r.family == f) return &r;
  }
  return nullptr;
}

namespace {

double jaccard(const RetrievalResult& a, const RetrievalResult& b) {
  auto ia = a.ids();
  auto ib = b.ids();
  std::set<std::string> sa(ia.begin(), ia.end());
  std::set<std::string> sb(ib.begin(), ib.end());
  size_t inter = 0;
  for (const auto& id : sa) inter += sb.count(id);
  const size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

ProxySuite proxy_suite(const Pipeline& pipeline, std::span<const std::string> subset,
                       JudgeBackend* cheap_judge, const std::set<std::string>& stopwords) {
  if (subset.empty()) throw Error(ErrorKind::kValidation, "proxies", "proxy subset is empty");
  const auto& cfg = pipeline.config();
  const auto& base = pipeline.case_base();
  ProxySuite suite;
  std::vector<std::optional<Label>> golds;
  std::vector<LabeledText> texts;
  std::vector<Vector> queries;
  std::vector<Label> known_golds;
  std::vector<Vector> known_queries;
  for (const auto& id : subset) {
    const Transcript* t = pipeline.corpus().find(id);
    if (!t) throw Error(ErrorKind::kValidation, "proxies", "unknown subset item '" + id + "'");
    suite.results.push_back(pipeline.retrieve_item(id));
    golds.push_back(t->label);
    texts.push_back({truncate(t->text, cfg.truncation), t->label});
    queries.push_back(pipeline.store().at(id).vector);
    if (t->label) {
      known_golds.push_back(*t->label);
      known_queries.push_back(queries.back());
    }
  }

  ProxyReport semantic = semantic_retrieval_proxies(suite.results, golds);

  ProxyReport stats = statistical_text_proxies(texts, stopwords);
  double context = 0.0;
  for (const auto& r : suite.results) {
    for (const auto& n : r.neighbors) {
      context += static_cast<double>(
          text::tokenize(truncate(pipeline.corpus().find(n.id)->text, cfg.truncation)).size());
    }
  }
  stats.set("context_tokens", context / static_cast<double>(subset.size()));

  ProxyReport ranking;
  ranking.family = ProxyFamily::kRankingStability;
  ranking.subset_size = subset.size();
  const std::vector<int> ks = {2, 3, 5};
  const RecallCurve curve = recall_at_k_curve(base, known_queries, known_golds, ks, cfg.metric);
  for (const auto& [k, v] : curve.recall) ranking.set("recall@" + std::to_string(k), v);
  double tau_sum = 0.0;
  double ndcg_sum = 0.0;
  double overlap_sum = 0.0;
  size_t replacements = 0;
  double pairwise = 0.0;
  double near_dup = 0.0;
  size_t diverse_n = 0;
  size_t ndcg_n = 0;
  SelectionConfig dyn = cfg.selection;
  dyn.mode = SelectionMode::kDynamic;
  SelectionConfig stat = cfg.selection;
  stat.mode = SelectionMode::kStatic;
  for (size_t i = 0; i < suite.results.size(); ++i) {
    const auto& r = suite.results[i];
    auto ids = r.ids();
    std::vector<Neighbor> by_sim = r.neighbors;
    std::sort(by_sim.begin(), by_sim.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
    });
    std::vector<std::string> sim_ids;
    for (const auto& n : by_sim) sim_ids.push_back(n.id);
    tau_sum += kendall_tau(ids, sim_ids);
    if (golds[i]) {
      ndcg_sum += ndcg_at_k(r, *golds[i], cfg.selection.k);
      ++ndcg_n;
    }
    const RetrievalResult plain = select(queries[i], base, cfg.selection, cfg.metric);
    overlap_sum += jaccard(r, plain);
    const RetrievalResult d = select(queries[i], base, dyn, cfg.metric);
    const RetrievalResult s = select(queries[i], base, stat, cfg.metric);
    if (jaccard(d, s) < 1.0) ++replacements;
    if (r.neighbors.size() >= 2) {
      const ProxyReport div = diversity_proxies(r, base);
      pairwise += *div.get("mean_pairwise_cosine");
      near_dup += *div.get("near_dup_fraction");
      ++diverse_n;
    }
  }
  const double nq = static_cast<double>(suite.results.size());
  ranking.set("kendall_tau", tau_sum / nq);
  if (ndcg_n) ranking.set("ndcg_at_k", ndcg_sum / static_cast<double>(ndcg_n));
  ranking.set("mmr_overlap_change", 1.0 - overlap_sum / nq);
  ranking.set("dynamic_replacements", static_cast<double>(replacements) / nq);
  if (diverse_n) {
    ranking.set("mean_pairwise_cosine", pairwise / static_cast<double>(diverse_n));
    ranking.set("near_dup_fraction", near_dup / static_cast<double>(diverse_n));
    ranking.set("novelty_ratio", 1.0 - near_dup / static_cast<double>(diverse_n));
  } else {
    ranking.flags.insert(ranking.flags.end(), {"mean_pairwise_cosine", "near_dup_fraction", "novelty_ratio"});
  }
  ranking.flags.insert(ranking.flags.end(), curve.flags.begin(), curve.flags.end());

  ProxyReport confidence;
  confidence.family = ProxyFamily::kConfidence;
  confidence.subset_size = subset.size();
  double margin = 0.0;
  double entropy = 0.0;
  double vote = 0.0;
  for (const auto& r : suite.results) {
    margin += r.stats.margin;
    const auto labels = r.labels();
    entropy += labels.empty() ? 0.0 : label_entropy(labels);
    vote += vote_confidence(r);
  }
  confidence.set("margin", margin / nq);
  confidence.set("vote_entropy", entropy / nq);
  confidence.set("vote_confidence", vote / nq);

  suite.reports = {semantic, stats, ranking, confidence};
  if (cheap_judge && !known_golds.empty()) {
    std::vector<std::string> labeled;
    for (const auto& id : subset) {
      if (pipeline.corpus().find(id)->label) labeled.push_back(id);
    }
    MiniJudgeResult mini = mini_judge_eval(*cheap_judge, labeled, pipeline);
    ProxyReport cj;
    cj.family = ProxyFamily::kCheapJudge;
    cj.subset_size = labeled.size();
    cj.set("macro_f1", mini.report.macro_f1);
    cj.set("accuracy", mini.report.accuracy);
    cj.set("recall_1", mini.report.recall_1);
    suite.reports.push_back(cj);
    suite.mini_judge = mini.report;
    suite.primary = mini.report.macro_f1;
    suite.primary_name = "mini_judge.macro_f1";
  } else {
    suite.primary = semantic.get("hit_at_k").value_or(0.0);
    suite.primary_name = "hit_at_k";
  }
  return suite;
}

}  // namespace ragcfg
