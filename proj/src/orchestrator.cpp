#include "ragcfg/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "ragcfg/error.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string f4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

// Counts every request that reaches the wrapped backend.
class CountingJudge final : public JudgeBackend {
 public:
  CountingJudge(JudgeBackend& inner, long long& counter) : inner_(inner), counter_(counter) {}
  std::string id() const override { return inner_.id(); }
  std::vector<std::string> complete(const ChatRequest& req) override {
    ++counter_;
    return inner_.complete(req);
  }
  bool supports_n() const override { return inner_.supports_n(); }

 private:
  JudgeBackend& inner_;
  long long& counter_;
};

EvalReport restrict_report(const GoldEval& e, const std::vector<std::string>& ids, const Corpus& corpus) {
  std::vector<Label> preds;
  std::vector<Label> golds;
  for (const auto& id : ids) {
    auto it = e.predictions.find(id);
    if (it == e.predictions.end()) continue;
    preds.push_back(it->second);
    golds.push_back(*corpus.find(id)->label);
  }
  if (preds.empty()) return EvalReport{};
  return evaluate(preds, golds);
}

std::string gold_brief(const EvalReport& r) {
  return "macro-F1 " + f4(r.macro_f1) + ", rec1 " + f4(r.recall_1) + ", acc " + f4(r.accuracy);
}

class LockFile {
 public:
  explicit LockFile(std::string path) : path_(std::move(path)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw Error(ErrorKind::kState, "lock",
                  "output directory is in use by another run (remove " + path_ + " if stale)");
    }
    std::fclose(f);
  }
  ~LockFile() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::string path_;
};

}  // namespace

// ---------------------------------------------------------------- budget / plan

void Budget::validate() const {
  if (max_gold_evals_per_step < 0 || max_proxy_evals_per_step < 0 || max_judge_calls_total < 0) {
    throw Error(ErrorKind::kValidation, "budget", "caps must be non-negative");
  }
}

void to_json(json& j, const Budget& b) {
  j = {{"max_gold_evals_per_step", b.max_gold_evals_per_step},
       {"max_proxy_evals_per_step", b.max_proxy_evals_per_step},
       {"max_judge_calls_total", b.max_judge_calls_total}};
}

void from_json(const json& j, Budget& b) {
  check_keys(j, {"max_gold_evals_per_step", "max_proxy_evals_per_step", "max_judge_calls_total"}, "budget");
  b = Budget{};
  b.max_gold_evals_per_step = j.value("max_gold_evals_per_step", b.max_gold_evals_per_step);
  b.max_proxy_evals_per_step = j.value("max_proxy_evals_per_step", b.max_proxy_evals_per_step);
  b.max_judge_calls_total = j.value("max_judge_calls_total", b.max_judge_calls_total);
  b.validate();
}

void to_json(json& j, const BudgetSpent& b) {
  json gold = json::object();
  json proxy = json::object();
  for (const auto& [s, n] : b.gold_by_step) gold[std::to_string(s)] = n;
  for (const auto& [s, n] : b.proxy_by_step) proxy[std::to_string(s)] = n;
  j = {{"judge_calls", b.judge_calls}, {"mini_judge_calls", b.mini_judge_calls},
       {"gold_evals", b.gold_evals},   {"proxy_evals", b.proxy_evals},
       {"gold_by_step", gold},         {"proxy_by_step", proxy}};
}

void from_json(const json& j, BudgetSpent& b) {
  b = BudgetSpent{};
  b.judge_calls = j.at("judge_calls").get<long long>();
  b.mini_judge_calls = j.at("mini_judge_calls").get<long long>();
  b.gold_evals = j.at("gold_evals").get<int>();
  b.proxy_evals = j.at("proxy_evals").get<int>();
  for (const auto& [k, v] : j.at("gold_by_step").items()) b.gold_by_step[std::stoi(k)] = v.get<int>();
  for (const auto& [k, v] : j.at("proxy_by_step").items()) b.proxy_by_step[std::stoi(k)] = v.get<int>();
}

void RunPlan::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kValidation, "plan", m); };
  for (size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] < 1 || steps[i] > 8) fail("steps must lie in 1..8");
    if (i > 0 && steps[i] <= steps[i - 1]) fail("steps must be strictly increasing");
  }
  for (int k : ks) {
    if (k < 1 || k > kMaxK) fail("grid k must lie in 1..5");
  }
  for (double t : taus) {
    if (t < 0.0 || t > 1.0) fail("grid tau must lie in [0,1]");
  }
  if (ks.empty() || taus.empty() || modes.empty() || metrics.empty() || mmr.empty()) {
    fail("steps 1-4 grids must be non-empty");
  }
  if (top_m < 1) fail("top_m must be >= 1");
  if (proxy_subset_size < 1) fail("proxy_subset_size must be >= 1");
  if (!(tau_stride > 0.0) || tau_min > tau_max || tau_min < 0.0 || tau_max > 1.0) fail("bad tau sweep range");
  if (temperatures.empty() || top_ps.empty() || n_samples.empty()) fail("decoding grid must be non-empty");
  for (double t : temperatures) DecodingParams{t, 1.0, 1}.validate();
  for (double p : top_ps) DecodingParams{0.0, p, 1}.validate();
  for (int n : n_samples) DecodingParams{0.0, 1.0, n}.validate();
  if (mmr_lambda < 0.0 || mmr_lambda > 1.0) fail("mmr_lambda must lie in [0,1]");
  if (prf_alpha < 0.0 || prf_alpha > 1.0) fail("prf_alpha must lie in [0,1]");
}

std::vector<double> RunPlan::tau_sweep() const {
  const int n = static_cast<int>(std::floor((tau_max - tau_min) / tau_stride + 1e-6));
  std::vector<double> out;
  for (int i = 0; i <= n; ++i) out.push_back(round_grid(tau_min + i * tau_stride));
  return out;
}

std::vector<DecodingParams> RunPlan::decoding_grid() const {
  std::vector<DecodingParams> out;
  for (double t : temperatures) {
    for (double p : top_ps) {
      for (int n : n_samples) out.push_back({t, p, n});
    }
  }
  return out;
}

void to_json(json& j, const RunPlan& p) {
  json variants = json::array();
  for (const auto& v : p.step1_variants) {
    variants.push_back({{"embedder_id", v.embedder_id}, {"truncation", v.truncation}});
  }
  json metrics = json::array();
  for (auto m : p.metrics) metrics.push_back(to_string(m));
  json modes = json::array();
  for (auto m : p.modes) modes.push_back(to_string(m));
  j = {{"steps", p.steps},
       {"step1_variants", variants},
       {"metrics", metrics},
       {"ks", p.ks},
       {"taus", p.taus},
       {"modes", modes},
       {"mmr", p.mmr},
       {"mmr_lambda", p.mmr_lambda},
       {"filter_candidate", p.filter_candidate},
       {"prf_alpha", p.prf_alpha},
       {"tau_min", p.tau_min},
       {"tau_max", p.tau_max},
       {"tau_stride", p.tau_stride},
       {"temperatures", p.temperatures},
       {"top_ps", p.top_ps},
       {"n_samples", p.n_samples},
       {"top_m", p.top_m},
       {"proxy_subset_size", p.proxy_subset_size}};
}

void from_json(const json& j, RunPlan& p) {
  check_keys(j,
             {"steps", "step1_variants", "metrics", "ks", "taus", "modes", "mmr", "mmr_lambda",
              "filter_candidate", "prf_alpha", "tau_min", "tau_max", "tau_stride", "temperatures", "top_ps",
              "n_samples", "top_m", "proxy_subset_size"},
             "plan");
  p = RunPlan{};
  if (j.contains("steps")) p.steps = j.at("steps").get<std::vector<int>>();
  if (j.contains("step1_variants")) {
    for (const auto& v : j.at("step1_variants")) {
      check_keys(v, {"embedder_id", "truncation"}, "plan.step1_variants");
      p.step1_variants.push_back(
          {v.at("embedder_id").get<std::string>(), v.at("truncation").get<TruncationSpec>()});
    }
  }
  if (j.contains("metrics")) {
    p.metrics.clear();
    for (const auto& m : j.at("metrics")) p.metrics.push_back(parse_metric(m.get<std::string>()));
  }
  if (j.contains("ks")) p.ks = j.at("ks").get<std::vector<int>>();
  if (j.contains("taus")) p.taus = j.at("taus").get<std::vector<double>>();
  if (j.contains("modes")) {
    p.modes.clear();
    for (const auto& m : j.at("modes")) p.modes.push_back(parse_selection_mode(m.get<std::string>()));
  }
  if (j.contains("mmr")) p.mmr = j.at("mmr").get<std::vector<bool>>();
  p.mmr_lambda = j.value("mmr_lambda", p.mmr_lambda);
  if (j.contains("filter_candidate")) p.filter_candidate = j.at("filter_candidate").get<PostFilterConfig>();
  p.prf_alpha = j.value("prf_alpha", p.prf_alpha);
  p.tau_min = j.value("tau_min", p.tau_min);
  p.tau_max = j.value("tau_max", p.tau_max);
  p.tau_stride = j.value("tau_stride", p.tau_stride);
  if (j.contains("temperatures")) p.temperatures = j.at("temperatures").get<std::vector<double>>();
  if (j.contains("top_ps")) p.top_ps = j.at("top_ps").get<std::vector<double>>();
  if (j.contains("n_samples")) p.n_samples = j.at("n_samples").get<std::vector<int>>();
  p.top_m = j.value("top_m", p.top_m);
  p.proxy_subset_size = j.value("proxy_subset_size", p.proxy_subset_size);
  p.validate();
}

// ---------------------------------------------------------------- clocks

Clock wall_clock() {
  return [] {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
  };
}

Clock counter_clock() {
  auto n = std::make_shared<long long>(0);
  return [n] {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t%06lld", ++*n);
    return std::string(buf);
  };
}

// ---------------------------------------------------------------- eval store

void to_json(json& j, const GoldEval& e) {
  j = {{"config_hash", e.config_hash}, {"config", e.config},   {"report", e.report},
       {"predictions", e.predictions}, {"failed", e.failed},   {"judge_calls", e.judge_calls}};
}

void from_json(const json& j, GoldEval& e) {
  e = GoldEval{};
  e.config_hash = j.at("config_hash").get<std::string>();
  e.config = j.at("config").get<PipelineConfig>();
  e.report = j.at("report").get<EvalReport>();
  e.predictions = j.at("predictions").get<std::map<std::string, Label>>();
  e.failed = j.value("failed", std::vector<std::string>{});
  e.judge_calls = j.at("judge_calls").get<long long>();
}

const GoldEval* EvalStore::find(const std::string& hash) const {
  auto it = index_.find(hash);
  return it == index_.end() ? nullptr : &evals_[it->second];
}

void EvalStore::add(GoldEval e) {
  if (index_.count(e.config_hash)) return;
  index_[e.config_hash] = evals_.size();
  evals_.push_back(std::move(e));
}

EvalStore EvalStore::load(const std::string& path) {
  EvalStore s;
  std::istringstream in(text::read_file(path));
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      s.add(json::parse(line).get<GoldEval>());
    } catch (const json::exception& e) {
      // A torn final line from an interrupted append is dropped.
      if (in.peek() == EOF) break;
      throw Error(ErrorKind::kParse, "eval store", "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return s;
}

// ---------------------------------------------------------------- summary / report

void to_json(json& j, const RunSummary& s) {
  json rows = json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"step", r.step},
                    {"knobs", r.knobs},
                    {"scores", r.scores},
                    {"decision", r.decision},
                    {"reason", r.reason}});
  }
  j = {{"frozen", s.frozen},
       {"frozen_hash", s.frozen_hash},
       {"baseline", s.baseline ? json(*s.baseline) : json(nullptr)},
       {"rows", rows},
       {"spent", s.spent},
       {"completed", s.completed}};
}

void from_json(const json& j, RunSummary& s) {
  s = RunSummary{};
  s.frozen = j.at("frozen").get<PipelineConfig>();
  s.frozen_hash = j.at("frozen_hash").get<std::string>();
  if (!j.at("baseline").is_null()) s.baseline = j.at("baseline").get<EvalReport>();
  for (const auto& r : j.at("rows")) {
    s.rows.push_back({r.at("step").get<int>(), r.at("knobs").get<std::string>(),
                      r.at("scores").get<std::string>(), r.at("decision").get<std::string>(),
                      r.at("reason").get<std::string>()});
  }
  s.spent = j.at("spent").get<BudgetSpent>();
  s.completed = j.at("completed").get<bool>();
}

RunSummary RunResult::summary() const {
  RunSummary s;
  s.frozen = frozen;
  s.frozen_hash = config_hash(frozen);
  s.baseline = baseline;
  s.spent = spent;
  s.completed = completed;
  std::map<int, std::vector<const Decision*>> by_step;
  for (const auto& d : ledger.entries()) by_step[d.step].push_back(&d);
  for (const auto& [step, ds] : by_step) {
    StepRow row;
    row.step = step;
    auto it = reports.find(step);
    if (it != reports.end()) {
      row.knobs = it->second.value("knobs", std::string{});
      row.scores = it->second.value("scores", std::string{});
    }
    for (size_t i = 0; i < ds.size(); ++i) {
      const std::string sep = i == 0 ? "" : (ds[i]->verdict == Verdict::kRollback ? " -> " : "; ");
      row.decision += sep + to_string(ds[i]->verdict);
      row.reason += (i == 0 ? "" : " | ") + ds[i]->reason;
    }
    s.rows.push_back(std::move(row));
  }
  return s;
}

std::string report_text(const RunSummary& s) {
  std::ostringstream out;
  out << "step | knobs | scores | decision | reason\n";
  out << "-----+-------+--------+----------+-------\n";
  for (const auto& r : s.rows) {
    out << r.step << " | " << r.knobs << " | " << r.scores << " | " << r.decision << " | " << r.reason << "\n";
  }
  out << "\nfrozen config " << s.frozen_hash << ": K=" << s.frozen.selection.k
      << ", tau=" << format_number(s.frozen.selection.tau) << ", " << to_string(s.frozen.selection.mode)
      << ", metric=" << to_string(s.frozen.metric) << ", MMR=" << (s.frozen.mmr.enabled ? "ON" : "OFF")
      << ", filters=" << (s.frozen.filters.any() ? "ON" : "OFF")
      << ", expansion=" << (s.frozen.expansion ? "ON" : "OFF") << ", PRF=" << (s.frozen.prf.enabled ? "ON" : "OFF")
      << ", decoding=" << to_string(s.frozen.decoding) << "\n";
  if (s.baseline) out << "baseline: " << gold_brief(*s.baseline) << "\n";
  out << "judge calls " << s.spent.judge_calls << ", mini-judge calls " << s.spent.mini_judge_calls
      << ", gold evals " << s.spent.gold_evals << ", proxy evals " << s.spent.proxy_evals << "\n";
  if (!s.completed) out << "run stopped early\n";
  return out.str();
}

json report_json(const RunSummary& s) { return s; }

// ---------------------------------------------------------------- orchestrator

Orchestrator::Orchestrator(const Corpus& corpus, Backends backends, RunPlan plan, Budget budget,
                           PolicyThresholds thresholds, RunOptions options)
    : corpus_(corpus),
      backends_(std::move(backends)),
      plan_(std::move(plan)),
      budget_(budget),
      thresholds_(thresholds),
      options_(std::move(options)),
      clock_(options_.clock ? options_.clock : wall_clock()) {
  plan_.validate();
  budget_.validate();
  if (!backends_.judge) throw Error(ErrorKind::kValidation, "orchestrator", "no gold judge backend");
  if (options_.parallelism < 1) throw Error(ErrorKind::kValidation, "orchestrator", "parallelism must be >= 1");
}

std::shared_ptr<const EmbeddingStore> Orchestrator::store_for(const std::string& embedder_id,
                                                             const TruncationSpec& truncation) {
  const std::string key = embedder_id + "|" + to_string(truncation);
  auto it = stores_.find(key);
  if (it != stores_.end()) return it->second;
  EmbedderBackend* backend = backends_.embedder ? backends_.embedder(embedder_id) : nullptr;
  if (!backend) throw Error(ErrorKind::kValidation, "embedding", "unknown embedder '" + embedder_id + "'");
  EmbeddingStore store;
  if (!backends_.cache_dir.empty()) {
    const fs::path path =
        fs::path(backends_.cache_dir) / embedding_cache_name(backend->id(), truncation, corpus_.content_hash());
    if (backends_.require_cached_embeddings && !fs::exists(path)) {
      throw Error(ErrorKind::kValidation, "embedding cache",
                  "no cached embeddings for " + backend->id() + " " + to_string(truncation) + " (expected " +
                      path.string() + "); run the embed command first");
    }
    store = get_or_build_store(corpus_, truncation, *backend, backends_.cache_dir, nullptr,
                               backends_.embed_parallelism);
  } else {
    store = embed_corpus(corpus_, truncation, *backend, backends_.embed_parallelism);
  }
  auto ptr = std::make_shared<const EmbeddingStore>(std::move(store));
  stores_[key] = ptr;
  return ptr;
}

Pipeline Orchestrator::pipeline(const PipelineConfig& config) {
  return Pipeline(corpus_, config, store_for(config.embedder_id, config.truncation), options_.instruction);
}

std::vector<std::string> Orchestrator::proxy_subset() const {
  std::vector<std::string> out;
  for (const auto* t : corpus_.split_sorted(Split::kVal)) {
    if (out.size() >= plan_.proxy_subset_size) break;
    out.push_back(t->id);
  }
  return out;
}

std::vector<size_t> Orchestrator::screen(const std::vector<double>& primary, int top_m) {
  if (top_m < 1) throw Error(ErrorKind::kValidation, "screen", "top_m must be >= 1");
  std::vector<size_t> order(primary.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return primary[a] > primary[b]; });
  if (order.size() > static_cast<size_t>(top_m)) order.resize(static_cast<size_t>(top_m));
  return order;
}

GoldEval Orchestrator::evaluate_gold(const PipelineConfig& config, int step) {
  const std::string hash = config_hash(config);
  if (charged_.count(hash)) return *store_.find(hash);
  if (spent_.gold_by_step[step] >= budget_.max_gold_evals_per_step) {
    throw BudgetExhausted("gold evaluations for step " + std::to_string(step) + " reached the cap");
  }
  if (const GoldEval* cached = store_.find(hash)) {
    if (spent_.judge_calls + cached->judge_calls > budget_.max_judge_calls_total) {
      throw BudgetExhausted("judge call cap reached");
    }
    spent_.judge_calls += cached->judge_calls;
    spent_.gold_evals += 1;
    spent_.gold_by_step[step] += 1;
    charged_.insert(hash);
    run_evals_.push_back(*cached);
    return *cached;
  }

  const Pipeline pipe = pipeline(config);
  std::vector<std::string> ids;
  for (const auto* t : corpus_.split_sorted(Split::kVal)) ids.push_back(t->id);
  if (ids.empty()) throw Error(ErrorKind::kValidation, "gold evaluation", "VAL split is empty");

  std::vector<std::optional<Label>> preds(ids.size());
  std::vector<std::string> failure(ids.size());
  long long calls = 0;
  std::atomic<size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex trace_mu;
  std::ofstream trace;
  if (options_.trace && !options_.out_dir.empty()) {
    trace.open(fs::path(options_.out_dir) / "trace.jsonl", std::ios::app);
  }

  auto worker = [&] {
    while (!abort.load()) {
      const size_t i = next.fetch_add(1);
      if (i >= ids.size()) return;
      JudgeOptions opts;
      opts.max_attempts = options_.judge_max_attempts;
      opts.backoff_ms = options_.judge_backoff_ms;
      opts.on_call = [&] {
        std::lock_guard<std::mutex> lock(mu_);
        if (spent_.judge_calls >= budget_.max_judge_calls_total) throw BudgetExhausted("judge call cap reached");
        ++spent_.judge_calls;
        ++calls;
      };
      if (trace.is_open()) {
        opts.on_trace = [&, i](const ChatRequest& req, const std::vector<std::string>& responses) {
          json line = {{"config_hash", hash},
                       {"item", ids[i]},
                       {"temperature", req.temperature},
                       {"top_p", req.top_p},
                       {"n", req.n},
                       {"system_fnv", text::hex64(text::fnv1a64(req.system))},
                       {"user_fnv", text::hex64(text::fnv1a64(req.user))},
                       {"user_chars", req.user.size()},
                       {"responses", responses}};
          std::lock_guard<std::mutex> lock(trace_mu);
          trace << line.dump() << "\n";
        };
      }
      try {
        preds[i] = pipe.classify_item(ids[i], *backends_.judge, opts).label;
      } catch (const BudgetExhausted&) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kTransport || e.kind() == ErrorKind::kParse || e.kind() == ErrorKind::kBackend) {
          failure[i] = e.what();
        } else {
          std::lock_guard<std::mutex> lock(mu_);
          if (!fatal) fatal = std::current_exception();
          abort = true;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      }
    }
  };
  const int threads = std::min<int>(options_.parallelism, static_cast<int>(ids.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  GoldEval e;
  e.config_hash = hash;
  e.config = config;
  e.judge_calls = calls;
  std::vector<Label> p;
  std::vector<Label> g;
  std::string first_failure;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!preds[i]) {
      e.failed.push_back(ids[i]);
      if (first_failure.empty()) first_failure = failure[i];
      continue;
    }
    e.predictions[ids[i]] = *preds[i];
    p.push_back(*preds[i]);
    g.push_back(*corpus_.find(ids[i])->label);
  }
  if (e.failed.size() * 10 > ids.size()) {
    throw Error(ErrorKind::kBackend, "gold evaluation",
                std::to_string(e.failed.size()) + " of " + std::to_string(ids.size()) +
                    " items failed (limit 10%); first: " + first_failure);
  }
  e.report = evaluate(p, g);

  store_.add(e);
  if (!options_.out_dir.empty()) {
    std::ofstream out(fs::path(options_.out_dir) / "evals.jsonl", std::ios::app);
    out << json(e).dump() << "\n";
  }
  charged_.insert(hash);
  spent_.gold_evals += 1;
  spent_.gold_by_step[step] += 1;
  run_evals_.push_back(e);
  return e;
}

std::optional<GoldEval> Orchestrator::try_gold(const PipelineConfig& config, int step) {
  if (!charged_.count(config_hash(config)) && spent_.gold_by_step[step] >= budget_.max_gold_evals_per_step) {
    return std::nullopt;
  }
  return evaluate_gold(config, step);
}

ProxySuite Orchestrator::proxies(const PipelineConfig& config, int step, const std::vector<std::string>& subset) {
  std::string key = config_hash(config);
  for (const auto& id : subset) key += "|" + id;
  auto it = proxy_memo_.find(key);
  if (it != proxy_memo_.end()) return it->second;
  if (spent_.proxy_by_step[step] >= budget_.max_proxy_evals_per_step) {
    throw BudgetExhausted("proxy evaluations for step " + std::to_string(step) + " reached the cap");
  }
  const Pipeline pipe = pipeline(config);
  std::optional<CountingJudge> cheap;
  if (backends_.cheap_judge) cheap.emplace(*backends_.cheap_judge, spent_.mini_judge_calls);
  ProxySuite suite = proxy_suite(pipe, subset, cheap ? &*cheap : nullptr, options_.stopwords);
  spent_.proxy_evals += 1;
  spent_.proxy_by_step[step] += 1;
  proxy_memo_[key] = suite;
  return suite;
}

void Orchestrator::persist() {
  const auto& entries = ledger_.entries();
  for (size_t i = 0; i < std::min(entries.size(), prior_ledger_.size()); ++i) {
    if (!(entries[i] == prior_ledger_[i])) {
      throw Error(ErrorKind::kState, "resume",
                  "persisted ledger diverges from the replayed run at entry " + std::to_string(i));
    }
  }
  if (options_.out_dir.empty()) return;
  const fs::path dir(options_.out_dir);
  save_ledger((dir / "ledger.jsonl").string(), entries);
  RunResult r;
  r.frozen = ledger_.frozen_config(base_config_);
  r.ledger = ledger_;
  r.spent = spent_;
  r.baseline = ledger_.baseline();
  r.reports = reports_;
  r.completed = false;
  save_frozen((dir / "frozen_config.json").string(), r.frozen);
}

void Orchestrator::append(Decision d) {
  const size_t n = ledger_.entries().size();
  d.timestamp = n < prior_ledger_.size() ? prior_ledger_[n].timestamp : clock_();
  ledger_.append(std::move(d));
  persist();
}

Decision Orchestrator::budget_skip(int step, const std::string& what, const std::string& facet) {
  Decision d;
  d.step = step;
  d.facet = facet;
  d.verdict = Verdict::kSkip;
  d.reason = "S" + std::to_string(step) + ".skip: budget (" + what + ")";
  return d;
}

bool Orchestrator::stop_requested(int step) const { return options_.stop_after_step == step; }

// Appends `d`; an adoption is first validated against the gold baseline and
// rolled back when it regresses. Returns false when the step ended on budget.
bool Orchestrator::validate_adoption(const Decision& adopted, int step, double eps) {
  Decision d = adopted;
  if (d.verdict != Verdict::kAdoptFreeze) {
    append(std::move(d));
    return true;
  }
  const PipelineConfig next = apply_delta(ledger_.frozen_config(base_config_), d.candidate);
  if (!ledger_.baseline()) {
    d.proxy["validation"] = "unvalidated (no gold baseline)";
    append(std::move(d));
    return true;
  }
  std::optional<GoldEval> g;
  try {
    g = try_gold(next, step);
  } catch (const BudgetExhausted& e) {
    append(budget_skip(step, e.what(), d.facet));
    return false;
  }
  if (!g) {
    append(budget_skip(step, "no gold evaluation left to validate the adoption", d.facet));
    return false;
  }
  d.gold = g->report;
  const EvalReport base = *ledger_.baseline();
  const Comparison cmp = compare(g->report, base, eps);
  if (cmp.regresses()) {
    d.baseline_macro_f1 = base.macro_f1;
    const std::string facet = d.facet;
    append(std::move(d));
    const size_t n = ledger_.entries().size();
    const std::string ts = n < prior_ledger_.size() ? prior_ledger_[n].timestamp : clock_();
    ledger_.rollback(step,
                     "regression after adoption (macro-F1 " + f4(g->report.macro_f1) + " vs " + f4(base.macro_f1) +
                         ", rec1 " + f4(g->report.recall_1) + " vs " + f4(base.recall_1) + ")",
                     ts, facet);
    persist();
    return true;
  }
  ledger_.offer_baseline(g->report, 0.0);
  d.baseline_macro_f1 = ledger_.baseline()->macro_f1;
  append(std::move(d));
  return true;
}

namespace {

struct GridPoint {
  size_t variant = 0;
  Metric metric = Metric::kCosine;
  SelectionConfig selection;
  bool mmr = false;
  PipelineConfig config;
  double primary = 0.0;
  std::optional<EvalReport> gold;
  std::optional<ProxySuite> suite;
};

}  // namespace

void Orchestrator::run_steps_1_to_4(const PipelineConfig& baseline) {
  std::set<int> active;
  for (int s : plan_.steps) {
    if (s <= 4) active.insert(s);
  }
  if (active.empty()) return;

  std::vector<EmbedderVariant> variants = {{baseline.embedder_id, baseline.truncation}};
  if (active.count(1)) {
    for (const auto& v : plan_.step1_variants) {
      if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
    }
  }
  std::vector<Metric> metrics = {baseline.metric};
  if (active.count(2)) {
    for (auto m : plan_.metrics) {
      if (std::find(metrics.begin(), metrics.end(), m) == metrics.end()) metrics.push_back(m);
    }
  }
  std::vector<SelectionConfig> selections;
  if (active.count(3)) {
    for (int k : plan_.ks) {
      for (double tau : plan_.taus) {
        for (auto mode : plan_.modes) selections.push_back({k, round_grid(tau), mode});
      }
    }
  } else {
    selections.push_back(baseline.selection);
  }
  std::vector<bool> mmrs = {baseline.mmr.enabled};
  if (active.count(4)) {
    mmrs.clear();
    for (bool b : plan_.mmr) {
      if (std::find(mmrs.begin(), mmrs.end(), b) == mmrs.end()) mmrs.push_back(b);
    }
  }

  std::vector<GridPoint> grid;
  for (size_t v = 0; v < variants.size(); ++v) {
    for (auto m : metrics) {
      for (const auto& sel : selections) {
        for (bool on : mmrs) {
          GridPoint p;
          p.variant = v;
          p.metric = m;
          p.selection = sel;
          p.mmr = on;
          p.config = baseline;
          p.config.embedder_id = variants[v].embedder_id;
          p.config.truncation = variants[v].truncation;
          p.config.metric = m;
          p.config.selection = sel;
          p.config.mmr.enabled = on;
          if (on) p.config.mmr.lambda = plan_.mmr_lambda;
          grid.push_back(std::move(p));
        }
      }
    }
  }

  const auto subset = proxy_subset();
  std::string screen_note;
  size_t screened = 0;
  for (auto& p : grid) {
    try {
      p.suite = proxies(p.config, 1, subset);
    } catch (const BudgetExhausted& e) {
      screen_note = e.what();
      break;
    }
    p.primary = p.suite->primary;
    ++screened;
  }
  grid.resize(screened);

  std::set<int> done;
  auto skip_rest = [&](const std::string& why) {
    for (int s : active) {
      if (done.count(s)) continue;
      append(budget_skip(s, why));
      done.insert(s);
      if (stop_requested(s)) {
        stopped_ = true;
        return;
      }
    }
  };
  if (grid.empty()) {
    skip_rest(screen_note.empty() ? "no candidates screened" : screen_note);
    return;
  }

  std::vector<double> primary;
  for (const auto& p : grid) primary.push_back(p.primary);
  const auto survivors = screen(primary, plan_.top_m);
  std::string gold_note;
  for (size_t idx : survivors) {
    try {
      auto g = try_gold(grid[idx].config, 1);
      if (!g) {
        gold_note = "gold cap reached";
        break;
      }
      grid[idx].gold = g->report;
    } catch (const BudgetExhausted& e) {
      gold_note = e.what();
      break;
    }
  }

  size_t anchor = survivors.front();
  for (size_t idx : survivors) {
    if (!grid[idx].gold) continue;
    if (!grid[anchor].gold || grid[idx].gold->macro_f1 > grid[anchor].gold->macro_f1) anchor = idx;
  }

  json screen_table = json::array();
  for (const auto& p : grid) {
    screen_table.push_back({{"config_hash", config_hash(p.config)},
                            {"primary", p.primary},
                            {"gold_macro_f1", p.gold ? json(p.gold->macro_f1) : json(nullptr)}});
  }
  json survivors_json = json::array();
  for (size_t idx : survivors) survivors_json.push_back(config_hash(grid[idx].config));
  reports_[1]["screen"] = {{"grid_size", grid.size()},
                           {"primary", grid.front().suite->primary_name},
                           {"points", screen_table},
                           {"survivors", survivors_json},
                           {"anchor", config_hash(grid[anchor].config)},
                           {"note", screen_note + (gold_note.empty() ? "" : "; " + gold_note)}};

  // Scores for a slice: gold when every point has one, otherwise proxies.
  auto slice_scores = [&](const std::vector<size_t>& slice, std::string& tier) {
    const bool all_gold = std::all_of(slice.begin(), slice.end(), [&](size_t i) { return grid[i].gold.has_value(); });
    tier = all_gold ? "gold" : "proxy";
    std::vector<double> out;
    for (size_t i : slice) out.push_back(all_gold ? grid[i].gold->macro_f1 : grid[i].primary);
    return out;
  };
  auto slice_json = [&](const std::vector<size_t>& slice, const std::vector<double>& scores, const std::string& tier) {
    json pts = json::array();
    for (size_t n = 0; n < slice.size(); ++n) {
      pts.push_back({{"config_hash", config_hash(grid[slice[n]].config)}, {"score", scores[n]}});
    }
    return json{{"tier", tier}, {"slice", pts}, {"survivors", survivors.size()}, {"screened", grid.size()}};
  };
  auto after = [&](int s) {
    done.insert(s);
    if (stop_requested(s)) stopped_ = true;
    return stopped_;
  };

  const GridPoint& a = grid[anchor];
  size_t f_variant = 0;
  Metric f_metric = baseline.metric;
  SelectionConfig f_sel = a.selection;

  try {
    if (active.count(1)) {
      std::vector<size_t> slice;
      for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].metric == a.metric && grid[i].selection == a.selection && grid[i].mmr == a.mmr) slice.push_back(i);
      }
      std::string tier;
      const auto scores = slice_scores(slice, tier);
      std::optional<double> base_score;
      std::vector<ScoredCandidate> cands;
      for (size_t n = 0; n < slice.size(); ++n) {
        const auto& v = variants[grid[slice[n]].variant];
        cands.push_back({json{{"embedder_id", v.embedder_id}, {"truncation", v.truncation}}, scores[n], tier});
        if (grid[slice[n]].variant == 0) base_score = scores[n];
      }
      reports_[1]["knobs"] = std::to_string(variants.size()) + " embedder/truncation variants";
      if (!base_score) {
        append(budget_skip(1, "baseline variant not screened"));
      } else {
        Decision d = decide_step1(cands, *base_score, thresholds_);
        d.proxy = slice_json(slice, scores, tier);
        reports_[1]["scores"] = tier + " best " + f4(*std::max_element(scores.begin(), scores.end())) + " vs " +
                                f4(*base_score);
        validate_adoption(d, 1, thresholds_.eps);
      }
      if (after(1)) return;
    }
    const PipelineConfig after1 = ledger_.frozen_config(base_config_);
    for (size_t v = 0; v < variants.size(); ++v) {
      if (variants[v].embedder_id == after1.embedder_id && variants[v].truncation == after1.truncation) f_variant = v;
    }

    if (active.count(2)) {
      std::vector<size_t> slice;
      for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].variant == f_variant && grid[i].selection == a.selection && grid[i].mmr == a.mmr) slice.push_back(i);
      }
      std::string tier;
      const auto scores = slice_scores(slice, tier);
      std::optional<ScoredCandidate> ref;
      std::vector<ScoredCandidate> alts;
      for (size_t n = 0; n < slice.size(); ++n) {
        ScoredCandidate c{json{{"metric", to_string(grid[slice[n]].metric)}}, scores[n], tier};
        if (grid[slice[n]].metric == baseline.metric) {
          ref = c;
        } else {
          alts.push_back(c);
        }
      }
      reports_[2]["knobs"] = std::to_string(metrics.size()) + " similarity metrics";
      if (!ref) {
        append(budget_skip(2, "reference metric not screened"));
      } else {
        Decision d = decide_step2(alts, *ref, thresholds_);
        d.proxy = slice_json(slice, scores, tier);
        reports_[2]["scores"] = tier + " " + std::string(to_string(baseline.metric)) + " " + f4(ref->score);
        validate_adoption(d, 2, thresholds_.eps);
      }
      if (after(2)) return;
    }
    f_metric = ledger_.frozen_config(base_config_).metric;

    if (active.count(3)) {
      std::vector<size_t> slice;
      for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].variant == f_variant && grid[i].metric == f_metric && grid[i].mmr == a.mmr) slice.push_back(i);
      }
      std::string tier;
      const auto scores = slice_scores(slice, tier);
      Step3Input in;
      in.current = baseline.selection;
      for (size_t n = 0; n < slice.size(); ++n) in.scores.push_back({grid[slice[n]].selection, scores[n]});
      const PipelineConfig cur = ledger_.frozen_config(base_config_);
      const Pipeline pipe = pipeline(cur);
      std::vector<Vector> queries;
      std::vector<Label> golds;
      for (const auto& id : subset) {
        queries.push_back(pipe.store().at(id).vector);
        golds.push_back(*corpus_.find(id)->label);
      }
      std::vector<int> ks = plan_.ks;
      std::sort(ks.begin(), ks.end());
      ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
      const RecallCurve curve = recall_at_k_curve(pipe.case_base(), queries, golds, ks, cur.metric);
      in.recall = curve.recall;
      in.precision = curve.precision;
      reports_[3]["knobs"] = "K in {" + [&] {
        std::string s;
        for (int k : ks) s += (s.empty() ? "" : ",") + std::to_string(k);
        return s;
      }() + "}, " + std::to_string(plan_.taus.size()) + " taus, " + std::to_string(plan_.modes.size()) + " modes";
      std::string rc;
      for (const auto& [k, r] : curve.recall) rc += (rc.empty() ? "" : ", ") + ("recall@" + std::to_string(k) + " " + f4(r));
      reports_[3]["scores"] = rc;
      if (slice.empty()) {
        append(budget_skip(3, "selection grid not screened"));
      } else {
        Decision d = decide_step3(in, thresholds_);
        d.proxy = slice_json(slice, scores, tier);
        d.proxy["recall_flags"] = curve.flags;
        validate_adoption(d, 3, thresholds_.eps);
      }
      if (after(3)) return;
    }
    f_sel = ledger_.frozen_config(base_config_).selection;

    if (active.count(4)) {
      std::optional<size_t> off;
      std::optional<size_t> on;
      for (size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].variant != f_variant || grid[i].metric != f_metric || !(grid[i].selection == f_sel)) continue;
        (grid[i].mmr ? on : off) = i;
      }
      reports_[4]["knobs"] = "MMR on/off, lambda " + format_number(plan_.mmr_lambda);
      if (!off || !on) {
        append(budget_skip(4, "MMR pair not screened at the frozen selection"));
      } else {
        std::string tier;
        const std::vector<size_t> pair = {*off, *on};
        const auto scores = slice_scores(pair, tier);
        const auto* sem = grid[*off].suite->find(ProxyFamily::kSemanticRetrieval);
        const double overlap = sem ? sem->get("overlap_rate").value_or(0.0) : 0.0;
        double minority_delta = 0.0;
        if (tier == "gold") {
          minority_delta = grid[*on].gold->recall_1 - grid[*off].gold->recall_1;
        } else if (grid[*on].suite->mini_judge && grid[*off].suite->mini_judge) {
          minority_delta = grid[*on].suite->mini_judge->recall_1 - grid[*off].suite->mini_judge->recall_1;
        } else {
          const auto* s_on = grid[*on].suite->find(ProxyFamily::kSemanticRetrieval);
          minority_delta = s_on->get("minority_coverage").value_or(0.0) - sem->get("minority_coverage").value_or(0.0);
        }
        Decision d = decide_step4(overlap, minority_delta, scores[1] - scores[0],
                                  MmrConfig{true, plan_.mmr_lambda}, thresholds_);
        d.proxy = slice_json(pair, scores, tier);
        reports_[4]["scores"] = "overlap " + f4(overlap) + ", " + tier + " delta " + f4(scores[1] - scores[0]);
        validate_adoption(d, 4, thresholds_.eps);
      }
      if (after(4)) return;
    }
  } catch (const BudgetExhausted& e) {
    skip_rest(e.what());
  }
}

void Orchestrator::run_step5() {
  const PipelineConfig base = ledger_.frozen_config(base_config_);
  const Pipeline pipe = pipeline(base);
  double conf = 0.0;
  const auto vals = corpus_.split_sorted(Split::kVal);
  for (const auto* t : vals) conf += vote_confidence(pipe.retrieve_item(t->id));
  conf /= static_cast<double>(vals.size());
  PipelineConfig cand = base;
  cand.filters = plan_.filter_candidate;
  double delta = 0.0;
  std::string tier = "none";
  if (conf < thresholds_.step5_gate - kPolicyTolerance) {
    std::optional<GoldEval> gb;
    std::optional<GoldEval> gc;
    if (ledger_.baseline()) {
      gb = try_gold(base, 5);
      if (gb) gc = try_gold(cand, 5);
    }
    if (gb && gc) {
      tier = "gold";
      delta = gc->report.macro_f1 - gb->report.macro_f1;
    } else {
      tier = "proxy";
      const auto subset = proxy_subset();
      delta = proxies(cand, 5, subset).primary - proxies(base, 5, subset).primary;
    }
  }
  Decision d = decide_step5(conf, delta, plan_.filter_candidate, thresholds_);
  d.proxy = {{"tier", tier}, {"confidence", conf}, {"macro_f1_delta", delta}};
  reports_[5]["knobs"] = "dedup/metadata/low_conf, gate " + format_number(thresholds_.step5_gate);
  reports_[5]["scores"] = "confidence " + f4(conf) + (tier == "none" ? "" : ", " + tier + " delta " + f4(delta));
  validate_adoption(d, 5, thresholds_.eps);
}

void Orchestrator::run_step6() {
  const double eps6 = std::max(thresholds_.eps, thresholds_.step6_drop);
  reports_[6]["knobs"] = "train+test expansion; PRF alpha " + format_number(plan_.prf_alpha);
  std::string scores_note;
  {
    const PipelineConfig base = ledger_.frozen_config(base_config_);
    const auto tests = corpus_.split_sorted(Split::kTest);
    const bool labeled = !tests.empty() && std::all_of(tests.begin(), tests.end(), [](const Transcript* t) {
      return t->label.has_value();
    });
    if (base.expansion) {
      Decision d;
      d.step = 6;
      d.verdict = Verdict::kSkip;
      d.reason = "S6.skip: expansion already on";
      append(std::move(d));
    } else if (!labeled) {
      Decision d;
      d.step = 6;
      d.verdict = Verdict::kSkip;
      d.reason = "S6.skip: TEST split empty or unlabeled; expansion OFF";
      append(std::move(d));
    } else {
      const Pipeline pipe = pipeline(base);
      std::vector<ExpansionItem> extra;
      for (const auto* t : tests) extra.push_back({pipe.store().at(t->id), *t->label, t->text});
      const GuardReport guards = check_expansion(pipe.case_base(), corpus_, extra);
      PipelineConfig exp = base;
      exp.expansion = true;
      double base_score = 0.0;
      double exp_score = 0.0;
      std::string tier = "none";
      if (guards.passed()) {
        std::optional<GoldEval> gb;
        std::optional<GoldEval> ge;
        if (ledger_.baseline()) {
          gb = try_gold(base, 6);
          if (gb) ge = try_gold(exp, 6);
        }
        if (gb && ge) {
          tier = "gold";
          base_score = gb->report.macro_f1;
          exp_score = ge->report.macro_f1;
        } else {
          tier = "proxy";
          const auto subset = proxy_subset();
          base_score = proxies(base, 6, subset).primary;
          exp_score = proxies(exp, 6, subset).primary;
        }
      }
      Decision d = decide_step6(exp_score, base_score, guards, thresholds_);
      d.proxy = {{"tier", tier}, {"guards", to_json(guards)}};
      scores_note = "expansion " + tier + " " + f4(exp_score) + " vs " + f4(base_score);
      if (!validate_adoption(d, 6, eps6)) return;
    }
  }
  {
    const PipelineConfig base = ledger_.frozen_config(base_config_);
    PipelineConfig prf = base;
    prf.prf = {true, plan_.prf_alpha};
    const Pipeline pipe = pipeline(base);
    std::vector<std::string> hard;
    for (const auto* t : corpus_.split_sorted(Split::kVal)) {
      if (vote_confidence(pipe.retrieve_item(t->id)) < 1.0) hard.push_back(t->id);
    }
    if (base.prf.enabled || hard.empty()) {
      Decision d;
      d.step = 6;
      d.facet = "prf";
      d.verdict = Verdict::kSkip;
      d.reason = base.prf.enabled ? "S6.prf.skip: PRF already on" : "S6.prf.skip: no hard queries; PRF OFF";
      append(std::move(d));
    } else {
      std::optional<GoldEval> gb;
      std::optional<GoldEval> gp;
      if (ledger_.baseline()) {
        gb = try_gold(base, 6);
        if (gb) gp = try_gold(prf, 6);
      }
      double base_score = 0.0;
      double prf_score = 0.0;
      std::string tier;
      if (gb && gp) {
        tier = "gold";
        base_score = restrict_report(*gb, hard, corpus_).macro_f1;
        prf_score = restrict_report(*gp, hard, corpus_).macro_f1;
      } else {
        tier = "proxy";
        std::vector<std::string> subset(hard.begin(),
                                        hard.begin() + static_cast<long>(std::min(hard.size(), plan_.proxy_subset_size)));
        base_score = proxies(base, 6, subset).primary;
        prf_score = proxies(prf, 6, subset).primary;
      }
      Decision d = decide_step6_prf(prf_score, base_score, plan_.prf_alpha, thresholds_);
      d.proxy = {{"tier", tier}, {"hard_queries", hard.size()}};
      scores_note += (scores_note.empty() ? "" : "; ") + ("PRF hard-subset " + tier + " " + f4(prf_score) + " vs " +
                                                          f4(base_score));
      validate_adoption(d, 6, eps6);
    }
  }
  reports_[6]["scores"] = scores_note;
}

void Orchestrator::run_step7() {
  const PipelineConfig base = ledger_.frozen_config(base_config_);
  const auto taus = plan_.tau_sweep();
  std::vector<PipelineConfig> configs;
  int uncharged = 0;
  for (double tau : taus) {
    PipelineConfig c = base;
    c.selection.tau = tau;
    if (!charged_.count(config_hash(c))) ++uncharged;
    configs.push_back(c);
  }
  reports_[7]["knobs"] = "tau in [" + format_number(plan_.tau_min) + ", " + format_number(plan_.tau_max) + "] stride " +
                         format_number(plan_.tau_stride) + " (" + std::to_string(taus.size()) + " points)";
  std::vector<TauPoint> sweep;
  EvalReport baseline;
  std::string tier;
  const bool gold_ok = budget_.max_gold_evals_per_step - spent_.gold_by_step[7] >= uncharged;
  if (gold_ok) {
    tier = "gold";
    for (size_t i = 0; i < taus.size(); ++i) sweep.push_back({taus[i], evaluate_gold(configs[i], 7).report});
    baseline = ledger_.baseline() ? *ledger_.baseline() : evaluate_gold(base, 7).report;
  } else if (backends_.cheap_judge) {
    tier = "proxy";
    const auto subset = proxy_subset();
    for (size_t i = 0; i < taus.size(); ++i) sweep.push_back({taus[i], *proxies(configs[i], 7, subset).mini_judge});
    baseline = *proxies(base, 7, subset).mini_judge;
  } else {
    append(budget_skip(7, "gold cap below the sweep size and no cheap judge"));
    return;
  }
  json table = json::array();
  for (const auto& p : sweep) table.push_back({{"tau", p.tau}, {"report", p.report}});
  reports_[7]["sweep"] = table;
  reports_[7]["tier"] = tier;
  Decision d = decide_step7(sweep, baseline, base.selection.tau, thresholds_);
  d.proxy = {{"tier", tier}, {"points", sweep.size()}};
  auto best = sweep.begin();
  for (auto it = sweep.begin(); it != sweep.end(); ++it) {
    const double gap = it->report.macro_f1 - best->report.macro_f1;
    if (gap > kPolicyTolerance || (gap >= -kPolicyTolerance && std::abs(it->tau - base.selection.tau) <
                                                                     std::abs(best->tau - base.selection.tau))) {
      best = it;
    }
  }
  reports_[7]["scores"] = tier + " best tau " + format_number(best->tau) + " macro-F1 " + f4(best->report.macro_f1) +
                          " vs baseline " + f4(baseline.macro_f1);
  validate_adoption(d, 7, thresholds_.eps);
}

void Orchestrator::run_step8() {
  const PipelineConfig base = ledger_.frozen_config(base_config_);
  const auto grid_params = plan_.decoding_grid();
  std::vector<PipelineConfig> configs;
  int uncharged = 0;
  for (const auto& dp : grid_params) {
    PipelineConfig c = base;
    c.decoding = dp;
    if (!charged_.count(config_hash(c))) ++uncharged;
    configs.push_back(c);
  }
  reports_[8]["knobs"] = "temp x top_p x n (" + std::to_string(grid_params.size()) + " points)";
  std::vector<DecodingPoint> grid;
  EvalReport baseline;
  std::string tier;
  const bool gold_ok = budget_.max_gold_evals_per_step - spent_.gold_by_step[8] >= uncharged;
  if (gold_ok) {
    tier = "gold";
    for (size_t i = 0; i < configs.size(); ++i) grid.push_back({grid_params[i], evaluate_gold(configs[i], 8).report});
    baseline = ledger_.baseline() ? *ledger_.baseline() : evaluate_gold(base, 8).report;
  } else if (backends_.cheap_judge) {
    tier = "proxy";
    const auto subset = proxy_subset();
    for (size_t i = 0; i < configs.size(); ++i) grid.push_back({grid_params[i], *proxies(configs[i], 8, subset).mini_judge});
    baseline = *proxies(base, 8, subset).mini_judge;
  } else {
    append(budget_skip(8, "gold cap below the grid size and no cheap judge"));
    return;
  }
  json table = json::array();
  for (const auto& p : grid) table.push_back({{"params", p.params}, {"report", p.report}});
  reports_[8]["grid"] = table;
  reports_[8]["tier"] = tier;
  Decision d = decide_step8(grid, baseline, base.decoding, thresholds_);
  d.proxy = {{"tier", tier}, {"points", grid.size()}};
  auto best = grid.begin();
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    const double gap = it->report.macro_f1 - best->report.macro_f1;
    if (gap > kPolicyTolerance || (gap >= -kPolicyTolerance && it->params == base.decoding)) best = it;
  }
  reports_[8]["scores"] = tier + " best " + to_string(best->params) + " macro-F1 " + f4(best->report.macro_f1) +
                          " vs baseline " + f4(baseline.macro_f1);
  validate_adoption(d, 8, thresholds_.eps);
}

void Orchestrator::begin_run() {
  store_ = EvalStore{};
  charged_.clear();
  proxy_memo_.clear();
  spent_ = BudgetSpent{};
  ledger_ = LockLedger{};
  reports_.clear();
  run_evals_.clear();
  prior_ledger_.clear();
  stopped_ = false;
  if (options_.out_dir.empty()) return;
  const fs::path dir(options_.out_dir);
  const fs::path evals = dir / "evals.jsonl";
  const fs::path ledger = dir / "ledger.jsonl";
  if (options_.resume) {
    if (fs::exists(evals)) store_ = EvalStore::load(evals.string());
    if (fs::exists(ledger)) prior_ledger_ = load_ledger(ledger.string());
    // Rewrite the store without a torn tail so later appends stay parseable.
    std::string clean;
    for (const auto& e : store_.all()) clean += json(e).dump() + "\n";
    text::write_file_atomic(evals.string(), clean);
  } else {
    for (const char* name : {"evals.jsonl", "ledger.jsonl", "trace.jsonl", "report.txt", "report.json",
                             "frozen_config.json"}) {
      std::error_code ec;
      fs::remove(dir / name, ec);
    }
  }
}

RunResult Orchestrator::run(const PipelineConfig& baseline) {
  baseline.validate();
  corpus_.require_runnable();
  std::unique_ptr<LockFile> lock;
  if (!options_.out_dir.empty()) {
    fs::create_directories(options_.out_dir);
    lock = std::make_unique<LockFile>((fs::path(options_.out_dir) / ".lock").string());
  }
  begin_run();
  base_config_ = baseline;

  if (!plan_.steps.empty()) {
    reports_[0]["knobs"] = "baseline";
    if (budget_.max_gold_evals_per_step > 0) {
      try {
        const GoldEval g = evaluate_gold(baseline, 0);
        ledger_.force_baseline(g.report);
        reports_[0]["scores"] = gold_brief(g.report);
      } catch (const BudgetExhausted& e) {
        reports_[0]["scores"] = std::string("no gold baseline: ") + e.what();
      }
    } else {
      reports_[0]["scores"] = "no gold baseline (gold cap 0)";
    }
    persist();
    if (stop_requested(0)) stopped_ = true;
  }

  auto has = [&](int s) { return std::find(plan_.steps.begin(), plan_.steps.end(), s) != plan_.steps.end(); };
  auto guarded = [&](int step, void (Orchestrator::*fn)()) {
    if (stopped_ || !has(step)) return;
    const size_t before = ledger_.entries().size();
    try {
      (this->*fn)();
    } catch (const BudgetExhausted& e) {
      bool wrote = false;
      for (size_t i = before; i < ledger_.entries().size(); ++i) wrote |= ledger_.entries()[i].step == step;
      if (!wrote || step == 6) {
        const bool prf_pending = step == 6 && wrote;
        append(budget_skip(step, e.what(), prf_pending ? "prf" : ""));
      }
    }
    if (stop_requested(step)) stopped_ = true;
  };
  if (!stopped_) run_steps_1_to_4(baseline);
  guarded(5, &Orchestrator::run_step5);
  guarded(6, &Orchestrator::run_step6);
  guarded(7, &Orchestrator::run_step7);
  guarded(8, &Orchestrator::run_step8);

  RunResult r;
  r.frozen = ledger_.frozen_config(base_config_);
  r.ledger = ledger_;
  r.spent = spent_;
  r.baseline = ledger_.baseline();
  r.reports = reports_;
  r.evals = run_evals_;
  r.completed = !stopped_;
  if (!options_.out_dir.empty()) {
    const fs::path dir(options_.out_dir);
    persist();
    const RunSummary s = r.summary();
    text::write_file_atomic((dir / "report.txt").string(), report_text(s));
    text::write_file_atomic((dir / "report.json").string(), report_json(s).dump(2) + "\n");
  }
  return r;
}

ClassifyResult classify(const std::string& text_in, const PipelineConfig& frozen, const Corpus& corpus,
                        EmbedderBackend& embedder, JudgeBackend& judge_backend,
                        std::shared_ptr<const EmbeddingStore> store, const std::string& instruction) {
  if (text::trim(text_in).empty()) throw Error(ErrorKind::kValidation, "classify", "empty text");
  const Pipeline pipe(corpus, frozen, std::move(store), instruction);
  const Vector q = embed({"query", text_in}, frozen.truncation, embedder, pipe.case_base().dim());
  ClassifyResult out;
  out.neighbors = pipe.retrieve(q);
  out.verdict = judge(pipe.prompt(text_in, out.neighbors), frozen.decoding, judge_backend);
  return out;
}

}  // namespace ragcfg
