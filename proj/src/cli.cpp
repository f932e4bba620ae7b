#include "ragcfg/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "ragcfg/error.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string{};
}

MockBehavior parse_behavior(const std::string& s) {
  if (s == "echo") return MockBehavior::kEchoNeighborMajority;
  if (s == "fixed") return MockBehavior::kFixed;
  if (s == "noisy") return MockBehavior::kNoisy;
  throw Error(ErrorKind::kValidation, "config", "unknown mock behavior '" + s + "'");
}

}  // namespace

// ---------------------------------------------------------------- specs

std::string EmbedderSpec::backend_id(std::uint64_t run_seed) const {
  if (type == "pseudo") return "pseudo-d" + std::to_string(dim) + "-s" + std::to_string(seed.value_or(run_seed));
  if (type == "precomputed") return name;
  if (type == "http") return "http:" + model;
  throw Error(ErrorKind::kValidation, "config", "unknown embedder type '" + type + "'");
}

void to_json(json& j, const EmbedderSpec& s) {
  j = {{"type", s.type}};
  if (s.type == "pseudo") {
    j["dim"] = s.dim;
    if (s.seed) j["seed"] = *s.seed;
  } else if (s.type == "precomputed") {
    j["path"] = s.path;
    j["name"] = s.name;
  } else {
    j["url"] = s.url;
    j["model"] = s.model;
    j["api_key_env"] = s.api_key_env;
  }
}

void from_json(const json& j, EmbedderSpec& s) {
  check_keys(j, {"type", "seed", "dim", "path", "name", "url", "model", "api_key_env"}, "config.embedder");
  s = EmbedderSpec{};
  read_opt(j, "type", s.type);
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  read_opt(j, "dim", s.dim);
  read_opt(j, "path", s.path);
  read_opt(j, "name", s.name);
  read_opt(j, "url", s.url);
  read_opt(j, "model", s.model);
  read_opt(j, "api_key_env", s.api_key_env);
  if (s.type == "pseudo") {
    if (s.dim < 1) throw Error(ErrorKind::kValidation, "config.embedder", "dim must be >= 1");
  } else if (s.type == "precomputed") {
    if (s.path.empty()) throw Error(ErrorKind::kValidation, "config.embedder", "precomputed needs a path");
  } else if (s.type == "http") {
    if (s.url.empty() || s.model.empty()) {
      throw Error(ErrorKind::kValidation, "config.embedder", "http needs url and model");
    }
  } else {
    throw Error(ErrorKind::kValidation, "config.embedder", "unknown type '" + s.type + "'");
  }
}

void to_json(json& j, const JudgeSpec& s) {
  j = {{"type", s.type}};
  if (s.type == "mock") {
    j["behavior"] = s.behavior;
    j["p"] = s.p;
    j["fixed_label"] = s.fixed_label;
  } else {
    j["url"] = s.url;
    j["model"] = s.model;
    j["api_key_env"] = s.api_key_env;
    j["supports_n"] = s.supports_n;
  }
}

void from_json(const json& j, JudgeSpec& s) {
  check_keys(j, {"type", "behavior", "p", "fixed_label", "url", "model", "api_key_env", "supports_n"},
             "config.judge");
  s = JudgeSpec{};
  read_opt(j, "type", s.type);
  read_opt(j, "behavior", s.behavior);
  read_opt(j, "p", s.p);
  read_opt(j, "fixed_label", s.fixed_label);
  read_opt(j, "url", s.url);
  read_opt(j, "model", s.model);
  read_opt(j, "api_key_env", s.api_key_env);
  read_opt(j, "supports_n", s.supports_n);
  if (s.type == "mock") {
    parse_behavior(s.behavior);
    if (s.p < 0.0 || s.p > 1.0) throw Error(ErrorKind::kValidation, "config.judge", "p must lie in [0,1]");
    if (s.fixed_label != 0 && s.fixed_label != 1) {
      throw Error(ErrorKind::kValidation, "config.judge", "fixed_label must be 0 or 1");
    }
  } else if (s.type == "http") {
    if (s.url.empty()) throw Error(ErrorKind::kValidation, "config.judge", "http needs a url");
  } else {
    throw Error(ErrorKind::kValidation, "config.judge", "unknown type '" + s.type + "'");
  }
}

void to_json(json& j, const RunConfigFile& c) {
  j = json::object();
  if (c.synthetic) {
    j["corpus"] = {{"synthetic",
                    {{"n_per_class", c.synthetic->n_per_class},
                     {"seed", c.synthetic->seed},
                     {"separation", c.synthetic->separation}}}};
  } else {
    j["corpus"] = c.corpus_path;
  }
  j["label_flip"] = c.label_flip;
  j["embedder"] = c.embedder;
  j["variant_embedders"] = c.variant_embedders;
  j["judge"] = c.judge;
  j["cheap_judge"] = c.cheap_judge ? json(*c.cheap_judge) : json(nullptr);
  j["baseline"] = c.baseline;
  j["plan"] = c.plan;
  j["budget"] = c.budget;
  j["thresholds"] = c.thresholds;
  j["out"] = c.out;
  j["seed"] = c.seed;
  j["parallelism"] = c.parallelism;
  j["instruction_path"] = c.instruction_path;
  j["stopwords_path"] = c.stopwords_path;
}

void from_json(const json& j, RunConfigFile& c) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "config", "top level must be an object");
  check_keys(j,
             {"corpus", "label_flip", "embedder", "variant_embedders", "judge", "cheap_judge", "baseline", "plan",
              "budget", "thresholds", "out", "seed", "parallelism", "instruction_path",
              "stopwords_path"},
             "config");
  c = RunConfigFile{};
  if (!j.contains("corpus")) throw Error(ErrorKind::kValidation, "config", "missing 'corpus'");
  const json& corpus = j.at("corpus");
  if (corpus.is_string()) {
    c.corpus_path = corpus.get<std::string>();
  } else {
    check_keys(corpus, {"synthetic"}, "config.corpus");
    const json& s = corpus.at("synthetic");
    check_keys(s, {"n_per_class", "seed", "separation"}, "config.corpus.synthetic");
    SyntheticSpec spec;
    read_opt(s, "n_per_class", spec.n_per_class);
    read_opt(s, "seed", spec.seed);
    read_opt(s, "separation", spec.separation);
    c.synthetic = spec;
  }
  read_opt(j, "label_flip", c.label_flip);
  read_opt(j, "seed", c.seed);
  if (j.contains("embedder")) c.embedder = j.at("embedder").get<EmbedderSpec>();
  if (j.contains("variant_embedders")) c.variant_embedders = j.at("variant_embedders").get<std::vector<EmbedderSpec>>();
  if (j.contains("judge")) c.judge = j.at("judge").get<JudgeSpec>();
  if (j.contains("cheap_judge") && !j.at("cheap_judge").is_null()) c.cheap_judge = j.at("cheap_judge").get<JudgeSpec>();
  c.baseline.embedder_id = c.embedder.backend_id(c.seed);
  if (j.contains("baseline")) from_json(j.at("baseline"), c.baseline);
  c.baseline.validate();
  if (j.contains("plan")) c.plan = j.at("plan").get<RunPlan>();
  if (j.contains("budget")) c.budget = j.at("budget").get<Budget>();
  if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<PolicyThresholds>();
  read_opt(j, "out", c.out);
  read_opt(j, "parallelism", c.parallelism);
  read_opt(j, "instruction_path", c.instruction_path);
  read_opt(j, "stopwords_path", c.stopwords_path);
  if (c.parallelism < 1) throw Error(ErrorKind::kValidation, "config", "parallelism must be >= 1");
}

RunConfigFile load_run_config(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kValidation, "config", "no such file " + path);
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, "config", e.what());
  }
  RunConfigFile c;
  try {
    c = j.get<RunConfigFile>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, "config", e.what());
  }
  if (!c.stopwords_path.empty() && !fs::exists(c.stopwords_path)) {
    throw Error(ErrorKind::kValidation, "stopwords", "no such file " + c.stopwords_path);
  }
  return c;
}

std::unique_ptr<EmbedderBackend> make_embedder(const EmbedderSpec& s, std::uint64_t run_seed) {
  if (s.type == "pseudo") return std::make_unique<PseudoEmbedder>(s.seed.value_or(run_seed), s.dim);
  if (s.type == "precomputed") {
    auto p = PrecomputedEmbedder::load(s.path);
    return std::make_unique<PrecomputedEmbedder>(std::move(*p));
  }
  HttpEndpoint ep;
  ep.url = s.url;
  ep.model = s.model;
  ep.api_key = env_or_empty(s.api_key_env);
  return std::make_unique<HttpEmbedder>(ep);
}

std::unique_ptr<JudgeBackend> make_judge(const JudgeSpec& s, std::uint64_t run_seed) {
  if (s.type == "mock") return mock_backend(run_seed, parse_behavior(s.behavior), s.p, s.fixed_label);
  JudgeEndpoint ep;
  ep.url = s.url;
  ep.model = s.model;
  ep.api_key = env_or_empty(s.api_key_env);
  ep.supports_n = s.supports_n;
  return std::make_unique<HttpJudge>(ep);
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kTransport:
    case ErrorKind::kBackend:
      return 2;
    default:
      return 1;
  }
}

// ---------------------------------------------------------------- commands

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string resume;  // "" = off; "-" = out/ledger.jsonl
  bool trace = false;
  bool label_flip = false;
  bool test_clock = false;
  int stop_after = -1;
  std::string text;
  std::string text_file;
  std::string in;
  bool as_json = false;
};

struct Workspace {
  RunConfigFile cfg;
  fs::path out;
  std::vector<std::unique_ptr<EmbedderBackend>> embedders;

  fs::path corpus_cache() const { return out / "corpus.jsonl"; }
  fs::path cache_dir() const { return out / "cache"; }

  EmbedderBackend* resolve(const std::string& id) {
    for (auto& e : embedders) {
      if (e->id() == id) return e.get();
    }
    return nullptr;
  }

  void build_embedders() {
    embedders.push_back(make_embedder(cfg.embedder, cfg.seed));
    for (const auto& v : cfg.variant_embedders) {
      if (v.backend_id(cfg.seed) == embedders.front()->id()) continue;
      embedders.push_back(make_embedder(v, cfg.seed));
    }
  }

  Corpus load_ingested() const {
    if (!fs::exists(corpus_cache())) {
      throw Error(ErrorKind::kValidation, "ingest cache",
                  "no ingested corpus at " + corpus_cache().string() + "; run the ingest command first");
    }
    return load_jsonl(corpus_cache().string());
  }

  std::string instruction() const {
    return cfg.instruction_path.empty() ? default_system_instruction() : load_instruction(cfg.instruction_path);
  }
};

Workspace open_workspace(const Flags& f) {
  if (f.config.empty()) throw Error(ErrorKind::kValidation, "cli", "--config is required");
  Workspace w;
  w.cfg = load_run_config(f.config);
  if (f.seed && *f.seed != w.cfg.seed) {
    // Re-derive seed-dependent ids when the seed is overridden.
    const bool default_id = w.cfg.baseline.embedder_id == w.cfg.embedder.backend_id(w.cfg.seed);
    w.cfg.seed = *f.seed;
    if (default_id) w.cfg.baseline.embedder_id = w.cfg.embedder.backend_id(w.cfg.seed);
  }
  if (f.label_flip) w.cfg.label_flip = true;
  w.out = f.out.empty() ? fs::path(w.cfg.out) : fs::path(f.out);
  return w;
}

int cmd_ingest(const Flags& f, std::ostream& out) {
  Workspace w = open_workspace(f);
  Corpus corpus;
  if (w.cfg.synthetic && f.in.empty()) {
    SyntheticSpec spec = *w.cfg.synthetic;
    corpus = generate_synthetic(spec);
  } else {
    LoadOptions opts;
    opts.label_flip = w.cfg.label_flip;
    corpus = load_jsonl(f.in.empty() ? w.cfg.corpus_path : f.in, opts);
  }
  corpus.require_runnable();
  fs::create_directories(w.out);
  save_jsonl(corpus, w.corpus_cache().string());
  json counts = json::object();
  for (const auto& [split, by_label] : corpus.class_counts()) {
    json m = json::object();
    for (const auto& [label, n] : by_label) m[std::to_string(label)] = n;
    counts[to_string(split)] = m;
  }
  out << json{{"items", corpus.size()}, {"content_hash", corpus.content_hash()}, {"class_counts", counts}}.dump(2)
      << "\n";
  return 0;
}

int cmd_embed(const Flags& f, std::ostream& out) {
  Workspace w = open_workspace(f);
  const Corpus corpus = w.load_ingested();
  w.build_embedders();
  std::vector<EmbedderVariant> wanted = {{w.cfg.baseline.embedder_id, w.cfg.baseline.truncation}};
  for (const auto& v : w.cfg.plan.step1_variants) {
    if (std::find(wanted.begin(), wanted.end(), v) == wanted.end()) wanted.push_back(v);
  }
  json rows = json::array();
  for (const auto& v : wanted) {
    EmbedderBackend* backend = w.resolve(v.embedder_id);
    if (!backend) throw Error(ErrorKind::kValidation, "embedding", "unknown embedder '" + v.embedder_id + "'");
    bool hit = false;
    const EmbeddingStore store =
        get_or_build_store(corpus, v.truncation, *backend, w.cache_dir().string(), &hit, w.cfg.parallelism);
    rows.push_back({{"embedder_id", v.embedder_id},
                    {"truncation", to_string(v.truncation)},
                    {"dim", store.dim},
                    {"records", store.records.size()},
                    {"cache", hit ? "hit" : "built"}});
  }
  out << rows.dump(2) << "\n";
  return 0;
}

RunResult orchestrate(Workspace& w, const Flags& f, const RunPlan& plan, const fs::path& out_dir,
                      const PipelineConfig& baseline) {
  const Corpus corpus = w.load_ingested();
  w.build_embedders();
  auto judge_backend = make_judge(w.cfg.judge, w.cfg.seed);
  std::unique_ptr<JudgeBackend> cheap;
  if (w.cfg.cheap_judge) cheap = make_judge(*w.cfg.cheap_judge, w.cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Backends b;
  b.embedder = [&w](const std::string& id) { return w.resolve(id); };
  b.judge = judge_backend.get();
  b.cheap_judge = cheap.get();
  b.cache_dir = w.cache_dir().string();
  b.require_cached_embeddings = true;
  b.embed_parallelism = w.cfg.parallelism;
  RunOptions o;
  o.out_dir = out_dir.string();
  o.trace = f.trace;
  o.parallelism = w.cfg.parallelism;
  o.seed = w.cfg.seed;
  o.stop_after_step = f.stop_after;
  o.instruction = w.instruction();
  if (!w.cfg.stopwords_path.empty()) o.stopwords = text::load_stopwords(w.cfg.stopwords_path);
  if (f.test_clock) o.clock = counter_clock();
  if (!f.resume.empty()) {
    o.resume = true;
    const fs::path target = out_dir / "ledger.jsonl";
    if (f.resume != "-" && fs::path(f.resume) != target) {
      if (!fs::exists(f.resume)) throw Error(ErrorKind::kValidation, "resume", "no ledger at " + f.resume);
      fs::create_directories(out_dir);
      fs::copy_file(f.resume, target, fs::copy_options::overwrite_existing);
    }
  }
  Orchestrator orch(corpus, b, plan, w.cfg.budget, w.cfg.thresholds, o);
  return orch.run(baseline);
}

int cmd_run(const Flags& f, std::ostream& out) {
  Workspace w = open_workspace(f);
  const RunResult r = orchestrate(w, f, w.cfg.plan, w.out, w.cfg.baseline);
  out << report_text(r.summary());
  out << "artifacts: " << (w.out / "ledger.jsonl").string() << ", " << (w.out / "frozen_config.json").string()
      << ", " << (w.out / "report.txt").string() << "\n";
  return 0;
}

PipelineConfig sweep_base(const Workspace& w) {
  const fs::path frozen = w.out / "frozen_config.json";
  return fs::exists(frozen) ? load_frozen(frozen.string()) : w.cfg.baseline;
}

int cmd_sweep(const Flags& f, std::ostream& out, int step) {
  Workspace w = open_workspace(f);
  RunPlan plan = w.cfg.plan;
  plan.steps = {step};
  const fs::path dir = w.out / (step == 7 ? "sweep-threshold" : "sweep-decoding");
  const RunResult r = orchestrate(w, f, plan, dir, sweep_base(w));
  const size_t recorded = EvalStore::load((dir / "evals.jsonl").string()).all().size();
  const auto it = r.reports.find(step);
  if (it != r.reports.end()) {
    out << it->second.value(step == 7 ? "sweep" : "grid", json::array()).dump(2) << "\n";
  }
  out << report_text(r.summary());
  out << "gold evaluations recorded: " << recorded << "\n";
  return 0;
}

int cmd_classify(const Flags& f, std::ostream& out) {
  Workspace w = open_workspace(f);
  std::string input = f.text;
  if (!f.text_file.empty()) input = text::read_file(f.text_file);
  const fs::path frozen_path = w.out / "frozen_config.json";
  if (!fs::exists(frozen_path)) {
    throw Error(ErrorKind::kValidation, "frozen config", "no frozen config at " + frozen_path.string());
  }
  const PipelineConfig frozen = load_frozen(frozen_path.string());
  const Corpus corpus = w.load_ingested();
  w.build_embedders();
  EmbedderBackend* embedder = w.resolve(frozen.embedder_id);
  if (!embedder) throw Error(ErrorKind::kValidation, "embedding", "unknown embedder '" + frozen.embedder_id + "'");
  const fs::path cache = w.cache_dir() / embedding_cache_name(embedder->id(), frozen.truncation, corpus.content_hash());
  if (!fs::exists(cache)) {
    throw Error(ErrorKind::kValidation, "embedding cache", "missing " + cache.string() + "; run the embed command first");
  }
  auto store = std::make_shared<const EmbeddingStore>(load_embedding_cache(cache.string()));
  auto judge_backend = make_judge(w.cfg.judge, w.cfg.seed);
  const ClassifyResult res = classify(input, frozen, corpus, *embedder, *judge_backend, store, w.instruction());
  json neighbors = json::array();
  for (const auto& n : res.neighbors.neighbors) {
    neighbors.push_back({{"id", n.id}, {"similarity", n.similarity}, {"label", n.label}});
  }
  out << json{{"label", res.verdict.label},
              {"confidence", res.verdict.confidence},
              {"votes", res.verdict.votes},
              {"selection", to_string(res.neighbors.mode_used)},
              {"neighbors", neighbors}}
             .dump(2)
      << "\n";
  return 0;
}

int cmd_report(const Flags& f, std::ostream& out) {
  Workspace w = open_workspace(f);
  const fs::path path = w.out / "report.json";
  if (!fs::exists(path)) throw Error(ErrorKind::kValidation, "report", "no report at " + path.string());
  RunSummary s;
  try {
    s = json::parse(text::read_file(path.string())).get<RunSummary>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, "report", e.what());
  }
  if (f.as_json) {
    out << report_json(s).dump(2) << "\n";
  } else {
    out << report_text(s);
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Policy-governed configuration search for retrieval-augmented transcript classification", "ragcfg"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "Run configuration file (JSON)")->required();
    sub->add_option("--out", f.out, "Output directory (overrides the config's 'out')");
    sub->add_option("--seed", f.seed, "Top-level seed (overrides the config's 'seed')");
  };
  auto runlike = [&f](CLI::App* sub) {
    sub->add_option("--resume", f.resume, "Resume from a ledger (default: <out>/ledger.jsonl)")
        ->expected(0, 1)
        ->default_str("-");
    sub->add_flag("--trace", f.trace, "Write redacted judge traces to trace.jsonl");
    sub->add_flag("--test-clock", f.test_clock, "Use counter timestamps t000001, ... for reproducible ledgers");
    sub->add_option("--stop-after", f.stop_after, "Stop after this step's ledger entries are written");
  };

  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and write <out>/corpus.jsonl");
  common(ingest);
  ingest->add_option("--in", f.in, "Corpus JSONL (overrides the config's 'corpus')");
  ingest->add_flag("--label-flip", f.label_flip, "Input labels use 0 = depressed (PHQ-8 scores still win)");
  auto* embed = app.add_subcommand("embed", "Embed the ingested corpus into <out>/cache");
  common(embed);
  auto* run = app.add_subcommand("run", "Run the staged search and freeze a configuration");
  common(run);
  runlike(run);
  auto* sweep_t = app.add_subcommand("sweep-threshold", "Gold sweep of the similarity threshold");
  common(sweep_t);
  runlike(sweep_t);
  auto* sweep_d = app.add_subcommand("sweep-decoding", "Gold sweep of the decoding grid");
  common(sweep_d);
  runlike(sweep_d);
  auto* cls = app.add_subcommand("classify", "Classify one transcript under the frozen configuration");
  common(cls);
  cls->add_option("--text", f.text, "Transcript text");
  cls->add_option("--text-file", f.text_file, "File holding the transcript text");
  auto* report = app.add_subcommand("report", "Print the step table of the last run");
  common(report);
  report->add_flag("--json", f.as_json, "Print JSON instead of text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "cli: " << e.what() << "\n";
    return 1;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(f, out);
    if (embed->parsed()) return cmd_embed(f, out);
    if (run->parsed()) return cmd_run(f, out);
    if (sweep_t->parsed()) return cmd_sweep(f, out, 7);
    if (sweep_d->parsed()) return cmd_sweep(f, out, 8);
    if (cls->parsed()) return cmd_classify(f, out);
    if (report->parsed()) return cmd_report(f, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "] " << e.what() << "\n";
    return exit_code(e);
  } catch (const nlohmann::json::exception& e) {
    err << "error [parse] json: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error [validation] filesystem: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace ragcfg
