#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragcfg/config.hpp"
#include "ragcfg/corpus.hpp"
#include "ragcfg/error.hpp"
#include "ragcfg/orchestrator.hpp"
#include "ragcfg/policy.hpp"

namespace ragcfg {

struct EmbedderSpec {
  std::string type = "pseudo";  // pseudo | precomputed | http
  std::optional<std::uint64_t> seed;  // pseudo; defaults to the run seed
  int dim = 64;                       // pseudo
  std::string path;                   // precomputed sidecar JSONL
  std::string name = "precomputed";   // precomputed id
  std::string url;                    // http
  std::string model;                  // http
  std::string api_key_env = "RAGCFG_API_KEY";

  // Id the built backend will report.
  std::string backend_id(std::uint64_t run_seed) const;
  bool operator==(const EmbedderSpec&) const = default;
};

void to_json(nlohmann::json& j, const EmbedderSpec& s);
void from_json(const nlohmann::json& j, EmbedderSpec& s);

struct JudgeSpec {
  std::string type = "mock";      // mock | http
  std::string behavior = "echo";  // mock: echo | fixed | noisy
  double p = 0.0;                 // noisy flip probability
  int fixed_label = 1;
  std::string url;
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "RAGCFG_API_KEY";
  bool supports_n = true;
  bool operator==(const JudgeSpec&) const = default;
};

void to_json(nlohmann::json& j, const JudgeSpec& s);
void from_json(const nlohmann::json& j, JudgeSpec& s);

struct RunConfigFile {
  // Either a JSONL path or a generated corpus.
  std::string corpus_path;
  std::optional<SyntheticSpec> synthetic;
  bool label_flip = false;
  EmbedderSpec embedder;
  std::vector<EmbedderSpec> variant_embedders;
  JudgeSpec judge;
  std::optional<JudgeSpec> cheap_judge;
  PipelineConfig baseline;
  RunPlan plan;
  Budget budget;
  PolicyThresholds thresholds;
  std::string out = "out";
  std::uint64_t seed = 0;
  int parallelism = 1;
  std::string instruction_path;
  // Empty: built-in stopword list.
  std::string stopwords_path;

  bool operator==(const RunConfigFile&) const = default;
};

void to_json(nlohmann::json& j, const RunConfigFile& c);
// Unknown keys are rejected at every level. A baseline without an
// embedder_id takes the main embedder's id.
void from_json(const nlohmann::json& j, RunConfigFile& c);

RunConfigFile load_run_config(const std::string& path);

std::unique_ptr<EmbedderBackend> make_embedder(const EmbedderSpec& s, std::uint64_t run_seed);
std::unique_ptr<JudgeBackend> make_judge(const JudgeSpec& s, std::uint64_t run_seed);

// Maps an error to the process exit status: 1 validation/parse/state/budget,
// 2 transport/backend.
int exit_code(const Error& e);

// Full command-line entry point. Returns the exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ragcfg
