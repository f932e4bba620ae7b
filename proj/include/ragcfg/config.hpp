#pragma once

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "ragcfg/embedding.hpp"
#include "ragcfg/judge.hpp"
#include "ragcfg/retrieval.hpp"

namespace ragcfg {

struct PrfConfig {
  bool enabled = false;
  double alpha = 0.5;
  bool operator==(const PrfConfig&) const = default;
};

// The full variability vector of the pipeline. Defaults are the locked
// configuration: K=5, tau=0.75, dynamic selection, MMR/filters/expansion/PRF
// off, decoding (0.0, 1.0, 1).
struct PipelineConfig {
  std::string embedder_id = "pseudo-d64-s0";
  TruncationSpec truncation;
  Metric metric = Metric::kCosine;
  SelectionConfig selection;
  MmrConfig mmr;
  PostFilterConfig filters;
  bool expansion = false;
  PrfConfig prf;
  DecodingParams decoding;

  void validate() const;
  bool operator==(const PipelineConfig&) const = default;
};

// Throws Error(kValidation) naming `where` if `j` has keys outside `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& where);

void to_json(nlohmann::json& j, const SelectionConfig& c);
void from_json(const nlohmann::json& j, SelectionConfig& c);
void to_json(nlohmann::json& j, const MmrConfig& c);
void from_json(const nlohmann::json& j, MmrConfig& c);
void to_json(nlohmann::json& j, const PostFilterConfig& c);
void from_json(const nlohmann::json& j, PostFilterConfig& c);
void to_json(nlohmann::json& j, const PrfConfig& c);
void from_json(const nlohmann::json& j, PrfConfig& c);
void to_json(nlohmann::json& j, const DecodingParams& c);
void from_json(const nlohmann::json& j, DecodingParams& c);
// Missing keys keep their defaults; unknown keys are rejected.
void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

// Canonical (sorted-key) JSON hash.
std::string config_hash(const PipelineConfig& c);
std::string json_hash(const nlohmann::json& j);

// JSON merge-patch of `delta` onto `base`.
PipelineConfig apply_delta(const PipelineConfig& base, const nlohmann::json& delta);

// The part of `c` that step `step` (1..8) owns, as a merge-patch.
nlohmann::json step_delta(const PipelineConfig& c, int step);

// Rounds to 1e-6 so grid values like 0.7 + 3*0.01 serialize cleanly.
double round_grid(double x);

}  // namespace ragcfg
