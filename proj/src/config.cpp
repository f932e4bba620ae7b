#include "ragcfg/config.hpp"

#include <cmath>
#include <set>

#include "ragcfg/error.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

using nlohmann::json;

void PipelineConfig::validate() const {
  selection.validate();
  decoding.validate();
  if (truncation.budget < 1) throw Error(ErrorKind::kValidation, "config", "truncation budget < 1");
  if (!(mmr.lambda >= 0.0 && mmr.lambda <= 1.0)) {
    throw Error(ErrorKind::kValidation, "config", "MMR lambda must be in [0,1]");
  }
  if (!(filters.confidence_gate >= 0.0 && filters.confidence_gate <= 1.0)) {
    throw Error(ErrorKind::kValidation, "config", "confidence gate must be in [0,1]");
  }
  if (!(prf.alpha >= 0.0 && prf.alpha <= 1.0)) {
    throw Error(ErrorKind::kValidation, "config", "PRF alpha must be in [0,1]");
  }
  if (embedder_id.empty()) throw Error(ErrorKind::kValidation, "config", "empty embedder_id");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "config", where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) {
      throw Error(ErrorKind::kValidation, "config", "unknown key '" + key + "' in " + where);
    }
  }
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(json& j, const SelectionConfig& c) {
  j = {{"k", c.k}, {"tau", c.tau}, {"mode", to_string(c.mode)}};
}

void from_json(const json& j, SelectionConfig& c) {
  check_keys(j, {"k", "tau", "mode"}, "selection");
  read_opt(j, "k", c.k);
  read_opt(j, "tau", c.tau);
  if (j.contains("mode")) c.mode = parse_selection_mode(j.at("mode").get<std::string>());
}

void to_json(json& j, const MmrConfig& c) { j = {{"enabled", c.enabled}, {"lambda", c.lambda}}; }

void from_json(const json& j, MmrConfig& c) {
  check_keys(j, {"enabled", "lambda"}, "mmr");
  read_opt(j, "enabled", c.enabled);
  read_opt(j, "lambda", c.lambda);
}

void to_json(json& j, const PostFilterConfig& c) {
  j = {{"dedup", c.dedup},
       {"metadata", c.metadata},
       {"low_conf", c.low_conf},
       {"confidence_gate", c.confidence_gate}};
}

void from_json(const json& j, PostFilterConfig& c) {
  check_keys(j, {"dedup", "metadata", "low_conf", "confidence_gate"}, "filters");
  read_opt(j, "dedup", c.dedup);
  read_opt(j, "metadata", c.metadata);
  read_opt(j, "low_conf", c.low_conf);
  read_opt(j, "confidence_gate", c.confidence_gate);
}

void to_json(json& j, const PrfConfig& c) { j = {{"enabled", c.enabled}, {"alpha", c.alpha}}; }

void from_json(const json& j, PrfConfig& c) {
  check_keys(j, {"enabled", "alpha"}, "prf");
  read_opt(j, "enabled", c.enabled);
  read_opt(j, "alpha", c.alpha);
}

void to_json(json& j, const DecodingParams& c) {
  j = {{"temperature", c.temperature}, {"top_p", c.top_p}, {"n", c.n_samples}};
}

void from_json(const json& j, DecodingParams& c) {
  check_keys(j, {"temperature", "top_p", "n"}, "decoding");
  read_opt(j, "temperature", c.temperature);
  read_opt(j, "top_p", c.top_p);
  read_opt(j, "n", c.n_samples);
}

void to_json(json& j, const PipelineConfig& c) {
  j = {{"embedder_id", c.embedder_id}, {"truncation", c.truncation},
       {"metric", to_string(c.metric)}, {"selection", c.selection},
       {"mmr", c.mmr},                   {"filters", c.filters},
       {"expansion", c.expansion},       {"prf", c.prf},
       {"decoding", c.decoding}};
}

void from_json(const json& j, PipelineConfig& c) {
  check_keys(j,
             {"embedder_id", "truncation", "metric", "selection", "mmr", "filters", "expansion",
              "prf", "decoding"},
             "pipeline config");
  read_opt(j, "embedder_id", c.embedder_id);
  read_opt(j, "truncation", c.truncation);
  if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
  if (j.contains("selection")) from_json(j.at("selection"), c.selection);
  if (j.contains("mmr")) from_json(j.at("mmr"), c.mmr);
  if (j.contains("filters")) from_json(j.at("filters"), c.filters);
  read_opt(j, "expansion", c.expansion);
  if (j.contains("prf")) from_json(j.at("prf"), c.prf);
  if (j.contains("decoding")) from_json(j.at("decoding"), c.decoding);
}

std::string json_hash(const json& j) { return text::hex64(text::fnv1a64(j.dump())); }

std::string config_hash(const PipelineConfig& c) { return json_hash(json(c)); }

PipelineConfig apply_delta(const PipelineConfig& base, const json& delta) {
  json merged = base;
  merged.merge_patch(delta);
  return merged.get<PipelineConfig>();
}

json step_delta(const PipelineConfig& c, int step) {
  const json full = c;
  switch (step) {
    case 1: return {{"embedder_id", full["embedder_id"]}, {"truncation", full["truncation"]}};
    case 2: return {{"metric", full["metric"]}};
    case 3: return {{"selection", full["selection"]}};
    case 4: return {{"mmr", full["mmr"]}};
    case 5: return {{"filters", full["filters"]}};
    case 6: return {{"expansion", full["expansion"]}, {"prf", full["prf"]}};
    case 7: return {{"selection", {{"tau", c.selection.tau}}}};
    case 8: return {{"decoding", full["decoding"]}};
    default: break;
  }
  throw Error(ErrorKind::kValidation, "config", "step must be in 1..8");
}

double round_grid(double x) { return std::round(x * 1e6) / 1e6; }

}  // namespace ragcfg
