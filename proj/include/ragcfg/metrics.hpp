#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragcfg/corpus.hpp"

namespace ragcfg {

// Positive class is 1 (depressed).
struct ConfusionMatrix {
  size_t tp = 0;
  size_t fp = 0;
  size_t fn = 0;
  size_t tn = 0;

  size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double precision_0 = 0.0;
  double recall_0 = 0.0;
  double precision_1 = 0.0;
  double recall_1 = 0.0;
  ConfusionMatrix cm;
  size_t n = 0;
  // Names of quantities whose denominator was zero (reported as 0).
  std::vector<std::string> undefined;

  bool operator==(const EvalReport&) const = default;
};

EvalReport evaluate_confusion(const ConfusionMatrix& cm);

// Throws Error(kValidation) on empty input or length mismatch.
EvalReport evaluate(std::span<const Label> preds, std::span<const Label> golds);

enum class Regression { kNone, kMacroF1, kRecall1, kBoth };

struct Comparison {
  Regression regression = Regression::kNone;
  double macro_f1_delta = 0.0;
  double recall_1_delta = 0.0;
  bool size_mismatch = false;

  bool regresses() const { return regression != Regression::kNone; }
};

// Candidate regresses iff macro_f1 < base.macro_f1 - eps or
// recall_1 < base.recall_1 - eps.
Comparison compare(const EvalReport& candidate, const EvalReport& baseline, double eps = 0.0);

void to_json(nlohmann::json& j, const ConfusionMatrix& cm);
void from_json(const nlohmann::json& j, ConfusionMatrix& cm);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

}  // namespace ragcfg
