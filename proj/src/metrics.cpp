#include "ragcfg/metrics.hpp"

#include "ragcfg/error.hpp"

namespace ragcfg {

namespace {

double ratio(size_t num, size_t den, const char* name, std::vector<std::string>& undefined) {
  if (den == 0) {
    undefined.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

// 2TP / (2TP + FP + FN), equal to the harmonic mean of precision and recall.
double f1(size_t tp, size_t fp, size_t fn) {
  const size_t den = 2 * tp + fp + fn;
  return den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
}

}  // namespace

EvalReport evaluate_confusion(const ConfusionMatrix& cm) {
  EvalReport r;
  r.cm = cm;
  r.n = cm.total();
  if (r.n == 0) throw Error(ErrorKind::kValidation, "metrics", "empty evaluation");
  r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(r.n);
  r.precision_1 = ratio(cm.tp, cm.tp + cm.fp, "precision_1", r.undefined);
  r.recall_1 = ratio(cm.tp, cm.tp + cm.fn, "recall_1", r.undefined);
  r.precision_0 = ratio(cm.tn, cm.tn + cm.fn, "precision_0", r.undefined);
  r.recall_0 = ratio(cm.tn, cm.tn + cm.fp, "recall_0", r.undefined);
  r.macro_f1 = 0.5 * (f1(cm.tn, cm.fn, cm.fp) + f1(cm.tp, cm.fp, cm.fn));
  return r;
}

EvalReport evaluate(std::span<const Label> preds, std::span<const Label> golds) {
  if (preds.size() != golds.size()) {
    throw Error(ErrorKind::kValidation, "metrics",
                "length mismatch: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(golds.size()) + " golds");
  }
  if (preds.empty()) throw Error(ErrorKind::kValidation, "metrics", "empty evaluation");
  ConfusionMatrix cm;
  for (size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (golds[i] != 0 && golds[i] != 1)) {
      throw Error(ErrorKind::kValidation, "metrics", "labels must be 0 or 1");
    }
    if (golds[i] == 1) {
      (preds[i] == 1 ? cm.tp : cm.fn)++;
    } else {
      (preds[i] == 1 ? cm.fp : cm.tn)++;
    }
  }
  return evaluate_confusion(cm);
}

Comparison compare(const EvalReport& candidate, const EvalReport& baseline, double eps) {
  Comparison c;
  c.macro_f1_delta = candidate.macro_f1 - baseline.macro_f1;
  c.recall_1_delta = candidate.recall_1 - baseline.recall_1;
  c.size_mismatch = candidate.n != baseline.n;
  const bool f1_drop = candidate.macro_f1 < baseline.macro_f1 - eps;
  const bool recall_drop = candidate.recall_1 < baseline.recall_1 - eps;
  if (f1_drop && recall_drop) {
    c.regression = Regression::kBoth;
  } else if (f1_drop) {
    c.regression = Regression::kMacroF1;
  } else if (recall_drop) {
    c.regression = Regression::kRecall1;
  }
  return c;
}

void to_json(nlohmann::json& j, const ConfusionMatrix& cm) {
  j = {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
}

void from_json(const nlohmann::json& j, ConfusionMatrix& cm) {
  cm.tp = j.at("tp").get<size_t>();
  cm.fp = j.at("fp").get<size_t>();
  cm.fn = j.at("fn").get<size_t>();
  cm.tn = j.at("tn").get<size_t>();
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"accuracy", r.accuracy},       {"macro_f1", r.macro_f1},
       {"precision_0", r.precision_0}, {"recall_0", r.recall_0},
       {"precision_1", r.precision_1}, {"recall_1", r.recall_1},
       {"cm", r.cm},                   {"n", r.n},
       {"undefined", r.undefined}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.precision_0 = j.at("precision_0").get<double>();
  r.recall_0 = j.at("recall_0").get<double>();
  r.precision_1 = j.at("precision_1").get<double>();
  r.recall_1 = j.at("recall_1").get<double>();
  r.cm = j.at("cm").get<ConfusionMatrix>();
  r.n = j.at("n").get<size_t>();
  r.undefined = j.value("undefined", std::vector<std::string>{});
}

}  // namespace ragcfg
