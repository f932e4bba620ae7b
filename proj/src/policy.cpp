#include "ragcfg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "ragcfg/error.hpp"
#include "ragcfg/text.hpp"

namespace ragcfg {

using nlohmann::json;

namespace {

constexpr double kTol = kPolicyTolerance;

std::string f4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

json scored_json(const ScoredCandidate& c) {
  return {{"candidate", c.candidate}, {"score", c.score}, {"tier", c.tier}};
}

ScoredCandidate scored_from(const json& j) {
  return {j.at("candidate"), j.at("score").get<double>(), j.value("tier", std::string{})};
}

Decision make(int step, Verdict v, std::string reason, json candidate, json inputs) {
  Decision d;
  d.step = step;
  d.verdict = v;
  d.reason = std::move(reason);
  d.candidate = std::move(candidate);
  d.inputs = std::move(inputs);
  return d;
}

const ScoredCandidate& best_of(std::span<const ScoredCandidate> cs) {
  const ScoredCandidate* best = &cs[0];
  for (const auto& c : cs) {
    if (c.score > best->score) best = &c;
  }
  return *best;
}

int mode_rank(SelectionMode m) {
  switch (m) {
    case SelectionMode::kDynamic: return 0;
    case SelectionMode::kHybrid: return 1;
    case SelectionMode::kStatic: return 2;
  }
  return 3;
}

std::string tier_of(std::span<const ScoredCandidate> cs) {
  return cs.empty() || cs[0].tier.empty() ? std::string{} : " (" + cs[0].tier + ")";
}

Decision step6_rule(double expanded, double baseline, bool guards_passed, const std::string& guard_note,
                    const json& guards, const PolicyThresholds& t) {
  const double drop = baseline - expanded;
  json inputs = {{"rule", "step6"},
                 {"expanded_score", expanded},
                 {"baseline_score", baseline},
                 {"guards_passed", guards_passed},
                 {"guard_note", guard_note},
                 {"guards", guards},
                 {"thresholds", t}};
  if (!guards_passed) {
    return make(6, Verdict::kReject, "S6.reject: leakage guards failed (" + guard_note + "); expansion OFF",
                json::object(), inputs);
  }
  if (drop > t.step6_drop + kTol) {
    return make(6, Verdict::kReject,
                "S6.reject: macro-F1 drop " + f4(drop) + " > " + format_number(t.step6_drop) +
                    "; expansion OFF",
                json::object(), inputs);
  }
  return make(6, Verdict::kAdoptFreeze,
              "S6.adopt: macro-F1 drop " + f4(drop) + " <= " + format_number(t.step6_drop) +
                  ", guards clean; train+test pool",
              json{{"expansion", true}}, inputs);
}

}  // namespace

std::string format_number(double x) {
  std::ostringstream ss;
  ss << std::setprecision(10) << x;
  std::string s = ss.str();
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kAdoptFreeze: return "ADOPT_FREEZE";
    case Verdict::kSkip: return "SKIP";
    case Verdict::kReject: return "REJECT";
    case Verdict::kRollback: return "ROLLBACK";
  }
  return "?";
}

Verdict parse_verdict(const std::string& s) {
  for (auto v : {Verdict::kAdoptFreeze, Verdict::kSkip, Verdict::kReject, Verdict::kRollback}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorKind::kParse, "ledger", "unknown verdict " + s);
}

void to_json(json& j, const Decision& d) {
  j = {{"step", d.step},
       {"facet", d.facet},
       {"candidate", d.candidate},
       {"proxy", d.proxy},
       {"gold", d.gold ? json(*d.gold) : json(nullptr)},
       {"verdict", to_string(d.verdict)},
       {"reason", d.reason},
       {"timestamp", d.timestamp},
       {"inputs", d.inputs},
       {"baseline_macro_f1", d.baseline_macro_f1 ? json(*d.baseline_macro_f1) : json(nullptr)}};
}

void from_json(const json& j, Decision& d) {
  check_keys(j,
             {"step", "facet", "candidate", "proxy", "gold", "verdict", "reason", "timestamp", "inputs",
              "baseline_macro_f1"},
             "ledger entry");
  d = Decision{};
  d.step = j.at("step").get<int>();
  d.facet = j.value("facet", std::string{});
  d.candidate = j.value("candidate", json(nullptr));
  d.proxy = j.value("proxy", json::object());
  if (j.contains("gold") && !j.at("gold").is_null()) d.gold = j.at("gold").get<EvalReport>();
  d.verdict = parse_verdict(j.at("verdict").get<std::string>());
  d.reason = j.value("reason", std::string{});
  d.timestamp = j.value("timestamp", std::string{});
  d.inputs = j.value("inputs", json::object());
  if (j.contains("baseline_macro_f1") && !j.at("baseline_macro_f1").is_null()) {
    d.baseline_macro_f1 = j.at("baseline_macro_f1").get<double>();
  }
}

void to_json(json& j, const PolicyThresholds& t) {
  j = {{"step1_gain", t.step1_gain},
       {"step2_gain", t.step2_gain},
       {"step3_recall_gain", t.step3_recall_gain},
       {"step3_precision_drop", t.step3_precision_drop},
       {"step4_overlap", t.step4_overlap},
       {"step5_gate", t.step5_gate},
       {"step6_drop", t.step6_drop},
       {"step7_gain", t.step7_gain},
       {"eps", t.eps}};
}

void from_json(const json& j, PolicyThresholds& t) {
  check_keys(j,
             {"step1_gain", "step2_gain", "step3_recall_gain", "step3_precision_drop", "step4_overlap",
              "step5_gate", "step6_drop", "step7_gain", "eps"},
             "policy");
  t = PolicyThresholds{};
  t.step1_gain = j.value("step1_gain", t.step1_gain);
  t.step2_gain = j.value("step2_gain", t.step2_gain);
  t.step3_recall_gain = j.value("step3_recall_gain", t.step3_recall_gain);
  t.step3_precision_drop = j.value("step3_precision_drop", t.step3_precision_drop);
  t.step4_overlap = j.value("step4_overlap", t.step4_overlap);
  t.step5_gate = j.value("step5_gate", t.step5_gate);
  t.step6_drop = j.value("step6_drop", t.step6_drop);
  t.step7_gain = j.value("step7_gain", t.step7_gain);
  t.eps = j.value("eps", t.eps);
  if (t.eps < 0.0) throw Error(ErrorKind::kValidation, "policy", "eps must be >= 0");
}

Decision decide_step1(std::span<const ScoredCandidate> candidates, double baseline_score,
                      const PolicyThresholds& t) {
  if (candidates.empty()) throw Error(ErrorKind::kValidation, "policy", "step 1 needs a scored candidate");
  json inputs = {{"rule", "step1"}, {"baseline_score", baseline_score}, {"thresholds", t}};
  for (const auto& c : candidates) inputs["candidates"].push_back(scored_json(c));
  const auto& best = best_of(candidates);
  const double gain = best.score - baseline_score;
  const std::string tier = tier_of(candidates);
  if (gain >= t.step1_gain - kTol) {
    return make(1, Verdict::kAdoptFreeze,
                "S1.adopt: gain " + f4(gain) + " >= " + format_number(t.step1_gain) + tier, best.candidate,
                inputs);
  }
  const bool all_regress = std::all_of(candidates.begin(), candidates.end(), [&](const auto& c) {
    return c.score < baseline_score - kTol;
  });
  if (all_regress) {
    return make(1, Verdict::kSkip, "S1.skip: all variants regress" + tier, json::object(), inputs);
  }
  return make(1, Verdict::kSkip,
              "S1.skip: gain " + f4(gain) + " < " + format_number(t.step1_gain) + "; keep baseline" + tier,
              json::object(), inputs);
}

Decision decide_step2(std::span<const ScoredCandidate> alternatives, const ScoredCandidate& cosine,
                      const PolicyThresholds& t) {
  json inputs = {{"rule", "step2"}, {"cosine", scored_json(cosine)}, {"thresholds", t},
                 {"alternatives", json::array()}};
  for (const auto& c : alternatives) inputs["alternatives"].push_back(scored_json(c));
  const bool dominated = std::all_of(alternatives.begin(), alternatives.end(), [&](const auto& c) {
    return c.score <= cosine.score + kTol;
  });
  if (dominated) {
    return make(2, Verdict::kSkip, "S2.skip: frozen config dominates; keep cosine", cosine.candidate, inputs);
  }
  const auto& best = best_of(alternatives);
  const double gain = best.score - cosine.score;
  if (gain > t.step2_gain + kTol) {
    return make(2, Verdict::kAdoptFreeze,
                "S2.adopt: gain " + f4(gain) + " > " + format_number(t.step2_gain), best.candidate, inputs);
  }
  return make(2, Verdict::kReject,
              "S2.reject: gain " + f4(gain) + " <= " + format_number(t.step2_gain) + "; keep cosine",
              cosine.candidate, inputs);
}

Decision decide_step3(const Step3Input& in, const PolicyThresholds& t) {
  json inputs = {{"rule", "step3"}, {"current", in.current}, {"thresholds", t}};
  inputs["recall"] = json::object();
  inputs["precision"] = json::object();
  for (const auto& [k, v] : in.recall) inputs["recall"][std::to_string(k)] = v;
  for (const auto& [k, v] : in.precision) inputs["precision"][std::to_string(k)] = v;
  inputs["scores"] = json::array();
  for (const auto& s : in.scores) inputs["scores"].push_back({{"selection", s.selection}, {"score", s.score}});

  std::vector<int> ks;
  for (const auto& [k, v] : in.recall) {
    if (k >= 1 && k <= kMaxK) ks.push_back(k);
  }
  if (ks.empty()) throw Error(ErrorKind::kValidation, "policy", "step 3 needs a recall curve over k <= 5");

  int k = ks.front();
  std::string why = "largest k";
  for (size_t i = 1; i < ks.size(); ++i) {
    const int next = ks[i];
    const double gain = in.recall.at(next) - in.recall.at(k);
    double drop = 0.0;
    if (in.precision.count(k) && in.precision.count(next)) drop = in.precision.at(k) - in.precision.at(next);
    if (gain < t.step3_recall_gain - kTol) {
      why = "recall stabilized (gain " + f4(gain) + " < " + format_number(t.step3_recall_gain) + " at k=" +
            std::to_string(next) + ")";
      break;
    }
    if (drop > t.step3_precision_drop + kTol) {
      why = "precision collapse (drop " + f4(drop) + " > " + format_number(t.step3_precision_drop) +
            " at k=" + std::to_string(next) + ")";
      break;
    }
    k = next;
  }

  const SelectionScore* best = nullptr;
  for (const auto& s : in.scores) {
    if (s.selection.k != k) continue;
    if (!best || s.score > best->score + kTol) {
      best = &s;
      continue;
    }
    if (s.score < best->score - kTol) continue;
    const int ra = mode_rank(s.selection.mode);
    const int rb = mode_rank(best->selection.mode);
    if (ra != rb) {
      if (ra < rb) best = &s;
      continue;
    }
    const double da = std::abs(s.selection.tau - in.current.tau);
    const double db = std::abs(best->selection.tau - in.current.tau);
    if (da < db - kTol || (std::abs(da - db) <= kTol && s.selection.tau < best->selection.tau)) best = &s;
  }
  SelectionConfig chosen = in.current;
  chosen.k = k;
  if (best) {
    chosen = best->selection;
  } else {
    chosen.mode = SelectionMode::kDynamic;
  }
  chosen.tau = round_grid(chosen.tau);
  return make(3, Verdict::kAdoptFreeze,
              "S3.lock: K=" + std::to_string(chosen.k) + ", τ=" + format_number(chosen.tau) + ", " +
                  to_string(chosen.mode) + "; " + why,
              json{{"selection", chosen}}, inputs);
}

Decision decide_step4(double overlap, double minority_recall_delta, double macro_f1_delta,
                      const MmrConfig& candidate, const PolicyThresholds& t) {
  json inputs = {{"rule", "step4"},
                 {"overlap", overlap},
                 {"minority_recall_delta", minority_recall_delta},
                 {"macro_f1_delta", macro_f1_delta},
                 {"candidate", candidate},
                 {"thresholds", t}};
  if (overlap <= t.step4_overlap + kTol) {
    return make(4, Verdict::kSkip,
                "S4.skip: overlap " + f4(overlap) + " <= " + format_number(t.step4_overlap) + "; MMR OFF",
                json::object(), inputs);
  }
  if (minority_recall_delta < -kTol) {
    return make(4, Verdict::kReject,
                "S4.reject: minority recall delta " + f4(minority_recall_delta) + " < 0; MMR OFF",
                json::object(), inputs);
  }
  if (macro_f1_delta < -kTol) {
    return make(4, Verdict::kReject, "S4.reject: macro-F1 delta " + f4(macro_f1_delta) + " < 0; MMR OFF",
                json::object(), inputs);
  }
  MmrConfig on = candidate;
  on.enabled = true;
  return make(4, Verdict::kAdoptFreeze,
              "S4.adopt: overlap " + f4(overlap) + " > " + format_number(t.step4_overlap) +
                  ", no minority recall drop; MMR ON (λ=" + format_number(on.lambda) + ")",
              json{{"mmr", on}}, inputs);
}

Decision decide_step5(double confidence, double macro_f1_delta, const PostFilterConfig& candidate,
                      const PolicyThresholds& t) {
  json inputs = {{"rule", "step5"},
                 {"confidence", confidence},
                 {"macro_f1_delta", macro_f1_delta},
                 {"candidate", candidate},
                 {"thresholds", t}};
  if (confidence >= t.step5_gate - kTol) {
    return make(5, Verdict::kSkip,
                "S5.skip: confidence " + f4(confidence) + " >= " + format_number(t.step5_gate) + "; Keep OFF",
                json::object(), inputs);
  }
  if (macro_f1_delta < -kTol) {
    return make(5, Verdict::kReject, "S5.reject: macro-F1 delta " + f4(macro_f1_delta) + " < 0; Keep OFF",
                json::object(), inputs);
  }
  return make(5, Verdict::kAdoptFreeze,
              "S5.adopt: confidence " + f4(confidence) + " < " + format_number(t.step5_gate) +
                  ", no regression; filters ON",
              json{{"filters", candidate}}, inputs);
}

json to_json(const GuardReport& g) {
  json pairs = json::array();
  for (const auto& p : g.near_duplicates) pairs.push_back(json{{"base_id", p.base_id}, {"extra_id", p.extra_id}, {"cosine", p.cosine}});
  return {{"id_collisions", g.id_collisions},
          {"near_duplicates", pairs},
          {"vocab_shift", g.vocab_shift},
          {"length_shift", g.length_shift},
          {"centroid_shift", g.centroid_shift},
          {"passed", g.passed()}};
}

Decision decide_step6(double expanded_score, double baseline_score, const GuardReport& guards,
                      const PolicyThresholds& t) {
  const std::string note = std::to_string(guards.id_collisions.size()) + " id collisions, " +
                           std::to_string(guards.near_duplicates.size()) + " near-duplicates";
  return step6_rule(expanded_score, baseline_score, guards.passed(), note, to_json(guards), t);
}

Decision decide_step6_prf(double prf_score, double baseline_score, double alpha, const PolicyThresholds& t) {
  const double drop = baseline_score - prf_score;
  json inputs = {{"rule", "step6_prf"},
                 {"prf_score", prf_score},
                 {"baseline_score", baseline_score},
                 {"alpha", alpha},
                 {"thresholds", t}};
  Decision d;
  if (drop > t.step6_drop + kTol) {
    d = make(6, Verdict::kReject,
             "S6.prf.reject: hard-subset macro-F1 drop " + f4(drop) + " > " + format_number(t.step6_drop) +
                 "; PRF OFF",
             json::object(), inputs);
  } else {
    d = make(6, Verdict::kAdoptFreeze,
             "S6.prf.adopt: hard-subset macro-F1 drop " + f4(drop) + " <= " + format_number(t.step6_drop) +
                 "; PRF ON (α=" + format_number(alpha) + ")",
             json{{"prf", {{"enabled", true}, {"alpha", alpha}}}}, inputs);
  }
  d.facet = "prf";
  return d;
}

Decision decide_step7(std::span<const TauPoint> sweep, const EvalReport& baseline, double current_tau,
                      const PolicyThresholds& t) {
  if (sweep.empty()) throw Error(ErrorKind::kValidation, "policy", "step 7 sweep is empty");
  json inputs = {{"rule", "step7"}, {"baseline", baseline}, {"current_tau", current_tau}, {"thresholds", t}};
  for (const auto& p : sweep) inputs["sweep"].push_back({{"tau", p.tau}, {"report", p.report}});
  const TauPoint* best = &sweep[0];
  for (const auto& p : sweep) {
    if (p.report.macro_f1 > best->report.macro_f1) {
      best = &p;
    } else if (p.report.macro_f1 == best->report.macro_f1 &&
               std::abs(p.tau - current_tau) < std::abs(best->tau - current_tau) - kTol) {
      best = &p;
    }
  }
  const std::string keep = "keep τ=" + format_number(current_tau);
  const std::string detail = " (best τ=" + format_number(best->tau) + " macro-F1 " + f4(best->report.macro_f1) +
                             " vs " + f4(baseline.macro_f1) + ")";
  const double gain = best->report.macro_f1 - baseline.macro_f1;
  if (std::abs(best->tau - current_tau) <= 1e-6) {
    return make(7, Verdict::kSkip, "S7.skip: best τ is the frozen τ; no gain; " + keep + detail,
                json::object(), inputs);
  }
  if (compare(best->report, baseline, t.eps).regresses()) {
    return make(7, Verdict::kReject, "S7.reject: Reject (non-regression); " + keep + detail, json::object(),
                inputs);
  }
  if (gain > t.step7_gain + kTol) {
    return make(7, Verdict::kAdoptFreeze,
                "S7.adopt: gain " + f4(gain) + " > " + format_number(t.step7_gain) + "; τ=" +
                    format_number(best->tau) + detail,
                json{{"selection", {{"tau", round_grid(best->tau)}}}}, inputs);
  }
  return make(7, Verdict::kSkip,
              "S7.skip: sweep yields no gain > " + format_number(t.step7_gain) + "; " + keep + detail,
              json::object(), inputs);
}

Decision decide_step8(std::span<const DecodingPoint> grid, const EvalReport& baseline,
                      const DecodingParams& current, const PolicyThresholds& t) {
  if (grid.empty()) throw Error(ErrorKind::kValidation, "policy", "step 8 grid is empty");
  json inputs = {{"rule", "step8"}, {"baseline", baseline}, {"current", current}, {"thresholds", t}};
  for (const auto& p : grid) inputs["grid"].push_back({{"params", p.params}, {"report", p.report}});
  const DecodingPoint* best = &grid[0];
  for (const auto& p : grid) {
    if (p.report.macro_f1 > best->report.macro_f1 ||
        (p.report.macro_f1 == best->report.macro_f1 && p.params == current && !(best->params == current))) {
      best = &p;
    }
  }
  const std::string keep = "No change; keep temp=" + format_number(current.temperature) +
                           ", top-p=" + format_number(current.top_p) + ", n=" + std::to_string(current.n_samples);
  const std::string detail =
      " (best " + to_string(best->params) + " macro-F1 " + f4(best->report.macro_f1) + " vs " +
      f4(baseline.macro_f1) + ")";
  if (best->params == current) {
    return make(8, Verdict::kSkip, "S8.skip: " + keep + detail, json::object(), inputs);
  }
  const Comparison cmp = compare(best->report, baseline, t.eps);
  if (cmp.regresses()) {
    const std::string why = cmp.regression == Regression::kRecall1 ? "; best setting drops minority recall"
                                                                   : "; all settings below baseline";
    return make(8, Verdict::kReject, "S8.reject: " + keep + why + detail, json::object(), inputs);
  }
  return make(8, Verdict::kAdoptFreeze, "S8.adopt: macro-F1 >= baseline; decoding " + to_string(best->params) + detail,
              json{{"decoding", best->params}}, inputs);
}

Decision redecide(const json& inputs) {
  const std::string rule = inputs.at("rule").get<std::string>();
  const PolicyThresholds t = inputs.at("thresholds").get<PolicyThresholds>();
  if (rule == "step1") {
    std::vector<ScoredCandidate> cs;
    for (const auto& c : inputs.at("candidates")) cs.push_back(scored_from(c));
    return decide_step1(cs, inputs.at("baseline_score").get<double>(), t);
  }
  if (rule == "step2") {
    std::vector<ScoredCandidate> cs;
    for (const auto& c : inputs.at("alternatives")) cs.push_back(scored_from(c));
    return decide_step2(cs, scored_from(inputs.at("cosine")), t);
  }
  if (rule == "step3") {
    Step3Input in;
    for (const auto& [k, v] : inputs.at("recall").items()) in.recall[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : inputs.at("precision").items()) in.precision[std::stoi(k)] = v.get<double>();
    for (const auto& s : inputs.at("scores")) {
      in.scores.push_back({s.at("selection").get<SelectionConfig>(), s.at("score").get<double>()});
    }
    in.current = inputs.at("current").get<SelectionConfig>();
    return decide_step3(in, t);
  }
  if (rule == "step4") {
    return decide_step4(inputs.at("overlap").get<double>(), inputs.at("minority_recall_delta").get<double>(),
                        inputs.at("macro_f1_delta").get<double>(), inputs.at("candidate").get<MmrConfig>(), t);
  }
  if (rule == "step5") {
    return decide_step5(inputs.at("confidence").get<double>(), inputs.at("macro_f1_delta").get<double>(),
                        inputs.at("candidate").get<PostFilterConfig>(), t);
  }
  if (rule == "step6") {
    return step6_rule(inputs.at("expanded_score").get<double>(), inputs.at("baseline_score").get<double>(),
                      inputs.at("guards_passed").get<bool>(), inputs.at("guard_note").get<std::string>(),
                      inputs.at("guards"), t);
  }
  if (rule == "step6_prf") {
    return decide_step6_prf(inputs.at("prf_score").get<double>(), inputs.at("baseline_score").get<double>(),
                            inputs.at("alpha").get<double>(), t);
  }
  if (rule == "step7") {
    std::vector<TauPoint> sweep;
    for (const auto& p : inputs.at("sweep")) sweep.push_back({p.at("tau").get<double>(), p.at("report").get<EvalReport>()});
    return decide_step7(sweep, inputs.at("baseline").get<EvalReport>(), inputs.at("current_tau").get<double>(), t);
  }
  if (rule == "step8") {
    std::vector<DecodingPoint> grid;
    for (const auto& p : inputs.at("grid")) {
      grid.push_back({p.at("params").get<DecodingParams>(), p.at("report").get<EvalReport>()});
    }
    return decide_step8(grid, inputs.at("baseline").get<EvalReport>(),
                        inputs.at("current").get<DecodingParams>(), t);
  }
  throw Error(ErrorKind::kParse, "ledger", "unknown rule " + rule);
}

void LockLedger::append(Decision d) {
  const Key key{d.step, d.facet};
  if (d.verdict == Verdict::kRollback) {
    restore(d.step, d.facet);
  } else if (d.verdict == Verdict::kAdoptFreeze) {
    if (frozen_.count(key)) {
      throw Error(ErrorKind::kState, "ledger",
                  "step " + std::to_string(d.step) + (d.facet.empty() ? "" : "/" + d.facet) + " is already frozen");
    }
    history_[key].push_back(std::nullopt);
    frozen_[key] = d.candidate;
  }
  entries_.push_back(std::move(d));
}

bool LockLedger::offer_baseline(const EvalReport& r, double eps) {
  if (baseline_ && compare(r, *baseline_, eps).regresses()) return false;
  if (baseline_ && r.macro_f1 < baseline_->macro_f1) return false;
  baseline_ = r;
  return true;
}

void LockLedger::restore(int step, const std::string& facet) {
  const Key key{step, facet};
  auto it = history_.find(key);
  if (it == history_.end() || it->second.empty()) {
    throw Error(ErrorKind::kState, "rollback",
                "step " + std::to_string(step) + (facet.empty() ? "" : "/" + facet) + " has no prior state");
  }
  const auto prior = it->second.back();
  it->second.pop_back();
  if (prior) {
    frozen_[key] = *prior;
  } else {
    frozen_.erase(key);
  }
}

const Decision& LockLedger::rollback(int step, const std::string& reason, const std::string& timestamp,
                                     const std::string& facet) {
  restore(step, facet);
  Decision d;
  d.step = step;
  d.facet = facet;
  d.verdict = Verdict::kRollback;
  auto it = frozen_.find({step, facet});
  d.candidate = it == frozen_.end() ? json(nullptr) : it->second;
  d.reason = "S0.rollback: " + reason;
  d.timestamp = timestamp;
  if (baseline_) d.baseline_macro_f1 = baseline_->macro_f1;
  entries_.push_back(std::move(d));
  return entries_.back();
}

PipelineConfig LockLedger::frozen_config(const PipelineConfig& base) const {
  PipelineConfig c = base;
  for (const auto& [key, delta] : frozen_) {
    if (delta.is_object() && !delta.empty()) c = apply_delta(c, delta);
  }
  return c;
}

LockLedger LockLedger::from_entries(std::span<const Decision> entries) {
  LockLedger l;
  for (const auto& d : entries) l.append(d);
  return l;
}

std::string serialize_ledger(std::span<const Decision> entries) {
  std::string out;
  for (const auto& d : entries) out += json(d).dump() + "\n";
  return out;
}

std::vector<Decision> parse_ledger(const std::string& jsonl) {
  std::vector<Decision> out;
  std::istringstream in(jsonl);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line).get<Decision>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "ledger", "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Decision> load_ledger(const std::string& path) { return parse_ledger(text::read_file(path)); }

void save_ledger(const std::string& path, std::span<const Decision> entries) {
  text::write_file_atomic(path, serialize_ledger(entries));
}

std::vector<ReplayMismatch> replay_ledger(std::span<const Decision> entries) {
  std::vector<ReplayMismatch> out;
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& d = entries[i];
    if (!d.inputs.is_object() || !d.inputs.contains("rule")) continue;
    const Decision again = redecide(d.inputs);
    if (again.verdict != d.verdict || again.reason != d.reason || again.candidate != d.candidate) {
      out.push_back({i, std::string(to_string(d.verdict)) + " " + d.reason,
                     std::string(to_string(again.verdict)) + " " + again.reason});
    }
  }
  return out;
}

json frozen_document(const PipelineConfig& c) { return {{"config", c}, {"hash", config_hash(c)}}; }

void save_frozen(const std::string& path, const PipelineConfig& c) {
  text::write_file_atomic(path, frozen_document(c).dump(2) + "\n");
}

PipelineConfig load_frozen(const std::string& path) {
  json doc;
  try {
    doc = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, "frozen config", e.what());
  }
  check_keys(doc, {"config", "hash"}, "frozen config");
  const PipelineConfig c = doc.at("config").get<PipelineConfig>();
  if (config_hash(c) != doc.at("hash").get<std::string>()) {
    throw Error(ErrorKind::kValidation, "frozen config", "content hash mismatch in " + path);
  }
  return c;
}

}  // namespace ragcfg
