#include <gtest/gtest.h>

#include <cmath>

#include "ragcfg/error.hpp"
#include "ragcfg/proxies.hpp"
#include "support.hpp"

using namespace ragcfg;
namespace t = ragcfg::testing;

namespace {

RetrievalResult with_sims(std::vector<double> sims, std::vector<Label> labels = {}) {
  RetrievalResult r;
  for (size_t i = 0; i < sims.size(); ++i) {
    r.neighbors.push_back({"n" + std::to_string(i), sims[i], labels.empty() ? Label{0} : labels[i]});
  }
  return r;
}

// Subset where every neighbor vote at the locked config matches the gold.
const std::vector<std::string> kPure = {"v000", "v001", "v002", "v003", "v006", "v007", "v008", "v009"};

}  // namespace

TEST(SemanticProxies, Examples) {
  const std::vector<RetrievalResult> rs = {with_sims({.9, .7}, {1, 0}), with_sims({.8, .6}, {0, 0})};
  const std::vector<std::optional<Label>> golds = {Label{1}, Label{0}};
  const auto r = semantic_retrieval_proxies(rs, golds);
  EXPECT_NEAR(*r.get("mean_sim"), 0.75, 1e-12);
  EXPECT_NEAR(*r.get("max_sim"), 0.9, 1e-12);
  EXPECT_NEAR(*r.get("hit_at_k"), 1.0, 1e-12);
  EXPECT_TRUE(r.get("minority_coverage").has_value());

  const std::vector<std::optional<Label>> majority_only = {Label{0}, Label{0}};
  const auto m = semantic_retrieval_proxies(rs, majority_only);
  EXPECT_FALSE(m.get("minority_coverage").has_value());
  EXPECT_NE(std::find(m.flags.begin(), m.flags.end(), "minority_coverage"), m.flags.end());

  const std::vector<std::optional<Label>> none = {std::nullopt, std::nullopt};
  const auto n = semantic_retrieval_proxies(rs, none);
  EXPECT_FALSE(n.get("hit_at_k").has_value());
}

TEST(ProxyReport, RegistryEnforced) {
  ProxyReport r;
  r.family = ProxyFamily::kConfidence;
  EXPECT_THROW(r.set("mean_sim", 1.0), Error);
  r.set("margin", std::nan(""));
  EXPECT_FALSE(r.get("margin").has_value());
  EXPECT_EQ(r.flags.size(), 1u);
  r.set("vote_entropy", 0.5);
  EXPECT_EQ(nlohmann::json(r).get<ProxyReport>(), r);
}

TEST(TextProxies, Examples) {
  const std::vector<LabeledText> one = {{"a a b", Label{1}}};
  const auto r = statistical_text_proxies(one, {});
  EXPECT_NEAR(*r.get("type_token_ratio"), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(*r.get("stopword_ratio"), 0.0);
  EXPECT_FALSE(r.get("length_balance").has_value());

  const std::vector<LabeledText> both = {{"x y z", Label{1}}, {"p q r", Label{0}}};
  EXPECT_DOUBLE_EQ(*statistical_text_proxies(both).get("length_balance"), 1.0);
  EXPECT_THROW(statistical_text_proxies(std::vector<LabeledText>{}), Error);
}

TEST(RecallCurve, MonotoneAndCapped) {
  SplitMix64 rng(5);
  std::vector<t::Item> items;
  for (int i = 0; i < 30; ++i) {
    items.push_back({"b" + std::to_string(i), t::random_unit(rng, 4), static_cast<Label>(i % 2)});
  }
  const CaseBase base = t::make_base(items);
  std::vector<Vector> qs;
  std::vector<Label> gs;
  for (int i = 0; i < 12; ++i) {
    qs.push_back(t::random_unit(rng, 4));
    gs.push_back(static_cast<Label>(rng.below(2)));
  }
  std::vector<int> ks;
  for (int k = 1; k <= 30; ++k) ks.push_back(k);
  const auto c = recall_at_k_curve(base, qs, gs, ks);
  for (int k = 2; k <= 30; ++k) EXPECT_GE(c.recall.at(k), c.recall.at(k - 1));
  EXPECT_DOUBLE_EQ(c.recall.at(30), 1.0);

  const std::vector<int> big = {40};
  const auto capped = recall_at_k_curve(base, qs, gs, big);
  EXPECT_FALSE(capped.flags.empty());
  EXPECT_DOUBLE_EQ(capped.recall.at(40), 1.0);
}

TEST(RecallCurve, SeparatedSyntheticCorpus) {
  const Corpus c = generate_synthetic({20, 7, 1.0});
  PseudoEmbedder e(7, 32);
  const auto store = embed_corpus(c, {}, e);
  const CaseBase base = build_case_base(c, {Split::kTrain}, store);
  std::vector<Vector> qs;
  std::vector<Label> gs;
  for (const auto& it : c.split(Split::kVal)) {
    qs.push_back(store.at(it->id).vector);
    gs.push_back(*it->label);
  }
  // Brute-force check that a same-label item is among the two nearest.
  const std::vector<int> ks = {2};
  const auto curve = recall_at_k_curve(base, qs, gs, ks);
  double expect = 0.0;
  for (size_t q = 0; q < qs.size(); ++q) {
    std::vector<std::pair<double, Label>> sims;
    for (const auto& r : base.records()) {
      double s = 0.0;
      for (size_t d = 0; d < r.vector.size(); ++d) s += r.vector[d] * qs[q][d];
      sims.push_back({s, base.label(r.id)});
    }
    std::sort(sims.begin(), sims.end(), [](auto& a, auto& b) { return a.first > b.first; });
    expect += (sims[0].second == gs[q] || sims[1].second == gs[q]) ? 1.0 : 0.0;
  }
  EXPECT_DOUBLE_EQ(curve.recall.at(2), expect / static_cast<double>(qs.size()));
  EXPECT_DOUBLE_EQ(curve.recall.at(2), 1.0);
}

TEST(Kendall, Examples) {
  const std::vector<std::string> a = {"A", "B", "C"};
  const std::vector<std::string> b = {"A", "C", "B"};
  const std::vector<std::string> r = {"C", "B", "A"};
  EXPECT_DOUBLE_EQ(kendall_tau(a, a), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(a, r), -1.0);
  EXPECT_NEAR(kendall_tau(a, b), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(kendall_tau(a, b), kendall_tau(b, a));
  const std::vector<std::string> other = {"A", "B", "D"};
  EXPECT_THROW(kendall_tau(a, other), Error);
}

TEST(Ndcg, Examples) {
  EXPECT_DOUBLE_EQ(ndcg_at_k(with_sims({.9, .8}, {1, 1}), 1, 2), 1.0);
  EXPECT_NEAR(ndcg_at_k(with_sims({.9, .8}, {0, 1}), 1, 2), 1.0 / std::log2(3.0), 1e-4);
  EXPECT_DOUBLE_EQ(ndcg_at_k(with_sims({.9, .8}, {0, 0}), 1, 2), 0.0);
  EXPECT_LT(ndcg_at_k(with_sims({.9, .8, .7}, {1, 0, 1}), 1, 3), 1.0);
  EXPECT_THROW(ndcg_at_k(with_sims({.9}), 1, 0), Error);
}

TEST(Entropy, Examples) {
  EXPECT_DOUBLE_EQ(label_entropy(std::vector<Label>{1, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(label_entropy(std::vector<Label>{0, 1}), 1.0);
  EXPECT_NEAR(label_entropy(std::vector<Label>{1, 1, 0, 0, 0, 0}), 0.9183, 1e-4);
  SplitMix64 rng(2);
  for (int i = 0; i < 50; ++i) {
    std::vector<Label> ls(2 + rng.below(20));
    for (auto& l : ls) l = static_cast<Label>(rng.below(2));
    EXPECT_LE(label_entropy(ls), 1.0 + 1e-12);
  }
}

TEST(Diversity, Examples) {
  const CaseBase base = t::make_base({{"a", t::basis(4, 0), 0}, {"b", t::basis(4, 0), 0},
                                      {"c", t::basis(4, 1), 1}, {"d", t::basis(4, 2), 1}});
  auto res = [](std::vector<std::string> ids) {
    RetrievalResult r;
    for (auto& id : ids) r.neighbors.push_back({id, 0.5, 0});
    return r;
  };
  const auto dup = diversity_proxies(res({"a", "b"}), base);
  EXPECT_DOUBLE_EQ(*dup.get("near_dup_fraction"), 1.0);
  EXPECT_DOUBLE_EQ(*dup.get("novelty_ratio"), 0.0);
  EXPECT_NEAR(*diversity_proxies(res({"a", "c", "d"}), base).get("mean_pairwise_cosine"), 0.0, 1e-12);
  EXPECT_NEAR(*diversity_proxies(res({"a", "b", "c"}), base).get("near_dup_fraction"), 1.0 / 3.0, 1e-12);
  EXPECT_FALSE(diversity_proxies(res({"a"}), base).get("near_dup_fraction").has_value());
}

TEST(MiniJudge, EchoAndNegation) {
  const auto p = t::planted_corpus(1);
  const Pipeline pipe(p.corpus, t::planted_config(), t::store_of(p));
  auto echo = mock_backend(0, MockBehavior::kEchoNeighborMajority);
  auto flip = mock_backend(0, MockBehavior::kNoisy, 1.0);
  EXPECT_DOUBLE_EQ(mini_judge_agreement(*echo, kPure, pipe), 1.0);
  EXPECT_DOUBLE_EQ(mini_judge_eval(*echo, kPure, pipe).report.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(mini_judge_agreement(*flip, kPure, pipe), 0.0);
  EXPECT_THROW(mini_judge_agreement(*echo, std::vector<std::string>{}, pipe), Error);
}

TEST(Stability, Examples) {
  const auto p = t::planted_corpus(1);
  const Pipeline pipe(p.corpus, t::planted_config(), t::store_of(p));
  const auto ids = pipe.corpus().split(Split::kVal);
  std::vector<std::string> subset;
  for (const auto& it : ids) subset.push_back(it->id);
  auto echo = mock_backend(0, MockBehavior::kEchoNeighborMajority);
  auto noisy = mock_backend(3, MockBehavior::kNoisy, 0.5);
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const auto det = stability_check(seeds, [&](std::uint64_t s) {
    return mini_judge_eval(*echo, subset, pipe, s).report.macro_f1;
  });
  EXPECT_DOUBLE_EQ(det.iqr_macro_f1, 0.0);
  const auto spread = stability_check(seeds, [&](std::uint64_t s) {
    return mini_judge_eval(*noisy, subset, pipe, s).report.macro_f1;
  });
  EXPECT_GT(spread.iqr_macro_f1, 0.0);
  const std::vector<std::uint64_t> one = {1};
  EXPECT_THROW(stability_check(one, [](std::uint64_t) { return 0.5; }), Error);
}

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1}, 0.0), 1.0);
}

TEST(ProxySuite, PrimaryFallsBackToHitAtK) {
  const auto p = t::planted_corpus(1);
  const Pipeline pipe(p.corpus, t::planted_config(), t::store_of(p));
  const auto a = proxy_suite(pipe, kPure, nullptr);
  EXPECT_EQ(a.primary_name, "hit_at_k");
  EXPECT_FALSE(a.mini_judge.has_value());
  auto echo = mock_backend(0, MockBehavior::kEchoNeighborMajority);
  const auto b = proxy_suite(pipe, kPure, echo.get());
  EXPECT_EQ(b.primary_name, "mini_judge.macro_f1");
  EXPECT_DOUBLE_EQ(b.primary, 1.0);
  EXPECT_EQ(b.results.size(), kPure.size());
  EXPECT_EQ(proxy_suite(pipe, kPure, echo.get()).primary, b.primary);
}
