#include <gtest/gtest.h>

#include "ragcfg/error.hpp"
#include "ragcfg/metrics.hpp"
#include "ragcfg/random.hpp"

using namespace ragcfg;

TEST(Evaluate, PerfectPredictions) {
  const std::vector<Label> g = {1, 0, 1, 0};
  const auto r = evaluate(g, g);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
}

TEST(Evaluate, BalancedConfusion) {
  const auto r = evaluate(std::vector<Label>{1, 1, 0, 0}, std::vector<Label>{1, 0, 1, 0});
  EXPECT_EQ(r.cm, (ConfusionMatrix{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.macro_f1, 0.5);
}

TEST(Evaluate, DegenerateDenominatorFlagged) {
  const auto r = evaluate(std::vector<Label>{0, 0, 0}, std::vector<Label>{1, 1, 1});
  EXPECT_DOUBLE_EQ(r.recall_1, 0.0);
  EXPECT_DOUBLE_EQ(r.precision_1, 0.0);
  EXPECT_NE(std::find(r.undefined.begin(), r.undefined.end(), "precision_1"), r.undefined.end());
}

TEST(Evaluate, Errors) {
  EXPECT_THROW(evaluate(std::vector<Label>{}, std::vector<Label>{}), Error);
  EXPECT_THROW(evaluate(std::vector<Label>{1}, std::vector<Label>{1, 0}), Error);
  EXPECT_THROW(evaluate(std::vector<Label>{2}, std::vector<Label>{1}), Error);
}

TEST(Evaluate, PermutationInvariant) {
  SplitMix64 rng(1);
  std::vector<Label> p(200);
  std::vector<Label> g(200);
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<Label>(rng.below(2));
    g[i] = static_cast<Label>(rng.below(2));
  }
  const auto a = evaluate(p, g);
  for (size_t i = p.size(); i > 1; --i) {
    const size_t j = rng.below(i);
    std::swap(p[i - 1], p[j]);
    std::swap(g[i - 1], g[j]);
  }
  EXPECT_EQ(evaluate(p, g), a);
  EXPECT_GE(a.macro_f1, 0.0);
  EXPECT_LE(a.macro_f1, 1.0);
}

TEST(Compare, Rules) {
  EvalReport base;
  base.macro_f1 = 0.825;
  base.recall_1 = 0.875;
  EvalReport cand = base;
  cand.macro_f1 = 0.789;
  EXPECT_TRUE(compare(cand, base).regresses());
  EXPECT_FALSE(compare(base, base).regresses());
  cand = base;
  cand.macro_f1 += 0.001;
  cand.recall_1 -= 0.05;
  const auto c = compare(cand, base);
  EXPECT_TRUE(c.regresses());
  EXPECT_EQ(c.regression, Regression::kRecall1);
  EXPECT_FALSE(compare(cand, base, 0.06).regresses());
}

TEST(Metrics, JsonRoundTrip) {
  const auto r = evaluate(std::vector<Label>{1, 0, 0}, std::vector<Label>{1, 1, 0});
  EXPECT_EQ(nlohmann::json(r).get<EvalReport>(), r);
}
