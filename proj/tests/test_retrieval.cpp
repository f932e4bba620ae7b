#include <gtest/gtest.h>

#include <cmath>

#include "ragcfg/error.hpp"
#include "ragcfg/retrieval.hpp"
#include "support.hpp"

using namespace ragcfg;
using namespace ragcfg::testing;

namespace {

const Vector kQ = basis(16, 0);

std::vector<std::string> ids(const RetrievalResult& r) { return r.ids(); }

}  // namespace

TEST(Similarity, Basics) {
  EXPECT_NEAR(similarity(Vector{1, 0}, Vector{1, 0}, Metric::kCosine), 1.0, 1e-12);
  EXPECT_NEAR(similarity(Vector{1, 0}, Vector{0, 1}, Metric::kCosine), 0.0, 1e-12);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(similarity(Vector{1, 0}, Vector{r, r}, Metric::kCosine), 0.70710678, 1e-8);
  EXPECT_NEAR(similarity(Vector{2, 0}, Vector{1, 1}, Metric::kL2NormCosine), 0.70710678, 1e-8);
  EXPECT_NEAR(similarity(Vector{2, 0}, Vector{1, 1}, Metric::kDot), 2.0, 1e-12);
}

TEST(Similarity, CosineEqualsDotOnUnitVectors) {
  SplitMix64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const Vector a = random_unit(rng, 8);
    const Vector b = random_unit(rng, 8);
    EXPECT_NEAR(similarity(a, b, Metric::kCosine), similarity(a, b, Metric::kDot), 1e-9);
  }
}

TEST(Similarity, Errors) {
  EXPECT_THROW(similarity(Vector{1, 0}, Vector{1, 0, 0}, Metric::kCosine), Error);
  EXPECT_THROW(similarity(Vector{0, 0}, Vector{1, 0}, Metric::kCosine), Error);
}

TEST(Select, DynamicThreshold) {
  const CaseBase b = base_with_sims({{"A", .9}, {"B", .8}, {"C", .7}, {"D", .1}});
  const auto r = select(kQ, b, {5, .75, SelectionMode::kDynamic}, Metric::kCosine);
  EXPECT_EQ(ids(r), (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(r.mode_used, SelectionOutcome::kThreshold);
}

TEST(Select, DynamicFallback) {
  const CaseBase b = base_with_sims({{"A", .5}, {"B", .4}, {"C", .3}});
  const auto r = select(kQ, b, {2, .75, SelectionMode::kDynamic}, Metric::kCosine);
  EXPECT_EQ(ids(r), (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(r.mode_used, SelectionOutcome::kFallbackTopK);
}

TEST(Select, StaticIgnoresTau) {
  const CaseBase b = base_with_sims({{"A", .9}, {"B", .8}, {"C", .7}, {"D", .1}});
  for (double tau : {0.0, 0.75, 0.99}) {
    const auto r = select(kQ, b, {3, tau, SelectionMode::kStatic}, Metric::kCosine);
    EXPECT_EQ(ids(r), (std::vector<std::string>{"A", "B", "C"}));
    EXPECT_EQ(r.mode_used, SelectionOutcome::kStaticTopK);
  }
}

TEST(Select, HybridPadsToK) {
  const CaseBase b = base_with_sims({{"A", .9}, {"B", .6}, {"C", .5}});
  const auto r = select(kQ, b, {3, .75, SelectionMode::kHybrid}, Metric::kCosine);
  EXPECT_EQ(ids(r), (std::vector<std::string>{"A", "B", "C"}));
}

TEST(Select, TiesByAscendingId) {
  const CaseBase b = base_with_sims({{"z", .8}, {"a", .8}, {"m", .8}});
  const auto r = select(kQ, b, {2, .0, SelectionMode::kStatic}, Metric::kCosine);
  EXPECT_EQ(ids(r), (std::vector<std::string>{"a", "m"}));
}

TEST(Select, StatsAndEmptyBase) {
  const CaseBase b = base_with_sims({{"A", .9}, {"B", .8}});
  const auto r = select(kQ, b, {2, .5, SelectionMode::kStatic}, Metric::kCosine);
  EXPECT_NEAR(r.stats.margin, 0.1, 1e-9);
  EXPECT_NEAR(r.stats.max_sim, 0.9, 1e-9);
  EXPECT_NEAR(r.stats.mean_sim, 0.85, 1e-9);
  EXPECT_THROW(select(kQ, CaseBase{}, {2, .5, SelectionMode::kStatic}, Metric::kCosine), Error);
  EXPECT_THROW(select(kQ, b, {6, .5, SelectionMode::kStatic}, Metric::kCosine), Error);
}

TEST(Select, DynamicNeighborsPassThreshold) {
  SplitMix64 rng(9);
  std::vector<Item> items;
  for (int i = 0; i < 60; ++i) items.push_back({"i" + std::to_string(i), random_unit(rng, 3), static_cast<Label>(i % 2)});
  const CaseBase b = make_base(items);
  for (int t = 0; t < 40; ++t) {
    const Vector q = random_unit(rng, 3);
    const auto r = select(q, b, {5, .8, SelectionMode::kDynamic}, Metric::kCosine);
    if (r.mode_used == SelectionOutcome::kFallbackTopK) continue;
    for (const auto& n : r.neighbors) EXPECT_GE(n.similarity, .8);
  }
}

TEST(Mmr, LambdaOneKeepsSimilarityOrder) {
  SplitMix64 rng(3);
  std::vector<Item> items;
  for (int i = 0; i < 10; ++i) items.push_back({"i" + std::to_string(i), random_unit(rng, 4), 0});
  const CaseBase b = make_base(items);
  const Vector q = random_unit(rng, 4);
  const auto pool = rank_all(q, b, Metric::kCosine);
  const auto r = mmr_rerank(q, pool, b, {true, 1.0}, 5, Metric::kCosine);
  for (size_t i = 0; i < 5; ++i) EXPECT_EQ(r.neighbors[i].id, pool[i].id);
}

TEST(Mmr, DuplicateLosesSecondPick) {
  // A and A2 are the same direction; C is less similar to the query but novel.
  const CaseBase b = make_base({{"A", {0.9, 0.43589, 0, 0}, 1}, {"A2", {0.9, 0.43589, 0, 0}, 1}, {"C", {0.8, 0, 0.6, 0}, 0}});
  const Vector q = {1, 0, 0, 0};
  const auto pool = rank_all(q, b, Metric::kCosine);
  const auto r = mmr_rerank(q, pool, b, {true, 0.5}, 2, Metric::kCosine);
  EXPECT_EQ(ids(r), (std::vector<std::string>{"A", "C"}));
}

TEST(Mmr, KOneIsTopOne) {
  const CaseBase b = base_with_sims({{"A", .9}, {"B", .8}});
  const auto pool = rank_all(kQ, b, Metric::kCosine);
  for (double l : {0.0, 0.5, 1.0}) {
    EXPECT_EQ(ids(mmr_rerank(kQ, pool, b, {true, l}, 1, Metric::kCosine)), (std::vector<std::string>{"A"}));
  }
  EXPECT_THROW(mmr_rerank(kQ, std::vector<Neighbor>{}, b, {true, .5}, 1, Metric::kCosine), Error);
}

TEST(Mmr, LowerLambdaLowersRedundancy) {
  // Planted duplicates around the query.
  std::vector<Item> items;
  SplitMix64 rng(11);
  const Vector q = basis(8, 0);
  for (int i = 0; i < 4; ++i) {
    Vector v = basis(8, 0);
    v[1] = 0.3 + 0.001 * i;
    items.push_back({"d" + std::to_string(i), v, 1});
  }
  for (int i = 0; i < 4; ++i) {
    Vector v = basis(8, 0);
    v[2 + i] = 0.9;
    items.push_back({"n" + std::to_string(i), v, 0});
  }
  const CaseBase b = make_base(items);
  const auto pool = rank_all(q, b, Metric::kCosine);
  auto mean_pairwise = [&](const RetrievalResult& r) {
    double s = 0.0;
    int n = 0;
    for (size_t i = 0; i < r.neighbors.size(); ++i) {
      for (size_t j = i + 1; j < r.neighbors.size(); ++j) {
        s += dot(b.find(r.neighbors[i].id)->vector, b.find(r.neighbors[j].id)->vector);
        ++n;
      }
    }
    return s / n;
  };
  double prev = 2.0;
  for (double l : {1.0, 0.7, 0.5, 0.3, 0.0}) {
    const double m = mean_pairwise(mmr_rerank(q, pool, b, {true, l}, 4, Metric::kCosine));
    EXPECT_LE(m, prev + 1e-12);
    prev = m;
  }
}

TEST(Overlap, Jaccard) {
  RetrievalResult a;
  a.neighbors = {{"A", .9, 0}, {"B", .8, 0}};
  RetrievalResult b;
  b.neighbors = {{"B", .9, 0}, {"C", .8, 0}};
  RetrievalResult c;
  c.neighbors = {{"X", .9, 0}};
  EXPECT_NEAR(overlap_rate(std::vector<RetrievalResult>{a, b}), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(overlap_rate(std::vector<RetrievalResult>{a, a}), 1.0);
  EXPECT_DOUBLE_EQ(overlap_rate(std::vector<RetrievalResult>{a, c}), 0.0);
  EXPECT_THROW(overlap_rate(std::vector<RetrievalResult>{a}), Error);
}

TEST(PostFilter, GateAndDedup) {
  const CaseBase b = make_base({{"A", {1, 0, 0}, 1}, {"A2", {0.97, std::sqrt(1 - 0.97 * 0.97), 0}, 1}, {"C", {0, 0, 1}, 0}});
  RetrievalResult r;
  r.neighbors = {{"A", .9, 1}, {"A2", .88, 1}, {"C", .8, 0}};
  const PostFilterConfig cfg{true, false, false, 0.65};
  EXPECT_EQ(post_filter(r, cfg, 0.9, b, .75).ids(), r.ids());
  EXPECT_EQ(post_filter(r, cfg, 0.5, b, .75).ids(), (std::vector<std::string>{"A", "C"}));
}

TEST(PostFilter, MetadataAndLowConfKeepBest) {
  const CaseBase b = base_with_sims({{"Q", .99}, {"B", .8}, {"C", .5}});
  RetrievalResult r;
  r.neighbors = {{"Q", .99, 0}, {"B", .8, 1}, {"C", .5, 0}};
  EXPECT_EQ(post_filter(r, {false, true, false, .65}, .5, b, .75, "Q").ids(), (std::vector<std::string>{"B", "C"}));
  EXPECT_EQ(post_filter(r, {false, false, true, .65}, .5, b, .75).ids(), (std::vector<std::string>{"Q", "B"}));
  RetrievalResult single;
  single.neighbors = {{"C", .5, 0}};
  EXPECT_EQ(post_filter(single, {true, true, true, .65}, 0.0, b, .9, "C").neighbors.size(), 1u);
}

TEST(Expansion, DuplicateFlaggedAndCentroidShift) {
  const Corpus texts({{"a", "alpha beta", Split::kTrain, std::nullopt, 1}, {"v", "x", Split::kVal, std::nullopt, 0}});
  const CaseBase b = make_base({{"a", {1, 0, 0}, 1}});
  const ExpansionItem dup{{"copy", {1, 0, 0}, 1.0}, 1, "alpha beta"};
  const GuardReport g = check_expansion(b, texts, std::vector<ExpansionItem>{dup});
  ASSERT_EQ(g.near_duplicates.size(), 1u);
  EXPECT_NEAR(g.near_duplicates[0].cosine, 1.0, 1e-12);
  EXPECT_FALSE(g.passed());
  const ExpansionItem far{{"far", {0, 0, 1}, 1.0}, 0, "gamma delta"};
  const GuardReport g2 = check_expansion(b, texts, std::vector<ExpansionItem>{far});
  EXPECT_GT(g2.centroid_shift, 0.0);
  EXPECT_TRUE(g2.passed());
}

TEST(Expansion, CollidingIdRejected) {
  const Corpus texts({{"a", "alpha", Split::kTrain, std::nullopt, 1}, {"v", "x", Split::kVal, std::nullopt, 0}});
  const CaseBase b = make_base({{"a", {1, 0}, 1}});
  const ExpansionItem clash{{"a", {0, 1}, 1.0}, 0, "other"};
  EXPECT_THROW(expand_pool(b, texts, std::vector<ExpansionItem>{clash}), Error);
  const ExpansionItem ok{{"b", {0, 1}, 1.0}, 0, "other"};
  EXPECT_EQ(expand_pool(b, texts, std::vector<ExpansionItem>{ok}).base.size(), 2u);
}

TEST(Prf, Blends) {
  const CaseBase b = make_base({{"n1", {0, 1, 0}, 1}, {"n2", {0, 0, 1}, 0}});
  const Vector q = unit({1, 0.1, 0.05});
  EXPECT_EQ(prf_expand(q, b, {1, .0, SelectionMode::kStatic}, 0.0), q);
  const Vector one = prf_expand(q, b, {1, .0, SelectionMode::kStatic}, 1.0);
  EXPECT_NEAR(one[1], 1.0, 1e-12);
  // alpha 0.5, two neighbors: normalize(0.5 q + 0.5 * mean(n1, n2)).
  const Vector half = prf_expand(q, b, {2, .0, SelectionMode::kStatic}, 0.5);
  const Vector expect = unit({0.5 * q[0], 0.5 * q[1] + 0.25, 0.5 * q[2] + 0.25});
  for (size_t i = 0; i < 3; ++i) EXPECT_NEAR(half[i], expect[i], 1e-12);
}
