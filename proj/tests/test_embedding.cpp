#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "ragcfg/embedding.hpp"
#include "ragcfg/error.hpp"
#include "support.hpp"

using namespace ragcfg;
using namespace ragcfg::testing;

TEST(Truncate, TokenBudgetPrefix) {
  EXPECT_EQ(truncate("a b c d", {TruncationMode::kTokenBudget, 2}), "a b");
}

TEST(Truncate, SentenceWiseCountsWholeSentences) {
  EXPECT_EQ(truncate("Hi. Bye now. End.", {TruncationMode::kSentenceWise, 3}), "Hi. Bye now.");
}

TEST(Truncate, KeepsFirstSentenceEvenIfLong) {
  EXPECT_EQ(truncate("one two three four. five.", {TruncationMode::kSentenceWise, 2}), "one two three four.");
}

TEST(Truncate, LargeBudgetIsIdentity) {
  EXPECT_EQ(truncate("a b c", {TruncationMode::kTokenBudget, 10}), "a b c");
  EXPECT_EQ(truncate("A b. C d.", {TruncationMode::kSentenceWise, 10}), "A b. C d.");
}

TEST(Truncate, EmptyTextIsEmpty) {
  EXPECT_EQ(truncate("", {TruncationMode::kTokenBudget, 3}), "");
}

TEST(Truncate, SpecParsing) {
  EXPECT_EQ(to_string(parse_truncation("sentence:128")), "sentence:128");
  EXPECT_THROW(parse_truncation("token:0"), Error);
}

TEST(Embed, PseudoDeterministicAndUnit) {
  PseudoEmbedder e(3, 64);
  const Vector a = embed({"x", "the patient feels tired"}, TruncationSpec{}, e);
  const Vector b = embed({"x", "the patient feels tired"}, TruncationSpec{}, e);
  EXPECT_EQ(a, b);
  EXPECT_NEAR(l2_norm(a), 1.0, 1e-6);
  EXPECT_EQ(a.size(), 64u);
}

TEST(Embed, DimensionMismatchRejected) {
  PseudoEmbedder e(0, 8);
  EXPECT_THROW(embed({"x", "a b"}, TruncationSpec{}, e, 16), Error);
}

TEST(Embed, NormalizeIdempotentAndRejectsZero) {
  const Vector v = {3.0, 4.0};
  EXPECT_EQ(normalize(normalize(v)), normalize(v));
  EXPECT_THROW(normalize(Vector{0.0, 0.0}), Error);
}

TEST(Embed, ClustersSeparateAtFullSeparation) {
  const Corpus c = generate_synthetic({10, 5, 1.0});
  PseudoEmbedder e(0, 64);
  std::vector<Vector> pos;
  std::vector<Vector> neg;
  for (const auto& t : c.items()) {
    (*t.label == 1 ? pos : neg).push_back(embed({t.id, t.text}, TruncationSpec{}, e));
  }
  // Every cross-cluster pair is less similar than the least similar in-cluster pair.
  double min_in = 2.0;
  double max_cross = -2.0;
  for (size_t i = 0; i < pos.size(); ++i) {
    for (size_t j = i + 1; j < pos.size(); ++j) min_in = std::min(min_in, dot(pos[i], pos[j]));
    for (const auto& n : neg) max_cross = std::max(max_cross, dot(pos[i], n));
  }
  EXPECT_LT(max_cross, min_in);
}

TEST(CaseBaseBuild, TrainPoolUnitNorm) {
  const Corpus c = generate_synthetic({10, 1, 0.9});
  PseudoEmbedder e(0, 64);
  const EmbeddingStore s = embed_corpus(c, TruncationSpec{}, e);
  const CaseBase b = build_case_base(c, {Split::kTrain}, s);
  EXPECT_EQ(b.size(), c.split(Split::kTrain).size());
  for (const auto& r : b.records()) EXPECT_NEAR(l2_norm(r.vector), 1.0, 1e-6);
  for (const auto& r : b.records()) EXPECT_NEAR(dot(r.vector, r.vector), 1.0, 1e-6);
}

TEST(CaseBaseBuild, ExpansionPoolSize) {
  const Corpus c = generate_synthetic({10, 1, 0.9});
  PseudoEmbedder e(0, 64);
  const EmbeddingStore s = embed_corpus(c, TruncationSpec{}, e);
  const CaseBase b = build_case_base(c, {Split::kTrain, Split::kTest}, s);
  EXPECT_EQ(b.size(), c.split(Split::kTrain).size() + c.split(Split::kTest).size());
}

TEST(CaseBaseBuild, UnlabeledPoolItemRejected) {
  std::vector<Transcript> items = {{"a", "x y", Split::kTrain, std::nullopt, 1},
                                   {"b", "x z", Split::kVal, std::nullopt, 0},
                                   {"c", "q r", Split::kTest, std::nullopt, std::nullopt}};
  const Corpus c(items);
  PseudoEmbedder e(0, 16);
  const EmbeddingStore s = embed_corpus(c, TruncationSpec{}, e);
  EXPECT_THROW(build_case_base(c, {Split::kTrain, Split::kTest}, s), Error);
}

TEST(CaseBaseBuild, CacheHitGivesIdenticalBase) {
  TempDir dir("cache");
  const Corpus c = generate_synthetic({10, 1, 0.9});
  PseudoEmbedder e(0, 64);
  bool hit = true;
  const CaseBase a = build_case_base(c, {Split::kTrain}, TruncationSpec{}, e, dir.str(), &hit);
  EXPECT_FALSE(hit);
  const CaseBase b = build_case_base(c, {Split::kTrain}, TruncationSpec{}, e, dir.str(), &hit);
  EXPECT_TRUE(hit);
  EXPECT_EQ(a, b);
}

TEST(CaseBaseBuild, OrderIndependent) {
  const Corpus c = generate_synthetic({10, 1, 0.9});
  auto items = c.items();
  std::reverse(items.begin(), items.end());
  const Corpus r(items);
  PseudoEmbedder e(0, 64);
  EXPECT_EQ(build_case_base(c, {Split::kTrain}, embed_corpus(c, TruncationSpec{}, e)),
            build_case_base(r, {Split::kTrain}, embed_corpus(r, TruncationSpec{}, e)));
}

TEST(EmbeddingCache, RoundTripAndKey) {
  TempDir dir("cachefile");
  const Corpus c = generate_synthetic({5, 1, 0.9});
  PseudoEmbedder e(0, 16);
  const EmbeddingStore s = embed_corpus(c, TruncationSpec{}, e);
  const std::string path = (dir.path / "emb.jsonl").string();
  save_embedding_cache(s, path);
  const EmbeddingStore l = load_embedding_cache(path);
  EXPECT_EQ(l.dim, s.dim);
  EXPECT_EQ(l.records.size(), s.records.size());
  EXPECT_EQ(l.at(c.items()[0].id).vector, s.at(c.items()[0].id).vector);
  EXPECT_NE(embedding_cache_name("a", TruncationSpec{}, "h"),
            embedding_cache_name("a", {TruncationMode::kSentenceWise, 256}, "h"));
}

TEST(Precomputed, VectorsById) {
  PrecomputedEmbedder p({{"a", {3.0, 4.0}}});
  const Vector v = embed({"a", "ignored"}, TruncationSpec{}, p);
  EXPECT_NEAR(v[0], 0.6, 1e-12);
  EXPECT_THROW(embed({"zz", "x"}, TruncationSpec{}, p), Error);
}

namespace {

struct Server {
  httplib::Server srv;
  std::thread th;
  int port = 0;
  explicit Server(std::function<void(const httplib::Request&, httplib::Response&)> h) {
    srv.Post("/v1/embeddings", h);
    port = srv.bind_to_any_port("127.0.0.1");
    th = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~Server() {
    srv.stop();
    th.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1/embeddings"; }
};

}  // namespace

TEST(HttpEmbedder, ParsesOpenAiShape) {
  Server s([](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    nlohmann::json data = nlohmann::json::array();
    for (size_t i = 0; i < body["input"].size(); ++i) data.push_back({{"embedding", {1.0, 1.0, static_cast<double>(i)}}});
    res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
  });
  HttpEmbedder e({s.url(), "e5-base", "", 3, 0, 5});
  const Vector v = embed({"a", "hello"}, TruncationSpec{}, e);
  EXPECT_NEAR(v[0], 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(HttpEmbedder, RetriesThenTransportError) {
  std::atomic<int> hits{0};
  Server s([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  HttpEmbedder e({s.url(), "m", "", 3, 0, 5});
  try {
    embed({"a", "hello"}, TruncationSpec{}, e);
    FAIL();
  } catch (const TransportError& err) {
    EXPECT_EQ(err.attempts(), 3);
    EXPECT_EQ(hits.load(), 3);
  }
}
