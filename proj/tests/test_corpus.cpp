#include <gtest/gtest.h>

#include <set>

#include "ragcfg/corpus.hpp"
#include "ragcfg/embedding.hpp"
#include "ragcfg/error.hpp"
#include "support.hpp"

using namespace ragcfg;

namespace {

Corpus one(const std::string& line) { return parse_jsonl(line); }

}  // namespace

TEST(Corpus, ScoreAboveTenIsDepressed) {
  auto c = one(R"({"id":"P1","text":"x","split":"TRAIN","phq8_score":12})");
  EXPECT_EQ(*c.find("P1")->label, 1);
}

TEST(Corpus, ScoreOfTenIsNotDepressed) {
  auto c = one(R"({"id":"P2","text":"x","split":"TRAIN","phq8_score":10})");
  EXPECT_EQ(*c.find("P2")->label, 0);
}

TEST(Corpus, ScoreWinsOverFlag) {
  auto c = one(R"({"id":"P","text":"x","split":"TRAIN","phq8_score":3,"label":1})");
  EXPECT_EQ(*c.find("P")->label, 0);
}

TEST(Corpus, LabelFlipRemapsRawFlagOnly) {
  LoadOptions o;
  o.label_flip = true;
  auto c = parse_jsonl(R"({"id":"A","text":"x","split":"TRAIN","label":0})"
                       "\n"
                       R"({"id":"B","text":"x","split":"TRAIN","phq8_score":15})",
                       o);
  EXPECT_EQ(*c.find("A")->label, 1);
  EXPECT_EQ(*c.find("B")->label, 1);
}

TEST(Corpus, DuplicateIdRejected) {
  try {
    parse_jsonl(R"({"id":"P1","text":"a","split":"TRAIN","label":1})"
                "\n"
                R"({"id":"P1","text":"b","split":"VAL","label":0})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

TEST(Corpus, MalformedLineNamesLine) {
  try {
    parse_jsonl(R"({"id":"P1","text":"a","split":"TRAIN","label":1})"
                "\n{not json\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Corpus, UnlabeledTrainRejected) {
  EXPECT_THROW(one(R"({"id":"P","text":"a","split":"TRAIN"})"), Error);
  EXPECT_THROW(one(R"({"id":"P","text":"a","split":"VAL"})"), Error);
  EXPECT_NO_THROW(one(R"({"id":"P","text":"a","split":"TEST"})"));
}

TEST(Corpus, SplitAliases) {
  EXPECT_EQ(parse_split("dev"), Split::kVal);
  EXPECT_EQ(parse_split("Development"), Split::kVal);
  EXPECT_EQ(parse_split("train"), Split::kTrain);
  EXPECT_THROW(parse_split("holdout"), Error);
}

TEST(Corpus, RoundTrip) {
  const Corpus c = generate_synthetic({10, 4, 0.9});
  EXPECT_EQ(parse_jsonl(serialize_jsonl(c)), c);
}

TEST(Corpus, SyntheticIsDeterministic) {
  EXPECT_EQ(serialize_jsonl(generate_synthetic({10, 7, 0.9})), serialize_jsonl(generate_synthetic({10, 7, 0.9})));
}

TEST(Corpus, SyntheticSeedChangesTexts) {
  const Corpus a = generate_synthetic({10, 7, 0.9});
  const Corpus b = generate_synthetic({10, 8, 0.9});
  size_t differ = 0;
  for (size_t i = 0; i < a.size(); ++i) differ += a.items()[i].text != b.items()[i].text;
  EXPECT_GT(differ, 0u);
}

TEST(Corpus, SyntheticPureClustersHavePureNeighbors) {
  const Corpus c = generate_synthetic({50, 1, 1.0});
  PseudoEmbedder emb(0, 64);
  std::vector<std::pair<Vector, Label>> vs;
  for (const auto& t : c.items()) vs.push_back({embed({t.id, t.text}, TruncationSpec{}, emb), *t.label});
  // Brute-force 1-NN over the whole generated set.
  size_t pure = 0;
  for (size_t i = 0; i < vs.size(); ++i) {
    double best = -2.0;
    Label bl = 0;
    for (size_t j = 0; j < vs.size(); ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (size_t d = 0; d < vs[i].first.size(); ++d) s += vs[i].first[d] * vs[j].first[d];
      if (s > best) {
        best = s;
        bl = vs[j].second;
      }
    }
    pure += bl == vs[i].second;
  }
  EXPECT_EQ(pure, vs.size());
}

TEST(Corpus, ClassBalance) {
  std::string s;
  for (int i = 0; i < 3; ++i) s += R"({"id":"p)" + std::to_string(i) + R"(","text":"x","split":"VAL","label":1})" "\n";
  s += R"({"id":"n0","text":"x","split":"VAL","label":0})" "\n";
  s += R"({"id":"t0","text":"x","split":"TRAIN","label":1})" "\n";
  const Corpus c = parse_jsonl(s);
  auto b = class_balance(c, Split::kVal);
  EXPECT_DOUBLE_EQ(b[1], 0.75);
  EXPECT_DOUBLE_EQ(b[0], 0.25);
  auto t = class_balance(c, Split::kTrain);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_DOUBLE_EQ(t[1], 1.0);
  EXPECT_THROW(class_balance(c, Split::kTest), Error);
}

TEST(Corpus, SyntheticBalanced) {
  const Corpus c = generate_synthetic({10, 2, 0.9});
  size_t ones = 0;
  size_t n = 0;
  for (const auto* t : c.split(Split::kTrain)) {
    ones += *t->label == 1;
    ++n;
  }
  auto b = class_balance(c, Split::kTrain);
  EXPECT_DOUBLE_EQ(b[1], static_cast<double>(ones) / static_cast<double>(n));
  EXPECT_DOUBLE_EQ(b[0], 0.5);
}

TEST(Corpus, ContentHashOrderIndependent) {
  const Corpus a = generate_synthetic({5, 1, 0.9});
  auto items = a.items();
  std::reverse(items.begin(), items.end());
  EXPECT_EQ(Corpus(items).content_hash(), a.content_hash());
}
